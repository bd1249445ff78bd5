// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end identify, ablate and evaluate run on the toy encoder.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ablation::{confusion_delta, random_mask, targeted_mask, AblationMask, CombineMode, DeltaReport, PredictionRun};
use crate::error::{Error, Result};
use crate::overlap::{within_task_matrix, OverlapMatrix};
use crate::select::{compute_aape, select_neurons, NeuronSelection, SelectionConfig, TaskInfo};
use crate::stats::{compute_probabilities, ProbabilityTable};
use crate::store::{ClassLabeling, Dataset, DatasetManifest};
use crate::toy::encoder::ToyEncoder;
use crate::toy::probe::{features, LinearProbe};

/// Parameters of the Gaussian-cluster task and the toy encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub task_name: String,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Neurons per encoder layer.
    pub hidden: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Norm of the class means.
    pub separation: f64,
    /// Standard deviation of the per-sample noise.
    pub noise: f64,
    /// Number of class pairs `(2k, 2k+1)` whose means are placed close together.
    pub similar_pairs: usize,
    /// Distance between the means of a similar pair.
    pub pair_distance: f64,
    pub bias_shift: f64,
    /// Fraction of first-layer units tuned to a class mean direction.
    pub tuned_fraction: f64,
    /// Firing threshold of a tuned unit, relative to its class mean norm.
    pub tuning_threshold: f64,
    pub tuning_jitter: f64,
    pub ridge: f64,
    pub seed: u64,
    /// Number of random-mask seeds evaluated as the baseline.
    pub random_seeds: usize,
    /// Classes whose neurons are ablated; chosen automatically when absent.
    pub targets: Option<Vec<String>>,
    pub mode: CombineMode,
    /// Keep targeted neurons out of the random masks.
    pub exclude_targeted: bool,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            task_name: "toy".to_string(),
            num_classes: 6,
            input_dim: 16,
            hidden: 128,
            train_per_class: 200,
            test_per_class: 200,
            separation: 8.0,
            noise: 1.0,
            similar_pairs: 1,
            pair_distance: 3.0,
            bias_shift: 2.0,
            tuned_fraction: 1.0,
            tuning_threshold: 0.6,
            tuning_jitter: 0.3,
            ridge: 100.0,
            seed: 0,
            random_seeds: 10,
            targets: None,
            mode: CombineMode::Intersection,
            exclude_targeted: false,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be >= 2");
        }
        if self.input_dim == 0 || self.hidden == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("input_dim, hidden and sample counts must be positive");
        }
        if 2 * self.similar_pairs > self.num_classes {
            return bad("similar_pairs needs two classes per pair");
        }
        if !(0.0..=1.0).contains(&self.tuned_fraction) {
            return bad("tuned_fraction must lie in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.separation >= 0.0 && self.ridge >= 0.0) {
            return bad("noise, separation and ridge must be non-negative");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("class_{c:02}")).collect()
    }

    /// Selection thresholds suited to the 256-neuron toy geometry, where a
    /// class owns roughly a sixth of all units.
    pub fn selection_config() -> SelectionConfig {
        SelectionConfig {
            low_activation_cut: 5.0,
            assignment_cut: 80.0,
            ..SelectionConfig::with_r_aape(30.0)
        }
    }
}

/// Clustered inputs with interleaved labels (sample `s` has class `s % C`).
#[derive(Clone, Debug)]
pub struct ClusterData {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn class_means(spec: &ToySpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let unit = |v: Vec<f64>| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let mut means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| unit(gaussian(rng, spec.input_dim)).into_iter().map(|x| x * spec.separation).collect())
        .collect();
    for k in 0..spec.similar_pairs {
        let offset = unit(gaussian(rng, spec.input_dim));
        means[2 * k + 1] = means[2 * k]
            .iter()
            .zip(offset)
            .map(|(m, o)| m + o * spec.pair_distance)
            .collect();
    }
    means
}

fn sample_clusters(spec: &ToySpec, means: &[Vec<f64>], per_class: usize, rng: &mut ChaCha8Rng) -> ClusterData {
    let c = spec.num_classes;
    let mut inputs = Vec::with_capacity(per_class * c);
    let mut labels = Vec::with_capacity(per_class * c);
    for s in 0..per_class * c {
        let label = s % c;
        let noise = gaussian(rng, spec.input_dim);
        inputs.push(means[label].iter().zip(noise).map(|(m, e)| m + spec.noise * e).collect());
        labels.push(label as u32);
    }
    ClusterData { inputs, labels }
}

/// Everything a toy run produces; [`write_pipeline_outputs`] saves it.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub spec: ToySpec,
    pub config: SelectionConfig,
    pub train: Dataset,
    pub probs: ProbabilityTable,
    pub selection: NeuronSelection,
    pub overlap: OverlapMatrix,
    pub targeted_mask: AblationMask,
    pub random_seeds: Vec<u64>,
    pub random_masks: Vec<AblationMask>,
    pub baseline: PredictionRun,
    pub targeted: PredictionRun,
    pub random: Vec<PredictionRun>,
    pub report: PipelineReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub task: String,
    pub targets: Vec<String>,
    pub target_indices: Vec<usize>,
    pub mode: CombineMode,
    pub mask_size: usize,
    pub baseline_accuracy: f64,
    pub targeted: DeltaReport,
    pub random: Vec<DeltaReport>,
    /// Mean accuracy drop (percentage points, positive = worse) on the
    /// targeted classes under the targeted mask.
    pub targeted_class_drop: f64,
    /// Same quantity averaged over the random masks.
    pub random_class_drop: f64,
    /// Mean absolute change in overall accuracy under the random masks.
    pub random_overall_change: f64,
    pub warnings: Vec<String>,
}

/// Picks the class pair sharing the most neurons (lowest indices on ties).
/// Falls back to the single largest class in union mode when no pair shares
/// anything.
fn choose_targets(sel: &NeuronSelection) -> (Vec<String>, CombineMode) {
    let k = sel.classes.len();
    let sets: Vec<_> = (0..k).map(|c| sel.class_set(c)).collect();
    let mut best: Option<(usize, usize, usize)> = None;
    for i in 0..k {
        for j in i + 1..k {
            let shared = sets[i].intersection(&sets[j]).count();
            if shared > 0 && best.is_none_or(|(s, _, _)| shared > s) {
                best = Some((shared, i, j));
            }
        }
    }
    match best {
        Some((_, i, j)) => (vec![sel.classes[i].name.clone(), sel.classes[j].name.clone()], CombineMode::Intersection),
        None => {
            let c = (0..k).max_by_key(|&c| (sets[c].len(), std::cmp::Reverse(c))).unwrap_or(0);
            (vec![sel.classes[c].name.clone()], CombineMode::Union)
        }
    }
}

pub fn run_toy_pipeline(spec: &ToySpec, cfg: &SelectionConfig) -> Result<PipelineRun> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);
    let train_data = sample_clusters(spec, &means, spec.train_per_class, &mut rng);
    let test_data = sample_clusters(spec, &means, spec.test_per_class, &mut rng);
    let encoder = ToyEncoder::tuned(
        spec.input_dim,
        spec.hidden,
        spec.bias_shift,
        spec.seed ^ 0x005E_ED0F_70E4,
        &means,
        (spec.tuned_fraction * spec.hidden as f64).round() as usize,
        spec.tuning_threshold,
        spec.tuning_jitter,
    )?;
    let names = spec.class_names();

    // identify
    let train_tensors = encoder.encode(&train_data.inputs, None)?;
    let manifest = DatasetManifest::new(
        spec.task_name.clone(),
        encoder.geometry(),
        train_data.labels.len(),
        names.clone(),
    );
    let train = Dataset {
        manifest,
        tensors: train_tensors,
        labels: ClassLabeling::new(train_data.labels.clone()),
    };
    let probs = compute_probabilities(&train.tensors, &train.labels, &train.manifest)?;
    let scores = compute_aape(&probs);
    let selection = select_neurons(&probs, &scores, cfg, &TaskInfo::new(spec.task_name.clone(), names.clone()))?;
    let overlap = within_task_matrix(&selection);

    // linear evaluation on unmasked features
    let probe = LinearProbe::fit(&features(&train.tensors), &train_data.labels, spec.num_classes, spec.ridge)?;
    let evaluate = |mask: Option<&AblationMask>, tag: String| -> Result<PredictionRun> {
        let tensors = encoder.encode(&test_data.inputs, mask)?;
        PredictionRun::new(tag, test_data.labels.clone(), probe.predict_all(&features(&tensors)))
    };
    let baseline = evaluate(None, "original".into())?;

    let mut warnings = selection.warnings.clone();
    let (targets, mode) = match &spec.targets {
        Some(t) => (t.clone(), spec.mode),
        None => choose_targets(&selection),
    };
    let target_indices = targets
        .iter()
        .map(|t| selection.class_index(t).ok_or_else(|| Error::UnknownClass(t.clone())))
        .collect::<Result<Vec<_>>>()?;
    let targeted_mask = targeted_mask(&selection, &targets, mode)?;
    if targeted_mask.is_empty() {
        warnings.push(format!("targeted mask for {targets:?} is empty"));
    }
    let targeted = evaluate(Some(&targeted_mask), "targeted".into())?;
    let targeted_delta = confusion_delta(&baseline, &targeted, &names)?;

    let exclude = if spec.exclude_targeted {
        targeted_mask.set()
    } else {
        BTreeSet::new()
    };
    let mut random_seeds = Vec::with_capacity(spec.random_seeds);
    let mut random_masks = Vec::with_capacity(spec.random_seeds);
    let mut random = Vec::with_capacity(spec.random_seeds);
    let mut random_deltas = Vec::with_capacity(spec.random_seeds);
    for k in 0..spec.random_seeds as u64 {
        let seed = spec.seed.wrapping_mul(1000).wrapping_add(k);
        let mask = random_mask(encoder.geometry(), targeted_mask.len(), seed, &exclude)?;
        let run = evaluate(Some(&mask), format!("random-seed-{seed}"))?;
        random_deltas.push(confusion_delta(&baseline, &run, &names)?);
        random_seeds.push(seed);
        random_masks.push(mask);
        random.push(run);
    }

    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let targeted_class_drop = -targeted_delta.mean_delta(&target_indices);
    let random_class_drop = mean(
        &random_deltas
            .iter()
            .map(|d| -d.mean_delta(&target_indices))
            .collect::<Vec<_>>(),
    );
    let random_overall_change = mean(&random_deltas.iter().map(|d| d.overall_delta.abs()).collect::<Vec<_>>());

    let report = PipelineReport {
        task: spec.task_name.clone(),
        targets,
        target_indices,
        mode,
        mask_size: targeted_mask.len(),
        baseline_accuracy: baseline.accuracy(),
        targeted: targeted_delta,
        random: random_deltas,
        targeted_class_drop,
        random_class_drop,
        random_overall_change,
        warnings,
    };
    Ok(PipelineRun {
        spec: spec.clone(),
        config: *cfg,
        train,
        probs,
        selection,
        overlap,
        targeted_mask,
        random_seeds,
        random_masks,
        baseline,
        targeted,
        random,
        report,
    })
}

/// Writes the dataset, selection, masks, predictions and report of a run.
pub fn write_pipeline_outputs(run: &PipelineRun, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = &run.train;
    crate::store::write_dataset(&t.manifest, &t.tensors, &t.labels, &dir.join("dataset"))?;
    run.selection.write_json(&dir.join("selection.json"))?;
    run.overlap.write_csv(&dir.join("overlap.csv"))?;
    run.overlap.write_json(&dir.join("overlap.json"))?;
    run.targeted_mask.write_json(&dir.join("mask.json"))?;
    run.baseline.write_csv(&dir.join("predictions_original.csv"))?;
    run.targeted.write_csv(&dir.join("predictions_targeted.csv"))?;
    run.report.targeted.write_json(&dir.join("deltas_targeted.json"))?;
    for (((seed, mask), pred), delta) in run
        .random_seeds
        .iter()
        .zip(&run.random_masks)
        .zip(&run.random)
        .zip(&run.report.random)
    {
        mask.write_json(&dir.join(format!("mask_random_{seed}.json")))?;
        pred.write_csv(&dir.join(format!("predictions_random_{seed}.csv")))?;
        delta.write_json(&dir.join(format!("deltas_random_{seed}.json")))?;
    }
    let mut s = serde_json::to_string_pretty(&run.report)?;
    s.push('\n');
    let path = dir.join("report.json");
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
