// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation probability entropy and the three-step neuron filter.
//!
//! For each neuron the class probabilities are normalized to a distribution
//! over classes and its Shannon entropy (natural log) is the neuron's score.
//! Low scores mean the neuron fires for few classes. Selection then
//!
//! 1. drops the least active neurons (at or below the `low_activation_cut`
//!    percentile of an activity statistic),
//! 2. keeps survivors whose score is at or below the `r_aape` percentile of
//!    the survivors' scores,
//! 3. assigns each remaining neuron to every class whose probability reaches
//!    the `assignment_cut` percentile of a pooled probability population.
//!
//! Percentiles use the nearest-rank rule; boundary ties are always included.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ProbabilityTable;
use crate::store::{Geometry, NeuronId};

/// Per-neuron entropy scores. Neurons that never fire hold `f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct AapeScores {
    geometry: Geometry,
    num_classes: usize,
    score: Vec<f64>,
}

impl AapeScores {
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, id: NeuronId) -> f64 {
        self.score[self.geometry.flat_index(id)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.score
    }
}

/// Entropy of the normalized distribution `p / sum(p)`.
///
/// Terms are accumulated in ascending order of probability so the result is
/// bitwise independent of class order. Returns `INFINITY` when `sum(p) == 0`.
pub fn normalized_entropy(probs: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(probs);
    scratch.sort_unstable_by(f64::total_cmp);
    let total: f64 = scratch.iter().sum();
    if total <= 0.0 {
        return f64::INFINITY;
    }
    let mut h = 0.0;
    for &p in scratch.iter() {
        if p > 0.0 {
            let q = p / total;
            h -= q * q.ln();
        }
    }
    h
}

pub fn compute_aape(probs: &ProbabilityTable) -> AapeScores {
    let c = probs.num_classes();
    let score = probs
        .class_prob_flat()
        .par_chunks(c.max(1))
        .map_init(Vec::new, |scratch, p| normalized_entropy(p, scratch))
        .collect();
    AapeScores {
        geometry: probs.geometry(),
        num_classes: c,
        score,
    }
}

/// Statistic used by step 1 to find neurons with insufficient activation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityStatistic {
    /// Highest class-wise activation probability of the neuron.
    #[default]
    PeakClass,
    /// Activation probability over all samples regardless of class.
    Pooled,
}

/// Population of probabilities the step-3 threshold is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentPopulation {
    /// Every (neuron, class) probability in the model.
    #[default]
    AllNeurons,
    /// Only the (neuron, class) probabilities of step-2 survivors.
    Survivors,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Percentile of the lowest entropy scores kept in step 2.
    pub r_aape: f64,
    pub low_activation_cut: f64,
    pub assignment_cut: f64,
    #[serde(default)]
    pub activity_statistic: ActivityStatistic,
    #[serde(default)]
    pub assignment_population: AssignmentPopulation,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            r_aape: 1.0,
            low_activation_cut: 5.0,
            assignment_cut: 95.0,
            activity_statistic: ActivityStatistic::PeakClass,
            assignment_population: AssignmentPopulation::AllNeurons,
        }
    }
}

impl SelectionConfig {
    pub fn with_r_aape(r_aape: f64) -> Self {
        SelectionConfig {
            r_aape,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_aape", self.r_aape),
            ("low_activation_cut", self.low_activation_cut),
            ("assignment_cut", self.assignment_cut),
        ] {
            if !(v > 0.0 && v <= 100.0) {
                return Err(Error::Config(format!("{name} = {v} is not in (0, 100]")));
            }
        }
        Ok(())
    }
}

/// Nearest-rank percentile: the `ceil(q/100 * M)`-th smallest value.
///
/// `sorted` must be ascending and non-empty.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let rank = ((q * m as f64) / 100.0).ceil() as usize;
    sorted[rank.clamp(1, m) - 1]
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_unstable_by(f64::total_cmp);
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedThresholds {
    /// Step 1: neurons with activity at or below this value were dropped.
    pub activity: f64,
    /// Step 2: largest score kept.
    pub aape: f64,
    /// Step 3: minimum class probability for an assignment.
    pub assignment: f64,
    pub step1_survivors: usize,
    pub step2_survivors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedNeuron {
    pub layer: u32,
    pub neuron: u32,
    pub aape: f64,
    pub prob: f64,
}

impl SelectedNeuron {
    pub fn id(&self) -> NeuronId {
        NeuronId::new(self.layer, self.neuron)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassNeurons {
    pub name: String,
    /// Sorted by `NeuronId`.
    pub neurons: Vec<SelectedNeuron>,
}

/// Names attached to a selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInfo {
    pub task_name: String,
    pub class_names: Vec<String>,
}

impl TaskInfo {
    pub fn new(task_name: impl Into<String>, class_names: Vec<String>) -> Self {
        TaskInfo {
            task_name: task_name.into(),
            class_names,
        }
    }
}

/// Per-class neuron sets with the scores and thresholds that produced them.
///
/// Serialized as `selection.json` in class order, then `NeuronId` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronSelection {
    pub task: String,
    pub num_layers: usize,
    pub neurons_per_layer: usize,
    pub entropy_log_base: String,
    pub config: SelectionConfig,
    pub thresholds: ResolvedThresholds,
    pub classes: Vec<ClassNeurons>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl NeuronSelection {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.num_layers, self.neurons_per_layer)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn class_set(&self, class: usize) -> BTreeSet<NeuronId> {
        self.classes[class].neurons.iter().map(SelectedNeuron::id).collect()
    }

    /// Every selected neuron with the classes it is assigned to.
    pub fn assignments(&self) -> BTreeMap<NeuronId, Vec<usize>> {
        let mut out: BTreeMap<NeuronId, Vec<usize>> = BTreeMap::new();
        for (c, class) in self.classes.iter().enumerate() {
            for n in &class.neurons {
                out.entry(n.id()).or_default().push(c);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn all_equal(sorted: &[f64]) -> bool {
    sorted.first() == sorted.last()
}

pub fn select_neurons(
    probs: &ProbabilityTable,
    scores: &AapeScores,
    cfg: &SelectionConfig,
    task: &TaskInfo,
) -> Result<NeuronSelection> {
    cfg.validate()?;
    let geometry = probs.geometry();
    let c = probs.num_classes();
    if scores.geometry() != geometry || scores.num_classes() != c {
        return Err(Error::Geometry(format!(
            "scores {}x{} classes vs probabilities {}x{} classes",
            scores.geometry(),
            scores.num_classes(),
            geometry,
            c
        )));
    }
    if task.class_names.len() != c {
        return Err(Error::Geometry(format!(
            "{} class names for {c} classes",
            task.class_names.len()
        )));
    }
    let mut warnings = Vec::new();

    // Step 1: activity filter over all neurons.
    let activity: Vec<f64> = geometry
        .ids()
        .map(|id| match cfg.activity_statistic {
            ActivityStatistic::PeakClass => probs.class_probs(id).iter().copied().fold(0.0, f64::max),
            ActivityStatistic::Pooled => probs.pooled(id),
        })
        .collect();
    let activity_sorted = sorted(activity.clone());
    if all_equal(&activity_sorted) {
        return Err(Error::Degenerate {
            step: 1,
            detail: format!("every neuron has activity {}", activity_sorted[0]),
        });
    }
    let activity_cut = nearest_rank(&activity_sorted, cfg.low_activation_cut);
    let step1: Vec<usize> = (0..geometry.total())
        .filter(|&i| activity[i] > activity_cut && scores.score[i].is_finite())
        .collect();
    if step1.is_empty() {
        return Err(Error::EmptySelection { step: 1 });
    }

    // Step 2: lowest-entropy percentile of the step-1 survivors.
    let score_sorted = sorted(step1.iter().map(|&i| scores.score[i]).collect());
    if all_equal(&score_sorted) {
        warnings.push(format!(
            "step 2: all {} survivors share score {}",
            score_sorted.len(),
            score_sorted[0]
        ));
    }
    let score_cut = nearest_rank(&score_sorted, cfg.r_aape);
    let step2: Vec<usize> = step1
        .iter()
        .copied()
        .filter(|&i| scores.score[i] <= score_cut)
        .collect();

    // Step 3: class assignment by a global probability threshold.
    let flat = probs.class_prob_flat();
    let population: Vec<f64> = match cfg.assignment_population {
        AssignmentPopulation::AllNeurons => flat.to_vec(),
        AssignmentPopulation::Survivors => step2
            .iter()
            .flat_map(|&i| flat[i * c..(i + 1) * c].iter().copied())
            .collect(),
    };
    let population = sorted(population);
    if all_equal(&population) {
        warnings.push(format!(
            "step 3: every probability in the population equals {}",
            population[0]
        ));
    }
    let assign_cut = nearest_rank(&population, cfg.assignment_cut);

    let mut classes: Vec<ClassNeurons> = task
        .class_names
        .iter()
        .map(|name| ClassNeurons {
            name: name.clone(),
            neurons: Vec::new(),
        })
        .collect();
    let mut assigned_any = false;
    for &i in &step2 {
        let id = geometry.id_at(i);
        for (k, &p) in flat[i * c..(i + 1) * c].iter().enumerate() {
            if p >= assign_cut {
                assigned_any = true;
                classes[k].neurons.push(SelectedNeuron {
                    layer: id.layer,
                    neuron: id.neuron,
                    aape: scores.score[i],
                    prob: p,
                });
            }
        }
    }
    if !assigned_any {
        return Err(Error::EmptySelection { step: 3 });
    }

    Ok(NeuronSelection {
        task: task.task_name.clone(),
        num_layers: geometry.num_layers,
        neurons_per_layer: geometry.neurons_per_layer,
        entropy_log_base: "e".to_string(),
        config: *cfg,
        thresholds: ResolvedThresholds {
            activity: activity_cut,
            aape: score_cut,
            assignment: assign_cut,
            step1_survivors: step1.len(),
            step2_survivors: step2.len(),
        },
        classes,
        warnings,
    })
}

/// Mean neurons per class and the fraction of classes with any neuron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub task: String,
    pub class_sizes: Vec<usize>,
    pub mean_neurons: f64,
    pub coverage_ratio: f64,
}

pub fn coverage_stats(sel: &NeuronSelection, class_names: &[String]) -> CoverageStats {
    let class_sizes: Vec<usize> = class_names
        .iter()
        .map(|name| sel.class_index(name).map_or(0, |c| sel.classes[c].neurons.len()))
        .collect();
    let k = class_sizes.len();
    let (mean_neurons, coverage_ratio) = if k == 0 {
        (0.0, 0.0)
    } else {
        (
            class_sizes.iter().sum::<usize>() as f64 / k as f64,
            class_sizes.iter().filter(|&&s| s > 0).count() as f64 / k as f64,
        )
    };
    CoverageStats {
        task: sel.task.clone(),
        class_sizes,
        mean_neurons,
        coverage_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(geometry: Geometry, c: usize, class_prob: Vec<f64>) -> ProbabilityTable {
        let pooled = class_prob
            .chunks(c)
            .map(|p| p.iter().sum::<f64>() / c as f64)
            .collect();
        ProbabilityTable::from_probabilities(geometry, c, class_prob, pooled).unwrap()
    }

    fn names(c: usize) -> TaskInfo {
        TaskInfo::new("t", (0..c).map(|i| format!("c{i}")).collect())
    }

    #[test]
    fn one_hot_is_zero_and_uniform_is_ln_c() {
        let mut s = Vec::new();
        assert_eq!(normalized_entropy(&[0.7, 0.0, 0.0], &mut s), 0.0);
        assert!((normalized_entropy(&[0.3, 0.3], &mut s) - 2f64.ln()).abs() < 1e-15);
        assert!((normalized_entropy(&[0.3, 0.3], &mut s) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(normalized_entropy(&[0.0, 0.0], &mut s), f64::INFINITY);
    }

    #[test]
    fn nearest_rank_rule() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(nearest_rank(&v, 5.0), 1.0);
        assert_eq!(nearest_rank(&v, 10.0), 1.0);
        assert_eq!(nearest_rank(&v, 11.0), 2.0);
        assert_eq!(nearest_rank(&v, 95.0), 10.0);
        assert_eq!(nearest_rank(&v, 100.0), 10.0);
        assert_eq!(nearest_rank(&[4.0], 0.001), 4.0);
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::with_r_aape(0.0).validate().is_err());
        assert!(SelectionConfig::with_r_aape(100.5).validate().is_err());
        assert!(SelectionConfig::with_r_aape(f64::NAN).validate().is_err());
        assert!(SelectionConfig::with_r_aape(100.0).validate().is_ok());
    }

    #[test]
    fn planted_neuron_assigned_to_its_class() {
        let c = 5;
        let mut p = Vec::new();
        for i in 0..40 {
            // near-uniform background
            let base = 0.4 + 0.01 * (i % 7) as f64;
            p.extend((0..c).map(|k| base + 0.005 * k as f64));
        }
        p.extend([0.9, 0.02, 0.02, 0.02, 0.02]);
        let probs = table(Geometry::new(1, 41), c, p);
        let scores = compute_aape(&probs);
        let cfg = SelectionConfig::with_r_aape(2.0);
        let sel = select_neurons(&probs, &scores, &cfg, &names(c)).unwrap();
        assert_eq!(sel.class_set(0), BTreeSet::from([NeuronId::new(0, 40)]));
        for k in 1..c {
            assert!(sel.class_set(k).is_empty());
        }
    }

    #[test]
    fn vacuous_thresholds_assign_every_survivor_its_argmax() {
        let c = 3;
        let p: Vec<f64> = (0..30).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let probs = table(Geometry::new(2, 5), c, p);
        let scores = compute_aape(&probs);
        let cfg = SelectionConfig {
            r_aape: 100.0,
            assignment_cut: 1e-9,
            ..SelectionConfig::default()
        };
        let sel = select_neurons(&probs, &scores, &cfg, &names(c)).unwrap();
        let assignments = sel.assignments();
        assert_eq!(assignments.len(), sel.thresholds.step1_survivors);
        for (id, classes) in assignments {
            let probs = probs.class_probs(id);
            let best = probs.iter().copied().fold(0.0, f64::max);
            for (k, &p) in probs.iter().enumerate() {
                if p == best {
                    assert!(classes.contains(&k));
                }
            }
        }
    }

    #[test]
    fn never_firing_neurons_are_not_selectable() {
        let c = 2;
        let p = vec![0.0, 0.0, 0.5, 0.1, 0.2, 0.6, 0.9, 0.0];
        let probs = table(Geometry::new(1, 4), c, p);
        let scores = compute_aape(&probs);
        assert_eq!(scores.get(NeuronId::new(0, 0)), f64::INFINITY);
        let cfg = SelectionConfig {
            r_aape: 100.0,
            low_activation_cut: 1.0,
            assignment_cut: 1e-9,
            ..SelectionConfig::default()
        };
        let sel = select_neurons(&probs, &scores, &cfg, &names(c)).unwrap();
        assert!(!sel.assignments().contains_key(&NeuronId::new(0, 0)));
    }

    #[test]
    fn degenerate_and_empty_steps() {
        let c = 2;
        let probs = table(Geometry::new(1, 3), c, vec![0.5; 6]);
        let scores = compute_aape(&probs);
        let err = select_neurons(&probs, &scores, &SelectionConfig::default(), &names(c)).unwrap_err();
        assert!(matches!(err, Error::Degenerate { step: 1, .. }));

        let probs = table(Geometry::new(1, 3), c, vec![0.1, 0.2, 0.3, 0.3, 0.5, 0.6]);
        let scores = compute_aape(&probs);
        let cfg = SelectionConfig {
            low_activation_cut: 100.0,
            ..SelectionConfig::default()
        };
        let err = select_neurons(&probs, &scores, &cfg, &names(c)).unwrap_err();
        assert!(matches!(err, Error::EmptySelection { step: 1 }));
    }

    #[test]
    fn coverage_examples() {
        let sel = NeuronSelection {
            task: "t".into(),
            num_layers: 1,
            neurons_per_layer: 8,
            entropy_log_base: "e".into(),
            config: SelectionConfig::default(),
            thresholds: ResolvedThresholds {
                activity: 0.0,
                aape: 0.0,
                assignment: 0.0,
                step1_survivors: 0,
                step2_survivors: 0,
            },
            classes: vec![
                ClassNeurons {
                    name: "a".into(),
                    neurons: (0..3)
                        .map(|n| SelectedNeuron { layer: 0, neuron: n, aape: 0.0, prob: 1.0 })
                        .collect(),
                },
                ClassNeurons { name: "b".into(), neurons: vec![] },
            ],
            warnings: vec![],
        };
        let cov = coverage_stats(&sel, &sel.class_names());
        assert_eq!(cov.mean_neurons, 1.5);
        assert_eq!(cov.coverage_ratio, 0.5);
        assert_eq!(cov.class_sizes, vec![3, 0]);
    }
}
