// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ablation masks and the per-class effect of applying them.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::select::NeuronSelection;
use crate::store::{ActivationTensor, Geometry, NeuronId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Neurons shared by every named class.
    #[default]
    Intersection,
    Union,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Targeted {
        task: String,
        classes: Vec<String>,
        mode: CombineMode,
    },
    Random {
        seed: u64,
        size: usize,
        excluded: usize,
    },
    Explicit,
}

/// Neurons whose activation outputs are forced to zero.
///
/// Serialized as `mask.json`; `neurons` is sorted and duplicate free.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationMask {
    pub geometry: Geometry,
    pub provenance: Provenance,
    neurons: Vec<NeuronId>,
}

impl AblationMask {
    pub fn new(geometry: Geometry, provenance: Provenance, neurons: impl IntoIterator<Item = NeuronId>) -> Result<Self> {
        let set: BTreeSet<NeuronId> = neurons.into_iter().collect();
        if let Some(bad) = set.iter().find(|id| !geometry.contains(**id)) {
            return Err(Error::Geometry(format!("{bad} outside {geometry}")));
        }
        Ok(AblationMask {
            geometry,
            provenance,
            neurons: set.into_iter().collect(),
        })
    }

    pub fn neurons(&self) -> &[NeuronId] {
        &self.neurons
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        self.neurons.binary_search(&id).is_ok()
    }

    pub fn set(&self) -> BTreeSet<NeuronId> {
        self.neurons.iter().copied().collect()
    }

    /// Neuron indices masked in `layer`, ascending.
    pub fn layer_columns(&self, layer: usize) -> impl Iterator<Item = usize> + '_ {
        self.neurons
            .iter()
            .filter(move |id| id.layer as usize == layer)
            .map(|id| id.neuron as usize)
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
        let raw: AblationMask = serde_json::from_str(&text)?;
        // re-check invariants of hand-edited files
        Self::new(raw.geometry, raw.provenance, raw.neurons)
    }
}

/// Mask from the neuron sets of `classes` in `sel`.
///
/// An empty result is not an error; callers decide whether to warn.
pub fn targeted_mask(sel: &NeuronSelection, classes: &[String], mode: CombineMode) -> Result<AblationMask> {
    let mut sets = Vec::with_capacity(classes.len());
    for name in classes {
        let idx = sel
            .class_index(name)
            .ok_or_else(|| Error::UnknownClass(name.clone()))?;
        sets.push(sel.class_set(idx));
    }
    let combined: BTreeSet<NeuronId> = match mode {
        CombineMode::Union => sets.into_iter().flatten().collect(),
        CombineMode::Intersection => {
            let mut iter = sets.into_iter();
            match iter.next() {
                Some(first) => iter.fold(first, |acc, s| acc.intersection(&s).copied().collect()),
                None => BTreeSet::new(),
            }
        }
    };
    AblationMask::new(
        sel.geometry(),
        Provenance::Targeted {
            task: sel.task.clone(),
            classes: classes.to_vec(),
            mode,
        },
        combined,
    )
}

/// Uniform sample of `size` neurons without replacement, excluding `exclude`.
///
/// Candidates are listed in `NeuronId` order and a partial Fisher-Yates
/// shuffle is run with [`CounterRng`]: for `i` in `0..size`, swap position
/// `i` with `i + below(M - i)`, `M` being the candidate count.
pub fn random_mask(
    geometry: Geometry,
    size: usize,
    seed: u64,
    exclude: &BTreeSet<NeuronId>,
) -> Result<AblationMask> {
    let mut candidates: Vec<NeuronId> = geometry.ids().filter(|id| !exclude.contains(id)).collect();
    let m = candidates.len();
    if size > m {
        return Err(Error::MaskTooLarge {
            requested: size,
            available: m,
        });
    }
    let mut rng = CounterRng::new(seed);
    for i in 0..size {
        let j = i + rng.below((m - i) as u64) as usize;
        candidates.swap(i, j);
    }
    candidates.truncate(size);
    AblationMask::new(
        geometry,
        Provenance::Random {
            seed,
            size,
            excluded: exclude.len(),
        },
        candidates,
    )
}

fn check_mask_geometry(tensors: &[ActivationTensor], mask: &AblationMask) -> Result<()> {
    let g = mask.geometry;
    if tensors.len() != g.num_layers {
        return Err(Error::Geometry(format!(
            "{} tensors for a {} mask",
            tensors.len(),
            g
        )));
    }
    for (l, t) in tensors.iter().enumerate() {
        if t.layer() != l || t.neurons() != g.neurons_per_layer {
            return Err(Error::Geometry(format!(
                "tensor {l} has layer {} with {} neurons, mask expects {}",
                t.layer(),
                t.neurons(),
                g.neurons_per_layer
            )));
        }
    }
    Ok(())
}

/// Zeros the masked columns in place.
pub fn apply_mask_in_place(tensors: &mut [ActivationTensor], mask: &AblationMask) -> Result<()> {
    check_mask_geometry(tensors, mask)?;
    for t in tensors.iter_mut() {
        let cols: Vec<usize> = mask.layer_columns(t.layer()).collect();
        if cols.is_empty() {
            continue;
        }
        let n = t.neurons();
        for row in t.values_mut().chunks_exact_mut(n) {
            for &j in &cols {
                row[j] = 0.0;
            }
        }
    }
    Ok(())
}

pub fn apply_mask_to_tensors(tensors: &[ActivationTensor], mask: &AblationMask) -> Result<Vec<ActivationTensor>> {
    let mut out = tensors.to_vec();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

/// Predicted and true class of every sample for one evaluation run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRun {
    pub tag: String,
    pub true_class: Vec<u32>,
    pub predicted: Vec<u32>,
}

impl PredictionRun {
    pub fn new(tag: impl Into<String>, true_class: Vec<u32>, predicted: Vec<u32>) -> Result<Self> {
        if true_class.len() != predicted.len() {
            return Err(Error::Misaligned(format!(
                "{} true labels vs {} predictions",
                true_class.len(),
                predicted.len()
            )));
        }
        Ok(PredictionRun {
            tag: tag.into(),
            true_class,
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.true_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_class.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let correct = self.true_class.iter().zip(&self.predicted).filter(|(t, p)| t == p).count();
        100.0 * correct as f64 / self.len() as f64
    }

    /// Writes `predictions.csv`: `sample_id,true_class,predicted_class`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(b"sample_id,true_class,predicted_class\n").map_err(io)?;
        for (i, (t, p)) in self.true_class.iter().zip(&self.predicted).enumerate() {
            writeln!(w, "{i},{t},{p}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path, tag: impl Into<String>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let malformed = |detail: String| Error::Parse {
            what: "predictions.csv",
            detail,
        };
        let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?;
        if headers != vec!["sample_id", "true_class", "predicted_class"] {
            return Err(malformed("header must be sample_id,true_class,predicted_class".into()));
        }
        let (mut truth, mut pred) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            let field = |k: usize| -> Result<u64> {
                rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("row {row}: bad value {:?}", &rec[k])))
            };
            if field(0)? != row as u64 {
                return Err(malformed(format!("row {row}: sample_id is not the row ordinal")));
            }
            let to_u32 = |v: u64| u32::try_from(v).map_err(|_| malformed(format!("row {row}: class {v} too large")));
            truth.push(to_u32(field(1)?)?);
            pred.push(to_u32(field(2)?)?);
        }
        PredictionRun::new(tag, truth, pred)
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_run(run: &PredictionRun, num_classes: usize) -> Result<Self> {
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (i, (&t, &p)) in run.true_class.iter().zip(&run.predicted).enumerate() {
            if t as usize >= num_classes || p as usize >= num_classes {
                return Err(Error::LabelRange {
                    sample: i,
                    index: t.max(p).into(),
                    num_classes,
                });
            }
            counts[t as usize][p as usize] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn class_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Per-class accuracy (recall) in percent; classes without samples get 0.
    pub fn class_accuracy(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|c| {
                let total = self.class_total(c);
                if total == 0 {
                    0.0
                } else {
                    100.0 * self.counts[c][c] as f64 / total as f64
                }
            })
            .collect()
    }

    /// Row-normalized percentages.
    pub fn row_percent(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if total == 0 { 0.0 } else { 100.0 * v as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }
}

/// Change from a baseline run to an ablated run over the same samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub baseline_tag: String,
    pub ablated_tag: String,
    pub class_names: Vec<String>,
    pub baseline: ConfusionMatrix,
    pub ablated: ConfusionMatrix,
    /// `ablated - baseline`, in samples.
    pub delta_counts: Vec<Vec<i64>>,
    /// `ablated - baseline` of row-normalized percentages.
    pub delta_percent: Vec<Vec<f64>>,
    pub baseline_accuracy: Vec<f64>,
    pub ablated_accuracy: Vec<f64>,
    /// Percentage points, `ablated - baseline`.
    pub accuracy_delta: Vec<f64>,
    pub overall_baseline: f64,
    pub overall_ablated: f64,
    pub overall_delta: f64,
}

impl DeltaReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Mean accuracy change over `classes`, in percentage points.
    pub fn mean_delta(&self, classes: &[usize]) -> f64 {
        if classes.is_empty() {
            return 0.0;
        }
        classes.iter().map(|&c| self.accuracy_delta[c]).sum::<f64>() / classes.len() as f64
    }
}

pub fn confusion_delta(baseline: &PredictionRun, ablated: &PredictionRun, class_names: &[String]) -> Result<DeltaReport> {
    if baseline.len() != ablated.len() {
        return Err(Error::Misaligned(format!(
            "{} baseline samples vs {} ablated samples",
            baseline.len(),
            ablated.len()
        )));
    }
    if let Some(i) = (0..baseline.len()).find(|&i| baseline.true_class[i] != ablated.true_class[i]) {
        return Err(Error::Misaligned(format!("sample {i} has different true classes")));
    }
    let k = class_names.len();
    let base = ConfusionMatrix::from_run(baseline, k)?;
    let abl = ConfusionMatrix::from_run(ablated, k)?;
    let delta_counts = base
        .counts
        .iter()
        .zip(&abl.counts)
        .map(|(b, a)| b.iter().zip(a).map(|(&b, &a)| a as i64 - b as i64).collect())
        .collect();
    let delta_percent = base
        .row_percent()
        .iter()
        .zip(abl.row_percent())
        .map(|(b, a)| b.iter().zip(a).map(|(b, a)| a - b).collect())
        .collect();
    let baseline_accuracy = base.class_accuracy();
    let ablated_accuracy = abl.class_accuracy();
    let accuracy_delta = baseline_accuracy
        .iter()
        .zip(&ablated_accuracy)
        .map(|(b, a)| a - b)
        .collect();
    let (ob, oa) = (baseline.accuracy(), ablated.accuracy());
    Ok(DeltaReport {
        baseline_tag: baseline.tag.clone(),
        ablated_tag: ablated.tag.clone(),
        class_names: class_names.to_vec(),
        baseline: base,
        ablated: abl,
        delta_counts,
        delta_percent,
        baseline_accuracy,
        ablated_accuracy,
        accuracy_delta,
        overall_baseline: ob,
        overall_ablated: oa,
        overall_delta: oa - ob,
    })
}
