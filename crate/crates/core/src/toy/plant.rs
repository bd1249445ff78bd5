// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic datasets with planted class-selective neurons.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::NeuronSelection;
use crate::store::{self, ActivationTensor, ClassLabeling, Dataset, DatasetManifest, Geometry, NeuronId};

pub const PLANTS_FILE: &str = "plants.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub num_classes: usize,
    pub planted_per_class: usize,
    /// Activation probability of a planted neuron on its own class.
    pub p_on: f64,
    /// Activation probability of a planted neuron on every other class.
    pub p_off: f64,
    pub background_p: f64,
    pub num_layers: usize,
    pub neurons_per_layer: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl PlantSpec {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.num_layers, self.neurons_per_layer)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [("p_on", self.p_on), ("p_off", self.p_off), ("background_p", self.background_p)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.p_on <= self.p_off {
            return bad(format!("p_on ({}) must exceed p_off ({})", self.p_on, self.p_off));
        }
        if self.num_classes < 2 {
            return bad("at least 2 classes required".into());
        }
        if self.num_layers == 0 || self.neurons_per_layer == 0 || self.samples_per_class == 0 {
            return bad("geometry and samples_per_class must be positive".into());
        }
        if self.planted_per_class * self.num_classes > self.geometry().total() {
            return bad(format!(
                "{} planted neurons do not fit in {} neurons",
                self.planted_per_class * self.num_classes,
                self.geometry().total()
            ));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|c| format!("class_{c:02}")).collect()
    }
}

/// Ground truth: the planted neurons of each class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantMap {
    pub class_names: Vec<String>,
    /// Sorted per class.
    pub planted: Vec<Vec<NeuronId>>,
}

impl PlantMap {
    pub fn pairs(&self) -> BTreeSet<(usize, NeuronId)> {
        self.planted
            .iter()
            .enumerate()
            .flat_map(|(c, ids)| ids.iter().map(move |&id| (c, id)))
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Builds the planted dataset in memory. Sample `s` belongs to class `s % C`.
pub fn planted_dataset(spec: &PlantSpec) -> Result<(Dataset, PlantMap)> {
    spec.validate()?;
    let geometry = spec.geometry();
    let c = spec.num_classes;
    let n = spec.neurons_per_layer;
    let samples = c * spec.samples_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let chosen = index::sample(&mut rng, geometry.total(), spec.planted_per_class * c).into_vec();
    // owner[flat] = planted class of that neuron
    let mut owner = vec![None; geometry.total()];
    let mut planted = vec![Vec::new(); c];
    for (k, &flat) in chosen.iter().enumerate() {
        let class = k / spec.planted_per_class;
        owner[flat] = Some(class);
        planted[class].push(geometry.id_at(flat));
    }
    for ids in &mut planted {
        ids.sort();
    }

    let labels: Vec<u32> = (0..samples).map(|s| (s % c) as u32).collect();
    let mut tensors = Vec::with_capacity(spec.num_layers);
    for layer in 0..spec.num_layers {
        let mut values = Vec::with_capacity(samples * n);
        for &label in &labels {
            for j in 0..n {
                let p = match owner[layer * n + j] {
                    Some(cls) if cls == label as usize => spec.p_on,
                    Some(_) => spec.p_off,
                    None => spec.background_p,
                };
                let active = rng.random::<f64>() < p;
                let magnitude: f32 = rng.random();
                values.push(if active { 0.05 + magnitude } else { -magnitude });
            }
        }
        tensors.push(ActivationTensor::new(layer, samples, n, values)?);
    }
    let mut manifest = DatasetManifest::new("planted", geometry, samples, spec.class_names());
    manifest.aggregation = store::Aggregation::MeanTokens;
    Ok((
        Dataset {
            manifest,
            tensors,
            labels: ClassLabeling::new(labels),
        },
        PlantMap {
            class_names: spec.class_names(),
            planted,
        },
    ))
}

/// Writes the planted dataset to `dir` with the ground truth in `plants.json`.
pub fn generate_planted_dataset(spec: &PlantSpec, dir: &Path) -> Result<PlantMap> {
    let (ds, plants) = planted_dataset(spec)?;
    store::write_dataset(&ds.manifest, &ds.tensors, &ds.labels, dir)?;
    plants.write_json(&dir.join(PLANTS_FILE))?;
    Ok(plants)
}

/// Precision and recall of selected (class, neuron) pairs against the plants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub recall: f64,
    pub precision: f64,
    pub true_positives: usize,
    pub selected: usize,
    pub planted: usize,
}

pub fn recovery(sel: &NeuronSelection, plants: &PlantMap) -> Recovery {
    let truth = plants.pairs();
    let picked: BTreeSet<(usize, NeuronId)> = plants
        .class_names
        .iter()
        .enumerate()
        .filter_map(|(c, name)| sel.class_index(name).map(|k| (c, k)))
        .flat_map(|(c, k)| sel.class_set(k).into_iter().map(move |id| (c, id)))
        .collect();
    let tp = picked.intersection(&truth).count();
    Recovery {
        recall: if truth.is_empty() { 1.0 } else { tp as f64 / truth.len() as f64 },
        precision: if picked.is_empty() { 0.0 } else { tp as f64 / picked.len() as f64 },
        true_positives: tp,
        selected: picked.len(),
        planted: truth.len(),
    }
}
