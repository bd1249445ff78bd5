// SPDX-License-Identifier: MIT OR Apache-2.0

//! Brute-force reference implementations and random instance builders
//! shared by the integration tests. Nothing here calls the library code it
//! is compared against.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aape_core::select::{ActivityStatistic, AssignmentPopulation, SelectionConfig};
use aape_core::stats::ProbabilityTable;
use aape_core::store::{ActivationTensor, ClassLabeling, DatasetManifest, Geometry, NeuronId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct summation over classes in their given order.
pub fn oracle_entropy(p: &[f64]) -> f64 {
    let mut total = 0.0;
    for &v in p {
        total += v;
    }
    if total == 0.0 {
        return f64::INFINITY;
    }
    let mut h = 0.0;
    for &v in p {
        if v != 0.0 {
            h += -(v / total) * (v / total).ln();
        }
    }
    h
}

/// `[layer][neuron][class]` probabilities and `[layer][neuron]` pooled ones,
/// by counting every (sample, neuron) pair with a fresh loop.
pub fn oracle_probabilities(
    tensors: &[ActivationTensor],
    labels: &[u32],
    num_classes: usize,
) -> (Vec<f64>, Vec<f64>) {
    let layers = tensors.len();
    let n = tensors[0].neurons();
    let mut per_class = vec![0.0; layers * n * num_classes];
    let mut pooled = vec![0.0; layers * n];
    for (l, t) in tensors.iter().enumerate() {
        for j in 0..n {
            let mut hits = vec![0u64; num_classes];
            let mut sizes = vec![0u64; num_classes];
            for (s, &y) in labels.iter().enumerate() {
                sizes[y as usize] += 1;
                if t.get(s, j) > 0.0 {
                    hits[y as usize] += 1;
                }
            }
            for c in 0..num_classes {
                per_class[(l * n + j) * num_classes + c] = if sizes[c] == 0 {
                    0.0
                } else {
                    hits[c] as f64 / sizes[c] as f64
                };
            }
            pooled[l * n + j] = hits.iter().sum::<u64>() as f64 / labels.len() as f64;
        }
    }
    (per_class, pooled)
}

/// Smallest value `x` of `values` with `#{v <= x} >= q * M / 100`.
pub fn oracle_percentile(values: &[f64], q: f64) -> f64 {
    let need = q * values.len() as f64 / 100.0;
    let mut best = f64::INFINITY;
    for &x in values {
        let at_or_below = values.iter().filter(|&&v| v <= x).count() as f64;
        if at_or_below >= need && x < best {
            best = x;
        }
    }
    best
}

#[derive(Debug, PartialEq, Eq)]
pub enum OracleOutcome {
    Sets(Vec<BTreeSet<NeuronId>>),
    /// Failure at step 1, 2 or 3, either degenerate or empty.
    Failed(u8),
}

/// The three-step filter written as plain loops over a dense table.
pub fn oracle_select(
    geometry: Geometry,
    num_classes: usize,
    class_prob: &[f64],
    pooled: &[f64],
    scores: &[f64],
    cfg: &SelectionConfig,
) -> OracleOutcome {
    let total = geometry.total();
    let prob = |i: usize, c: usize| class_prob[i * num_classes + c];

    let mut activity = Vec::with_capacity(total);
    #[allow(clippy::needless_range_loop)]
    for i in 0..total {
        let a = match cfg.activity_statistic {
            ActivityStatistic::PeakClass => {
                let mut m = 0.0_f64;
                for c in 0..num_classes {
                    if prob(i, c) > m {
                        m = prob(i, c);
                    }
                }
                m
            }
            ActivityStatistic::Pooled => pooled[i],
        };
        activity.push(a);
    }
    if activity.iter().all(|&a| a == activity[0]) {
        return OracleOutcome::Failed(1);
    }
    let cut1 = oracle_percentile(&activity, cfg.low_activation_cut);
    let step1: Vec<usize> = (0..total)
        .filter(|&i| activity[i] > cut1 && scores[i] != f64::INFINITY)
        .collect();
    if step1.is_empty() {
        return OracleOutcome::Failed(1);
    }

    let s1_scores: Vec<f64> = step1.iter().map(|&i| scores[i]).collect();
    let cut2 = oracle_percentile(&s1_scores, cfg.r_aape);
    let step2: Vec<usize> = step1.into_iter().filter(|&i| scores[i] <= cut2).collect();

    let mut population = Vec::new();
    match cfg.assignment_population {
        AssignmentPopulation::AllNeurons => {
            for i in 0..total {
                for c in 0..num_classes {
                    population.push(prob(i, c));
                }
            }
        }
        AssignmentPopulation::Survivors => {
            for &i in &step2 {
                for c in 0..num_classes {
                    population.push(prob(i, c));
                }
            }
        }
    }
    let tau = oracle_percentile(&population, cfg.assignment_cut);
    let mut sets = vec![BTreeSet::new(); num_classes];
    for &i in &step2 {
        for (c, set) in sets.iter_mut().enumerate() {
            if prob(i, c) >= tau {
                set.insert(geometry.id_at(i));
            }
        }
    }
    if sets.iter().all(BTreeSet::is_empty) {
        return OracleOutcome::Failed(3);
    }
    OracleOutcome::Sets(sets)
}

/// Random table with probabilities on a coarse grid so that ties occur at
/// every percentile boundary. Some neurons never fire.
pub fn random_table(rng: &mut ChaCha8Rng, geometry: Geometry, num_classes: usize) -> ProbabilityTable {
    let total = geometry.total();
    let grid = rng.random_range(2..=10) as f64;
    let mut class_prob = Vec::with_capacity(total * num_classes);
    let mut pooled = Vec::with_capacity(total);
    for _ in 0..total {
        let silent = rng.random_bool(0.05);
        let mut sum = 0.0;
        for _ in 0..num_classes {
            let p = if silent { 0.0 } else { rng.random_range(0..=grid as u32) as f64 / grid };
            sum += p;
            class_prob.push(p);
        }
        pooled.push(sum / num_classes as f64);
    }
    ProbabilityTable::from_probabilities(geometry, num_classes, class_prob, pooled).unwrap()
}

/// Random activations whose sign pattern depends on the class.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    geometry: Geometry,
    num_classes: usize,
    samples: usize,
) -> (DatasetManifest, Vec<ActivationTensor>, ClassLabeling) {
    let labels: Vec<u32> = (0..samples).map(|_| rng.random_range(0..num_classes as u32)).collect();
    let bias: Vec<f64> = (0..geometry.total() * num_classes).map(|_| rng.random::<f64>()).collect();
    let n = geometry.neurons_per_layer;
    let tensors = (0..geometry.num_layers)
        .map(|l| {
            let mut values = Vec::with_capacity(samples * n);
            for &y in &labels {
                for j in 0..n {
                    let p = bias[(l * n + j) * num_classes + y as usize];
                    let v: f32 = if rng.random::<f64>() < p { rng.random_range(0.0..3.0) } else { -rng.random::<f32>() };
                    // exact zeros must count as inactive
                    values.push(if rng.random_bool(0.02) { 0.0 } else { v });
                }
            }
            ActivationTensor::new(l, samples, n, values).unwrap()
        })
        .collect();
    let names = (0..num_classes).map(|c| format!("c{c}")).collect();
    let manifest = DatasetManifest::new("random", geometry, samples, names);
    (manifest, tensors, ClassLabeling::new(labels))
}

pub fn sets_of(sel: &aape_core::select::NeuronSelection) -> Vec<BTreeSet<NeuronId>> {
    (0..sel.classes.len()).map(|c| sel.class_set(c)).collect()
}

pub fn all_configs(r_aape: f64, low: f64, assign: f64) -> Vec<SelectionConfig> {
    let mut out = Vec::new();
    for activity_statistic in [ActivityStatistic::PeakClass, ActivityStatistic::Pooled] {
        for assignment_population in [AssignmentPopulation::AllNeurons, AssignmentPopulation::Survivors] {
            out.push(SelectionConfig {
                r_aape,
                low_activation_cut: low,
                assignment_cut: assign,
                activity_statistic,
                assignment_population,
            });
        }
    }
    out
}

pub fn class_index_map(names: &[String]) -> BTreeMap<String, usize> {
    names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect()
}
