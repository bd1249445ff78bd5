// SPDX-License-Identifier: MIT OR Apache-2.0

//! Class-wise and pooled activation probabilities.
//!
//! A neuron is active on a sample when its stored value is strictly greater
//! than zero. Counting is done on exact integers in [`PartialCounts`]; the
//! single division to `f64` happens in [`PartialCounts::finalize`], so shards
//! merged in any order give bit-identical tables.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{self, ActivationTensor, ClassLabeling, DatasetManifest, Geometry, NeuronId};

pub const PROBS_MAGIC: &[u8; 8] = b"AAPEPRB1";

/// Integer activation counts over a declared set of sample ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialCounts {
    geometry: Geometry,
    num_classes: usize,
    /// Sorted, non-adjacent, non-empty half-open sample ranges.
    ranges: Vec<(u64, u64)>,
    class_counts: Vec<u64>,
    /// Indexed `[layer][class][neuron]`.
    active: Vec<u64>,
}

impl PartialCounts {
    /// The identity element for [`merge_partial_counts`].
    pub fn empty(geometry: Geometry, num_classes: usize) -> Self {
        PartialCounts {
            geometry,
            num_classes,
            ranges: Vec::new(),
            class_counts: vec![0; num_classes],
            active: vec![0; geometry.total() * num_classes],
        }
    }

    /// Starts a shard covering samples `start..start + labels.len()`.
    pub fn for_shard(
        geometry: Geometry,
        num_classes: usize,
        start: usize,
        labels: &[u32],
    ) -> Result<Self> {
        let mut out = Self::empty(geometry, num_classes);
        for (i, &c) in labels.iter().enumerate() {
            let slot = out.class_counts.get_mut(c as usize).ok_or(Error::LabelRange {
                sample: start + i,
                index: c.into(),
                num_classes,
            })?;
            *slot += 1;
        }
        if !labels.is_empty() {
            out.ranges.push((start as u64, (start + labels.len()) as u64));
        }
        Ok(out)
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<u64>> + '_ {
        self.ranges.iter().map(|&(a, b)| a..b)
    }

    pub fn num_samples(&self) -> u64 {
        self.class_counts.iter().sum()
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    /// Number of class-`class` samples on which `id` was active.
    pub fn active_count(&self, id: NeuronId, class: usize) -> u64 {
        let n = self.geometry.neurons_per_layer;
        self.active[(id.layer as usize * self.num_classes + class) * n + id.neuron as usize]
    }

    /// Adds one layer's rows for this shard's samples, in shard order.
    ///
    /// `values` is `labels.len() x N` row-major and `labels` must be the same
    /// slice the shard was created with.
    pub fn accumulate_layer(&mut self, layer: usize, values: &[f32], labels: &[u32]) -> Result<()> {
        let n = self.geometry.neurons_per_layer;
        if layer >= self.geometry.num_layers {
            return Err(Error::Geometry(format!(
                "layer {layer} outside {} layers",
                self.geometry.num_layers
            )));
        }
        if values.len() != labels.len() * n {
            return Err(Error::Geometry(format!(
                "{} values for {} samples of {n} neurons",
                values.len(),
                labels.len()
            )));
        }
        let block = &mut self.active[layer * self.num_classes * n..(layer + 1) * self.num_classes * n];
        count_rows(block, n, self.num_classes, values, labels, layer)
    }

    /// Converts counts to probabilities. Classes without samples get 0.
    pub fn finalize(&self) -> ProbabilityTable {
        let Geometry {
            num_layers,
            neurons_per_layer: n,
        } = self.geometry;
        let c = self.num_classes;
        let total = self.num_samples();
        let mut class_prob = vec![0f64; num_layers * n * c];
        let mut pooled_prob = vec![0f64; num_layers * n];
        for l in 0..num_layers {
            for j in 0..n {
                let mut pooled = 0u64;
                for k in 0..c {
                    let a = self.active[(l * c + k) * n + j];
                    pooled += a;
                    let denom = self.class_counts[k];
                    class_prob[(l * n + j) * c + k] = if denom == 0 { 0.0 } else { a as f64 / denom as f64 };
                }
                pooled_prob[l * n + j] = if total == 0 { 0.0 } else { pooled as f64 / total as f64 };
            }
        }
        ProbabilityTable {
            geometry: self.geometry,
            num_classes: c,
            class_counts: self.class_counts.clone(),
            class_prob,
            pooled_prob,
        }
    }
}

fn count_rows(
    block: &mut [u64],
    n: usize,
    num_classes: usize,
    values: &[f32],
    labels: &[u32],
    layer: usize,
) -> Result<()> {
    for (s, (row, &label)) in values.chunks_exact(n).zip(labels).enumerate() {
        let c = label as usize;
        if c >= num_classes {
            return Err(Error::LabelRange {
                sample: s,
                index: label.into(),
                num_classes,
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer,
                sample: s,
                neuron: j,
            });
        }
        for (dst, &v) in block[c * n..(c + 1) * n].iter_mut().zip(row) {
            *dst += u64::from(v > 0.0);
        }
    }
    Ok(())
}

/// Commutative, associative merge of two shards with disjoint sample ranges.
pub fn merge_partial_counts(a: &PartialCounts, b: &PartialCounts) -> Result<PartialCounts> {
    if a.geometry != b.geometry {
        return Err(Error::Geometry(format!("{} vs {}", a.geometry, b.geometry)));
    }
    if a.num_classes != b.num_classes {
        return Err(Error::Geometry(format!(
            "{} classes vs {} classes",
            a.num_classes, b.num_classes
        )));
    }
    let mut ranges: Vec<(u64, u64)> = a.ranges.iter().chain(&b.ranges).copied().collect();
    ranges.sort_unstable();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::OverlappingShards(format!(
                "{}..{} and {}..{}",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    let mut coalesced: Vec<(u64, u64)> = Vec::with_capacity(ranges.len());
    for r in ranges {
        match coalesced.last_mut() {
            Some(last) if last.1 == r.0 => last.1 = r.1,
            _ => coalesced.push(r),
        }
    }
    Ok(PartialCounts {
        geometry: a.geometry,
        num_classes: a.num_classes,
        ranges: coalesced,
        class_counts: a.class_counts.iter().zip(&b.class_counts).map(|(x, y)| x + y).collect(),
        active: a.active.iter().zip(&b.active).map(|(x, y)| x + y).collect(),
    })
}

/// `P(c)` for every neuron and class, plus the pooled activation probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    geometry: Geometry,
    num_classes: usize,
    /// Empty when the table was loaded from `probs.bin`, which carries no counts.
    class_counts: Vec<u64>,
    /// Indexed `[layer][neuron][class]`.
    class_prob: Vec<f64>,
    /// Indexed `[layer][neuron]`.
    pooled_prob: Vec<f64>,
}

impl ProbabilityTable {
    /// Builds a table from precomputed probabilities, e.g. for synthetic tests.
    pub fn from_probabilities(
        geometry: Geometry,
        num_classes: usize,
        class_prob: Vec<f64>,
        pooled_prob: Vec<f64>,
    ) -> Result<Self> {
        if class_prob.len() != geometry.total() * num_classes || pooled_prob.len() != geometry.total() {
            return Err(Error::Geometry(format!(
                "{} class and {} pooled probabilities for geometry {geometry} with {num_classes} classes",
                class_prob.len(),
                pooled_prob.len()
            )));
        }
        if let Some(p) = class_prob
            .iter()
            .chain(&pooled_prob)
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
        Ok(ProbabilityTable {
            geometry,
            num_classes,
            class_counts: Vec::new(),
            class_prob,
            pooled_prob,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    /// All class probabilities of one neuron, in class order.
    pub fn class_probs(&self, id: NeuronId) -> &[f64] {
        let i = self.geometry.flat_index(id) * self.num_classes;
        &self.class_prob[i..i + self.num_classes]
    }

    pub fn class_prob(&self, id: NeuronId, class: usize) -> f64 {
        self.class_probs(id)[class]
    }

    pub fn pooled(&self, id: NeuronId) -> f64 {
        self.pooled_prob[self.geometry.flat_index(id)]
    }

    /// Flat `[layer][neuron][class]` view.
    pub fn class_prob_flat(&self) -> &[f64] {
        &self.class_prob
    }

    pub fn pooled_flat(&self) -> &[f64] {
        &self.pooled_prob
    }

    /// Writes the `probs.bin` dump: magic, `u32` LE `L, N, C`, then the class
    /// probabilities and the pooled probabilities as `f64` LE.
    pub fn write_bin(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(20 + 8 * (self.class_prob.len() + self.pooled_prob.len()));
        bytes.extend_from_slice(PROBS_MAGIC);
        for d in [self.geometry.num_layers, self.geometry.neurons_per_layer, self.num_classes] {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for p in self.class_prob.iter().chain(&self.pooled_prob) {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_bin(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: 20,
                found: bytes.len() as u64,
            });
        }
        if &bytes[..8] != PROBS_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: String::from_utf8_lossy(PROBS_MAGIC).into_owned(),
            });
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
        let (l, n, c) = (dim(0), dim(1), dim(2));
        let count = l * n * c + l * n;
        let expected = 20 + 8 * count as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: bytes.len() as u64,
            });
        }
        let mut vals = bytes[20..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let class_prob: Vec<f64> = vals.by_ref().take(l * n * c).collect();
        let pooled_prob: Vec<f64> = vals.collect();
        Self::from_probabilities(Geometry::new(l, n), c, class_prob, pooled_prob)
    }
}

fn check_geometry(tensors: &[ActivationTensor], labels: &ClassLabeling, manifest: &DatasetManifest) -> Result<()> {
    if tensors.len() != manifest.num_layers {
        return Err(Error::Geometry(format!(
            "{} tensors for {} layers",
            tensors.len(),
            manifest.num_layers
        )));
    }
    if labels.len() != manifest.num_samples {
        return Err(Error::LabelCount {
            expected: manifest.num_samples,
            found: labels.len(),
        });
    }
    for (l, t) in tensors.iter().enumerate() {
        if t.layer() != l || t.samples() != manifest.num_samples || t.neurons() != manifest.neurons_per_layer {
            return Err(Error::Geometry(format!(
                "tensor {l} (layer {}, {}x{}) does not match manifest {}x{}",
                t.layer(),
                t.samples(),
                t.neurons(),
                manifest.num_samples,
                manifest.neurons_per_layer
            )));
        }
    }
    Ok(())
}

/// Counts active samples for the rows `range` of in-memory tensors.
pub fn count_shard(
    tensors: &[ActivationTensor],
    labels: &ClassLabeling,
    manifest: &DatasetManifest,
    range: Range<usize>,
) -> Result<PartialCounts> {
    check_geometry(tensors, labels, manifest)?;
    if range.end > manifest.num_samples || range.start > range.end {
        return Err(Error::Geometry(format!(
            "shard {}..{} outside {} samples",
            range.start, range.end, manifest.num_samples
        )));
    }
    let n = manifest.neurons_per_layer;
    let shard_labels = &labels.as_slice()[range.clone()];
    let mut counts = PartialCounts::for_shard(manifest.geometry(), manifest.num_classes(), range.start, shard_labels)?;
    let block_len = manifest.num_classes() * n;
    counts
        .active
        .par_chunks_mut(block_len)
        .zip(tensors.par_iter())
        .try_for_each(|(block, t)| {
            let values = &t.values()[range.start * n..range.end * n];
            count_rows(block, n, manifest.num_classes(), values, shard_labels, t.layer())
                .map_err(|e| offset_sample(e, range.start))
        })?;
    Ok(counts)
}

fn offset_sample(e: Error, start: usize) -> Error {
    match e {
        Error::NonFinite { layer, sample, neuron } => Error::NonFinite {
            layer,
            sample: sample + start,
            neuron,
        },
        Error::LabelRange { sample, index, num_classes } => Error::LabelRange {
            sample: sample + start,
            index,
            num_classes,
        },
        other => other,
    }
}

/// Single pass over in-memory tensors.
pub fn compute_probabilities(
    tensors: &[ActivationTensor],
    labels: &ClassLabeling,
    manifest: &DatasetManifest,
) -> Result<ProbabilityTable> {
    Ok(count_shard(tensors, labels, manifest, 0..manifest.num_samples)?.finalize())
}

/// Streams a dataset directory one row at a time, layers in parallel.
pub fn count_dataset_dir(dir: &Path) -> Result<(DatasetManifest, PartialCounts)> {
    let (manifest, labels) = store::read_header(dir)?;
    let n = manifest.neurons_per_layer;
    let c = manifest.num_classes();
    let mut counts = PartialCounts::for_shard(manifest.geometry(), c, 0, labels.as_slice())?;
    counts
        .active
        .par_chunks_mut(c * n)
        .enumerate()
        .try_for_each(|(layer, block)| -> Result<()> {
            let mut reader = store::open_layer(dir, &manifest, layer)?;
            let mut row = vec![0f32; n];
            let mut s = 0;
            while reader.next_row_into(&mut row)? {
                let label = labels.as_slice()[s];
                count_rows(block, n, c, &row, &[label], layer).map_err(|e| offset_sample(e, s))?;
                s += 1;
            }
            Ok(())
        })?;
    Ok((manifest, counts))
}

pub fn compute_probabilities_from_dir(dir: &Path) -> Result<(DatasetManifest, ProbabilityTable)> {
    let (manifest, counts) = count_dataset_dir(dir)?;
    Ok((manifest, counts.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_sample() -> (DatasetManifest, Vec<ActivationTensor>, ClassLabeling) {
        let manifest = DatasetManifest::new("t", Geometry::new(1, 1), 4, vec!["a".into(), "b".into()]);
        let t = ActivationTensor::new(0, 4, 1, vec![1.0, -1.0, 0.0, 2.0]).unwrap();
        (manifest, vec![t], vec![0, 0, 1, 1].into())
    }

    /// Counts by scanning every (sample, neuron) pair independently of the
    /// row-blocked implementation.
    fn brute_force(
        tensors: &[ActivationTensor],
        labels: &ClassLabeling,
        num_classes: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = tensors[0].neurons();
        let mut class_prob = Vec::new();
        let mut pooled = Vec::new();
        for t in tensors {
            for j in 0..n {
                let mut total_active = 0usize;
                for c in 0..num_classes {
                    let members: Vec<usize> = (0..t.samples())
                        .filter(|&s| labels.as_slice()[s] as usize == c)
                        .collect();
                    let active = members.iter().filter(|&&s| t.get(s, j) > 0.0).count();
                    total_active += active;
                    class_prob.push(if members.is_empty() {
                        0.0
                    } else {
                        active as f64 / members.len() as f64
                    });
                }
                pooled.push(total_active as f64 / t.samples() as f64);
            }
        }
        (class_prob, pooled)
    }

    #[test]
    fn four_sample_example() {
        let (m, t, labels) = four_sample();
        let table = compute_probabilities(&t, &labels, &m).unwrap();
        let id = NeuronId::new(0, 0);
        assert_eq!(table.class_probs(id), &[0.5, 0.5]);
        assert_eq!(table.pooled(id), 0.5);
        let (cp, pooled) = brute_force(&t, &labels, 2);
        assert_eq!(table.class_prob_flat(), cp.as_slice());
        assert_eq!(table.pooled_flat(), pooled.as_slice());
    }

    #[test]
    fn exactly_zero_is_inactive_and_always_positive_is_one() {
        let m = DatasetManifest::new("t", Geometry::new(1, 2), 3, vec!["a".into(), "b".into()]);
        let t = ActivationTensor::new(0, 3, 2, vec![0.0, 1e-30, 0.0, 3.0, -0.0, 0.5]).unwrap();
        let table = compute_probabilities(&[t], &vec![0, 0, 1].into(), &m).unwrap();
        assert_eq!(table.class_probs(NeuronId::new(0, 0)), &[0.0, 0.0]);
        assert_eq!(table.class_probs(NeuronId::new(0, 1)), &[1.0, 1.0]);
    }

    #[test]
    fn zero_sample_class_gets_zero() {
        let m = DatasetManifest::new("t", Geometry::new(1, 1), 2, vec!["a".into(), "b".into(), "c".into()]);
        let t = ActivationTensor::new(0, 2, 1, vec![1.0, 1.0]).unwrap();
        let table = compute_probabilities(&[t], &vec![0, 2].into(), &m).unwrap();
        assert_eq!(table.class_probs(NeuronId::new(0, 0)), &[1.0, 0.0, 1.0]);
        assert_eq!(table.class_counts(), &[1, 0, 1]);
    }

    #[test]
    fn shards_merge_to_single_pass() {
        let (m, t, labels) = four_sample();
        let whole = count_shard(&t, &labels, &m, 0..4).unwrap();
        let a = count_shard(&t, &labels, &m, 0..2).unwrap();
        let b = count_shard(&t, &labels, &m, 2..4).unwrap();
        let ab = merge_partial_counts(&a, &b).unwrap();
        assert_eq!(ab, whole);
        assert_eq!(merge_partial_counts(&b, &a).unwrap(), whole);
        let empty = PartialCounts::empty(m.geometry(), 2);
        assert_eq!(merge_partial_counts(&a, &empty).unwrap(), a);
        assert_eq!(ab.finalize(), compute_probabilities(&t, &labels, &m).unwrap());
    }

    #[test]
    fn merge_errors() {
        let (m, t, labels) = four_sample();
        let a = count_shard(&t, &labels, &m, 0..3).unwrap();
        let b = count_shard(&t, &labels, &m, 2..4).unwrap();
        assert!(matches!(merge_partial_counts(&a, &b), Err(Error::OverlappingShards(_))));
        let other = PartialCounts::empty(Geometry::new(2, 1), 2);
        assert!(matches!(merge_partial_counts(&a, &other), Err(Error::Geometry(_))));
        let other = PartialCounts::empty(m.geometry(), 3);
        assert!(matches!(merge_partial_counts(&a, &other), Err(Error::Geometry(_))));
    }

    #[test]
    fn non_finite_and_geometry_errors() {
        let (m, mut t, labels) = four_sample();
        t[0].values_mut()[2] = f32::NAN;
        assert!(matches!(
            compute_probabilities(&t, &labels, &m),
            Err(Error::NonFinite { sample: 2, .. })
        ));
        let (m, t, _) = four_sample();
        assert!(matches!(
            compute_probabilities(&t, &vec![0, 1].into(), &m),
            Err(Error::LabelCount { .. })
        ));
    }

    #[test]
    fn probs_bin_round_trip() {
        let (m, t, labels) = four_sample();
        let table = compute_probabilities(&t, &labels, &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probs.bin");
        table.write_bin(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 8 + 12 + 8 * 3);
        assert_eq!(&bytes[..8], b"AAPEPRB1");
        let back = ProbabilityTable::read_bin(&path).unwrap();
        assert_eq!(back.class_prob_flat(), table.class_prob_flat());
        assert_eq!(back.pooled_flat(), table.pooled_flat());
    }

    #[test]
    fn streaming_from_dir_matches_in_memory() {
        let (m, t, labels) = four_sample();
        let dir = tempfile::tempdir().unwrap();
        store::write_dataset(&m, &t, &labels, dir.path()).unwrap();
        let (_, from_dir) = compute_probabilities_from_dir(dir.path()).unwrap();
        assert_eq!(from_dir, compute_probabilities(&t, &labels, &m).unwrap());
    }
}
