// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk activation datasets.
//!
//! A dataset directory holds three kinds of files:
//!
//! - `manifest.json`: the [`DatasetManifest`].
//! - `layer_<ll>.bin`, one per layer: magic `AAPEDAT1`, `u32` LE sample count,
//!   `u32` LE neuron count, then `S * N` little-endian `f32` values stored
//!   row-major (one row per sample).
//! - `labels.csv`: header `sample_id,class_index` followed by one row per
//!   sample, `sample_id` being the row ordinal.
//!
//! Activations are token-aggregated before they are stored, so each file row
//! holds exactly one scalar per neuron.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_MAGIC: &[u8; 8] = b"AAPEDAT1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const DTYPE_F32LE: &str = "f32le";
const LAYER_HEADER_LEN: u64 = 16;

/// File name of the activation file for `layer`.
pub fn layer_file_name(layer: usize) -> String {
    format!("layer_{layer:02}.bin")
}

/// Identifies one neuron as `(layer, neuron index within the layer)`.
///
/// Ordering is lexicographic on `(layer, neuron)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: u32,
    pub neuron: u32,
}

impl NeuronId {
    pub const fn new(layer: u32, neuron: u32) -> Self {
        NeuronId { layer, neuron }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.layer, self.neuron)
    }
}

/// Number of layers and (uniform) neurons per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub num_layers: usize,
    pub neurons_per_layer: usize,
}

impl Geometry {
    pub const fn new(num_layers: usize, neurons_per_layer: usize) -> Self {
        Geometry {
            num_layers,
            neurons_per_layer,
        }
    }

    pub const fn total(&self) -> usize {
        self.num_layers * self.neurons_per_layer
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        (id.layer as usize) < self.num_layers && (id.neuron as usize) < self.neurons_per_layer
    }

    /// Flat index `layer * N + neuron`.
    pub fn flat_index(&self, id: NeuronId) -> usize {
        id.layer as usize * self.neurons_per_layer + id.neuron as usize
    }

    pub fn id_at(&self, flat: usize) -> NeuronId {
        NeuronId::new(
            (flat / self.neurons_per_layer) as u32,
            (flat % self.neurons_per_layer) as u32,
        )
    }

    /// Every neuron in `NeuronId` order.
    pub fn ids(&self) -> impl Iterator<Item = NeuronId> + '_ {
        (0..self.total()).map(|i| self.id_at(i))
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.num_layers, self.neurons_per_layer)
    }
}

/// How per-token activations were reduced to one value per sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanTokens,
    MaxTokens,
    FracPositiveTokens,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task_name: String,
    pub num_layers: usize,
    pub neurons_per_layer: usize,
    pub num_samples: usize,
    pub class_names: Vec<String>,
    pub aggregation: Aggregation,
    pub dtype: String,
}

impl DatasetManifest {
    pub fn new(
        task_name: impl Into<String>,
        geometry: Geometry,
        num_samples: usize,
        class_names: Vec<String>,
    ) -> Self {
        DatasetManifest {
            task_name: task_name.into(),
            num_layers: geometry.num_layers,
            neurons_per_layer: geometry.neurons_per_layer,
            num_samples,
            class_names,
            aggregation: Aggregation::MeanTokens,
            dtype: DTYPE_F32LE.to_string(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.num_layers, self.neurons_per_layer)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Problems with the manifest itself; empty when it is well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_layers == 0 {
            out.push("num_layers must be >= 1".to_string());
        }
        if self.neurons_per_layer == 0 {
            out.push("neurons_per_layer must be >= 1".to_string());
        }
        if self.num_samples == 0 {
            out.push("num_samples must be >= 1".to_string());
        }
        if self.class_names.len() < 2 {
            out.push(format!(
                "at least 2 classes required, found {}",
                self.class_names.len()
            ));
        }
        let mut seen = HashSet::new();
        for name in &self.class_names {
            if !seen.insert(name.as_str()) {
                out.push(format!("duplicate class name {name:?}"));
            }
        }
        if self.dtype != DTYPE_F32LE {
            out.push(format!("unsupported dtype {:?}", self.dtype));
        }
        if self.num_layers > u32::MAX as usize || self.neurons_per_layer > u32::MAX as usize {
            out.push("geometry exceeds u32 range".to_string());
        }
        if self.num_samples > u32::MAX as usize {
            out.push("num_samples exceeds u32 range".to_string());
        }
        out
    }

    fn check(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(p) => Err(Error::Manifest(p)),
            None => Ok(()),
        }
    }
}

/// Dense `samples x neurons` activations of one layer, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTensor {
    layer: usize,
    samples: usize,
    neurons: usize,
    values: Vec<f32>,
}

impl ActivationTensor {
    pub fn new(layer: usize, samples: usize, neurons: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != samples * neurons {
            return Err(Error::Shape(format!(
                "layer {layer}: {} values for a {samples}x{neurons} tensor",
                values.len()
            )));
        }
        Ok(ActivationTensor {
            layer,
            samples,
            neurons,
            values,
        })
    }

    pub fn from_rows(layer: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let neurons = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != neurons) {
            return Err(Error::Shape(format!(
                "layer {layer}: row {bad} has {} values, expected {neurons}",
                rows[bad].len()
            )));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(layer, rows.len(), neurons, values)
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn row(&self, sample: usize) -> &[f32] {
        &self.values[sample * self.neurons..(sample + 1) * self.neurons]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.neurons.max(1))
    }

    pub fn get(&self, sample: usize, neuron: usize) -> f32 {
        self.values[sample * self.neurons + neuron]
    }

    /// Position of the first non-finite value as `(sample, neuron)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.neurons, i % self.neurons))
    }
}

/// Class index of every sample, aligned with activation rows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabeling(Vec<u32>);

impl ClassLabeling {
    pub fn new(labels: Vec<u32>) -> Self {
        ClassLabeling(labels)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Samples per class. Panics if a label is out of range.
    pub fn class_counts(&self, num_classes: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_classes];
        for &c in &self.0 {
            counts[c as usize] += 1;
        }
        counts
    }

    pub fn first_out_of_range(&self, num_classes: usize) -> Option<(usize, u32)> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, &c)| c as usize >= num_classes)
            .map(|(i, &c)| (i, c))
    }
}

impl From<Vec<u32>> for ClassLabeling {
    fn from(v: Vec<u32>) -> Self {
        ClassLabeling(v)
    }
}

/// A fully loaded dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub tensors: Vec<ActivationTensor>,
    pub labels: ClassLabeling,
}

impl Dataset {
    /// Checks every in-memory invariant that `write_dataset` relies on.
    pub fn check(&self) -> Result<()> {
        check_parts(&self.manifest, &self.tensors, &self.labels)
    }
}

fn check_parts(
    manifest: &DatasetManifest,
    tensors: &[ActivationTensor],
    labels: &ClassLabeling,
) -> Result<()> {
    manifest.check()?;
    if tensors.len() != manifest.num_layers {
        return Err(Error::Shape(format!(
            "{} tensors for {} layers",
            tensors.len(),
            manifest.num_layers
        )));
    }
    for (l, t) in tensors.iter().enumerate() {
        if t.layer != l {
            return Err(Error::Shape(format!(
                "tensor at position {l} declares layer {}",
                t.layer
            )));
        }
        if t.samples != manifest.num_samples || t.neurons != manifest.neurons_per_layer {
            return Err(Error::Shape(format!(
                "layer {l} is {}x{}, manifest says {}x{}",
                t.samples, t.neurons, manifest.num_samples, manifest.neurons_per_layer
            )));
        }
        if let Some((sample, neuron)) = t.first_non_finite() {
            return Err(Error::NonFinite {
                layer: l,
                sample,
                neuron,
            });
        }
    }
    if labels.len() != manifest.num_samples {
        return Err(Error::LabelCount {
            expected: manifest.num_samples,
            found: labels.len(),
        });
    }
    if let Some((sample, index)) = labels.first_out_of_range(manifest.num_classes()) {
        return Err(Error::LabelRange {
            sample,
            index: index.into(),
            num_classes: manifest.num_classes(),
        });
    }
    Ok(())
}

/// Writes `manifest.json`, one `layer_<ll>.bin` per layer and `labels.csv`.
pub fn write_dataset(
    manifest: &DatasetManifest,
    tensors: &[ActivationTensor],
    labels: &ClassLabeling,
    dir: &Path,
) -> Result<()> {
    check_parts(manifest, tensors, labels)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_manifest(manifest, &dir.join(MANIFEST_FILE))?;
    for t in tensors {
        write_layer_file(t, &dir.join(layer_file_name(t.layer)))?;
    }
    write_labels(labels, &dir.join(LABELS_FILE))
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))
}

pub fn write_layer_file(tensor: &ActivationTensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(LAYER_MAGIC).map_err(io)?;
    w.write_all(&(tensor.samples as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(tensor.neurons as u32).to_le_bytes()).map_err(io)?;
    for v in &tensor.values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_labels(labels: &ClassLabeling, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(b"sample_id,class_index\n").map_err(io)?;
    for (i, c) in labels.0.iter().enumerate() {
        writeln!(w, "{i},{c}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Sequential reader over the rows of one layer file.
///
/// The header and the total file length are checked on open, so a truncated
/// file is reported before any row is consumed.
pub struct LayerReader {
    path: PathBuf,
    layer: usize,
    samples: usize,
    neurons: usize,
    next_row: usize,
    reader: BufReader<File>,
    buf: Vec<u8>,
}

impl LayerReader {
    pub fn open(path: &Path, layer: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut reader = BufReader::with_capacity(1 << 20, file);
        let mut header = [0u8; LAYER_HEADER_LEN as usize];
        if file_len < LAYER_HEADER_LEN {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: LAYER_HEADER_LEN,
                found: file_len,
            });
        }
        reader
            .read_exact(&mut header)
            .map_err(|e| Error::io(path, e))?;
        if &header[..8] != LAYER_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: String::from_utf8_lossy(LAYER_MAGIC).into_owned(),
            });
        }
        let samples = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        let neurons = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
        let expected = LAYER_HEADER_LEN + 4 * samples as u64 * neurons as u64;
        if file_len < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: file_len,
            });
        }
        if file_len > expected {
            return Err(Error::Shape(format!(
                "{}: {} trailing bytes after {samples}x{neurons} values",
                path.display(),
                file_len - expected
            )));
        }
        Ok(LayerReader {
            path: path.to_path_buf(),
            layer,
            samples,
            neurons,
            next_row: 0,
            reader,
            buf: vec![0u8; neurons * 4],
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    /// Reads the next row into `out` (length `neurons`). Returns `Ok(false)`
    /// once every row has been read.
    pub fn next_row_into(&mut self, out: &mut [f32]) -> Result<bool> {
        if self.next_row == self.samples {
            return Ok(false);
        }
        debug_assert_eq!(out.len(), self.neurons);
        self.reader
            .read_exact(&mut self.buf)
            .map_err(|e| Error::io(&self.path, e))?;
        for (n, (dst, src)) in out.iter_mut().zip(self.buf.chunks_exact(4)).enumerate() {
            let v = f32::from_le_bytes(src.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    layer: self.layer,
                    sample: self.next_row,
                    neuron: n,
                });
            }
            *dst = v;
        }
        self.next_row += 1;
        Ok(true)
    }

    pub fn read_all(mut self) -> Result<ActivationTensor> {
        let mut values = vec![0f32; self.samples * self.neurons];
        for row in values.chunks_exact_mut(self.neurons.max(1)) {
            self.next_row_into(row)?;
        }
        ActivationTensor::new(self.layer, self.samples, self.neurons, values)
    }
}

/// Opens `layer`'s file in `dir` and checks its header against `manifest`.
pub fn open_layer(dir: &Path, manifest: &DatasetManifest, layer: usize) -> Result<LayerReader> {
    let path = dir.join(layer_file_name(layer));
    let reader = LayerReader::open(&path, layer)?;
    if reader.samples != manifest.num_samples || reader.neurons != manifest.neurons_per_layer {
        return Err(Error::Shape(format!(
            "{}: header says {}x{}, manifest says {}x{}",
            path.display(),
            reader.samples,
            reader.neurons,
            manifest.num_samples,
            manifest.neurons_per_layer
        )));
    }
    Ok(reader)
}

/// Parses `labels.csv` without checking it against a manifest.
pub fn read_labels(path: &Path) -> Result<ClassLabeling> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let malformed = |detail: String| Error::Parse {
        what: "labels.csv",
        detail,
    };
    let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?;
    if headers != vec!["sample_id", "class_index"] {
        return Err(malformed(format!(
            "header must be sample_id,class_index, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("row {row}: bad sample_id {:?}", &rec[0])))?;
        if id != row {
            return Err(malformed(format!("row {row}: sample_id {id} is not the row ordinal")));
        }
        let class: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|_| malformed(format!("row {row}: bad class_index {:?}", &rec[1])))?;
        labels.push(class);
    }
    Ok(ClassLabeling(labels))
}

/// Reads the manifest and labels and checks them against each other.
pub fn read_header(dir: &Path) -> Result<(DatasetManifest, ClassLabeling)> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    manifest.check()?;
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    if labels.len() != manifest.num_samples {
        return Err(Error::LabelCount {
            expected: manifest.num_samples,
            found: labels.len(),
        });
    }
    if let Some((sample, index)) = labels.first_out_of_range(manifest.num_classes()) {
        return Err(Error::LabelRange {
            sample,
            index: index.into(),
            num_classes: manifest.num_classes(),
        });
    }
    Ok((manifest, labels))
}

/// Loads a whole dataset. Exact inverse of [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (manifest, labels) = read_header(dir)?;
    let tensors = (0..manifest.num_layers)
        .map(|l| open_layer(dir, &manifest, l)?.read_all())
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest,
        tensors,
        labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    ManifestMissing,
    ManifestInvalid,
    LayerFileMissing,
    BadMagic,
    HeaderMismatch,
    Truncated,
    NonFinite,
    LabelsMissing,
    LabelsMalformed,
    LabelCountMismatch,
    LabelOutOfRange,
    ZeroSampleClass,
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IssueKind::ManifestMissing => "manifest missing",
            IssueKind::ManifestInvalid => "manifest invalid",
            IssueKind::LayerFileMissing => "layer file missing",
            IssueKind::BadMagic => "bad magic",
            IssueKind::HeaderMismatch => "header mismatch",
            IssueKind::Truncated => "truncated file",
            IssueKind::NonFinite => "non-finite value",
            IssueKind::LabelsMissing => "labels missing",
            IssueKind::LabelsMalformed => "labels malformed",
            IssueKind::LabelCountMismatch => "label count mismatch",
            IssueKind::LabelOutOfRange => "label out of range",
            IssueKind::ZeroSampleClass => "zero-sample class",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub detail: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

/// Outcome of [`validate_dataset`]. `violations` is empty iff the dataset loads.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn violation(&mut self, kind: IssueKind, detail: impl Into<String>) {
        self.violations.push(Issue {
            kind,
            detail: detail.into(),
        });
    }

    fn warning(&mut self, kind: IssueKind, detail: impl Into<String>) {
        self.warnings.push(Issue {
            kind,
            detail: detail.into(),
        });
    }
}

fn not_found(e: &Error) -> bool {
    matches!(e, Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound)
}

/// Checks a dataset directory without failing on the first problem.
///
/// Only I/O failures other than missing files are returned as errors; every
/// format problem becomes a report entry.
pub fn validate_dataset(dir: &Path) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = match read_manifest(&manifest_path) {
        Ok(m) => m,
        Err(e) if not_found(&e) => {
            report.violation(IssueKind::ManifestMissing, manifest_path.display().to_string());
            return Ok(report);
        }
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => {
            report.violation(IssueKind::ManifestInvalid, e.to_string());
            return Ok(report);
        }
    };
    let problems = manifest.problems();
    let manifest_ok = problems.is_empty();
    for p in problems {
        report.violation(IssueKind::ManifestInvalid, p);
    }

    for layer in 0..manifest.num_layers {
        let path = dir.join(layer_file_name(layer));
        let reader = match LayerReader::open(&path, layer) {
            Ok(r) => r,
            Err(e) if not_found(&e) => {
                report.violation(IssueKind::LayerFileMissing, path.display().to_string());
                continue;
            }
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e @ Error::BadMagic { .. }) => {
                report.violation(IssueKind::BadMagic, e.to_string());
                continue;
            }
            Err(e @ Error::Truncated { .. }) => {
                report.violation(IssueKind::Truncated, e.to_string());
                continue;
            }
            Err(e) => {
                report.violation(IssueKind::HeaderMismatch, e.to_string());
                continue;
            }
        };
        if reader.samples != manifest.num_samples || reader.neurons != manifest.neurons_per_layer {
            report.violation(
                IssueKind::HeaderMismatch,
                format!(
                    "{}: header says {}x{}, manifest says {}x{}",
                    path.display(),
                    reader.samples,
                    reader.neurons,
                    manifest.num_samples,
                    manifest.neurons_per_layer
                ),
            );
            continue;
        }
        match reader.read_all() {
            Ok(_) => {}
            Err(e @ Error::NonFinite { .. }) => report.violation(IssueKind::NonFinite, e.to_string()),
            Err(e) => return Err(e),
        }
    }

    let labels_path = dir.join(LABELS_FILE);
    match read_labels(&labels_path) {
        Ok(labels) => {
            if labels.len() != manifest.num_samples {
                report.violation(
                    IssueKind::LabelCountMismatch,
                    format!("expected {}, found {}", manifest.num_samples, labels.len()),
                );
            }
            let num_classes = manifest.num_classes();
            let mut counts = vec![0u64; num_classes];
            for (sample, &c) in labels.as_slice().iter().enumerate() {
                match counts.get_mut(c as usize) {
                    Some(n) => *n += 1,
                    None => report.violation(
                        IssueKind::LabelOutOfRange,
                        format!("sample {sample} has class index {c} ({num_classes} classes)"),
                    ),
                }
            }
            if manifest_ok {
                for (c, &n) in counts.iter().enumerate() {
                    if n == 0 {
                        report.warning(
                            IssueKind::ZeroSampleClass,
                            format!("class {c} ({}) has no samples", manifest.class_names[c]),
                        );
                    }
                }
            }
        }
        Err(e) if not_found(&e) => {
            report.violation(IssueKind::LabelsMissing, labels_path.display().to_string())
        }
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => report.violation(IssueKind::LabelsMalformed, e.to_string()),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let manifest = DatasetManifest::new(
            "tiny",
            Geometry::new(1, 2),
            2,
            vec!["a".into(), "b".into()],
        );
        let t = ActivationTensor::from_rows(0, &[vec![0.5, -0.1], vec![0.0, 2.0]]).unwrap();
        Dataset {
            manifest,
            tensors: vec![t],
            labels: vec![0, 1].into(),
        }
    }

    fn write(ds: &Dataset, dir: &Path) {
        write_dataset(&ds.manifest, &ds.tensors, &ds.labels, dir).unwrap();
    }

    #[test]
    fn layer_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        write(&tiny(), dir.path());
        let bytes = fs::read(dir.path().join("layer_00.bin")).unwrap();
        assert_eq!(bytes.len(), 8 + 4 + 4 + 16);
        assert_eq!(&bytes[..8], b"AAPEDAT1");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-0.1f32).to_le_bytes());
        assert_eq!(&bytes[24..28], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[28..32], &2.0f32.to_le_bytes());
        let labels = fs::read_to_string(dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels, "sample_id,class_index\n0,0\n1,1\n");
    }

    #[test]
    fn round_trip_and_rewrite_is_byte_identical() {
        let ds = tiny();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write(&ds, a.path());
        write(&ds, b.path());
        for f in ["manifest.json", "layer_00.bin", "labels.csv"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
        assert_eq!(read_dataset(a.path()).unwrap(), ds);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(&tiny(), dir.path());
        let path = dir.path().join("layer_00.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        let report = validate_dataset(dir.path()).unwrap();
        assert_eq!(report.violations[0].kind, IssueKind::BadMagic);
    }

    #[test]
    fn short_labels_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(&tiny(), dir.path());
        fs::write(dir.path().join("labels.csv"), "sample_id,class_index\n0,0\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("label count mismatch"), "{err}");
    }

    #[test]
    fn truncated_layer_file() {
        let dir = tempfile::tempdir().unwrap();
        write(&tiny(), dir.path());
        let path = dir.path().join("layer_00.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::Truncated { expected: 32, found: 29, .. })
        ));
    }

    #[test]
    fn header_disagreeing_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write(&tiny(), dir.path());
        let mut ds = tiny();
        ds.manifest.neurons_per_layer = 1;
        ds.tensors = vec![ActivationTensor::from_rows(0, &[vec![1.0], vec![1.0]]).unwrap()];
        write_manifest(&tiny().manifest, &dir.path().join(MANIFEST_FILE)).unwrap();
        write_layer_file(&ds.tensors[0], &dir.path().join("layer_00.bin")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Shape(_))));
        let report = validate_dataset(dir.path()).unwrap();
        assert_eq!(report.violations[0].kind, IssueKind::HeaderMismatch);
    }

    #[test]
    fn write_rejects_bad_inputs() {
        let mut ds = tiny();
        ds.tensors[0].values_mut()[1] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_dataset(&ds.manifest, &ds.tensors, &ds.labels, dir.path()),
            Err(Error::NonFinite { layer: 0, sample: 0, neuron: 1 })
        ));
        let mut ds = tiny();
        ds.manifest.num_samples = 3;
        assert!(matches!(
            write_dataset(&ds.manifest, &ds.tensors, &ds.labels, dir.path()),
            Err(Error::Shape(_))
        ));
        let mut ds = tiny();
        ds.manifest.class_names = vec!["a".into(), "a".into()];
        assert!(matches!(
            write_dataset(&ds.manifest, &ds.tensors, &ds.labels, dir.path()),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn non_finite_on_disk_is_a_violation() {
        let dir = tempfile::tempdir().unwrap();
        write(&tiny(), dir.path());
        let path = dir.path().join("layer_00.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[20..24].copy_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let report = validate_dataset(dir.path()).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, IssueKind::NonFinite);
        assert!(matches!(read_dataset(dir.path()), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn label_out_of_range_and_zero_sample_class() {
        let dir = tempfile::tempdir().unwrap();
        write(&tiny(), dir.path());
        fs::write(dir.path().join("labels.csv"), "sample_id,class_index\n0,0\n1,2\n").unwrap();
        let report = validate_dataset(dir.path()).unwrap();
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, IssueKind::LabelOutOfRange);
        assert!(report.violations[0].to_string().starts_with("label out of range"));
        // class 1 lost its only sample
        assert_eq!(report.warnings[0].kind, IssueKind::ZeroSampleClass);
    }

    #[test]
    fn missing_directory_reports_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let report = validate_dataset(&dir.path().join("nope")).unwrap();
        assert_eq!(report.violations[0].kind, IssueKind::ManifestMissing);
    }

    #[test]
    fn neuron_id_order_and_display() {
        let mut ids = vec![NeuronId::new(1, 0), NeuronId::new(0, 7), NeuronId::new(0, 2)];
        ids.sort();
        assert_eq!(
            ids,
            vec![NeuronId::new(0, 2), NeuronId::new(0, 7), NeuronId::new(1, 0)]
        );
        assert_eq!(NeuronId::new(3, 14).to_string(), "<3,14>");
        let g = Geometry::new(3, 5);
        for i in 0..g.total() {
            assert_eq!(g.flat_index(g.id_at(i)), i);
        }
    }
}
