// SPDX-License-Identifier: MIT OR Apache-2.0

//! C ABI over `aape-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_open`,
//! `*_read`, `*_compute` or `*_run` functions and released by the matching
//! `*_free`. Every fallible call returns an [`AapeStatus`]; on failure the
//! message is available from [`aape_last_error_message`] on the same thread.
//! Output pointers are written only on success.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use aape_core::ablation::{random_mask, targeted_mask, AblationMask, CombineMode, Provenance};
use aape_core::overlap::jaccard;
use aape_core::select::{
    compute_aape, normalized_entropy, select_neurons, ActivityStatistic, AssignmentPopulation, NeuronSelection,
    SelectionConfig, TaskInfo,
};
use aape_core::stats::{compute_probabilities_from_dir, ProbabilityTable};
use aape_core::store::{read_manifest, DatasetManifest, Geometry, NeuronId, MANIFEST_FILE};
use aape_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AapeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Geometry = 5,
    EmptySelection = 6,
    Degenerate = 7,
    UnknownClass = 8,
    MaskTooLarge = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Step-1 activity statistic.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AapeActivity {
    PeakClass = 0,
    Pooled = 1,
}

/// Population whose class probabilities set the step-3 threshold.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AapePopulation {
    AllNeurons = 0,
    Survivors = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AapeCombine {
    Intersection = 0,
    Union = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AapeSelectionConfig {
    pub r_aape: f64,
    pub low_activation_cut: f64,
    pub assignment_cut: f64,
    pub activity: AapeActivity,
    pub population: AapePopulation,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct AapeNeuronId {
    pub layer: u32,
    pub neuron: u32,
}

impl From<NeuronId> for AapeNeuronId {
    fn from(id: NeuronId) -> Self {
        AapeNeuronId {
            layer: id.layer,
            neuron: id.neuron,
        }
    }
}

impl From<AapeNeuronId> for NeuronId {
    fn from(id: AapeNeuronId) -> Self {
        NeuronId::new(id.layer, id.neuron)
    }
}

/// An activation dataset directory with its parsed manifest.
pub struct AapeDataset {
    dir: PathBuf,
    manifest: DatasetManifest,
}

/// Per-class activation probabilities.
pub struct AapeProbs(ProbabilityTable);

/// Per-class neuron sets.
pub struct AapeSelection(NeuronSelection);

/// Set of neurons to zero.
pub struct AapeMask(AblationMask);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AapeStatus {
    match e {
        Error::Io { .. } => AapeStatus::Io,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::NonFinite { .. }
        | Error::LabelCount { .. }
        | Error::LabelRange { .. }
        | Error::Manifest(_)
        | Error::Parse { .. }
        | Error::Json(_) => AapeStatus::Format,
        Error::Shape(_) | Error::Geometry(_) | Error::Misaligned(_) => AapeStatus::Geometry,
        Error::EmptySelection { .. } => AapeStatus::EmptySelection,
        Error::Degenerate { .. } | Error::SingularProbe | Error::EmptyMatrix => AapeStatus::Degenerate,
        Error::UnknownClass(_) => AapeStatus::UnknownClass,
        Error::MaskTooLarge { .. } => AapeStatus::MaskTooLarge,
        _ => AapeStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status plus a message.
fn guard(f: impl FnOnce() -> Result<(), (AapeStatus, String)>) -> AapeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AapeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            AapeStatus::Panic
        }
    }
}

type Fail = (AapeStatus, String);

fn core(e: Error) -> Fail {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> Fail {
    (AapeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (AapeStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn str_arg(p: *const c_char, what: &str) -> Result<String, Fail> {
    path_arg(p, what).map(|p| p.to_string_lossy().into_owned())
}

fn boxed<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aape_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aape_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn aape_selection_config_default() -> AapeSelectionConfig {
    let d = SelectionConfig::default();
    AapeSelectionConfig {
        r_aape: d.r_aape,
        low_activation_cut: d.low_activation_cut,
        assignment_cut: d.assignment_cut,
        activity: AapeActivity::PeakClass,
        population: AapePopulation::AllNeurons,
    }
}

/// Opens a dataset directory after reading its manifest.
#[no_mangle]
pub unsafe extern "C" fn aape_dataset_open(path: *const c_char, out: *mut *mut AapeDataset) -> AapeStatus {
    guard(|| {
        let dir = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let manifest = read_manifest(&dir.join(MANIFEST_FILE)).map_err(core)?;
        boxed(AapeDataset { dir, manifest }, out);
        Ok(())
    })
}

/// Writes layer count, neurons per layer, class count and sample count.
/// Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn aape_dataset_shape(
    ds: *const AapeDataset,
    num_layers: *mut usize,
    neurons_per_layer: *mut usize,
    num_classes: *mut usize,
    num_samples: *mut usize,
) -> AapeStatus {
    guard(|| {
        let m = &borrow(ds, "dataset")?.manifest;
        for (dst, v) in [
            (num_layers, m.num_layers),
            (neurons_per_layer, m.neurons_per_layer),
            (num_classes, m.num_classes()),
            (num_samples, m.num_samples),
        ] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_dataset_free(ds: *mut AapeDataset) {
    free(ds);
}

/// Streams the dataset and counts activations per class.
#[no_mangle]
pub unsafe extern "C" fn aape_probs_compute(ds: *const AapeDataset, out: *mut *mut AapeProbs) -> AapeStatus {
    guard(|| {
        let ds = borrow(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let (_, table) = compute_probabilities_from_dir(&ds.dir).map_err(core)?;
        boxed(AapeProbs(table), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_probs_read(path: *const c_char, out: *mut *mut AapeProbs) -> AapeStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        boxed(AapeProbs(ProbabilityTable::read_bin(&path).map_err(core)?), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_probs_write(probs: *const AapeProbs, path: *const c_char) -> AapeStatus {
    guard(|| {
        let probs = borrow(probs, "probs")?;
        let path = path_arg(path, "path")?;
        probs.0.write_bin(&path).map_err(core)
    })
}

/// Probability that `(layer, neuron)` is positive on a sample of `class`.
#[no_mangle]
pub unsafe extern "C" fn aape_probs_get(
    probs: *const AapeProbs,
    id: AapeNeuronId,
    class: usize,
    out: *mut f64,
) -> AapeStatus {
    guard(|| {
        let t = &borrow(probs, "probs")?.0;
        let out = out_ptr(out, "out")?;
        let nid = NeuronId::from(id);
        if !t.geometry().contains(nid) || class >= t.num_classes() {
            return Err((
                AapeStatus::InvalidArgument,
                format!("{nid} class {class} outside {} with {} classes", t.geometry(), t.num_classes()),
            ));
        }
        *out = t.class_prob(nid, class);
        Ok(())
    })
}

/// Writes one entropy score per neuron, in layer-major order, into `buf`.
/// `len` must equal the neuron count.
#[no_mangle]
pub unsafe extern "C" fn aape_probs_scores(probs: *const AapeProbs, buf: *mut f64, len: usize) -> AapeStatus {
    guard(|| {
        let t = &borrow(probs, "probs")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let total = t.geometry().total();
        if len != total {
            return Err((AapeStatus::BufferTooSmall, format!("buffer of {len} for {total} neurons")));
        }
        let scores = compute_aape(t);
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(scores.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_probs_free(probs: *mut AapeProbs) {
    free(probs);
}

/// Entropy of the normalized probability vector; +infinity when it sums to 0.
#[no_mangle]
pub unsafe extern "C" fn aape_entropy(probs: *const f64, len: usize, out: *mut f64) -> AapeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if probs.is_null() && len > 0 {
            return Err(null("probs"));
        }
        let p = if len == 0 { &[][..] } else { std::slice::from_raw_parts(probs, len) };
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err((AapeStatus::InvalidArgument, "probabilities must lie in [0, 1]".into()));
        }
        *out = normalized_entropy(p, &mut Vec::with_capacity(len));
        Ok(())
    })
}

/// Runs the three-step filter. Task and class names come from `ds`.
#[no_mangle]
pub unsafe extern "C" fn aape_selection_run(
    probs: *const AapeProbs,
    ds: *const AapeDataset,
    cfg: *const AapeSelectionConfig,
    out: *mut *mut AapeSelection,
) -> AapeStatus {
    guard(|| {
        let t = &borrow(probs, "probs")?.0;
        let m = &borrow(ds, "dataset")?.manifest;
        let c = borrow(cfg, "cfg")?;
        let out = out_ptr(out, "out")?;
        let cfg = SelectionConfig {
            r_aape: c.r_aape,
            low_activation_cut: c.low_activation_cut,
            assignment_cut: c.assignment_cut,
            activity_statistic: match c.activity {
                AapeActivity::PeakClass => ActivityStatistic::PeakClass,
                AapeActivity::Pooled => ActivityStatistic::Pooled,
            },
            assignment_population: match c.population {
                AapePopulation::AllNeurons => AssignmentPopulation::AllNeurons,
                AapePopulation::Survivors => AssignmentPopulation::Survivors,
            },
        };
        let scores = compute_aape(t);
        let task = TaskInfo::new(m.task_name.clone(), m.class_names.clone());
        let sel = select_neurons(t, &scores, &cfg, &task).map_err(core)?;
        boxed(AapeSelection(sel), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_selection_read(path: *const c_char, out: *mut *mut AapeSelection) -> AapeStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        boxed(AapeSelection(NeuronSelection::read_json(&path).map_err(core)?), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_selection_write_json(sel: *const AapeSelection, path: *const c_char) -> AapeStatus {
    guard(|| {
        let sel = borrow(sel, "selection")?;
        let path = path_arg(path, "path")?;
        sel.0.write_json(&path).map_err(core)
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_selection_num_classes(sel: *const AapeSelection, out: *mut usize) -> AapeStatus {
    guard(|| {
        let sel = borrow(sel, "selection")?;
        *out_ptr(out, "out")? = sel.0.classes.len();
        Ok(())
    })
}

fn class_ids(sel: &NeuronSelection, class: usize) -> Result<BTreeSet<NeuronId>, Fail> {
    if class >= sel.classes.len() {
        return Err((
            AapeStatus::InvalidArgument,
            format!("class {class} outside {} classes", sel.classes.len()),
        ));
    }
    Ok(sel.class_set(class))
}

/// Copies the sorted neuron set of `class` into `buf`. `*len` receives the set
/// size even when `cap` is too small, in which case nothing is copied.
#[no_mangle]
pub unsafe extern "C" fn aape_selection_class_neurons(
    sel: *const AapeSelection,
    class: usize,
    buf: *mut AapeNeuronId,
    cap: usize,
    len: *mut usize,
) -> AapeStatus {
    guard(|| {
        let sel = borrow(sel, "selection")?;
        let len = out_ptr(len, "len")?;
        let ids = class_ids(&sel.0, class)?;
        *len = ids.len();
        copy_ids(ids.into_iter(), buf, cap)
    })
}

unsafe fn copy_ids(ids: impl ExactSizeIterator<Item = NeuronId>, buf: *mut AapeNeuronId, cap: usize) -> Result<(), Fail> {
    let n = ids.len();
    if n > cap {
        return Err((AapeStatus::BufferTooSmall, format!("{n} neurons for capacity {cap}")));
    }
    if n > 0 {
        if buf.is_null() {
            return Err(null("buf"));
        }
        for (slot, id) in std::slice::from_raw_parts_mut(buf, n).iter_mut().zip(ids) {
            *slot = id.into();
        }
    }
    Ok(())
}

/// Jaccard ratio between class `a` of `sa` and class `b` of `sb`; 0 when both
/// sets are empty.
#[no_mangle]
pub unsafe extern "C" fn aape_selection_jaccard(
    sa: *const AapeSelection,
    a: usize,
    sb: *const AapeSelection,
    b: usize,
    out: *mut f64,
) -> AapeStatus {
    guard(|| {
        let sa = borrow(sa, "first selection")?;
        let sb = borrow(sb, "second selection")?;
        let out = out_ptr(out, "out")?;
        if sa.0.geometry() != sb.0.geometry() {
            return Err((
                AapeStatus::Geometry,
                format!("{} vs {}", sa.0.geometry(), sb.0.geometry()),
            ));
        }
        *out = jaccard(&class_ids(&sa.0, a)?, &class_ids(&sb.0, b)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_selection_free(sel: *mut AapeSelection) {
    free(sel);
}

/// Jaccard ratio of two neuron id arrays (duplicates ignored).
#[no_mangle]
pub unsafe extern "C" fn aape_jaccard(
    a: *const AapeNeuronId,
    a_len: usize,
    b: *const AapeNeuronId,
    b_len: usize,
    out: *mut f64,
) -> AapeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let set = |p: *const AapeNeuronId, n: usize, what: &str| -> Result<BTreeSet<NeuronId>, Fail> {
            if n == 0 {
                return Ok(BTreeSet::new());
            }
            if p.is_null() {
                return Err(null(what));
            }
            Ok(std::slice::from_raw_parts(p, n).iter().map(|&i| i.into()).collect())
        };
        *out = jaccard(&set(a, a_len, "a")?, &set(b, b_len, "b")?);
        Ok(())
    })
}

/// Mask of the neurons of the named classes, combined by `mode`.
#[no_mangle]
pub unsafe extern "C" fn aape_mask_targeted(
    sel: *const AapeSelection,
    classes: *const *const c_char,
    num_classes: usize,
    mode: AapeCombine,
    out: *mut *mut AapeMask,
) -> AapeStatus {
    guard(|| {
        let sel = borrow(sel, "selection")?;
        let out = out_ptr(out, "out")?;
        if classes.is_null() && num_classes > 0 {
            return Err(null("classes"));
        }
        let names = (0..num_classes)
            .map(|i| str_arg(*classes.add(i), "class name"))
            .collect::<Result<Vec<_>, _>>()?;
        let mode = match mode {
            AapeCombine::Intersection => CombineMode::Intersection,
            AapeCombine::Union => CombineMode::Union,
        };
        boxed(AapeMask(targeted_mask(&sel.0, &names, mode).map_err(core)?), out);
        Ok(())
    })
}

/// Uniform mask of `size` neurons drawn with the documented counter-based
/// generator. `exclude` may be null.
#[no_mangle]
pub unsafe extern "C" fn aape_mask_random(
    num_layers: usize,
    neurons_per_layer: usize,
    size: usize,
    seed: u64,
    exclude: *const AapeMask,
    out: *mut *mut AapeMask,
) -> AapeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let geometry = Geometry::new(num_layers, neurons_per_layer);
        let excluded = match exclude.as_ref() {
            Some(m) if m.0.geometry != geometry => {
                return Err((AapeStatus::Geometry, format!("exclude mask is {}", m.0.geometry)));
            }
            Some(m) => m.0.set(),
            None => BTreeSet::new(),
        };
        boxed(AapeMask(random_mask(geometry, size, seed, &excluded).map_err(core)?), out);
        Ok(())
    })
}

/// Mask from an explicit id list.
#[no_mangle]
pub unsafe extern "C" fn aape_mask_from_ids(
    num_layers: usize,
    neurons_per_layer: usize,
    ids: *const AapeNeuronId,
    len: usize,
    out: *mut *mut AapeMask,
) -> AapeStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if ids.is_null() && len > 0 {
            return Err(null("ids"));
        }
        let list: Vec<NeuronId> = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(ids, len).iter().map(|&i| i.into()).collect()
        };
        let geometry = Geometry::new(num_layers, neurons_per_layer);
        boxed(AapeMask(AblationMask::new(geometry, Provenance::Explicit, list).map_err(core)?), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_mask_len(mask: *const AapeMask, out: *mut usize) -> AapeStatus {
    guard(|| {
        let mask = borrow(mask, "mask")?;
        *out_ptr(out, "out")? = mask.0.len();
        Ok(())
    })
}

/// Copies the sorted mask ids into `buf`; same contract as
/// [`aape_selection_class_neurons`].
#[no_mangle]
pub unsafe extern "C" fn aape_mask_neurons(
    mask: *const AapeMask,
    buf: *mut AapeNeuronId,
    cap: usize,
    len: *mut usize,
) -> AapeStatus {
    guard(|| {
        let mask = borrow(mask, "mask")?;
        let len = out_ptr(len, "len")?;
        *len = mask.0.len();
        copy_ids(mask.0.neurons().iter().copied(), buf, cap)
    })
}

/// Zeroes the masked columns of one layer's row-major `samples x neurons`
/// activation block in place.
#[no_mangle]
pub unsafe extern "C" fn aape_mask_apply_layer(
    mask: *const AapeMask,
    layer: usize,
    values: *mut f32,
    samples: usize,
    neurons: usize,
) -> AapeStatus {
    guard(|| {
        let mask = borrow(mask, "mask")?;
        let g = mask.0.geometry;
        if layer >= g.num_layers || neurons != g.neurons_per_layer {
            return Err((
                AapeStatus::Geometry,
                format!("layer {layer} with {neurons} neurons for a {g} mask"),
            ));
        }
        let total = samples
            .checked_mul(neurons)
            .ok_or_else(|| (AapeStatus::InvalidArgument, "block size overflows".to_string()))?;
        if total == 0 {
            return Ok(());
        }
        if values.is_null() {
            return Err(null("values"));
        }
        let block = std::slice::from_raw_parts_mut(values, total);
        let cols: Vec<usize> = mask.0.layer_columns(layer).collect();
        for row in block.chunks_exact_mut(neurons) {
            for &c in &cols {
                row[c] = 0.0;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_mask_write_json(mask: *const AapeMask, path: *const c_char) -> AapeStatus {
    guard(|| {
        let mask = borrow(mask, "mask")?;
        let path = path_arg(path, "path")?;
        mask.0.write_json(&path).map_err(core)
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_mask_read_json(path: *const c_char, out: *mut *mut AapeMask) -> AapeStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        boxed(AapeMask(AblationMask::read_json(&path).map_err(core)?), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn aape_mask_free(mask: *mut AapeMask) {
    free(mask);
}
