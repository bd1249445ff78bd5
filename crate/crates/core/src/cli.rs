// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `aape` command line. Every subcommand reads and writes plain files,
//! so runs compose through the file system only.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::ffi::OsString;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::ablation::{confusion_delta, random_mask, targeted_mask, AblationMask, CombineMode, DeltaReport, PredictionRun};
use crate::overlap::{cross_task_matrix, relabel, summarize_rq1, within_task_matrix, OverlapMatrix};
use crate::report::{
    digest_path, render_summary, write_heatmap, HeatmapData, HeatmapStyle, ReportBundle, BUNDLE_FILE,
};
use crate::select::{
    compute_aape, select_neurons, ActivityStatistic, AssignmentPopulation, NeuronSelection, SelectionConfig, TaskInfo,
};
use crate::stats::{compute_probabilities_from_dir, ProbabilityTable};
use crate::store::{read_manifest, validate_dataset, Geometry, MANIFEST_FILE};
use crate::toy::{run_toy_pipeline, write_pipeline_outputs, ToySpec};
use crate::error::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "aape", version, about = "Class-specific neuron identification by activation probability entropy")]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for random masks; overrides the seed of a toy spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with status 2 when the run produced warnings.
    #[arg(long, global = true)]
    strict: bool,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a dataset directory and list every problem found.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Compute per-class activation probabilities (binary table at --out).
    Stats {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the three-step filter and write selection JSON to --out.
    Select(SelectArgs),
    /// Common-neuron ratios within one selection or across two (CSV or JSON by extension).
    Overlap {
        #[arg(long = "selection", required = true, num_args = 1)]
        selections: Vec<PathBuf>,
        /// JSON object mapping class names to merged labels.
        #[arg(long)]
        relabel: Option<PathBuf>,
    },
    /// Mean class-specific neurons and class coverage per task, into directory --out.
    Summary {
        #[arg(long = "selection", required = true, num_args = 1)]
        selections: Vec<PathBuf>,
    },
    /// Build an ablation mask.
    #[command(subcommand)]
    Mask(MaskCommand),
    /// Confusion-matrix deltas between two prediction files (JSON at --out).
    AblateReport {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        ablated: PathBuf,
        #[command(flatten)]
        classes: ClassSource,
    },
    /// End-to-end toy identify, ablate and evaluate run into directory --out.
    ToyRun {
        /// Toy spec JSON; missing fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Render an overlap matrix or a delta report as an SVG heatmap at --out.
    Plot {
        #[arg(long, conflicts_with = "deltas", required_unless_present = "deltas")]
        overlap: Option<PathBuf>,
        #[arg(long)]
        deltas: Option<PathBuf>,
        #[arg(long)]
        style: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Reuse a table written by `stats` instead of rescanning the dataset.
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    r_aape: f64,
    #[arg(long, default_value_t = 5.0)]
    low_cut: f64,
    #[arg(long, default_value_t = 95.0)]
    assign_cut: f64,
    #[arg(long, value_enum, default_value_t = ActivityArg::PeakClass)]
    activity: ActivityArg,
    #[arg(long, value_enum, default_value_t = PopulationArg::AllNeurons)]
    assignment_population: PopulationArg,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ActivityArg {
    PeakClass,
    Pooled,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PopulationArg {
    AllNeurons,
    Survivors,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Intersection,
    Union,
}

impl From<ModeArg> for CombineMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Intersection => CombineMode::Intersection,
            ModeArg::Union => CombineMode::Union,
        }
    }
}

#[derive(Subcommand, Debug)]
enum MaskCommand {
    /// Neurons of the named classes.
    Targeted {
        #[arg(long)]
        selection: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::Intersection)]
        mode: ModeArg,
    },
    /// Uniform draw of --size neurons using --seed.
    Random {
        /// Geometry source: a selection JSON or a dataset directory.
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        selection: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Mask size; defaults to the size of --like.
        #[arg(long, required_unless_present = "like")]
        size: Option<usize>,
        /// Match the size of an existing mask.
        #[arg(long)]
        like: Option<PathBuf>,
        /// Neurons of this mask are never drawn.
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
#[group(required = false, multiple = false)]
struct ClassSource {
    /// Take class names from this dataset's manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Take class names from this selection.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    class_names: Option<Vec<String>>,
}

/// What a finished command reports back to `main`.
#[derive(Default)]
struct Outcome {
    failed: bool,
    warnings: Vec<String>,
}

/// Toy spec file: spec fields at the top level plus an optional selection block.
#[derive(Default, Serialize, Deserialize)]
struct ToyRunFile {
    #[serde(flatten)]
    spec: ToySpec,
    #[serde(default)]
    selection: Option<SelectionConfig>,
}

fn out_path(cli_out: &Option<PathBuf>) -> Result<&Path> {
    cli_out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this subcommand".into()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_overlap(m: &OverlapMatrix, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        m.write_json(path)
    } else {
        m.write_csv(path)
    }
}

fn run(cli: &Cli) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    match &cli.command {
        Command::Validate { dataset } => {
            let report = validate_dataset(dataset)?;
            for v in &report.violations {
                println!("violation: {v}");
            }
            for w in &report.warnings {
                println!("warning: {w}");
                outcome.warnings.push(w.to_string());
            }
            if report.is_valid() {
                println!("ok: {}", dataset.display());
            }
            if let Some(out) = &cli.out {
                ensure_parent(out)?;
                let mut s = serde_json::to_string_pretty(&report)?;
                s.push('\n');
                fs::write(out, s).map_err(|e| Error::io(out, e))?;
            }
            outcome.failed = !report.is_valid();
        }
        Command::Stats { dataset } => {
            let out = out_path(&cli.out)?;
            let (manifest, table) = compute_probabilities_from_dir(dataset)?;
            ensure_parent(out)?;
            table.write_bin(out)?;
            println!(
                "{}: {} neurons x {} classes -> {}",
                manifest.task_name,
                manifest.geometry().total(),
                manifest.num_classes(),
                out.display()
            );
        }
        Command::Select(args) => {
            let out = out_path(&cli.out)?;
            let manifest = read_manifest(&args.dataset.join(MANIFEST_FILE))?;
            let probs = match &args.probs {
                Some(p) => ProbabilityTable::read_bin(p)?,
                None => compute_probabilities_from_dir(&args.dataset)?.1,
            };
            if probs.geometry() != manifest.geometry() || probs.num_classes() != manifest.num_classes() {
                return Err(Error::Geometry(format!(
                    "probability table {} with {} classes does not match the dataset",
                    probs.geometry(),
                    probs.num_classes()
                )));
            }
            let cfg = SelectionConfig {
                r_aape: args.r_aape,
                low_activation_cut: args.low_cut,
                assignment_cut: args.assign_cut,
                activity_statistic: match args.activity {
                    ActivityArg::PeakClass => ActivityStatistic::PeakClass,
                    ActivityArg::Pooled => ActivityStatistic::Pooled,
                },
                assignment_population: match args.assignment_population {
                    PopulationArg::AllNeurons => AssignmentPopulation::AllNeurons,
                    PopulationArg::Survivors => AssignmentPopulation::Survivors,
                },
            };
            let scores = compute_aape(&probs);
            let task = TaskInfo::new(manifest.task_name.clone(), manifest.class_names.clone());
            let sel = select_neurons(&probs, &scores, &cfg, &task)?;
            ensure_parent(out)?;
            sel.write_json(out)?;
            let t = &sel.thresholds;
            println!(
                "{}: {} -> {} -> assigned {} neurons (tau = {:.4})",
                sel.task,
                t.step1_survivors,
                t.step2_survivors,
                sel.assignments().len(),
                t.assignment
            );
            outcome.warnings.extend(sel.warnings.iter().cloned());
        }
        Command::Overlap { selections, relabel: map } => {
            let out = out_path(&cli.out)?;
            if selections.len() > 2 {
                return Err(Error::Config("overlap takes one or two selections".into()));
            }
            let map: Option<BTreeMap<String, String>> = map.as_deref().map(read_json).transpose()?;
            let load = |p: &PathBuf| -> Result<NeuronSelection> {
                let sel = NeuronSelection::read_json(p)?;
                Ok(match &map {
                    Some(m) => relabel(&sel, m),
                    None => sel,
                })
            };
            let m = match selections.as_slice() {
                [a] => within_task_matrix(&load(a)?),
                [a, b] => cross_task_matrix(&load(a)?, &load(b)?)?,
                _ => unreachable!("clap requires at least one selection"),
            };
            for &(r, c) in &m.empty_pairs {
                outcome
                    .warnings
                    .push(format!("both sets empty for {} / {}", m.row_labels[r], m.col_labels[c]));
            }
            write_overlap(&m, out)?;
            println!("{}x{} overlap -> {}", m.row_labels.len(), m.col_labels.len(), out.display());
        }
        Command::Summary { selections } => {
            let out = out_path(&cli.out)?;
            let sels = selections
                .iter()
                .map(|p| NeuronSelection::read_json(p))
                .collect::<Result<Vec<_>>>()?;
            let table = summarize_rq1(&sels);
            let (md, csv) = render_summary(&table)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let md_path = out.join("summary.md");
            let csv_path = out.join("summary.csv");
            fs::write(&md_path, &md).map_err(|e| Error::io(&md_path, e))?;
            fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
            let mut bundle = ReportBundle::new("summary", serde_json::json!({ "tasks": sels.len() }));
            for p in selections {
                bundle.inputs.extend(digest_path(p, Path::new(""))?);
            }
            bundle.outputs.extend(digest_path(&md_path, out)?);
            bundle.outputs.extend(digest_path(&csv_path, out)?);
            bundle.write_json(&out.join(BUNDLE_FILE))?;
            print!("{md}");
        }
        Command::Mask(mc) => {
            let out = out_path(&cli.out)?;
            let mask = match mc {
                MaskCommand::Targeted { selection, classes, mode } => {
                    let sel = NeuronSelection::read_json(selection)?;
                    let mask = targeted_mask(&sel, classes, (*mode).into())?;
                    if mask.is_empty() {
                        outcome.warnings.push(format!("targeted mask for {classes:?} is empty"));
                    }
                    mask
                }
                MaskCommand::Random {
                    selection,
                    dataset,
                    size,
                    like,
                    exclude,
                } => {
                    let geometry: Geometry = match (selection, dataset) {
                        (Some(s), _) => NeuronSelection::read_json(s)?.geometry(),
                        (None, Some(d)) => read_manifest(&d.join(MANIFEST_FILE))?.geometry(),
                        (None, None) => unreachable!("clap requires a geometry source"),
                    };
                    let size = match (size, like) {
                        (Some(k), _) => *k,
                        (None, Some(p)) => AblationMask::read_json(p)?.len(),
                        (None, None) => unreachable!("clap requires a size"),
                    };
                    let excluded: BTreeSet<_> = match exclude {
                        Some(p) => AblationMask::read_json(p)?.set(),
                        None => BTreeSet::new(),
                    };
                    let seed = cli
                        .seed
                        .ok_or_else(|| Error::Config("mask random needs --seed".into()))?;
                    random_mask(geometry, size, seed, &excluded)?
                }
            };
            ensure_parent(out)?;
            mask.write_json(out)?;
            println!("{} neurons -> {}", mask.len(), out.display());
        }
        Command::AblateReport {
            baseline,
            ablated,
            classes,
        } => {
            let out = out_path(&cli.out)?;
            let base = PredictionRun::read_csv(baseline, tag_of(baseline))?;
            let abl = PredictionRun::read_csv(ablated, tag_of(ablated))?;
            let names = match (&classes.dataset, &classes.selection, &classes.class_names) {
                (Some(d), _, _) => read_manifest(&d.join(MANIFEST_FILE))?.class_names,
                (_, Some(s), _) => NeuronSelection::read_json(s)?.class_names(),
                (_, _, Some(n)) => n.clone(),
                _ => {
                    let max = base
                        .true_class
                        .iter()
                        .chain(&base.predicted)
                        .chain(&abl.true_class)
                        .chain(&abl.predicted)
                        .max()
                        .map_or(0, |&m| m as usize + 1);
                    (0..max).map(|c| c.to_string()).collect()
                }
            };
            let delta = confusion_delta(&base, &abl, &names)?;
            ensure_parent(out)?;
            delta.write_json(out)?;
            println!(
                "overall accuracy {:.2} -> {:.2} ({:+.2} pp)",
                delta.overall_baseline, delta.overall_ablated, delta.overall_delta
            );
            for (name, d) in names.iter().zip(&delta.accuracy_delta) {
                println!("  {name}: {d:+.2} pp");
            }
        }
        Command::ToyRun { spec } => {
            let out = out_path(&cli.out)?;
            let mut file: ToyRunFile = match spec {
                Some(p) => read_json(p)?,
                None => ToyRunFile::default(),
            };
            if let Some(seed) = cli.seed {
                file.spec.seed = seed;
            }
            let cfg = file.selection.unwrap_or_else(ToySpec::selection_config);
            let run = run_toy_pipeline(&file.spec, &cfg)?;
            write_pipeline_outputs(&run, out)?;
            let style = HeatmapStyle::default();
            write_heatmap(&HeatmapData::from(&run.overlap), &style, &out.join("overlap.svg"))?;
            write_heatmap(&HeatmapData::from(&run.report.targeted), &style, &out.join("deltas_targeted.svg"))?;
            let (md, csv) = render_summary(&summarize_rq1(std::slice::from_ref(&run.selection)))?;
            for (name, text) in [("summary.md", &md), ("summary.csv", &csv)] {
                let p = out.join(name);
                fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            }
            let mut bundle = ReportBundle::new(
                "toy-run",
                serde_json::json!({ "spec": file.spec, "selection": cfg }),
            );
            if let Some(p) = spec {
                bundle.inputs.extend(digest_path(p, Path::new(""))?);
            }
            let manifest_path = out.join(BUNDLE_FILE);
            bundle.outputs = digest_path(out, out)?
                .into_iter()
                .filter(|d| d.path != BUNDLE_FILE)
                .collect();
            bundle.write_json(&manifest_path)?;
            let r = &run.report;
            println!(
                "baseline {:.2}%; targets {:?} ({:?}, {} neurons): class drop {:.2} pp vs random {:.2} pp; random overall change {:.2} pp",
                r.baseline_accuracy,
                r.targets,
                r.mode,
                r.mask_size,
                r.targeted_class_drop,
                r.random_class_drop,
                r.random_overall_change
            );
            outcome.warnings.extend(r.warnings.iter().cloned());
        }
        Command::Plot { overlap, deltas, style } => {
            let out = out_path(&cli.out)?;
            let style: HeatmapStyle = match style {
                Some(p) => read_json(p)?,
                None => HeatmapStyle::default(),
            };
            let data = match (overlap, deltas) {
                (Some(p), _) => HeatmapData::from(&OverlapMatrix::read_json(p)?),
                (None, Some(p)) => HeatmapData::from(&DeltaReport::read_json(p)?),
                (None, None) => unreachable!("clap requires an input"),
            };
            ensure_parent(out)?;
            write_heatmap(&data, &style, out)?;
            println!("{}x{} heatmap -> {}", data.row_labels.len(), data.col_labels.len(), out.display());
        }
    }
    Ok(outcome)
}

fn tag_of(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Parses `args` (program name first) and runs one subcommand.
///
/// Exit status: 0 on success (including `--help`), 1 on errors, usage
/// mistakes and validation failures, 2 when `--strict` is set and the run
/// produced warnings.
pub fn exit_status<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return u8::from(e.use_stderr());
        }
    };
    if cli.threads > 0 {
        // a pool that is already set up (second in-process call) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match run(&cli) {
        Ok(outcome) if outcome.failed => 1,
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if cli.strict && !outcome.warnings.is_empty() {
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
