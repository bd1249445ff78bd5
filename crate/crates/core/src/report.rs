// SPDX-License-Identifier: MIT OR Apache-2.0

//! Human-readable outputs: SVG heatmaps, summary tables and run manifests.
//!
//! Everything here is a pure function of its inputs. No timestamps, host
//! names or absolute paths end up in the output.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::DeltaReport;
use crate::error::{Error, Result};
use crate::overlap::{OverlapMatrix, SummaryRow, SummaryTable};

/// Matrix to draw, with its axis labels.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapData {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub scale: ColorScale,
}

/// How values map to colors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ColorScale {
    /// White at `min` to dark red at `max`; values outside are clamped.
    Sequential { min: f64, max: f64 },
    /// Blue at `-limit`, white at 0, red at `+limit`.
    Diverging { limit: f64 },
}

impl From<&OverlapMatrix> for HeatmapData {
    fn from(m: &OverlapMatrix) -> Self {
        HeatmapData {
            title: "Common neuron ratio".to_string(),
            row_labels: m.row_labels.clone(),
            col_labels: m.col_labels.clone(),
            values: m.values.clone(),
            scale: ColorScale::Sequential { min: 0.0, max: 1.0 },
        }
    }
}

impl From<&DeltaReport> for HeatmapData {
    /// Rows are true classes, columns predicted classes, cells the change in
    /// row-normalized percentage.
    fn from(d: &DeltaReport) -> Self {
        let limit = d
            .delta_percent
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(1.0);
        HeatmapData {
            title: format!("Confusion change: {} vs {}", d.ablated_tag, d.baseline_tag),
            row_labels: d.class_names.clone(),
            col_labels: d.class_names.clone(),
            values: d.delta_percent.clone(),
            scale: ColorScale::Diverging { limit },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapStyle {
    /// Cell edge length in SVG units.
    pub cell: u32,
    /// Space reserved for row and column labels.
    pub label_margin: u32,
    pub font_size: u32,
    pub decimals: usize,
}

impl Default for HeatmapStyle {
    fn default() -> Self {
        HeatmapStyle {
            cell: 44,
            label_margin: 120,
            font_size: 11,
            decimals: 2,
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn mix(from: [f64; 3], to: [f64; 3], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|i| lerp(from[i], to[i], t).round() as u8)
}

const WHITE: [f64; 3] = [255.0, 255.0, 255.0];
const RED: [f64; 3] = [165.0, 15.0, 21.0];
const BLUE: [f64; 3] = [8.0, 69.0, 148.0];

impl ColorScale {
    pub fn color(&self, v: f64) -> [u8; 3] {
        match *self {
            ColorScale::Sequential { min, max } => {
                let span = max - min;
                let t = if span > 0.0 { (v - min) / span } else { 0.0 };
                mix(WHITE, RED, t)
            }
            ColorScale::Diverging { limit } => {
                let t = if limit > 0.0 { v / limit } else { 0.0 };
                if t >= 0.0 {
                    mix(WHITE, RED, t)
                } else {
                    mix(WHITE, BLUE, -t)
                }
            }
        }
    }
}

/// Formats with fixed decimals and never prints a negative zero.
pub fn format_value(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders an annotated heatmap as a standalone SVG document.
pub fn render_heatmap(data: &HeatmapData, style: &HeatmapStyle) -> Result<String> {
    let rows = data.values.len();
    let cols = data.values.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    if data.values.iter().any(|r| r.len() != cols) || data.row_labels.len() != rows || data.col_labels.len() != cols {
        return Err(Error::Shape(format!(
            "{rows}x{cols} matrix with {} row and {} column labels",
            data.row_labels.len(),
            data.col_labels.len()
        )));
    }
    if let Some((r, c)) = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .find(|&(r, c)| !data.values[r][c].is_finite())
    {
        return Err(Error::Invalid(format!("non-finite heatmap cell ({r}, {c})")));
    }

    let cell = style.cell;
    let margin = style.label_margin;
    let title_h = style.font_size * 3;
    let width = margin + cell * cols as u32 + 10;
    let height = title_h + margin + cell * rows as u32 + 10;
    let x0 = margin;
    let y0 = title_h + margin;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="{}">"#,
        style.font_size
    );
    let _ = writeln!(svg, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#,
        width / 2,
        style.font_size * 2,
        escape(&data.title)
    );
    for (c, label) in data.col_labels.iter().enumerate() {
        let x = x0 + cell * c as u32 + cell / 2;
        let y = y0 - 6;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" text-anchor="start" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape(label)
        );
    }
    for (r, label) in data.row_labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            x0 - 6,
            y0 + cell * r as u32 + cell / 2,
            escape(label)
        );
    }
    for (r, row) in data.values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let [red, green, blue] = data.scale.color(v);
            let x = x0 + cell * c as u32;
            let y = y0 + cell * r as u32;
            let luminance = 0.299 * f64::from(red) + 0.587 * f64::from(green) + 0.114 * f64::from(blue);
            let ink = if luminance < 128.0 { "#ffffff" } else { "#000000" };
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#{red:02x}{green:02x}{blue:02x}" stroke="#cccccc"/>"##
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" fill="{ink}">{}</text>"#,
                x + cell / 2,
                y + cell / 2,
                format_value(v, style.decimals)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_heatmap(data: &HeatmapData, style: &HeatmapStyle, path: &Path) -> Result<()> {
    let svg = render_heatmap(data, style)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Column headers shared by the markdown and CSV renderings.
pub const SUMMARY_COLUMNS: [&str; 3] = ["Task", "Mean class-specific neurons", "Class coverage ratio"];

fn summary_cells(row: &SummaryRow) -> [String; 3] {
    [
        row.task.clone(),
        format_value(row.mean_neurons, 1),
        format!("{}%", format_value(row.coverage_ratio * 100.0, 0)),
    ]
}

fn summary_lines(table: &SummaryTable) -> impl Iterator<Item = [String; 3]> + '_ {
    table.rows.iter().chain(table.average.as_ref()).map(summary_cells)
}

/// Markdown table: one line per task, then the average row.
pub fn render_summary_markdown(table: &SummaryTable) -> String {
    let mut out = format!("| {} |\n|:--|--:|--:|\n", SUMMARY_COLUMNS.join(" | "));
    for [task, mean, cov] in summary_lines(table) {
        let _ = writeln!(out, "| {} | {mean} | {cov} |", task.replace('|', "\\|"));
    }
    out
}

pub fn render_summary_csv(table: &SummaryTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse {
        what: "summary csv",
        detail: e.to_string(),
    };
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for cells in summary_lines(table) {
        w.write_record(&cells).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        what: "summary csv",
        detail: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8 for utf-8 input"))
}

/// Both renderings of a summary table.
pub fn render_summary(table: &SummaryTable) -> Result<(String, String)> {
    Ok((render_summary_markdown(table), render_summary_csv(table)?))
}

/// Content hash of one input or output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
}

/// Hashes a file, or every file below a directory in sorted order. Paths are
/// recorded relative to `root` when possible.
pub fn digest_path(path: &Path, root: &Path) -> Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|f| {
            let shown = f.strip_prefix(root).unwrap_or(&f);
            Ok(FileDigest {
                path: shown.to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(&f)?,
            })
        })
        .collect()
}

fn collect_files(path: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            collect_files(&entry.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub const BUNDLE_FILE: &str = "run_manifest.json";

/// Metadata that ties every emitted figure and table to its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl ReportBundle {
    pub fn new(command: impl Into<String>, config: serde_json::Value) -> Self {
        ReportBundle {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
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
