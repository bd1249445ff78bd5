// SPDX-License-Identifier: MIT OR Apache-2.0

//! Common neuron ratios (Jaccard coefficients) between class neuron sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::{coverage_stats, ClassNeurons, NeuronSelection, SelectedNeuron};
use crate::store::NeuronId;

/// `|a ∩ b| / |a ∪ b|`, with two empty sets giving 0.
pub fn jaccard(a: &BTreeSet<NeuronId>, b: &BTreeSet<NeuronId>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major, `row_labels.len()` rows.
    pub values: Vec<Vec<f64>>,
    /// Cells where both neuron sets were empty (reported as 0).
    #[serde(default)]
    pub empty_pairs: Vec<(usize, usize)>,
}

impl OverlapMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row][col]
    }

    pub fn transpose(&self) -> OverlapMatrix {
        let cols = self.col_labels.len();
        OverlapMatrix {
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            values: (0..cols)
                .map(|j| self.values.iter().map(|row| row[j]).collect())
                .collect(),
            empty_pairs: self.empty_pairs.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }

    /// `row label,col label,ratio` lines under a header, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,ratio\n");
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{}",
                    csv_field(&self.row_labels[i]),
                    csv_field(&self.col_labels[j]),
                    v
                )
                .expect("writing to a String");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
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

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn qualified(sel: &NeuronSelection) -> Vec<String> {
    sel.classes
        .iter()
        .map(|c| format!("{}:{}", sel.task, c.name))
        .collect()
}

/// Jaccard of every class of `a` (rows) against every class of `b` (columns).
pub fn cross_task_matrix(a: &NeuronSelection, b: &NeuronSelection) -> Result<OverlapMatrix> {
    if a.geometry() != b.geometry() {
        return Err(Error::Geometry(format!(
            "selection {} is {}, selection {} is {}",
            a.task,
            a.geometry(),
            b.task,
            b.geometry()
        )));
    }
    let sets_a: Vec<_> = (0..a.classes.len()).map(|c| a.class_set(c)).collect();
    let sets_b: Vec<_> = (0..b.classes.len()).map(|c| b.class_set(c)).collect();
    let mut empty_pairs = Vec::new();
    let values = sets_a
        .iter()
        .enumerate()
        .map(|(i, sa)| {
            sets_b
                .iter()
                .enumerate()
                .map(|(j, sb)| {
                    if sa.is_empty() && sb.is_empty() {
                        empty_pairs.push((i, j));
                    }
                    jaccard(sa, sb)
                })
                .collect()
        })
        .collect();
    Ok(OverlapMatrix {
        row_labels: qualified(a),
        col_labels: qualified(b),
        values,
        empty_pairs,
    })
}

/// Class-by-class matrix within one selection.
pub fn within_task_matrix(sel: &NeuronSelection) -> OverlapMatrix {
    cross_task_matrix(sel, sel).expect("a selection matches its own geometry")
}

/// Merges classes under `label_map` (old name -> new name) by set union.
///
/// Classes missing from the map keep their name. New classes appear in the
/// order of their first source class. A neuron reached from several source
/// classes keeps its highest probability.
pub fn relabel(sel: &NeuronSelection, label_map: &BTreeMap<String, String>) -> NeuronSelection {
    let mut order: Vec<String> = Vec::new();
    let mut merged: BTreeMap<String, BTreeMap<NeuronId, SelectedNeuron>> = BTreeMap::new();
    for class in &sel.classes {
        let target = label_map.get(&class.name).unwrap_or(&class.name).clone();
        if !order.contains(&target) {
            order.push(target.clone());
        }
        let entry = merged.entry(target).or_default();
        for n in &class.neurons {
            entry
                .entry(n.id())
                .and_modify(|cur| {
                    if n.prob > cur.prob {
                        *cur = n.clone();
                    }
                })
                .or_insert_with(|| n.clone());
        }
    }
    let classes = order
        .into_iter()
        .map(|name| {
            let neurons = merged.remove(&name).unwrap_or_default().into_values().collect();
            ClassNeurons { name, neurons }
        })
        .collect();
    NeuronSelection {
        classes,
        ..sel.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub mean_neurons: f64,
    pub coverage_ratio: f64,
}

/// Per-task mean class-specific neurons and class coverage, plus the
/// unweighted average over tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub average: Option<SummaryRow>,
}

impl SummaryTable {
    pub fn from_rows(rows: Vec<SummaryRow>) -> Self {
        let average = (!rows.is_empty()).then(|| {
            let k = rows.len() as f64;
            SummaryRow {
                task: "Average".to_string(),
                mean_neurons: rows.iter().map(|r| r.mean_neurons).sum::<f64>() / k,
                coverage_ratio: rows.iter().map(|r| r.coverage_ratio).sum::<f64>() / k,
            }
        });
        SummaryTable { rows, average }
    }
}

pub fn summarize_rq1(selections: &[NeuronSelection]) -> SummaryTable {
    SummaryTable::from_rows(
        selections
            .iter()
            .map(|sel| {
                let cov = coverage_stats(sel, &sel.class_names());
                SummaryRow {
                    task: sel.task.clone(),
                    mean_neurons: cov.mean_neurons,
                    coverage_ratio: cov.coverage_ratio,
                }
            })
            .collect(),
    )
}
