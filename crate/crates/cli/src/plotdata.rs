//! Headered TSV tables for external plotting.

use ndarray::ArrayView2;
use outtree::OutTree;

use crate::error::{CliError, CliResult};
use crate::harness::ErrorCurvePoint;
use crate::ingest::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Scatter3d,
    ErrorVsLabels,
    ElboTrace,
}

impl PlotKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "scatter3d" => Ok(PlotKind::Scatter3d),
            "error-vs-labels" => Ok(PlotKind::ErrorVsLabels),
            "elbo-trace" => Ok(PlotKind::ElboTrace),
            other => Err(CliError::Config(format!(
                "unknown plot kind {other:?} (expected scatter3d, error-vs-labels or elbo-trace)"
            ))),
        }
    }
}

/// `x y z parent`, one row per node; the root's parent is `-1`.
pub fn scatter3d(x: ArrayView2<f64>, tree: Option<&OutTree>) -> CliResult<String> {
    if x.ncols() != 3 {
        return Err(CliError::Data(format!("scatter3d needs 3 coordinates, got {}", x.ncols())));
    }
    if let Some(t) = tree {
        if t.len() != x.nrows() {
            return Err(CliError::Data(format!("tree has {} nodes for {} rows", t.len(), x.nrows())));
        }
    }
    let mut out = String::from("x\ty\tz\tparent\n");
    for (i, r) in x.rows().into_iter().enumerate() {
        let parent = tree.and_then(|t| t.parent(i)).map_or_else(|| "-1".to_string(), |p| p.to_string());
        out.push_str(&format!("{}\t{}\t{}\t{parent}\n", fmt_f64(r[0]), fmt_f64(r[1]), fmt_f64(r[2])));
    }
    Ok(out)
}

pub fn error_vs_labels(points: &[ErrorCurvePoint], config_hash: &str) -> String {
    let mut out = String::from("labeled\ttree_error\ttree_se\tmajority_error\tmajority_se\tseeds\tconfig_hash\n");
    for p in points {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{config_hash}\n",
            p.labeled,
            fmt_f64(p.tree_error.0),
            fmt_f64(p.tree_error.1),
            fmt_f64(p.majority_error.0),
            fmt_f64(p.majority_error.1),
            p.seeds
        ));
    }
    out
}

/// `round elbo`, round 0 being the initial state.
pub fn elbo_trace(trace: &[f64]) -> String {
    let mut out = String::from("round\telbo\n");
    for (i, e) in trace.iter().enumerate() {
        out.push_str(&format!("{i}\t{}\n", fmt_f64(*e)));
    }
    out
}

/// Parses a headered TSV into its header and rows.
pub fn parse_tsv(text: &str) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines().filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<String> =
        lines.next().ok_or_else(|| CliError::Data("empty table".into()))?.split('\t').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row: Vec<String> = line.split('\t').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(CliError::Data(format!("table row {}: {} fields, header has {}", n + 2, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}
