//! Result export: JSON report, per-node and per-line CSV tables, Graphviz DOT.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{RadialGrid, VoltageLevel};
use crate::io::{write_json, FORMAT_VERSION};
use crate::placement::{IterationRecord, PlacementResult, UncertaintyReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReportFlags {
    pub json: bool,
    pub csv: bool,
    pub dot: bool,
}

impl Default for ReportFlags {
    fn default() -> Self {
        ReportFlags {
            json: true,
            csv: true,
            dot: false,
        }
    }
}

/// JSON document written for a placement run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementReport {
    pub format_version: u32,
    /// False when the device budget ran out before the thresholds were met.
    pub complete: bool,
    pub placements: Vec<usize>,
    pub evaluations_count: usize,
    pub per_iteration: Vec<IterationRecord>,
    pub base_report: UncertaintyReport,
    pub final_report: UncertaintyReport,
}

impl PlacementReport {
    pub fn new(result: &PlacementResult, complete: bool) -> Self {
        PlacementReport {
            format_version: FORMAT_VERSION,
            complete,
            placements: result.placements.clone(),
            evaluations_count: result.evaluations_count,
            per_iteration: result.per_iteration.clone(),
            base_report: result.base_report.clone(),
            final_report: result.final_report.clone(),
        }
    }
}

/// Sibling path of `json` with `suffix` replacing the `.json` extension.
pub fn sibling(json: &Path, suffix: &str) -> PathBuf {
    let stem = json.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    json.with_file_name(format!("{stem}{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes the placement report to `out` and the tables selected by `flags`
/// next to it (`<stem>_nodes.csv`, `<stem>_lines.csv`, `<stem>.dot`).
pub fn emit_report(
    out: &Path,
    grid: &RadialGrid,
    result: &PlacementResult,
    complete: bool,
    flags: ReportFlags,
) -> Result<Vec<PathBuf>> {
    ensure_parent(out)?;
    let mut written = Vec::new();
    if flags.json {
        write_json(out, &PlacementReport::new(result, complete))?;
        written.push(out.to_path_buf());
    }
    written.extend(emit_tables(out, grid, &result.final_report, flags)?);
    Ok(written)
}

/// Writes the CSV tables and DOT graph of one evaluation next to `out`.
pub fn emit_tables(out: &Path, grid: &RadialGrid, report: &UncertaintyReport, flags: ReportFlags) -> Result<Vec<PathBuf>> {
    ensure_parent(out)?;
    let mut written = Vec::new();
    if flags.csv {
        let p = sibling(out, "_nodes.csv");
        fs::write(&p, node_csv(grid, report))?;
        written.push(p);
        let p = sibling(out, "_lines.csv");
        fs::write(&p, line_csv(grid, report))?;
        written.push(p);
    }
    if flags.dot {
        let p = sibling(out, ".dot");
        fs::write(&p, dot_graph(grid, report))?;
        written.push(p);
    }
    Ok(written)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn node_csv(grid: &RadialGrid, report: &UncertaintyReport) -> String {
    let mut out = String::from("id,level,label,device,sigma_v2,sigma_max_v2,cost\n");
    for n in grid.nodes() {
        let level = match n.level {
            VoltageLevel::Mv => "MV",
            VoltageLevel::Lv => "LV",
        };
        let device = report.devices.contains(&n.id);
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?}",
            n.id,
            level,
            csv_field(&n.label),
            device,
            report.sigma_v2[n.id],
            report.sigma_max_v2[n.id],
            report.cost_node[n.id]
        );
    }
    out
}

pub fn line_csv(grid: &RadialGrid, report: &UncertaintyReport) -> String {
    let mut out = String::from("id,from,to,sigma_i,sigma_max_i,cost\n");
    for l in grid.lines() {
        let _ = writeln!(
            out,
            "{},{},{},{:?},{:?},{:?}",
            l.id, l.upstream, l.downstream, report.sigma_i[l.id], report.sigma_max_i[l.id], report.cost_line[l.id]
        );
    }
    out
}

/// Green at zero uncertainty through yellow at the limit to red at twice the limit.
fn ratio_colour(sigma: f64, max: f64) -> String {
    let ratio = if max > 0.0 { sigma / max } else { 0.0 };
    let hue = (1.0 - (ratio / 2.0).clamp(0.0, 1.0)) / 3.0;
    format!("\"{hue:.3} 0.85 0.90\"")
}

pub fn dot_graph(grid: &RadialGrid, report: &UncertaintyReport) -> String {
    let mut out = String::from("digraph grid {\n  rankdir=TB;\n  node [style=filled, shape=circle];\n");
    for n in grid.nodes() {
        let colour = ratio_colour(report.sigma_v2[n.id], report.sigma_max_v2[n.id]);
        let marker = if report.devices.contains(&n.id) {
            ", device=true, shape=doublecircle, color=orange, penwidth=3"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\", fillcolor={colour}, tooltip=\"sigma_v2={:e}\"{marker}];",
            n.id, n.id, report.sigma_v2[n.id]
        );
    }
    for l in grid.lines() {
        let colour = ratio_colour(report.sigma_i[l.id], report.sigma_max_i[l.id]);
        let _ = writeln!(
            out,
            "  n{} -> n{} [color={colour}, penwidth=2, tooltip=\"sigma_i={:e}\"];",
            l.upstream, l.downstream, report.sigma_i[l.id]
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Line, Node};
    use crate::placement::CurrentMetric;

    fn chain(n: usize) -> RadialGrid {
        let nodes = (0..n)
            .map(|i| Node {
                id: i,
                level: VoltageLevel::Lv,
                label: format!("n{i}"),
            })
            .collect();
        let lines = (1..n).map(|j| Line::new(j - 1, j, 0.01, 0.01, 0.0, 1.0)).collect();
        build_grid(nodes, lines).unwrap()
    }

    fn report(n: usize, devices: Vec<usize>) -> UncertaintyReport {
        UncertaintyReport {
            devices,
            sigma_v2: vec![0.001; n],
            sigma_max_v2: vec![0.003; n],
            sigma_i: vec![0.01; n],
            sigma_max_i: vec![0.05; n],
            cost_node: vec![0.0; n],
            cost_line: vec![0.0; n],
            j_inf: 0.0,
            violations: Vec::new(),
            realizations: 10,
            failures: 0,
            seed: 1,
            current_metric: CurrentMetric::Magnitude,
        }
    }

    #[test]
    fn csv_rows_match_element_counts() {
        let g = chain(7);
        let r = report(7, vec![]);
        assert_eq!(node_csv(&g, &r).lines().count(), 1 + 7);
        assert_eq!(line_csv(&g, &r).lines().count(), 1 + 6);
    }

    #[test]
    fn dot_marks_every_device() {
        let g = chain(8);
        let r = report(8, vec![0, 2, 3, 5, 6]);
        let dot = dot_graph(&g, &r);
        assert_eq!(dot.matches("device=true").count(), 5);
        assert_eq!(dot.matches("->").count(), 7);
    }

    #[test]
    fn empty_placement_report() {
        let g = chain(3);
        let base = report(3, vec![]);
        let result = PlacementResult {
            placements: vec![],
            per_iteration: vec![],
            base_report: base.clone(),
            final_report: base,
            evaluations_count: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("result.json");
        let files = emit_report(&out, &g, &result, true, ReportFlags::default()).unwrap();
        assert_eq!(files.len(), 3);
        assert!(dir.path().join("result_nodes.csv").exists());
        let text = fs::read_to_string(&out).unwrap();
        let back: PlacementReport = serde_json::from_str(&text).unwrap();
        assert!(back.placements.is_empty());
        assert_eq!(back.base_report.sigma_v2.len(), 3);
    }

    #[test]
    fn csv_numbers_round_trip() {
        let g = chain(2);
        let mut r = report(2, vec![]);
        r.sigma_v2[1] = 0.1 + 0.2;
        let csv = node_csv(&g, &r);
        let field = csv.lines().nth(2).unwrap().split(',').nth(4).unwrap();
        assert_eq!(field.parse::<f64>().unwrap(), 0.1 + 0.2);
    }
}
