//! JSON file formats. Every document carries a `format_version` field.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::distflow::{GridState, LoadingScenario};
use crate::error::{Error, Result};
use crate::estimator::{MeasurementEntry, MeasurementKind, MeasurementSet};
use crate::grid::{Bases, Line, Node, RadialGrid, VoltageLevel};
use crate::noise::NoiseSpec;
use crate::placement::Thresholds;

pub const FORMAT_VERSION: u32 = 1;

fn parse_err(context: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        context: context.into(),
        message: message.into(),
    }
}

fn check_version(context: &str, v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(parse_err(context, format!("unsupported format_version {v}")));
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    from_json_str(&text, &path.display().to_string())
}

pub fn from_json_str<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        parse_err(
            format!("{context} (line {}, column {})", e.line(), e.column()),
            e.to_string(),
        )
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub level: VoltageLevel,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    pub b_pu: f64,
    pub i_cap_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub format_version: u32,
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    pub nodes: Vec<NodeRecord>,
    pub lines: Vec<LineRecord>,
}

impl GridFile {
    pub fn from_grid(grid: &RadialGrid) -> Self {
        let b = grid.bases();
        GridFile {
            format_version: FORMAT_VERSION,
            s_base_mva: b.s_base / 1e6,
            v_base_kv: b.v_base / 1e3,
            nodes: grid
                .nodes()
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    level: n.level,
                    label: n.label.clone(),
                })
                .collect(),
            lines: grid
                .lines()
                .iter()
                .map(|l| LineRecord {
                    id: l.id,
                    from: l.upstream,
                    to: l.downstream,
                    r_pu: l.r,
                    x_pu: l.x,
                    b_pu: l.b,
                    i_cap_pu: l.i_cap,
                })
                .collect(),
        }
    }

    pub fn into_grid(self, context: &str) -> Result<RadialGrid> {
        check_version(context, self.format_version)?;
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                return Err(parse_err(context, format!("duplicate node id {}", n.id)));
            }
        }
        seen.clear();
        for l in &self.lines {
            if !seen.insert(l.id) {
                return Err(parse_err(context, format!("duplicate line id {}", l.id)));
            }
        }
        if !(self.s_base_mva > 0.0 && self.v_base_kv > 0.0) {
            return Err(parse_err(context, "bases must be positive"));
        }
        let nodes = self
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                level: n.level,
                label: n.label,
            })
            .collect();
        let lines = self
            .lines
            .into_iter()
            .map(|l| Line {
                id: l.id,
                upstream: l.from,
                downstream: l.to,
                r: l.r_pu,
                x: l.x_pu,
                b: l.b_pu,
                i_cap: l.i_cap_pu,
            })
            .collect();
        let bases = Bases {
            s_base: self.s_base_mva * 1e6,
            v_base: self.v_base_kv * 1e3,
        };
        RadialGrid::new(nodes, lines, bases)
    }
}

pub fn parse_grid(path: &Path) -> Result<RadialGrid> {
    let file: GridFile = read_json(path)?;
    file.into_grid(&path.display().to_string())
}

pub fn parse_grid_str(text: &str) -> Result<RadialGrid> {
    let file: GridFile = from_json_str(text, "grid")?;
    file.into_grid("grid")
}

pub fn write_grid(path: &Path, grid: &RadialGrid) -> Result<()> {
    write_json(path, &GridFile::from_grid(grid))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub node: usize,
    pub p_pu: f64,
    pub q_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub format_version: u32,
    pub v0_sq_pu: f64,
    pub loads: Vec<LoadRecord>,
}

impl ScenarioFile {
    pub fn from_scenario(s: &LoadingScenario) -> Self {
        ScenarioFile {
            format_version: FORMAT_VERSION,
            v0_sq_pu: s.v0_sq,
            loads: (1..s.p_load.len())
                .map(|j| LoadRecord {
                    node: j,
                    p_pu: s.p_load[j],
                    q_pu: s.q_load[j],
                })
                .collect(),
        }
    }

    /// Absent nodes get zero load.
    pub fn into_scenario(self, grid: &RadialGrid, context: &str) -> Result<LoadingScenario> {
        check_version(context, self.format_version)?;
        let mut sc = LoadingScenario::zero(grid.node_count());
        sc.v0_sq = self.v0_sq_pu;
        let mut seen = BTreeSet::new();
        for rec in self.loads {
            if rec.node >= grid.node_count() {
                return Err(parse_err(context, format!("load on unknown node {}", rec.node)));
            }
            if !seen.insert(rec.node) {
                return Err(parse_err(context, format!("duplicate load for node {}", rec.node)));
            }
            sc.p_load[rec.node] = rec.p_pu;
            sc.q_load[rec.node] = rec.q_pu;
        }
        sc.validate(grid)?;
        Ok(sc)
    }
}

pub fn parse_scenario(path: &Path, grid: &RadialGrid) -> Result<LoadingScenario> {
    let file: ScenarioFile = read_json(path)?;
    file.into_scenario(grid, &path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub spec: NoiseSpec,
    pub master_seed: u64,
}

pub fn parse_noise(path: &Path) -> Result<NoiseFile> {
    let file: NoiseFile = read_json(path)?;
    check_version(&path.display().to_string(), file.format_version)?;
    file.spec.validate()?;
    Ok(file)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub thresholds: Thresholds,
}

pub fn parse_thresholds(path: &Path) -> Result<Thresholds> {
    let file: ThresholdsFile = read_json(path)?;
    check_version(&path.display().to_string(), file.format_version)?;
    file.thresholds.validate()?;
    Ok(file.thresholds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub kind: String,
    pub element: usize,
    pub value: f64,
    pub sigma: f64,
}

/// Measurement document; `seed`/`realization` record how synthetic sets were drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization: Option<u64>,
    pub entries: Vec<MeasurementRecord>,
}

impl MeasurementFile {
    pub fn from_set(set: &MeasurementSet, seed: Option<u64>, realization: Option<u64>) -> Self {
        MeasurementFile {
            format_version: FORMAT_VERSION,
            seed,
            realization,
            entries: set
                .entries
                .iter()
                .map(|e| MeasurementRecord {
                    kind: e.kind.tag().to_string(),
                    element: e.kind.element(),
                    value: e.value,
                    sigma: e.sigma,
                })
                .collect(),
        }
    }

    pub fn into_set(self, context: &str) -> Result<MeasurementSet> {
        check_version(context, self.format_version)?;
        let entries = self
            .entries
            .into_iter()
            .map(|r| {
                let kind = MeasurementKind::from_tag(&r.kind, r.element)
                    .ok_or_else(|| parse_err(context, format!("unknown measurement kind {:?}", r.kind)))?;
                Ok(MeasurementEntry {
                    kind,
                    value: r.value,
                    sigma: r.sigma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MeasurementSet::new(entries)
    }
}

pub fn parse_measurements(path: &Path) -> Result<MeasurementSet> {
    let file: MeasurementFile = read_json(path)?;
    file.into_set(&path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStateRecord {
    pub id: usize,
    pub p_load_pu: f64,
    pub q_load_pu: f64,
    pub v_sq_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineStateRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub p_flow_pu: f64,
    pub q_flow_pu: f64,
    pub i_flow_pu: f64,
    pub loading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub format_version: u32,
    pub nodes: Vec<NodeStateRecord>,
    pub lines: Vec<LineStateRecord>,
}

impl StateFile {
    pub fn new(grid: &RadialGrid, state: &GridState) -> Self {
        StateFile {
            format_version: FORMAT_VERSION,
            nodes: (0..grid.node_count())
                .map(|i| NodeStateRecord {
                    id: i,
                    p_load_pu: state.p_load[i],
                    q_load_pu: state.q_load[i],
                    v_sq_pu: state.v_sq[i],
                })
                .collect(),
            lines: grid
                .lines()
                .iter()
                .map(|l| LineStateRecord {
                    id: l.id,
                    from: l.upstream,
                    to: l.downstream,
                    p_flow_pu: state.p_flow[l.id],
                    q_flow_pu: state.q_flow[l.id],
                    i_flow_pu: state.i_flow[l.id],
                    loading: state.i_flow[l.id] / l.i_cap,
                })
                .collect(),
        }
    }

    /// Rebuilds a [`GridState`]; slot 0 of the per-line vectors is zero.
    pub fn to_state(&self) -> GridState {
        let n = self.nodes.len();
        let mut st = GridState {
            p_load: vec![0.0; n],
            q_load: vec![0.0; n],
            v_sq: vec![0.0; n],
            p_flow: vec![0.0; n],
            q_flow: vec![0.0; n],
            i_flow: vec![0.0; n],
        };
        for r in &self.nodes {
            st.p_load[r.id] = r.p_load_pu;
            st.q_load[r.id] = r.q_load_pu;
            st.v_sq[r.id] = r.v_sq_pu;
        }
        for r in &self.lines {
            st.p_flow[r.id] = r.p_flow_pu;
            st.q_flow[r.id] = r.q_flow_pu;
            st.i_flow[r.id] = r.i_flow_pu;
        }
        st
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub format_version: u32,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub v0_sq_pu: f64,
    pub state: StateFile,
}
