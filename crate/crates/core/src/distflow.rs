//! Backward/forward-sweep Distflow load flow with PI-model line shunts.
//!
//! All electrical quantities are per-unit. Voltages are carried as squared
//! magnitudes. Per-line vectors are indexed by line id, which equals the
//! downstream node id, so slot 0 (the slack) is unused and stays zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RadialGrid, SLACK};

/// Squared voltages below this are treated as collapsed.
pub const MIN_V_SQ: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistflowOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DistflowOptions {
    fn default() -> Self {
        DistflowOptions {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// Nodal loads (positive = consumption) and slack voltage for one operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingScenario {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub v0_sq: f64,
}

impl LoadingScenario {
    pub fn zero(node_count: usize) -> Self {
        LoadingScenario {
            p_load: vec![0.0; node_count],
            q_load: vec![0.0; node_count],
            v0_sq: 1.0,
        }
    }

    pub fn validate(&self, grid: &RadialGrid) -> Result<()> {
        let n = grid.node_count();
        if self.p_load.len() != n || self.q_load.len() != n {
            return Err(Error::invalid(
                "scenario",
                format!("expected {n} nodal loads, got {}/{}", self.p_load.len(), self.q_load.len()),
            ));
        }
        if !(self.v0_sq.is_finite() && self.v0_sq > 0.0) {
            return Err(Error::invalid("scenario", "slack squared voltage must be positive"));
        }
        if self.p_load[SLACK] != 0.0 || self.q_load[SLACK] != 0.0 {
            return Err(Error::invalid("node 0", "the slack bus carries no load"));
        }
        if let Some(j) = (0..n).find(|&j| !(self.p_load[j].is_finite() && self.q_load[j].is_finite())) {
            return Err(Error::invalid(format!("node {j}"), "non-finite load"));
        }
        Ok(())
    }
}

/// Full electrical state: nodal loads and squared voltages, sending-end line flows and currents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub v_sq: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub i_flow: Vec<f64>,
}

impl GridState {
    /// Flat start: every node at the slack voltage, all flows zero.
    pub fn flat(scenario: &LoadingScenario) -> Self {
        let n = scenario.p_load.len();
        GridState {
            p_load: scenario.p_load.clone(),
            q_load: scenario.q_load.clone(),
            v_sq: vec![scenario.v0_sq; n],
            p_flow: vec![0.0; n],
            q_flow: vec![0.0; n],
            i_flow: vec![0.0; n],
        }
    }

    /// `I_flow / I_cap` per line id (slot 0 is zero).
    pub fn loading(&self, grid: &RadialGrid) -> Vec<f64> {
        let mut out = vec![0.0; grid.node_count()];
        for line in grid.lines() {
            out[line.id] = self.i_flow[line.id] / line.i_cap;
        }
        out
    }

    fn update_currents(&mut self, grid: &RadialGrid) {
        for line in grid.lines() {
            let j = line.id;
            let s = self.p_flow[j].hypot(self.q_flow[j]);
            self.i_flow[j] = s / self.v_sq[line.upstream].sqrt();
        }
    }
}

/// Leaf-to-root pass: recomputes every line's sending-end flow from the
/// nodal loads, downstream flows, shunt injections and series losses at the
/// current voltages.
pub fn backward_sweep(grid: &RadialGrid, state: &mut GridState) -> Result<()> {
    for &j in grid.order().iter().rev() {
        if j == SLACK {
            continue;
        }
        let v_sq = state.v_sq[j];
        if !(v_sq >= MIN_V_SQ) {
            return Err(Error::ZeroVoltage { node: j, v_sq });
        }
        let mut p = state.p_load[j];
        let mut q = state.q_load[j];
        for &k in grid.children(j) {
            p += state.p_flow[k];
            q += state.q_flow[k];
        }
        // shunt halves at node j inject reactive power
        q -= grid.incident_half_susceptance(j)? * v_sq;

        let line = grid.line(j)?;
        let loss = (p * p + q * q) / v_sq;
        state.p_flow[j] = p + line.r * loss;
        state.q_flow[j] = q + line.x * loss;
    }
    Ok(())
}

/// Root-to-leaf pass: recomputes squared voltages from the line flows.
pub fn forward_sweep(grid: &RadialGrid, state: &mut GridState, v0_sq: f64) -> Result<()> {
    if !(v0_sq >= MIN_V_SQ) {
        return Err(Error::ZeroVoltage { node: SLACK, v_sq: v0_sq });
    }
    state.v_sq[SLACK] = v0_sq;
    for &j in grid.order() {
        if j == SLACK {
            continue;
        }
        let line = grid.line(j)?;
        let vi = state.v_sq[line.upstream];
        if !(vi >= MIN_V_SQ) {
            return Err(Error::ZeroVoltage { node: line.upstream, v_sq: vi });
        }
        let (p, q) = (state.p_flow[j], state.q_flow[j]);
        let vj = vi - 2.0 * (line.r * p + line.x * q)
            + (line.r * line.r + line.x * line.x) * (p * p + q * q) / vi;
        if !(vj >= MIN_V_SQ) {
            return Err(Error::ZeroVoltage { node: j, v_sq: vj });
        }
        state.v_sq[j] = vj;
    }
    Ok(())
}

/// Solves the load flow from a flat start.
pub fn solve_distflow(grid: &RadialGrid, scenario: &LoadingScenario, opts: DistflowOptions) -> Result<GridState> {
    solve_distflow_from(grid, scenario, None, opts).map(|(s, _)| s)
}

/// Solves the load flow, optionally warm-started from a previous voltage
/// profile. Returns the state and the number of sweep pairs performed.
///
/// A voltage collapse during the iteration is reported as
/// [`Error::NoConvergence`]; [`Error::ZeroVoltage`] is reserved for a
/// non-positive slack voltage in the input.
pub fn solve_distflow_from(
    grid: &RadialGrid,
    scenario: &LoadingScenario,
    initial_v_sq: Option<&[f64]>,
    opts: DistflowOptions,
) -> Result<(GridState, usize)> {
    if !(scenario.v0_sq >= MIN_V_SQ) {
        return Err(Error::ZeroVoltage {
            node: SLACK,
            v_sq: scenario.v0_sq,
        });
    }
    if scenario.p_load.len() != grid.node_count() || scenario.q_load.len() != grid.node_count() {
        return Err(Error::invalid("scenario", "load vector length does not match grid"));
    }
    let mut state = GridState::flat(scenario);
    if let Some(v) = initial_v_sq {
        if v.len() == state.v_sq.len() && v.iter().all(|x| x.is_finite() && *x >= MIN_V_SQ) {
            state.v_sq.copy_from_slice(v);
            state.v_sq[SLACK] = scenario.v0_sq;
        }
    }
    if grid.node_count() == 1 {
        return Ok((state, 0));
    }

    let mut last_change = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        let prev = state.clone();
        let step = backward_sweep(grid, &mut state)
            .and_then(|_| forward_sweep(grid, &mut state, scenario.v0_sq));
        if step.is_err() {
            return Err(Error::NoConvergence {
                iterations: iter,
                last_change,
            });
        }
        let change = max_abs_diff(&prev.v_sq, &state.v_sq)
            .max(max_abs_diff(&prev.p_flow, &state.p_flow))
            .max(max_abs_diff(&prev.q_flow, &state.q_flow));
        if !change.is_finite() {
            return Err(Error::NoConvergence {
                iterations: iter,
                last_change: change,
            });
        }
        last_change = change;
        if change < opts.tol {
            if !branch_currents_agree(grid, &state) {
                // fixed point of the sweep equations with no physical counterpart
                return Err(Error::NoConvergence {
                    iterations: iter,
                    last_change,
                });
            }
            state.update_currents(grid);
            return Ok((state, iter));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_change,
    })
}

/// Checks that each line's squared series current is the same whether taken
/// from the sending-end flow and voltage or the receiving-end ones. Beyond
/// the maximum loadability the sweep can settle on a point that satisfies the
/// sweep equations but violates this identity.
fn branch_currents_agree(grid: &RadialGrid, state: &GridState) -> bool {
    grid.lines().iter().all(|line| {
        let j = line.id;
        let mut p = state.p_load[j];
        let mut q = state.q_load[j];
        for &k in grid.children(j) {
            p += state.p_flow[k];
            q += state.q_flow[k];
        }
        q -= grid.incident_half_susceptance(j).unwrap_or(0.0) * state.v_sq[j];
        let recv = (p * p + q * q) / state.v_sq[j];
        let (ps, qs) = (state.p_flow[j], state.q_flow[j]);
        let send = (ps * ps + qs * qs) / state.v_sq[line.upstream];
        (send - recv).abs() <= 1e-6 * (1.0 + send)
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
