//! Weighted-least-squares state estimation on the Distflow model with a
//! constant, topology-derived Jacobian.
//!
//! The state is `[P_load(1..L), Q_load(1..L), V0_sq]`. Because the Jacobian
//! depends only on the grid and on which quantities are measured, the gain
//! matrix is factorized once per measurement layout and reused for every
//! measurement vector estimated on that layout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distflow::{solve_distflow_from, DistflowOptions, GridState, LoadingScenario};
use crate::error::{Error, Result};
use crate::grid::{RadialGrid, SLACK};

/// Standard deviations below this are clamped when forming weights, so
/// exact (zero-variance) measurements remain usable.
pub const SIGMA_FLOOR: f64 = 1e-10;

/// What a measurement observes. The derived ordering is the row order of the
/// Jacobian: loads by node, then flows by line, then squared voltages by node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    PmP(usize),
    PmQ(usize),
    MdPFlow(usize),
    MdQFlow(usize),
    MdV2(usize),
}

impl MeasurementKind {
    pub fn element(self) -> usize {
        match self {
            MeasurementKind::PmP(e)
            | MeasurementKind::PmQ(e)
            | MeasurementKind::MdPFlow(e)
            | MeasurementKind::MdQFlow(e)
            | MeasurementKind::MdV2(e) => e,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            MeasurementKind::PmP(_) => "pm_p",
            MeasurementKind::PmQ(_) => "pm_q",
            MeasurementKind::MdPFlow(_) => "md_pflow",
            MeasurementKind::MdQFlow(_) => "md_qflow",
            MeasurementKind::MdV2(_) => "md_v2",
        }
    }

    pub fn from_tag(tag: &str, element: usize) -> Option<Self> {
        Some(match tag {
            "pm_p" => MeasurementKind::PmP(element),
            "pm_q" => MeasurementKind::PmQ(element),
            "md_pflow" => MeasurementKind::MdPFlow(element),
            "md_qflow" => MeasurementKind::MdQFlow(element),
            "md_v2" => MeasurementKind::MdV2(element),
            _ => return None,
        })
    }

    /// Reads the value this measurement would observe in `state`.
    pub fn read(self, state: &GridState) -> f64 {
        match self {
            MeasurementKind::PmP(j) => state.p_load[j],
            MeasurementKind::PmQ(j) => state.q_load[j],
            MeasurementKind::MdPFlow(l) => state.p_flow[l],
            MeasurementKind::MdQFlow(l) => state.q_flow[l],
            MeasurementKind::MdV2(i) => state.v_sq[i],
        }
    }
}

/// Ordered list of measured quantities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasurementLayout(Vec<MeasurementKind>);

impl MeasurementLayout {
    /// Pseudo-measurements at every load bus plus, for each measured node, its
    /// squared voltage and the flows on all lines touching it. With
    /// `slack_voltage` the slack's squared voltage is measured as well.
    pub fn for_devices(grid: &RadialGrid, measured_nodes: &[usize], slack_voltage: bool) -> Result<Self> {
        let n = grid.node_count();
        let mut kinds = Vec::with_capacity(2 * n + 3 * measured_nodes.len());
        for j in 1..n {
            kinds.push(MeasurementKind::PmP(j));
            kinds.push(MeasurementKind::PmQ(j));
        }
        if slack_voltage && n > 0 {
            kinds.push(MeasurementKind::MdV2(SLACK));
        }
        for &i in measured_nodes {
            if i >= n {
                return Err(Error::UnknownNode(i));
            }
            kinds.push(MeasurementKind::MdV2(i));
            for l in grid.incident_lines(i) {
                kinds.push(MeasurementKind::MdPFlow(l));
                kinds.push(MeasurementKind::MdQFlow(l));
            }
        }
        Ok(Self::from_kinds(kinds))
    }

    /// Sorts into canonical order and drops duplicates.
    pub fn from_kinds(mut kinds: Vec<MeasurementKind>) -> Self {
        kinds.sort_unstable();
        kinds.dedup();
        MeasurementLayout(kinds)
    }

    pub fn kinds(&self) -> &[MeasurementKind] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn validate(&self, grid: &RadialGrid) -> Result<()> {
        let n = grid.node_count();
        for &k in &self.0 {
            let e = k.element();
            let ok = match k {
                MeasurementKind::PmP(_) | MeasurementKind::PmQ(_) => e != SLACK && e < n,
                MeasurementKind::MdPFlow(_) | MeasurementKind::MdQFlow(_) => e != SLACK && e < n,
                MeasurementKind::MdV2(_) => e < n,
            };
            if !ok {
                return Err(Error::invalid(
                    format!("measurement {} {}", k.tag(), e),
                    "element does not exist in the grid",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementEntry {
    pub kind: MeasurementKind,
    pub value: f64,
    pub sigma: f64,
}

/// Measurement vector in canonical layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub entries: Vec<MeasurementEntry>,
}

impl MeasurementSet {
    /// Sorts entries into canonical order; rejects duplicates and bad sigmas.
    pub fn new(mut entries: Vec<MeasurementEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.kind);
        for w in entries.windows(2) {
            if w[0].kind == w[1].kind {
                return Err(Error::invalid(
                    format!("measurement {} {}", w[0].kind.tag(), w[0].kind.element()),
                    "duplicate measurement",
                ));
            }
        }
        for e in &entries {
            if !(e.sigma.is_finite() && e.sigma >= 0.0 && e.value.is_finite()) {
                return Err(Error::invalid(
                    format!("measurement {} {}", e.kind.tag(), e.kind.element()),
                    "value and sigma must be finite, sigma non-negative",
                ));
            }
        }
        Ok(MeasurementSet { entries })
    }

    pub fn layout(&self) -> MeasurementLayout {
        MeasurementLayout(self.entries.iter().map(|e| e.kind).collect())
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.sigma).collect()
    }
}

/// Estimation state: loads at every node (slack slot unused) and slack squared voltage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub v0_sq: f64,
}

impl StateVector {
    /// Number of estimated quantities, `2L + 1`.
    pub fn dim(node_count: usize) -> usize {
        2 * (node_count - 1) + 1
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let l = self.p_load.len() - 1;
        let mut v = DVector::zeros(2 * l + 1);
        for j in 1..=l {
            v[j - 1] = self.p_load[j];
            v[l + j - 1] = self.q_load[j];
        }
        v[2 * l] = self.v0_sq;
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let l = (v.len() - 1) / 2;
        let mut p = vec![0.0; l + 1];
        let mut q = vec![0.0; l + 1];
        for j in 1..=l {
            p[j] = v[j - 1];
            q[j] = v[l + j - 1];
        }
        StateVector {
            p_load: p,
            q_load: q,
            v0_sq: v[2 * l],
        }
    }

    pub fn scenario(&self) -> LoadingScenario {
        LoadingScenario {
            p_load: self.p_load.clone(),
            q_load: self.q_load.clone(),
            v0_sq: self.v0_sq,
        }
    }
}

impl From<&LoadingScenario> for StateVector {
    fn from(s: &LoadingScenario) -> Self {
        StateVector {
            p_load: s.p_load.clone(),
            q_load: s.q_load.clone(),
            v0_sq: s.v0_sq,
        }
    }
}

fn col_p(j: usize) -> usize {
    j - 1
}

fn col_q(l: usize, j: usize) -> usize {
    l + j - 1
}

/// Constant approximate Jacobian of the measurement function.
///
/// Load rows are identities. A flow row has a 1 for every load fed through
/// its line; the reactive flow row also carries the shunt susceptance that
/// hangs below the measurement point in the slack-voltage column. A
/// squared-voltage row couples to each load through the resistance
/// (reactance) of the line path the two nodes share with the slack.
pub fn build_jacobian(grid: &RadialGrid, layout: &MeasurementLayout) -> Result<DMatrix<f64>> {
    layout.validate(grid)?;
    let n = grid.node_count();
    let l = n - 1;
    let cols = StateVector::dim(n);
    let v0 = 2 * l;

    // path sums from the slack
    let mut cum_r = vec![0.0; n];
    let mut cum_x = vec![0.0; n];
    for &v in grid.order() {
        if let Some(p) = grid.parent(v) {
            let line = grid.line(v)?;
            cum_r[v] = cum_r[p] + line.r;
            cum_x[v] = cum_x[p] + line.x;
        }
    }

    let mut h = DMatrix::zeros(layout.len(), cols);
    for (row, &kind) in layout.kinds().iter().enumerate() {
        match kind {
            MeasurementKind::PmP(j) => h[(row, col_p(j))] = 1.0,
            MeasurementKind::PmQ(j) => h[(row, col_q(l, j))] = 1.0,
            MeasurementKind::MdPFlow(line) => {
                for j in grid.downstream_nodes(line)? {
                    h[(row, col_p(j))] = 1.0;
                }
            }
            MeasurementKind::MdQFlow(line) => {
                let mut shunt = 0.0;
                for j in grid.downstream_nodes(line)? {
                    h[(row, col_q(l, j))] = 1.0;
                    shunt += grid.incident_half_susceptance(j)?;
                }
                h[(row, v0)] = -shunt;
            }
            MeasurementKind::MdV2(i) => {
                for j in 1..n {
                    let common = grid.lca(i, j)?;
                    h[(row, col_p(j))] = -2.0 * cum_r[common];
                    h[(row, col_q(l, j))] = -2.0 * cum_x[common];
                }
                h[(row, v0)] = 1.0;
            }
        }
    }
    Ok(h)
}

/// Predicts every measurement in `layout` by solving the load flow for `x`.
pub fn measurement_function(
    grid: &RadialGrid,
    x: &StateVector,
    layout: &MeasurementLayout,
    opts: DistflowOptions,
) -> Result<Vec<f64>> {
    let (state, _) = solve_distflow_from(grid, &x.scenario(), None, opts)?;
    Ok(layout.kinds().iter().map(|k| k.read(&state)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WlsOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub distflow: DistflowOptions,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            tol: 1e-8,
            max_iter: 100,
            distflow: DistflowOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WlsSolution {
    pub state: StateVector,
    pub iterations: usize,
    /// Weighted residual norm `||W^1/2 (z - h(x_k))||_2` at each iterate.
    pub residual_norms: Vec<f64>,
}

/// Factorized WLS estimator for a fixed grid and measurement layout.
#[derive(Clone, Debug)]
pub struct Estimator<'g> {
    grid: &'g RadialGrid,
    layout: MeasurementLayout,
    jacobian: DMatrix<f64>,
    gain: DMatrix<f64>,
    inv_sigma: Vec<f64>,
    opts: WlsOptions,
}

impl<'g> Estimator<'g> {
    /// Builds the Jacobian and the gain `(H^T W H)^-1 H^T W` with `W = diag(1/sigma^2)`.
    pub fn new(grid: &'g RadialGrid, layout: MeasurementLayout, sigmas: &[f64], opts: WlsOptions) -> Result<Self> {
        if sigmas.len() != layout.len() {
            return Err(Error::invalid("measurements", "one sigma per layout entry is required"));
        }
        let jacobian = build_jacobian(grid, &layout)?;
        let inv_sigma: Vec<f64> = sigmas.iter().map(|s| 1.0 / s.max(SIGMA_FLOOR)).collect();
        let gain = weighted_gain(&jacobian, &inv_sigma)?;
        Ok(Estimator {
            grid,
            layout,
            jacobian,
            gain,
            inv_sigma,
            opts,
        })
    }

    pub fn from_set(grid: &'g RadialGrid, z: &MeasurementSet, opts: WlsOptions) -> Result<Self> {
        Self::new(grid, z.layout(), &z.sigmas(), opts)
    }

    pub fn layout(&self) -> &MeasurementLayout {
        &self.layout
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// Warm start: loads from the pseudo-measurements, slack voltage from its
    /// measurement when present, otherwise 1 p.u.
    pub fn initial_state(&self, z: &[f64]) -> StateVector {
        let n = self.grid.node_count();
        let mut x = StateVector {
            p_load: vec![0.0; n],
            q_load: vec![0.0; n],
            v0_sq: 1.0,
        };
        for (&kind, &value) in self.layout.kinds().iter().zip(z) {
            match kind {
                MeasurementKind::PmP(j) => x.p_load[j] = value,
                MeasurementKind::PmQ(j) => x.q_load[j] = value,
                MeasurementKind::MdV2(SLACK) if value > 0.0 => x.v0_sq = value,
                _ => {}
            }
        }
        x
    }

    /// Iterates `x <- x + G (z - h(x))` until the update is below tolerance.
    pub fn solve(&self, z: &[f64], x0: &StateVector) -> Result<WlsSolution> {
        self.solve_inner(z, x0).map(|(sol, _)| sol)
    }

    fn solve_inner(&self, z: &[f64], x0: &StateVector) -> Result<(WlsSolution, Option<GridState>)> {
        if z.len() != self.layout.len() {
            return Err(Error::invalid("measurements", "measurement vector does not match layout"));
        }
        let mut x = x0.to_vector();
        let mut residual_norms = Vec::new();
        let mut warm: Option<GridState> = None;
        let mut last_step = f64::INFINITY;
        for iter in 1..=self.opts.max_iter {
            let xs = StateVector::from_vector(&x);
            let (state, _) = solve_distflow_from(
                self.grid,
                &xs.scenario(),
                warm.as_ref().map(|s| s.v_sq.as_slice()),
                self.opts.distflow,
            )?;
            let r = DVector::from_iterator(
                z.len(),
                self.layout.kinds().iter().zip(z).map(|(k, zi)| zi - k.read(&state)),
            );
            residual_norms.push(
                r.iter()
                    .zip(&self.inv_sigma)
                    .map(|(ri, w)| (ri * w) * (ri * w))
                    .sum::<f64>()
                    .sqrt(),
            );
            let dx = &self.gain * r;
            x += &dx;
            warm = Some(state);
            last_step = dx.amax();
            if !last_step.is_finite() {
                break;
            }
            if last_step < self.opts.tol {
                let sol = WlsSolution {
                    state: StateVector::from_vector(&x),
                    iterations: iter,
                    residual_norms,
                };
                return Ok((sol, warm));
            }
        }
        Err(Error::NoConvergence {
            iterations: self.opts.max_iter,
            last_change: last_step,
        })
    }

    /// WLS from the default warm start, then a final load flow on the estimate.
    pub fn estimate(&self, z: &[f64]) -> Result<(GridState, WlsSolution)> {
        let x0 = self.initial_state(z);
        let (sol, warm) = self.solve_inner(z, &x0)?;
        let (state, _) = solve_distflow_from(
            self.grid,
            &sol.state.scenario(),
            warm.as_ref().map(|s| s.v_sq.as_slice()),
            self.opts.distflow,
        )?;
        Ok((state, sol))
    }
}

/// Least-squares gain via QR of the column-equilibrated weighted Jacobian.
fn weighted_gain(h: &DMatrix<f64>, inv_sigma: &[f64]) -> Result<DMatrix<f64>> {
    let (m, n) = h.shape();
    if m < n {
        return Err(Error::SingularGain(format!("{m} measurements for {n} state variables")));
    }
    let mut a = h.clone();
    for (i, w) in inv_sigma.iter().enumerate() {
        a.row_mut(i).scale_mut(*w);
    }
    let mut col_scale = vec![0.0; n];
    for (c, s) in col_scale.iter_mut().enumerate() {
        let norm = a.column(c).norm();
        if norm == 0.0 {
            return Err(Error::SingularGain(format!("state variable {c} is not observed by any measurement")));
        }
        *s = 1.0 / norm;
        a.column_mut(c).scale_mut(*s);
    }
    let qr = a.qr();
    let r = qr.r();
    if let Some(c) = (0..n).find(|&c| r[(c, c)].abs() < 1e-10) {
        return Err(Error::SingularGain(format!("state variable {c} is not independently observable")));
    }
    let qt = qr.q().transpose();
    let mut g = r
        .solve_upper_triangular(&qt)
        .ok_or_else(|| Error::SingularGain("triangular solve failed".into()))?;
    for (c, s) in col_scale.iter().enumerate() {
        g.row_mut(c).scale_mut(*s);
    }
    for (i, w) in inv_sigma.iter().enumerate() {
        g.column_mut(i).scale_mut(*w);
    }
    Ok(g)
}

/// Runs the WLS iteration from `x0` with a gain built from `z`'s sigmas.
pub fn wls_solve(grid: &RadialGrid, z: &MeasurementSet, x0: &StateVector, opts: WlsOptions) -> Result<StateVector> {
    let est = Estimator::from_set(grid, z, opts)?;
    est.solve(&z.values(), x0).map(|s| s.state)
}

/// Estimates the full grid state from `z`.
pub fn estimate_state(grid: &RadialGrid, z: &MeasurementSet, opts: WlsOptions) -> Result<GridState> {
    let est = Estimator::from_set(grid, z, opts)?;
    est.estimate(&z.values()).map(|(s, _)| s)
}
