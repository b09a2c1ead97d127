//! Shared test helpers: random radial grids and a polar Newton-Raphson AC
//! power flow written independently of the sweep solver.

#![allow(dead_code)]

use gridobs::{build_grid, Line, LoadingScenario, Node, RadialGrid, VoltageLevel};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomGridSpec {
    pub max_nodes: usize,
    pub rx: (f64, f64),
    pub b: (f64, f64),
    pub p: (f64, f64),
    pub q: (f64, f64),
}

impl Default for RandomGridSpec {
    fn default() -> Self {
        RandomGridSpec {
            max_nodes: 12,
            rx: (0.001, 0.05),
            b: (0.0, 0.05),
            p: (-0.05, 0.3),
            q: (-0.1, 0.15),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random tree where node `j` hangs below a uniformly chosen earlier node.
pub fn random_grid(seed: u64, spec: &RandomGridSpec) -> (RadialGrid, LoadingScenario) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=spec.max_nodes);
    let nodes = (0..n)
        .map(|i| Node::new(i, if i == 0 { VoltageLevel::Mv } else { VoltageLevel::Lv }))
        .collect();
    let lines = (1..n)
        .map(|j| {
            let p = rng.random_range(0..j);
            Line::new(p, j, draw(&mut rng, spec.rx), draw(&mut rng, spec.rx), draw(&mut rng, spec.b), 1.0)
        })
        .collect();
    let grid = build_grid(nodes, lines).unwrap();
    let mut sc = LoadingScenario::zero(n);
    sc.v0_sq = rng.random_range(0.95..1.1);
    for j in 1..n {
        sc.p_load[j] = draw(&mut rng, spec.p);
        sc.q_load[j] = draw(&mut rng, spec.q);
    }
    (grid, sc)
}

pub struct AcSolution {
    pub v: Vec<Complex64>,
    /// Series-branch power leaving the upstream end, per line id (slot 0 unused).
    pub s_send: Vec<Complex64>,
    pub iterations: usize,
}

impl AcSolution {
    pub fn v_sq(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn p_flow(&self) -> Vec<f64> {
        self.s_send.iter().map(|s| s.re).collect()
    }

    pub fn q_flow(&self) -> Vec<f64> {
        self.s_send.iter().map(|s| s.im).collect()
    }

    /// Series current magnitude per line.
    pub fn i_flow(&self, grid: &RadialGrid) -> Vec<f64> {
        let mut out = vec![0.0; self.v.len()];
        for l in grid.lines() {
            out[l.id] = self.s_send[l.id].norm() / self.v[l.upstream].norm();
        }
        out
    }
}

/// PI-model bus admittance matrix with `jB/2` at each line end.
pub fn y_bus(grid: &RadialGrid) -> DMatrix<Complex64> {
    let n = grid.node_count();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for l in grid.lines() {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r, l.x);
        let sh = Complex64::new(0.0, l.b / 2.0);
        let (i, j) = (l.upstream, l.downstream);
        y[(i, i)] += ys + sh;
        y[(j, j)] += ys + sh;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    y
}

/// Polar Newton-Raphson with the slack at node 0 (angle 0) and PQ loads elsewhere.
pub fn newton_raphson(grid: &RadialGrid, sc: &LoadingScenario, tol: f64, max_iter: usize) -> Option<AcSolution> {
    let n = grid.node_count();
    let y = y_bus(grid);
    let g = y.map(|c| c.re);
    let b = y.map(|c| c.im);
    let mut vm = vec![sc.v0_sq.sqrt(); n];
    let mut va = vec![0.0; n];
    let m = n - 1;

    let injections = |vm: &[f64], va: &[f64]| {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let t = va[i] - va[k];
                p[i] += vm[i] * vm[k] * (g[(i, k)] * t.cos() + b[(i, k)] * t.sin());
                q[i] += vm[i] * vm[k] * (g[(i, k)] * t.sin() - b[(i, k)] * t.cos());
            }
        }
        (p, q)
    };

    let mut iterations = 0;
    loop {
        let (p, q) = injections(&vm, &va);
        let mut f = DVector::zeros(2 * m);
        for i in 1..n {
            f[i - 1] = -sc.p_load[i] - p[i];
            f[m + i - 1] = -sc.q_load[i] - q[i];
        }
        if f.amax() < tol {
            break;
        }
        if iterations == max_iter {
            return None;
        }
        iterations += 1;

        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for i in 1..n {
            for k in 1..n {
                let (r, c) = (i - 1, k - 1);
                if i == k {
                    jac[(r, c)] = -q[i] - b[(i, i)] * vm[i] * vm[i];
                    jac[(r, m + c)] = p[i] / vm[i] + g[(i, i)] * vm[i];
                    jac[(m + r, c)] = p[i] - g[(i, i)] * vm[i] * vm[i];
                    jac[(m + r, m + c)] = q[i] / vm[i] - b[(i, i)] * vm[i];
                } else {
                    let t = va[i] - va[k];
                    let (gs, bc) = (g[(i, k)] * t.sin() - b[(i, k)] * t.cos(), g[(i, k)] * t.cos() + b[(i, k)] * t.sin());
                    jac[(r, c)] = vm[i] * vm[k] * gs;
                    jac[(r, m + c)] = vm[i] * bc;
                    jac[(m + r, c)] = -vm[i] * vm[k] * bc;
                    jac[(m + r, m + c)] = vm[i] * gs;
                }
            }
        }
        let dx = jac.lu().solve(&f)?;
        for i in 1..n {
            va[i] += dx[i - 1];
            vm[i] += dx[m + i - 1];
            if !(vm[i].is_finite() && vm[i] > 0.0) {
                return None;
            }
        }
    }

    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect();
    let mut s_send = vec![Complex64::new(0.0, 0.0); n];
    for l in grid.lines() {
        let (vi, vj) = (v[l.upstream], v[l.downstream]);
        let i_series = (vi - vj) / Complex64::new(l.r, l.x);
        s_send[l.id] = vi * i_series.conj();
    }
    Some(AcSolution { v, s_send, iterations })
}

/// Random grids whose loading has a physical AC solution with healthy voltages.
pub fn feasible_grids(count: usize, first_seed: u64, spec: &RandomGridSpec) -> Vec<(RadialGrid, LoadingScenario, AcSolution)> {
    let mut out = Vec::with_capacity(count);
    let mut seed = first_seed;
    while out.len() < count {
        let (g, sc) = random_grid(seed, spec);
        seed += 1;
        if let Some(sol) = newton_raphson(&g, &sc, 1e-12, 30) {
            if sol.v_sq().iter().all(|&v| v > 0.8) {
                out.push((g, sc, sol));
            }
        }
    }
    out
}

/// Six-node test grid: 0-1-2 with leaves 3, 4 under node 2 and leaf 5 under node 1.
pub fn six_node() -> (RadialGrid, LoadingScenario) {
    let nodes = (0..6)
        .map(|i| Node::new(i, if i < 2 { VoltageLevel::Mv } else { VoltageLevel::Lv }))
        .collect();
    let lines = vec![
        Line::new(0, 1, 0.01, 0.02, 0.002, 0.8),
        Line::new(1, 2, 0.15, 0.4, 0.0, 0.3),
        Line::new(2, 3, 0.4, 0.1, 0.0, 0.06),
        Line::new(2, 4, 0.5, 0.12, 0.0, 0.08),
        Line::new(1, 5, 0.3, 0.08, 0.0, 0.05),
    ];
    let g = build_grid(nodes, lines).unwrap();
    let mut sc = LoadingScenario::zero(6);
    sc.v0_sq = 1.0;
    let p = [0.0, 0.0, 0.02, 0.04, 0.05, 0.03];
    for j in 1..6 {
        sc.p_load[j] = p[j];
        sc.q_load[j] = 0.3 * p[j];
    }
    (g, sc)
}

/// Central finite-difference Jacobian of the measurement function at `x`.
pub fn fd_jacobian(
    grid: &RadialGrid,
    layout: &gridobs::MeasurementLayout,
    x: &gridobs::StateVector,
    step: f64,
) -> DMatrix<f64> {
    let opts = gridobs::DistflowOptions {
        tol: 1e-14,
        max_iter: 1000,
    };
    let base = x.to_vector();
    let mut jac = DMatrix::zeros(layout.len(), base.len());
    for c in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[c] += step;
        minus[c] -= step;
        let hp = gridobs::measurement_function(grid, &gridobs::StateVector::from_vector(&plus), layout, opts).unwrap();
        let hm = gridobs::measurement_function(grid, &gridobs::StateVector::from_vector(&minus), layout, opts).unwrap();
        for r in 0..layout.len() {
            jac[(r, c)] = (hp[r] - hm[r]) / (2.0 * step);
        }
    }
    jac
}

/// Layout with a device on every node, so every row type is present.
pub fn full_layout(grid: &RadialGrid) -> gridobs::MeasurementLayout {
    let all: Vec<usize> = (0..grid.node_count()).collect();
    gridobs::MeasurementLayout::for_devices(grid, &all, true).unwrap()
}
