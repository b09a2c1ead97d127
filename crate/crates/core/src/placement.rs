//! Monte-Carlo inaccuracy cost of a device configuration and the greedy
//! placement loop built on it.
//!
//! Realizations are reduced in fixed-size chunks whose boundaries do not
//! depend on the thread pool, and chunk statistics are merged in order, so
//! every result is bit-identical for any degree of parallelism.

use std::collections::BTreeSet;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distflow::GridState;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, WlsOptions};
use crate::grid::RadialGrid;
use crate::noise::{DeviceConfiguration, MeasurementSampler, NoiseSpec};

const CHUNK: u64 = 64;

/// Which current quantity the line threshold applies to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentMetric {
    /// `sigma(I) <= rel_sigma_i * I_cap`
    #[default]
    Magnitude,
    /// `sigma(I^2) <= rel_sigma_i * I_cap^2`
    Squared,
}

/// Operator accuracy requirements, relative to `V^2` per node and `I_cap` per line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub rel_sigma_v2: f64,
    pub rel_sigma_i: f64,
    #[serde(default)]
    pub current_metric: CurrentMetric,
}

impl Thresholds {
    pub fn new(rel_sigma_v2: f64, rel_sigma_i: f64) -> Self {
        Thresholds {
            rel_sigma_v2,
            rel_sigma_i,
            current_metric: CurrentMetric::Magnitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_sigma_v2 > 0.0) || !(self.rel_sigma_i > 0.0) {
            return Err(Error::invalid("thresholds", "both thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "id")]
pub enum Element {
    Node(usize),
    Line(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub element: Element,
    pub sigma: f64,
    pub sigma_max: f64,
    pub cost: f64,
}

/// Empirical estimation uncertainty of one configuration.
///
/// Per-line vectors are indexed by line id; slot 0 is unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub devices: Vec<usize>,
    pub sigma_v2: Vec<f64>,
    pub sigma_i: Vec<f64>,
    pub sigma_max_v2: Vec<f64>,
    pub sigma_max_i: Vec<f64>,
    pub cost_node: Vec<f64>,
    pub cost_line: Vec<f64>,
    pub j_inf: f64,
    pub violations: Vec<Violation>,
    pub realizations: usize,
    pub failures: usize,
    pub seed: u64,
    pub current_metric: CurrentMetric,
}

impl UncertaintyReport {
    pub fn node_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| matches!(v.element, Element::Node(_)))
    }

    pub fn line_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| matches!(v.element, Element::Line(_)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub wls: WlsOptions,
    /// Fraction of non-convergent realizations tolerated before failing.
    pub max_failure_fraction: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            wls: WlsOptions::default(),
            max_failure_fraction: 0.01,
        }
    }
}

/// Running mean / sum of squared deviations per tracked quantity.
#[derive(Clone, Debug)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    failures: usize,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            failures: 0,
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let d = x - *m;
            *m += d / self.count;
            *s += d * (x - *m);
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        self.failures += other.failures;
        if other.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            let failures = self.failures;
            self = other.clone();
            self.failures = failures;
            return self;
        }
        let n = self.count + other.count;
        for k in 0..self.mean.len() {
            let d = other.mean[k] - self.mean[k];
            self.mean[k] += d * other.count / n;
            self.m2[k] += other.m2[k] + d * d * self.count * other.count / n;
        }
        self.count = n;
        self
    }

    fn std(&self) -> Vec<f64> {
        self.m2.iter().map(|s| (s / (self.count - 1.0)).max(0.0).sqrt()).collect()
    }
}

/// Runs `realizations` noisy estimations of `config` and reports the
/// per-quantity standard deviation of the estimated `V^2` and line current
/// against the thresholds.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_configuration(
    grid: &RadialGrid,
    true_state: &GridState,
    config: &DeviceConfiguration,
    spec: &NoiseSpec,
    thresholds: &Thresholds,
    realizations: usize,
    master_seed: u64,
    opts: &EvalOptions,
) -> Result<UncertaintyReport> {
    thresholds.validate()?;
    if realizations < 2 {
        return Err(Error::invalid("realizations", "at least two realizations are required"));
    }
    let n = grid.node_count();
    let sampler = MeasurementSampler::new(grid, true_state, config, spec, master_seed)?;
    let estimator = Estimator::new(grid, sampler.layout().clone(), sampler.sigmas(), opts.wls)?;
    let metric = thresholds.current_metric;

    let chunks = (realizations as u64).div_ceil(CHUNK);
    let moments = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::new(2 * n);
            let mut sample = vec![0.0; 2 * n];
            let end = ((c + 1) * CHUNK).min(realizations as u64);
            for r in (c * CHUNK + 1)..=end {
                match estimator.estimate(&sampler.values(r)) {
                    Ok((state, _)) => {
                        sample[..n].copy_from_slice(&state.v_sq);
                        for (k, &i) in state.i_flow.iter().enumerate() {
                            sample[n + k] = match metric {
                                CurrentMetric::Magnitude => i,
                                CurrentMetric::Squared => i * i,
                            };
                        }
                        acc.push(&sample);
                    }
                    Err(e) => {
                        debug!("realization {r} failed: {e}");
                        acc.failures += 1;
                    }
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .fold(Moments::new(2 * n), |a, b| a.merge(b));

    let limit = (opts.max_failure_fraction * realizations as f64).floor() as usize;
    if moments.failures > limit || moments.count < 2.0 {
        return Err(Error::TooManyFailures {
            failed: moments.failures,
            total: realizations,
        });
    }

    let std = moments.std();
    let sigma_v2 = std[..n].to_vec();
    let mut sigma_i = std[n..].to_vec();
    sigma_i[0] = 0.0;

    let sigma_max_v2: Vec<f64> = true_state.v_sq.iter().map(|v| thresholds.rel_sigma_v2 * v).collect();
    let mut sigma_max_i = vec![0.0; n];
    for line in grid.lines() {
        let cap = match metric {
            CurrentMetric::Magnitude => line.i_cap,
            CurrentMetric::Squared => line.i_cap * line.i_cap,
        };
        sigma_max_i[line.id] = thresholds.rel_sigma_i * cap;
    }

    let cost = |s: f64, max: f64| (s - max).max(0.0);
    let cost_node: Vec<f64> = sigma_v2.iter().zip(&sigma_max_v2).map(|(&s, &m)| cost(s, m)).collect();
    let mut cost_line = vec![0.0; n];
    for line in grid.lines() {
        cost_line[line.id] = cost(sigma_i[line.id], sigma_max_i[line.id]);
    }

    let mut violations = Vec::new();
    for (i, &c) in cost_node.iter().enumerate() {
        if c > 0.0 {
            violations.push(Violation {
                element: Element::Node(i),
                sigma: sigma_v2[i],
                sigma_max: sigma_max_v2[i],
                cost: c,
            });
        }
    }
    for line in grid.lines() {
        let c = cost_line[line.id];
        if c > 0.0 {
            violations.push(Violation {
                element: Element::Line(line.id),
                sigma: sigma_i[line.id],
                sigma_max: sigma_max_i[line.id],
                cost: c,
            });
        }
    }
    let j_inf = cost_node.iter().chain(&cost_line).copied().fold(0.0, f64::max);

    Ok(UncertaintyReport {
        devices: config.measured_nodes.iter().copied().collect(),
        sigma_v2,
        sigma_i,
        sigma_max_v2,
        sigma_max_i,
        cost_node,
        cost_line,
        j_inf,
        violations,
        realizations,
        failures: moments.failures,
        seed: master_seed,
        current_metric: metric,
    })
}

/// Placement candidates: every non-leaf node without a device, slack included.
pub fn candidates(grid: &RadialGrid, measured: &BTreeSet<usize>) -> Vec<usize> {
    (0..grid.node_count())
        .filter(|&i| !grid.is_leaf(i) && !measured.contains(&i))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub candidates: usize,
    pub chosen: usize,
    pub j_inf: f64,
    /// Realizations per evaluation in this iteration.
    pub realizations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub placements: Vec<usize>,
    pub per_iteration: Vec<IterationRecord>,
    pub base_report: UncertaintyReport,
    pub final_report: UncertaintyReport,
    pub evaluations_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacementOptions {
    /// Realizations per candidate evaluation inside the loop.
    pub r_search: usize,
    /// Realizations used to verify and report the final configuration.
    pub r_final: usize,
    pub master_seed: u64,
    pub max_devices: Option<usize>,
    pub eval: EvalOptions,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            r_search: 1000,
            r_final: 20_000,
            master_seed: 42,
            max_devices: None,
            eval: EvalOptions::default(),
        }
    }
}

/// Greedily adds the device that most reduces `||J||_inf` until the
/// thresholds hold everywhere.
///
/// The slack's squared voltage is always measured. Candidates are compared
/// at `r_search` realizations; once the search resolution reports zero cost
/// the configuration is re-checked at `r_final`, and if that check fails the
/// search continues at `r_final`.
pub fn greedy_place(
    grid: &RadialGrid,
    true_state: &GridState,
    spec: &NoiseSpec,
    thresholds: &Thresholds,
    opts: &PlacementOptions,
) -> Result<PlacementResult> {
    let eval = |config: &DeviceConfiguration, r: usize| {
        evaluate_configuration(grid, true_state, config, spec, thresholds, r, opts.master_seed, &opts.eval)
    };

    let mut config = DeviceConfiguration::new([], true);
    let mut resolution = opts.r_search;
    let base = eval(&config, resolution)?;
    info!("base case: |J|_inf = {:e}, {} violations", base.j_inf, base.violations.len());
    let mut current = base.clone();
    let mut per_iteration = Vec::new();
    let mut placements = Vec::new();
    let mut evaluations = 0;

    loop {
        if current.j_inf == 0.0 {
            if resolution == opts.r_final {
                break;
            }
            let check = eval(&config, opts.r_final)?;
            resolution = opts.r_final;
            current = check;
            if current.j_inf == 0.0 {
                break;
            }
            info!("verification at {} realizations failed; continuing at that resolution", opts.r_final);
        }

        let pool = candidates(grid, &config.measured_nodes);
        let at_budget = opts.max_devices.is_some_and(|m| placements.len() >= m);
        if at_budget || pool.is_empty() {
            let final_report = if resolution == opts.r_final {
                current
            } else {
                eval(&config, opts.r_final)?
            };
            return Err(Error::BudgetExhausted {
                result: Box::new(PlacementResult {
                    placements,
                    per_iteration,
                    base_report: base,
                    final_report,
                    evaluations_count: evaluations,
                }),
            });
        }

        let reports = pool
            .par_iter()
            .map(|&i| eval(&config.with(i), resolution))
            .collect::<Result<Vec<_>>>()?;
        evaluations += pool.len();

        // first minimum wins, and `pool` is ascending, so ties go to the lowest id
        let mut best = 0;
        for (k, rep) in reports.iter().enumerate() {
            if rep.j_inf < reports[best].j_inf {
                best = k;
            }
        }
        let chosen = pool[best];
        config.measured_nodes.insert(chosen);
        placements.push(chosen);
        current = reports.into_iter().nth(best).expect("pool is non-empty");
        info!(
            "iteration {}: {} candidates, placed node {chosen}, |J|_inf = {:e}",
            placements.len(),
            pool.len(),
            current.j_inf
        );
        per_iteration.push(IterationRecord {
            candidates: pool.len(),
            chosen,
            j_inf: current.j_inf,
            realizations: resolution,
        });
    }

    Ok(PlacementResult {
        placements,
        per_iteration,
        base_report: base,
        final_report: current,
        evaluations_count: evaluations,
    })
}

/// Which threshold a sensitivity sweep varies; the other stays at its base value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    Voltage,
    Current,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub devices: usize,
}

/// Device count needed at each threshold in `values` (ascending).
pub fn sensitivity_sweep(
    grid: &RadialGrid,
    true_state: &GridState,
    spec: &NoiseSpec,
    base: &Thresholds,
    axis: SweepAxis,
    values: &[f64],
    opts: &PlacementOptions,
) -> Result<Vec<SweepPoint>> {
    if values.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("sweep", "thresholds must be sorted ascending"));
    }
    values
        .iter()
        .map(|&t| {
            let mut th = *base;
            match axis {
                SweepAxis::Voltage => th.rel_sigma_v2 = t,
                SweepAxis::Current => th.rel_sigma_i = t,
            }
            let res = greedy_place(grid, true_state, spec, &th, opts)?;
            info!("sweep threshold {t}: {} devices", res.placements.len());
            Ok(SweepPoint {
                threshold: t,
                devices: res.placements.len(),
            })
        })
        .collect()
}
