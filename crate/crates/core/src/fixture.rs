//! Synthetic medium/low-voltage feeder used for demonstrations and tests.
//!
//! This is not a real utility grid. It only copies the rough shape of a
//! mixed MV/LV feeder: a short MV backbone, transformer busbars under it,
//! LV subtrees, one high-connectivity LV hub and a fixed number of leaves.
//! Line capacities are derived from the solved base case so that loadings
//! land in realistic bands.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distflow::{solve_distflow, DistflowOptions, GridState, LoadingScenario};
use crate::error::{Error, Result};
use crate::grid::{Bases, Line, Node, RadialGrid, VoltageLevel, SLACK};

/// Closed interval sampled uniformly.
pub type Band = (f64, f64);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineBands {
    pub r: Band,
    pub x: Band,
    pub b: Band,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureSpec {
    pub mv_count: usize,
    pub lv_count: usize,
    pub leaf_count: usize,
    /// Lines incident to the hub, its incoming line included.
    pub hub_degree: usize,
    /// LV nodes whose leaves are heavily loaded; the hub is always one of them.
    pub heavy_parents: usize,
    /// Minimum number of MV/LV transformers.
    pub transformers: usize,
    pub mv_line: LineBands,
    pub transformer: LineBands,
    pub lv_line: LineBands,
    pub lv_load_p: Band,
    pub power_factor: Band,
    /// Probability that an internal LV node carries no load.
    pub unloaded_fraction: f64,
    pub loading_mv: Band,
    pub loading_transformer: Band,
    pub loading_lv: Band,
    pub loading_leaf: Band,
    pub loading_heavy_leaf: Band,
    pub max_loading: f64,
    pub min_v_sq: f64,
    pub v0_sq: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            mv_count: 10,
            lv_count: 75,
            leaf_count: 43,
            hub_degree: 11,
            heavy_parents: 3,
            transformers: 6,
            mv_line: LineBands {
                r: (0.002, 0.01),
                x: (0.001, 0.006),
                b: (0.001, 0.005),
            },
            transformer: LineBands {
                r: (0.1, 0.2),
                x: (0.4, 0.7),
                b: (0.0, 0.0),
            },
            lv_line: LineBands {
                r: (0.2, 0.8),
                x: (0.05, 0.2),
                b: (0.0, 1e-5),
            },
            lv_load_p: (0.002, 0.008),
            power_factor: (0.9, 0.98),
            unloaded_fraction: 0.3,
            loading_mv: (0.10, 0.35),
            loading_transformer: (0.3, 0.6),
            loading_lv: (0.15, 0.55),
            loading_leaf: (0.05, 0.22),
            loading_heavy_leaf: (0.3, 0.8),
            max_loading: 0.8,
            min_v_sq: 0.85,
            v0_sq: 1.0,
            seed: 1,
        }
    }
}

impl FixtureSpec {
    pub fn new(mv_count: usize, lv_count: usize, seed: u64) -> Self {
        FixtureSpec {
            mv_count,
            lv_count,
            seed,
            ..FixtureSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bands = [
            ("mv_line.r", self.mv_line.r),
            ("mv_line.x", self.mv_line.x),
            ("mv_line.b", self.mv_line.b),
            ("transformer.r", self.transformer.r),
            ("transformer.x", self.transformer.x),
            ("transformer.b", self.transformer.b),
            ("lv_line.r", self.lv_line.r),
            ("lv_line.x", self.lv_line.x),
            ("lv_line.b", self.lv_line.b),
            ("lv_load_p", self.lv_load_p),
            ("power_factor", self.power_factor),
            ("loading_mv", self.loading_mv),
            ("loading_transformer", self.loading_transformer),
            ("loading_lv", self.loading_lv),
            ("loading_leaf", self.loading_leaf),
            ("loading_heavy_leaf", self.loading_heavy_leaf),
        ];
        for (name, (lo, hi)) in bands {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(Error::invalid(format!("fixture.{name}"), "band must satisfy 0 <= min <= max"));
            }
        }
        if self.power_factor.0 <= 0.0 || self.power_factor.1 > 1.0 {
            return Err(Error::invalid("fixture.power_factor", "must lie in (0, 1]"));
        }
        if !(self.max_loading > 0.0 && self.min_v_sq > 0.0 && self.v0_sq > 0.0) {
            return Err(Error::invalid("fixture", "max_loading, min_v_sq and v0_sq must be positive"));
        }
        if !(0.0..=1.0).contains(&self.unloaded_fraction) {
            return Err(Error::invalid("fixture.unloaded_fraction", "must lie in [0, 1]"));
        }
        if self.mv_count == 0 {
            return Err(Error::invalid("fixture.mv_count", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Mv,
    Transformer,
    LvInternal,
    Leaf,
}

struct Tree {
    parent: Vec<usize>,
    kind: Vec<Kind>,
    children: Vec<Vec<usize>>,
}

impl Tree {
    fn add(&mut self, parent: usize, kind: Kind) -> usize {
        let id = self.parent.len();
        self.parent.push(parent);
        self.kind.push(kind);
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): Band) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn infeasible(msg: impl Into<String>) -> Error {
    Error::InfeasibleSpec(msg.into())
}

fn build_topology(spec: &FixtureSpec, rng: &mut ChaCha8Rng) -> Result<(Tree, usize, Vec<usize>)> {
    let total = spec.mv_count + spec.lv_count;
    let internal_lv = total
        .checked_sub(spec.leaf_count + spec.mv_count)
        .ok_or_else(|| infeasible("more leaves than LV nodes"))?;

    let mut t = Tree {
        parent: vec![SLACK],
        kind: vec![Kind::Mv],
        children: vec![Vec::new()],
    };
    for k in 1..spec.mv_count {
        let p = if k >= 2 && rng.random_bool(0.3) { k - 2 } else { k - 1 };
        t.add(p, Kind::Mv);
    }

    let mut feeders: Vec<usize> = (0..spec.mv_count).filter(|&i| t.children[i].is_empty()).collect();
    let mut others: Vec<usize> = (0..spec.mv_count).filter(|&i| !feeders.contains(&i)).collect();
    while feeders.len() < spec.transformers && !others.is_empty() {
        let k = rng.random_range(0..others.len());
        feeders.push(others.swap_remove(k));
    }
    feeders.sort_unstable();
    if feeders.len() > internal_lv {
        return Err(infeasible(format!(
            "{} transformers needed but only {internal_lv} internal LV nodes available",
            feeders.len()
        )));
    }

    let mut lv: Vec<usize> = feeders.iter().map(|&m| t.add(m, Kind::Transformer)).collect();
    while lv.len() < internal_lv {
        // Favour the most recent node to grow deep LV branches.
        let p = if rng.random_bool(0.5) {
            *lv.last().unwrap()
        } else {
            *lv.choose(rng).unwrap()
        };
        lv.push(t.add(p, Kind::LvInternal));
    }
    if lv.is_empty() {
        if spec.leaf_count > 0 || spec.lv_count > 0 {
            return Err(infeasible("no internal LV node to attach leaves to"));
        }
        return Ok((t, SLACK, Vec::new()));
    }

    // The hub sits below a transformer, away from the busbar itself when possible.
    let deeper: Vec<usize> = lv.iter().copied().filter(|&i| t.kind[i] == Kind::LvInternal).collect();
    let hub = *deeper.choose(rng).unwrap_or(&lv[0]);
    let hub_children = spec.hub_degree.saturating_sub(1);
    if t.children[hub].len() > hub_children {
        return Err(infeasible("hub already has more children than its degree allows"));
    }

    let mut leaves_left = spec.leaf_count;
    for &i in &lv {
        if i != hub && t.children[i].is_empty() {
            take_leaf(&mut t, &mut leaves_left, i)?;
        }
    }
    while t.children[hub].len() < hub_children {
        take_leaf(&mut t, &mut leaves_left, hub)?;
    }
    let cap = hub_children.saturating_sub(2).max(1);
    let hosts: Vec<usize> = lv.iter().copied().filter(|&i| i != hub).collect();
    while leaves_left > 0 {
        let open: Vec<usize> = hosts.iter().copied().filter(|&i| t.children[i].len() < cap).collect();
        let p = *open
            .choose(rng)
            .ok_or_else(|| infeasible("no LV node can host more leaves without rivalling the hub"))?;
        take_leaf(&mut t, &mut leaves_left, p)?;
    }

    let mut heavy = vec![hub];
    let mut pool: Vec<usize> = hosts
        .iter()
        .copied()
        .filter(|&i| t.children[i].iter().any(|&c| t.kind[c] == Kind::Leaf))
        .collect();
    while heavy.len() < spec.heavy_parents && !pool.is_empty() {
        let k = rng.random_range(0..pool.len());
        heavy.push(pool.swap_remove(k));
    }
    Ok((t, hub, heavy))
}

fn take_leaf(t: &mut Tree, left: &mut usize, parent: usize) -> Result<()> {
    if *left == 0 {
        return Err(infeasible("leaf count too small for the generated LV structure"));
    }
    *left -= 1;
    t.add(parent, Kind::Leaf);
    Ok(())
}

/// Relabels nodes in breadth-first order from the slack.
fn bfs_order(t: &Tree) -> Vec<usize> {
    let mut order = vec![SLACK];
    let mut head = 0;
    while head < order.len() {
        let i = order[head];
        head += 1;
        order.extend(t.children[i].iter().copied());
    }
    order
}

/// Generates the grid and base loading scenario described by `spec`.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<(RadialGrid, LoadingScenario)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (tree, hub, heavy) = build_topology(spec, &mut rng)?;

    let order = bfs_order(&tree);
    let n = order.len();
    let mut new_id = vec![0; n];
    for (k, &old) in order.iter().enumerate() {
        new_id[old] = k;
    }

    let mut nodes = Vec::with_capacity(n);
    let mut lines = Vec::with_capacity(n.saturating_sub(1));
    let mut kind = vec![Kind::Mv; n];
    let mut p_load = vec![0.0; n];
    let mut q_load = vec![0.0; n];
    for (k, &old) in order.iter().enumerate() {
        kind[k] = tree.kind[old];
        let (level, label) = match tree.kind[old] {
            Kind::Mv => (VoltageLevel::Mv, format!("mv{k}")),
            Kind::Transformer => (VoltageLevel::Lv, format!("busbar{k}")),
            Kind::LvInternal if old == hub => (VoltageLevel::Lv, format!("hub{k}")),
            Kind::LvInternal | Kind::Leaf => (VoltageLevel::Lv, format!("lv{k}")),
        };
        nodes.push(Node { id: k, level, label });
        if k == SLACK {
            continue;
        }
        let bands = match tree.kind[old] {
            Kind::Mv => spec.mv_line,
            Kind::Transformer => spec.transformer,
            Kind::LvInternal | Kind::Leaf => spec.lv_line,
        };
        let r = uniform(&mut rng, bands.r);
        let x = uniform(&mut rng, bands.x);
        let b = uniform(&mut rng, bands.b);
        lines.push(Line::new(new_id[tree.parent[old]], k, r, x, b, 1.0));

        let loaded = match tree.kind[old] {
            Kind::Mv => false,
            Kind::Transformer | Kind::LvInternal => !rng.random_bool(spec.unloaded_fraction),
            Kind::Leaf => true,
        };
        if loaded {
            let p = uniform(&mut rng, spec.lv_load_p);
            let pf = uniform(&mut rng, spec.power_factor);
            p_load[k] = p;
            q_load[k] = p * (1.0 / (pf * pf) - 1.0).sqrt();
        }
    }
    let heavy_new: Vec<usize> = heavy.iter().map(|&h| new_id[h]).collect();

    let mut grid = RadialGrid::new(nodes.clone(), lines.clone(), Bases::default())?;
    let mut sc = LoadingScenario {
        p_load,
        q_load,
        v0_sq: spec.v0_sq,
    };
    let state = solve_with_voltage_floor(&grid, &mut sc, spec.min_v_sq)?;

    let mut targets = vec![0.0; n];
    for line in &lines {
        let j = line.downstream;
        let band = match kind[j] {
            Kind::Mv => spec.loading_mv,
            Kind::Transformer => spec.loading_transformer,
            Kind::LvInternal => spec.loading_lv,
            Kind::Leaf if heavy_new.contains(&line.upstream) => spec.loading_heavy_leaf,
            Kind::Leaf => spec.loading_leaf,
        };
        targets[j] = uniform(&mut rng, band).min(spec.max_loading);
    }
    let peak = lines
        .iter()
        .map(|l| l.downstream)
        .filter(|&j| kind[j] == Kind::Leaf && heavy_new.contains(&grid.parent(j).unwrap_or(SLACK)))
        .max_by(|&a, &b| state.i_flow[a].total_cmp(&state.i_flow[b]).then(b.cmp(&a)));
    if let Some(j) = peak {
        targets[j] = spec.max_loading;
    }
    for line in &mut lines {
        let j = line.downstream;
        let i = state.i_flow[j];
        line.i_cap = if i > 1e-9 && targets[j] > 0.0 {
            i / targets[j]
        } else {
            1.0
        };
    }
    grid = RadialGrid::new(nodes, lines, Bases::default())?;

    let max_loading = grid
        .lines()
        .iter()
        .map(|l| state.i_flow[l.id] / l.i_cap)
        .fold(0.0, f64::max);
    if n > 1 && !(0.6..=0.85).contains(&max_loading) {
        return Err(infeasible(format!("maximum line loading {max_loading:.3} outside [0.6, 0.85]")));
    }
    Ok((grid, sc))
}

/// Solves the scenario, scaling all loads down until every voltage clears `floor`.
fn solve_with_voltage_floor(grid: &RadialGrid, sc: &mut LoadingScenario, floor: f64) -> Result<GridState> {
    for _ in 0..40 {
        if let Ok(state) = solve_distflow(grid, sc, DistflowOptions::default()) {
            if state.v_sq.iter().all(|&v| v >= floor) {
                return Ok(state);
            }
        }
        for j in 0..sc.p_load.len() {
            sc.p_load[j] *= 0.8;
            sc.q_load[j] *= 0.8;
        }
    }
    Err(infeasible(format!("cannot keep every squared voltage above {floor}")))
}
