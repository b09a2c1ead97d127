//! Radial grid topology and per-unit line parameters.
//!
//! Nodes are indexed `0..N` with node 0 the slack bus. Every other node has
//! exactly one incoming line, and that line carries the id of its downstream
//! node, so line ids run over `1..N` and share the node index space.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLACK: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoltageLevel {
    #[serde(rename = "MV")]
    Mv,
    #[serde(rename = "LV")]
    Lv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub level: VoltageLevel,
    #[serde(default)]
    pub label: String,
}

impl Node {
    pub fn new(id: usize, level: VoltageLevel) -> Self {
        Node {
            id,
            level,
            label: String::new(),
        }
    }
}

/// PI-model line. `b` is the total shunt susceptance; half of it sits at each end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub upstream: usize,
    pub downstream: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub i_cap: f64,
}

impl Line {
    /// Line `from -> to`; the id is taken from the downstream node.
    pub fn new(from: usize, to: usize, r: f64, x: f64, b: f64, i_cap: f64) -> Self {
        Line {
            id: to,
            upstream: from,
            downstream: to,
            r,
            x,
            b,
            i_cap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    /// Base power in VA.
    pub s_base: f64,
    /// Base voltage in V.
    pub v_base: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            s_base: 10e6,
            v_base: 18e3,
        }
    }
}

/// Validated radial grid. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<Node>,
    /// Sorted by id; `lines[k].id == k + 1`.
    lines: Vec<Line>,
    bases: Bases,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    /// Breadth-first order from the slack.
    order: Vec<usize>,
    // Pre-order interval of each node's subtree.
    enter: Vec<usize>,
    exit: Vec<usize>,
    half_b: Vec<f64>,
}

/// Validates `nodes` and `lines` and builds the tree indices.
pub fn build_grid(nodes: Vec<Node>, lines: Vec<Line>) -> Result<RadialGrid> {
    RadialGrid::new(nodes, lines, Bases::default())
}

impl RadialGrid {
    pub fn new(mut nodes: Vec<Node>, mut lines: Vec<Line>, bases: Bases) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        if nodes.first().map(|n| n.id) != Some(SLACK) {
            return Err(Error::BadSlack("no node with id 0".into()));
        }
        for (k, node) in nodes.iter().enumerate() {
            if node.id != k {
                return Err(Error::invalid(
                    format!("node {}", node.id),
                    "node ids must be unique and contiguous from 0",
                ));
            }
        }
        let n = nodes.len();
        if lines.len() + 1 != n {
            return Err(Error::NotRadial(format!(
                "{} lines for {} nodes (expected {})",
                lines.len(),
                n,
                n - 1
            )));
        }

        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for line in &lines {
            let elem = || format!("line {}", line.id);
            if line.upstream >= n {
                return Err(Error::UnknownNode(line.upstream));
            }
            if line.downstream >= n {
                return Err(Error::UnknownNode(line.downstream));
            }
            if line.upstream == line.downstream {
                return Err(Error::NotRadial(format!("line {} is a self-loop", line.id)));
            }
            if line.downstream == SLACK {
                return Err(Error::BadSlack(format!("line {} feeds the slack bus", line.id)));
            }
            if line.id != line.downstream {
                return Err(Error::invalid(elem(), "line id must equal its downstream node id"));
            }
            let finite = [line.r, line.x, line.b, line.i_cap].iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::invalid(elem(), "non-finite parameter"));
            }
            if line.r < 0.0 {
                return Err(Error::invalid(elem(), "negative resistance"));
            }
            if line.b < 0.0 {
                return Err(Error::invalid(elem(), "negative shunt susceptance"));
            }
            if line.i_cap <= 0.0 {
                return Err(Error::invalid(elem(), "current capacity must be positive"));
            }
            if parent[line.downstream].is_some() {
                return Err(Error::DuplicateParent {
                    node: line.downstream,
                });
            }
            parent[line.downstream] = Some(line.upstream);
            children[line.upstream].push(line.downstream);
        }
        for c in &mut children {
            c.sort_unstable();
        }
        lines.sort_by_key(|l| l.id);

        let mut depth = vec![0; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([SLACK]);
        let mut seen = vec![false; n];
        seen[SLACK] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &c in &children[u] {
                if !seen[c] {
                    seen[c] = true;
                    depth[c] = depth[u] + 1;
                    queue.push_back(c);
                }
            }
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(Error::NotRadial(format!(
                "node {lost} is not connected to the slack bus"
            )));
        }

        let mut enter = vec![0; n];
        let mut exit = vec![0; n];
        let mut clock = 0;
        let mut stack = vec![(SLACK, false)];
        while let Some((u, done)) = stack.pop() {
            if done {
                exit[u] = clock;
                continue;
            }
            enter[u] = clock;
            clock += 1;
            stack.push((u, true));
            for &c in children[u].iter().rev() {
                stack.push((c, false));
            }
        }

        let mut half_b = vec![0.0; n];
        for line in &lines {
            half_b[line.upstream] += 0.5 * line.b;
            half_b[line.downstream] += 0.5 * line.b;
        }

        Ok(RadialGrid {
            nodes,
            lines,
            bases,
            parent,
            children,
            depth,
            order,
            enter,
            exit,
            half_b,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bases(&self) -> Bases {
        self.bases
    }

    pub fn line(&self, id: usize) -> Result<&Line> {
        if id == SLACK || id >= self.nodes.len() {
            return Err(Error::UnknownLine(id));
        }
        Ok(&self.lines[id - 1])
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(node))
        }
    }

    /// Upstream neighbour of `node`; `None` for the slack.
    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent.get(node).copied().flatten()
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Nodes in breadth-first order from the slack; parents precede children.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Ids of the lines touching `node`: its incoming line and all outgoing ones, ascending.
    pub fn incident_lines(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.parent(node).map(|_| node).into_iter().collect();
        out.extend_from_slice(&self.children[node]);
        out.sort_unstable();
        out
    }

    /// Whether `node` lies in the subtree rooted at `root` (inclusive).
    pub fn is_in_subtree(&self, root: usize, node: usize) -> bool {
        self.enter[root] <= self.enter[node] && self.enter[node] < self.exit[root]
    }

    /// All nodes fed through `line_id`, including its downstream node.
    pub fn downstream_nodes(&self, line_id: usize) -> Result<Vec<usize>> {
        self.line(line_id)?;
        let mut out: Vec<usize> = (0..self.nodes.len())
            .filter(|&v| self.is_in_subtree(line_id, v))
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Deepest node common to the slack-to-`a` and slack-to-`b` paths.
    pub fn lca(&self, a: usize, b: usize) -> Result<usize> {
        self.check_node(a)?;
        self.check_node(b)?;
        let (mut a, mut b) = (a, b);
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].expect("non-root has a parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].expect("non-root has a parent");
        }
        while a != b {
            a = self.parent[a].expect("non-root has a parent");
            b = self.parent[b].expect("non-root has a parent");
        }
        Ok(a)
    }

    /// Lines from the slack down to `node`, slack end first.
    pub fn path_lines(&self, node: usize) -> Result<Vec<usize>> {
        self.check_node(node)?;
        let mut path = Vec::with_capacity(self.depth[node]);
        let mut v = node;
        while let Some(p) = self.parent[v] {
            path.push(v);
            v = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Lines on the slack-to-`lca(a, b)` path, slack end first.
    pub fn shared_path_lines(&self, a: usize, b: usize) -> Result<Vec<usize>> {
        let common = self.lca(a, b)?;
        self.path_lines(common)
    }

    /// Sum of the PI half-susceptances of every line touching `node`.
    pub fn incident_half_susceptance(&self, node: usize) -> Result<f64> {
        self.check_node(node)?;
        Ok(self.half_b[node])
    }

    /// Nodes with an incoming line and no outgoing line. The slack is never a leaf.
    pub fn leaves(&self) -> Vec<usize> {
        (1..self.nodes.len())
            .filter(|&v| self.children[v].is_empty())
            .collect()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node != SLACK && self.children[node].is_empty()
    }
}
