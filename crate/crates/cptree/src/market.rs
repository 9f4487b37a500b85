//! Finite scenario-tree market: the filtration is the tree's levels, prices
//! are node attributes, strategies are predictable (one holding vector per
//! information node), and the quantitative robust no-arbitrage condition is
//! certified node by node.

use crate::cpt::DiscreteDistribution;
use crate::error::{Error, Result};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tolerance on per-node branch probability sums.
pub const BRANCH_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    /// Conditional probability of reaching this node from its parent
    /// (1 at the root).
    pub branch_prob: f64,
    /// Price vector `S_t` at this node, one entry per asset.
    pub price: Vec<f64>,
    /// Benchmark value `B`, meaningful at terminal nodes only.
    pub benchmark: f64,
    /// Unconditional probability of the path from the root to this node.
    pub path_prob: f64,
}

/// A rooted tree of depth `horizon` with per-node branch probabilities and
/// prices; terminal nodes carry the benchmark. Immutable after `build`.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    horizon: usize,
    assets: usize,
    nodes: Vec<Node>,
    leaves: Vec<usize>,
    non_terminal: Vec<usize>,
    levels: Vec<Vec<usize>>,
}

impl ScenarioTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Terminal node ids in increasing id order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Non-terminal node ids in increasing id order; these are the
    /// information nodes on which strategies are defined.
    pub fn non_terminal(&self) -> &[usize] {
        &self.non_terminal
    }

    /// Node ids at a given depth, increasing.
    pub fn level(&self, depth: usize) -> &[usize] {
        &self.levels[depth]
    }

    /// Price increment along the edge into `child`.
    pub fn delta_s(&self, child: usize) -> Vec<f64> {
        let c = &self.nodes[child];
        let p = &self.nodes[c.parent.expect("root has no increment")];
        c.price.iter().zip(&p.price).map(|(a, b)| a - b).collect()
    }
}

/// Incremental construction of a [`ScenarioTree`]; `build` validates the
/// structural invariants.
#[derive(Debug)]
pub struct TreeBuilder {
    assets: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new(assets: usize, root_price: Vec<f64>) -> Self {
        let root = Node {
            parent: None,
            children: Vec::new(),
            depth: 0,
            branch_prob: 1.0,
            price: root_price,
            benchmark: 0.0,
            path_prob: 1.0,
        };
        TreeBuilder {
            assets,
            nodes: vec![root],
        }
    }

    /// Append a child under `parent`; returns the new node id.
    pub fn add_child(&mut self, parent: usize, branch_prob: f64, price: Vec<f64>) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        let path_prob = self.nodes[parent].path_prob * branch_prob;
        self.nodes[parent].children.push(id);
        self.nodes.push(Node {
            parent: Some(parent),
            children: Vec::new(),
            depth,
            branch_prob,
            price,
            benchmark: 0.0,
            path_prob,
        });
        id
    }

    /// Set the benchmark at a (terminal) node; defaults to 0.
    pub fn set_benchmark(&mut self, node: usize, benchmark: f64) {
        self.nodes[node].benchmark = benchmark;
    }

    /// Price vector of an already-added node.
    pub fn price(&self, node: usize) -> &[f64] {
        &self.nodes[node].price
    }

    pub fn build(self) -> Result<ScenarioTree> {
        let TreeBuilder { assets, nodes } = self;
        if assets == 0 {
            return Err(Error::InvalidTree("need at least one asset".into()));
        }
        let mut leaves = Vec::new();
        let mut non_terminal = Vec::new();
        let mut max_depth = 0usize;
        for (id, n) in nodes.iter().enumerate() {
            if n.price.len() != assets {
                return Err(Error::InvalidTree(format!(
                    "node {id} has a price vector of length {}, expected {assets}",
                    n.price.len()
                )));
            }
            if n.price.iter().any(|p| !p.is_finite()) {
                return Err(Error::InvalidTree(format!(
                    "node {id} has a non-finite price"
                )));
            }
            if id > 0 && !(n.branch_prob > 0.0 && n.branch_prob <= 1.0) {
                return Err(Error::InvalidTree(format!(
                    "node {id} branch probability {} is outside (0, 1]",
                    n.branch_prob
                )));
            }
            if n.children.is_empty() {
                leaves.push(id);
                max_depth = max_depth.max(n.depth);
            } else {
                non_terminal.push(id);
                let sum: f64 = n.children.iter().map(|&c| nodes[c].branch_prob).sum();
                if (sum - 1.0).abs() > BRANCH_SUM_TOL {
                    return Err(Error::InvalidTree(format!(
                        "branch probabilities under node {id} sum to {sum}"
                    )));
                }
            }
        }
        if max_depth == 0 {
            return Err(Error::InvalidTree("horizon must be at least 1".into()));
        }
        for &l in &leaves {
            if nodes[l].depth != max_depth {
                return Err(Error::InvalidTree(format!(
                    "terminal node {l} sits at depth {}, expected {max_depth}",
                    nodes[l].depth
                )));
            }
        }
        let mut levels = vec![Vec::new(); max_depth + 1];
        for (id, n) in nodes.iter().enumerate() {
            levels[n.depth].push(id);
        }
        Ok(ScenarioTree {
            horizon: max_depth,
            assets,
            nodes,
            leaves,
            non_terminal,
            levels,
        })
    }
}

/// Predictable holdings: one vector `theta in R^d` per non-terminal node,
/// applied to the price increments into that node's children.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    holdings: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn zero(tree: &ScenarioTree) -> Self {
        let holdings = (0..tree.len())
            .map(|id| {
                if tree.node(id).children.is_empty() {
                    Vec::new()
                } else {
                    vec![0.0; tree.assets()]
                }
            })
            .collect();
        Strategy { holdings }
    }

    /// The same holding vector at every information node.
    pub fn constant(tree: &ScenarioTree, theta: &[f64]) -> Result<Self> {
        if theta.len() != tree.assets() {
            return Err(Error::Config(format!(
                "holding vector has {} entries, market has {} assets",
                theta.len(),
                tree.assets()
            )));
        }
        let mut s = Strategy::zero(tree);
        for &id in tree.non_terminal() {
            s.holdings[id].copy_from_slice(theta);
        }
        Ok(s)
    }

    /// Build from per-depth holdings: `levels[t]` lists one vector per
    /// depth-`t` information node, in increasing node-id order,
    /// `t = 0 .. horizon-1`.
    pub fn from_levels(tree: &ScenarioTree, levels: &[Vec<Vec<f64>>]) -> Result<Self> {
        if levels.len() != tree.horizon() {
            return Err(Error::Config(format!(
                "expected {} strategy levels, got {}",
                tree.horizon(),
                levels.len()
            )));
        }
        let mut s = Strategy::zero(tree);
        for (t, level) in levels.iter().enumerate() {
            let ids = tree.level(t);
            if level.len() != ids.len() {
                return Err(Error::Config(format!(
                    "level {t} has {} holding vectors, expected {}",
                    level.len(),
                    ids.len()
                )));
            }
            for (&id, theta) in ids.iter().zip(level) {
                if theta.len() != tree.assets() {
                    return Err(Error::Config(format!(
                        "holding vector at node {id} has {} entries, expected {}",
                        theta.len(),
                        tree.assets()
                    )));
                }
                s.holdings[id].copy_from_slice(theta);
            }
        }
        Ok(s)
    }

    pub fn theta(&self, node: usize) -> &[f64] {
        &self.holdings[node]
    }

    pub fn set_theta(&mut self, node: usize, theta: &[f64]) {
        self.holdings[node].copy_from_slice(theta);
    }

    pub fn scaled(&self, c: f64) -> Strategy {
        Strategy {
            holdings: self
                .holdings
                .iter()
                .map(|h| h.iter().map(|x| c * x).collect())
                .collect(),
        }
    }

    /// `a * self + b * other`, node-wise.
    pub fn linear_comb(&self, a: f64, other: &Strategy, b: f64) -> Strategy {
        Strategy {
            holdings: self
                .holdings
                .iter()
                .zip(&other.holdings)
                .map(|(x, y)| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.holdings
            .iter()
            .flat_map(|h| h.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Euclidean norm of the holding at `node`.
    pub fn norm_at(&self, node: usize) -> f64 {
        self.holdings[node]
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Flatten a strategy into the stacked coordinate vector over the tree's
/// non-terminal nodes (id order, `assets` entries per node).
pub fn pack_strategy(tree: &ScenarioTree, s: &Strategy) -> Vec<f64> {
    let mut out = Vec::with_capacity(tree.non_terminal().len() * tree.assets());
    for &id in tree.non_terminal() {
        out.extend_from_slice(s.theta(id));
    }
    out
}

/// Inverse of [`pack_strategy`].
pub fn unpack_strategy(tree: &ScenarioTree, x: &[f64]) -> Strategy {
    let d = tree.assets();
    debug_assert_eq!(x.len(), tree.non_terminal().len() * d);
    let mut s = Strategy::zero(tree);
    for (k, &id) in tree.non_terminal().iter().enumerate() {
        s.set_theta(id, &x[k * d..(k + 1) * d]);
    }
    s
}

/// Portfolio value at every node: `X_0 = z` at the root and
/// `X_child = X_parent + theta(parent) . (S_child - S_parent)` along edges.
#[derive(Debug, Clone)]
pub struct WealthProcess {
    pub initial: f64,
    /// Value per node id.
    pub values: Vec<f64>,
}

pub fn wealth(tree: &ScenarioTree, z: f64, theta: &Strategy) -> Result<WealthProcess> {
    let d = tree.assets();
    let mut values = vec![0.0; tree.len()];
    values[tree.root()] = z;
    // node ids increase along any root-to-leaf path by construction
    for id in 0..tree.len() {
        let node = tree.node(id);
        if node.children.is_empty() {
            continue;
        }
        let th = theta.theta(id);
        if th.len() != d {
            return Err(Error::Config(format!(
                "holding vector at node {id} has {} entries, expected {d}",
                th.len()
            )));
        }
        for &c in &node.children {
            let child = tree.node(c);
            let gain: f64 = th
                .iter()
                .zip(child.price.iter().zip(&node.price))
                .map(|(t, (sc, sp))| t * (sc - sp))
                .sum();
            values[c] = values[id] + gain;
        }
    }
    Ok(WealthProcess { initial: z, values })
}

/// Law of the benchmark-relative terminal wealth `X_T - B` over the
/// terminal atoms; path probabilities multiply along edges.
pub fn terminal_distribution(
    tree: &ScenarioTree,
    z: f64,
    theta: &Strategy,
) -> Result<DiscreteDistribution> {
    let w = wealth(tree, z, theta)?;
    let atoms = tree
        .leaves()
        .iter()
        .map(|&l| {
            let n = tree.node(l);
            (w.values[l] - n.benchmark, n.path_prob)
        })
        .collect();
    DiscreteDistribution::new(atoms)
}

/// Per-node constants of the quantitative no-arbitrage condition: every
/// probed unit direction loses at least `kappa` with conditional
/// probability at least `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeCertificate {
    pub kappa: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct NaFailure {
    pub node: usize,
    /// A probed unit direction whose loss probability is zero for every
    /// positive threshold.
    pub direction: Vec<f64>,
}

/// Outcome of [`check_robust_na`]: per-node `(kappa, beta)` where the
/// condition holds, and the first offending node/direction where it fails.
#[derive(Debug, Clone)]
pub struct NaCertificate {
    /// Indexed by node id; `None` at terminal nodes and at failing nodes.
    pub node_certs: Vec<Option<NodeCertificate>>,
    pub pass: bool,
    pub failure: Option<NaFailure>,
}

impl NaCertificate {
    pub fn cert(&self, node: usize) -> Option<NodeCertificate> {
        self.node_certs[node]
    }
}

/// Unit directions probed by the no-arbitrage check. Exact for one asset
/// (both signs); an equiangular grid in dimension two; a Fibonacci spread
/// in dimension three; a seeded normalized-Gaussian spread beyond that.
pub fn unit_directions(assets: usize, grid: usize) -> Vec<Vec<f64>> {
    match assets {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let g = grid.max(4);
            (0..g)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / g as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect()
        }
        3 => {
            let g = grid.max(8);
            let golden = std::f64::consts::PI * (3.0 - (5.0f64).sqrt());
            (0..g)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / g as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        d => {
            let g = grid.max(16);
            let mut rng = ChaCha8Rng::seed_from_u64(0xD19E_C7ED);
            let mut dirs = Vec::with_capacity(g);
            while dirs.len() < g {
                let v: Vec<f64> = (0..d)
                    .map(|_| {
                        // Box-Muller, deterministic under the fixed seed
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    dirs.push(v.into_iter().map(|x| x / norm).collect());
                }
            }
            dirs
        }
    }
}

/// Certify the robust no-arbitrage condition on every non-terminal node.
///
/// Per node and probed unit direction `xi`, the largest loss threshold with
/// positive conditional probability is `-min_children xi . dS`; the node's
/// `kappa` is the smallest such threshold across directions, capped at 1,
/// and `beta` is the worst-direction conditional probability of losing at
/// least `kappa`. A direction with no strictly negative increment makes the
/// node an arbitrage and fails the certificate (exact for one asset,
/// grid-sufficient beyond).
pub fn check_robust_na(tree: &ScenarioTree, direction_grid: usize) -> NaCertificate {
    let dirs = unit_directions(tree.assets(), direction_grid);
    let mut node_certs = vec![None; tree.len()];
    let mut failure: Option<NaFailure> = None;
    for &id in tree.non_terminal() {
        let node = tree.node(id);
        let increments: Vec<(Vec<f64>, f64)> = node
            .children
            .iter()
            .map(|&c| (tree.delta_s(c), tree.node(c).branch_prob))
            .collect();
        let mut kappa = 1.0f64;
        let mut node_ok = true;
        for xi in &dirs {
            let worst = increments
                .iter()
                .map(|(ds, _)| dot(xi, ds))
                .fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                node_ok = false;
                if failure.is_none() {
                    failure = Some(NaFailure {
                        node: id,
                        direction: xi.clone(),
                    });
                }
                break;
            }
            kappa = kappa.min(-worst);
        }
        if !node_ok {
            continue;
        }
        let beta = dirs
            .iter()
            .map(|xi| {
                increments
                    .iter()
                    .filter(|(ds, _)| dot(xi, ds) <= -kappa)
                    .map(|(_, p)| p)
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        node_certs[id] = Some(NodeCertificate { kappa, beta });
    }
    NaCertificate {
        pass: failure.is_none(),
        node_certs,
        failure,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
