//! Coupling trees on top of a fitted posterior: the hMAP tree, posterior
//! tree draws, prior measure draws and L1 / squared-Hellinger distances.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coopt::{CooptParams, NodeStats, PosteriorTable};
use crate::error::{Error, Result};
use crate::numerics::{bernoulli, sample_categorical, sample_dirichlet2, RandomStream};
use crate::opt::{centered_pseudocounts, selector_log_weights, BaseMeasure, OptParams, UniformBase};
use crate::space::{Node, NodeKey, SampleSpace};

/// What happens at a tree node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeStatus {
    /// The two measures share their conditional distribution below here.
    Coupled,
    /// Split along a (0-based) dimension.
    Split(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub node: Node,
    pub status: TreeStatus,
    pub gamma_post: f64,
    pub n1: u32,
    pub n2: u32,
    /// `(Q1(A), Q2(A))`; present on sampled trees only.
    pub masses: Option<(f64, f64)>,
    /// Lower and upper halves when split.
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    fn leaf(s: &NodeStats, gamma_post: f64, masses: Option<(f64, f64)>) -> Self {
        TreeNode {
            node: s.node,
            status: TreeStatus::Coupled,
            gamma_post,
            n1: s.n1,
            n2: s.n2,
            masses,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A rooted coupling tree; leaves are the nodes where the measures first couple.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTree {
    pub space: SampleSpace,
    pub root: TreeNode,
}

/// Serialised form of a tree node; dimensions are 1-based.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeNodeJson {
    pub key: NodeKey,
    pub region: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_dim: Option<usize>,
    pub gamma_post: f64,
    pub n1: u32,
    pub n2: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass2: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<TreeNodeJson>,
}

impl CouplingTree {
    /// Nodes in breadth-first order, lower half first.
    pub fn breadth_first(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([&self.root]);
        while let Some(t) = queue.pop_front() {
            out.push(t);
            queue.extend(t.children.iter());
        }
        out
    }

    /// Dimensions (0-based) of the first `k` split nodes in breadth-first order.
    pub fn first_split_dims(&self, k: usize) -> Vec<usize> {
        self.breadth_first()
            .into_iter()
            .filter_map(|t| match t.status {
                TreeStatus::Split(d) => Some(d),
                TreeStatus::Coupled => None,
            })
            .take(k)
            .collect()
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        self.breadth_first().into_iter().filter(|t| t.is_leaf()).collect()
    }

    pub fn node_count(&self) -> usize {
        self.breadth_first().len()
    }

    pub fn to_json(&self) -> TreeNodeJson {
        self.node_json(&self.root)
    }

    fn node_json(&self, t: &TreeNode) -> TreeNodeJson {
        let (status, split_dim) = match t.status {
            TreeStatus::Coupled => ("coupled", None),
            TreeStatus::Split(d) => ("split", Some(d + 1)),
        };
        TreeNodeJson {
            key: t.node.key(),
            region: self.space.describe(t.node),
            status: status.into(),
            split_dim,
            gamma_post: t.gamma_post,
            n1: t.n1,
            n2: t.n2,
            mass1: t.masses.map(|m| m.0),
            mass2: t.masses.map(|m| m.1),
            children: t.children.iter().map(|c| self.node_json(c)).collect(),
        }
    }

    /// Indented text rendering, one node per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_node(&self.root, 0, &mut out);
        out
    }

    fn render_node(&self, t: &TreeNode, indent: usize, out: &mut String) {
        let what = match t.status {
            TreeStatus::Coupled => "coupled".to_string(),
            TreeStatus::Split(d) => format!("split X{}", d + 1),
        };
        let _ = write!(
            out,
            "{:indent$}{} {} gamma={:.4} n=({},{})",
            "",
            self.space.describe(t.node),
            what,
            t.gamma_post,
            t.n1,
            t.n2,
            indent = 2 * indent
        );
        if let Some((q1, q2)) = t.masses {
            let _ = write!(out, " Q=({q1:.4},{q2:.4})");
        }
        out.push('\n');
        for c in &t.children {
            self.render_node(c, indent + 1, out);
        }
    }
}

/// Top-down greedy hMAP tree: at each node keep the largest of `γ_post` and
/// `(1 − γ_post) λ_post_j`; ties prefer coupling, then the lower dimension.
pub fn hmap_tree(table: &PosteriorTable) -> Result<CouplingTree> {
    let root = hmap_node(table, &table.root_stats())?;
    Ok(CouplingTree {
        space: table.space().clone(),
        root,
    })
}

fn hmap_node(table: &PosteriorTable, s: &NodeStats) -> Result<TreeNode> {
    let gamma = table.gamma_post(s);
    let splits = table.coupling_splits(s)?;
    let mut best: Option<usize> = None;
    let mut best_score = gamma;
    for (i, sp) in splits.iter().enumerate() {
        let score = (1.0 - gamma) * sp.weight;
        if score > best_score {
            best = Some(i);
            best_score = score;
        }
    }
    let Some(i) = best else {
        return Ok(TreeNode::leaf(s, gamma, None));
    };
    let sp = &splits[i];
    Ok(TreeNode {
        node: s.node,
        status: TreeStatus::Split(sp.dim),
        gamma_post: gamma,
        n1: s.n1,
        n2: s.n2,
        masses: None,
        children: vec![hmap_node(table, &sp.left)?, hmap_node(table, &sp.right)?],
    })
}

enum Decision {
    Couple,
    Split {
        dim: usize,
        left: NodeStats,
        right: NodeStats,
        theta1: f64,
        theta2: f64,
    },
}

/// One posterior draw of `C(A)`, and on a split of `J(A)`, `θ1`, `θ2`, from
/// the node's own substream.
fn draw_decision(table: &PosteriorTable, s: &NodeStats, stream: &RandomStream) -> Result<Decision> {
    if table.is_forced_terminal(s.node) {
        return Ok(Decision::Couple);
    }
    let mut rng = stream.node_substream(s.node.key().0);
    if bernoulli(table.gamma_post(s), &mut rng) {
        return Ok(Decision::Couple);
    }
    let splits = table.coupling_splits(s)?;
    let weights: Vec<f64> = splits.iter().map(|sp| sp.weight).collect();
    let sp = splits[sample_categorical(&weights, &mut rng)];
    let p = table.params();
    let (theta1, _) = sample_dirichlet2(
        p.alpha1 + sp.left.n1 as f64,
        p.alpha1 + sp.right.n1 as f64,
        &mut rng,
    );
    let (theta2, _) = sample_dirichlet2(
        p.alpha2 + sp.left.n2 as f64,
        p.alpha2 + sp.right.n2 as f64,
        &mut rng,
    );
    Ok(Decision::Split {
        dim: sp.dim,
        left: sp.left,
        right: sp.right,
        theta1,
        theta2,
    })
}

/// Draw a coupling tree with masses from the posterior.
pub fn sample_posterior_tree(table: &PosteriorTable, stream: &RandomStream) -> Result<CouplingTree> {
    let root = sample_node(table, &table.root_stats(), (1.0, 1.0), stream)?;
    Ok(CouplingTree {
        space: table.space().clone(),
        root,
    })
}

fn sample_node(
    table: &PosteriorTable,
    s: &NodeStats,
    q: (f64, f64),
    stream: &RandomStream,
) -> Result<TreeNode> {
    let gamma = table.gamma_post(s);
    match draw_decision(table, s, stream)? {
        Decision::Couple => Ok(TreeNode::leaf(s, gamma, Some(q))),
        Decision::Split {
            dim,
            left,
            right,
            theta1,
            theta2,
        } => {
            let ql = (q.0 * theta1, q.1 * theta2);
            let qr = (q.0 - ql.0, q.1 - ql.1);
            Ok(TreeNode {
                node: s.node,
                status: TreeStatus::Split(dim),
                gamma_post: gamma,
                n1: s.n1,
                n2: s.n2,
                masses: Some(q),
                children: vec![
                    sample_node(table, &left, ql, stream)?,
                    sample_node(table, &right, qr, stream)?,
                ],
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    Hellinger2,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Metric::L1),
            "hellinger2" => Ok(Metric::Hellinger2),
            other => Err(Error::Input(format!("unknown metric `{other}`"))),
        }
    }
}

impl Metric {
    /// Contribution of one coupled leaf.
    pub fn leaf_term(self, q1: f64, q2: f64) -> f64 {
        match self {
            Metric::L1 => (q1 - q2).abs(),
            Metric::Hellinger2 => {
                let d = q1.max(0.0).sqrt() - q2.max(0.0).sqrt();
                d * d
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub metric: Metric,
    pub values: Vec<f64>,
}

impl DistanceSample {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Empirical quantile with linear interpolation, `q ∈ [0,1]`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            return f64::NAN;
        }
        let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

/// One distance draw: the sum of leaf terms over a posterior coupling tree.
pub fn distance_draw(table: &PosteriorTable, metric: Metric, stream: &RandomStream) -> Result<f64> {
    distance_node(table, &table.root_stats(), (1.0, 1.0), metric, stream)
}

fn distance_node(
    table: &PosteriorTable,
    s: &NodeStats,
    q: (f64, f64),
    metric: Metric,
    stream: &RandomStream,
) -> Result<f64> {
    match draw_decision(table, s, stream)? {
        Decision::Couple => Ok(metric.leaf_term(q.0, q.1)),
        Decision::Split {
            left,
            right,
            theta1,
            theta2,
            ..
        } => {
            let ql = (q.0 * theta1, q.1 * theta2);
            let qr = (q.0 - ql.0, q.1 - ql.1);
            Ok(distance_node(table, &left, ql, metric, stream)?
                + distance_node(table, &right, qr, metric, stream)?)
        }
    }
}

/// `n_draws` posterior distance draws; draw `k` uses substream `k`, so
/// adding draws never changes earlier ones.
pub fn distance_samples(
    table: &PosteriorTable,
    metric: Metric,
    n_draws: usize,
    stream: &RandomStream,
) -> Result<DistanceSample> {
    let values = (0..n_draws as u64)
        .into_par_iter()
        .map(|k| distance_draw(table, metric, &stream.substream(k)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DistanceSample { metric, values })
}

/// A measure drawn from a prior, reported on a dyadic grid (row-major,
/// dimension 0 slowest; same layout as [`crate::opt::GridBase`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub depths: Vec<u32>,
    pub masses: Vec<f64>,
}

impl GridMeasure {
    fn zeros(space: &SampleSpace, depths: &[u32]) -> Result<Self> {
        if depths.len() != space.dims() || depths.iter().any(|&g| g > space.resolution()) {
            return Err(Error::param("grid depths do not fit the space"));
        }
        let bits: u32 = depths.iter().sum();
        if bits > 24 {
            return Err(Error::param("grid has too many cells"));
        }
        Ok(GridMeasure {
            depths: depths.to_vec(),
            masses: vec![0.0; 1 << bits],
        })
    }

    /// The whole-table grid: one binary digit per dimension.
    pub fn table_depths(space: &SampleSpace) -> Vec<u32> {
        vec![1; space.dims()]
    }

    fn cell_index(&self, space: &SampleSpace, node: Node) -> usize {
        let mut idx = 0usize;
        for (d, &g) in self.depths.iter().enumerate() {
            let k = space.depth(node, d);
            let bin = space.index(node, d) >> (k - g);
            idx = (idx << g) | bin as usize;
        }
        idx
    }

    /// Spread `mass` over the cells covering `node` in proportion to `Q0`.
    fn deposit(&mut self, space: &SampleSpace, node: Node, mass: f64, base: &dyn BaseMeasure) {
        if mass == 0.0 {
            return;
        }
        let coarse = (0..space.dims()).find(|&d| space.depth(node, d) < self.depths[d]);
        let Some(d) = coarse else {
            let i = self.cell_index(space, node);
            self.masses[i] += mass;
            return;
        };
        let (l, r) = space.children_unchecked(node, d);
        let lm = base.log_mass(space, l);
        let rm = base.log_mass(space, r);
        let share = if lm == f64::NEG_INFINITY {
            0.0
        } else {
            1.0 / (1.0 + (rm - lm).exp())
        };
        self.deposit(space, l, mass * share, base);
        self.deposit(space, r, mass * (1.0 - share), base);
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Draw one measure from an OPT prior with centred pseudo-counts around `base`.
pub fn sample_prior_measure(
    space: &SampleSpace,
    params: &OptParams,
    base: &dyn BaseMeasure,
    depths: &[u32],
    rng: &mut RandomStream,
) -> Result<GridMeasure> {
    params.validate(space)?;
    let mut out = GridMeasure::zeros(space, depths)?;
    prior_opt_node(space, space.root(), 1.0, params, base, &mut out, rng)?;
    Ok(out)
}

fn prior_opt_node(
    space: &SampleSpace,
    node: Node,
    mass: f64,
    params: &OptParams,
    base: &dyn BaseMeasure,
    out: &mut GridMeasure,
    rng: &mut RandomStream,
) -> Result<()> {
    if params.is_forced_terminal(space, node) || bernoulli(params.rho0, rng) {
        out.deposit(space, node, mass, base);
        return Ok(());
    }
    let weights: Vec<(usize, f64)> =
        selector_log_weights(space, node, params.selector_weights.as_deref());
    let probs: Vec<f64> = weights.iter().map(|w| w.1.exp()).collect();
    let dim = weights[sample_categorical(&probs, rng)].0;
    let (a, b) = centered_pseudocounts(space, node, dim, base, params.alpha_total)?;
    let (theta, _) = if a == 0.0 {
        (0.0, 1.0)
    } else if b == 0.0 {
        (1.0, 0.0)
    } else {
        sample_dirichlet2(a, b, rng)
    };
    let (l, r) = space.children_unchecked(node, dim);
    let ml = mass * theta;
    prior_opt_node(space, l, ml, params, base, out, rng)?;
    prior_opt_node(space, r, mass - ml, params, base, out, rng)
}

/// Draw a pair `(Q1, Q2)` from the co-OPT prior (uniform base).
pub fn sample_prior_pair(
    space: &SampleSpace,
    params: &CooptParams,
    depths: &[u32],
    rng: &mut RandomStream,
) -> Result<(GridMeasure, GridMeasure)> {
    params.validate(space)?;
    let mut q1 = GridMeasure::zeros(space, depths)?;
    let mut q2 = GridMeasure::zeros(space, depths)?;
    prior_pair_node(space, space.root(), (1.0, 1.0), params, &mut q1, &mut q2, rng)?;
    Ok((q1, q2))
}

fn prior_pair_node(
    space: &SampleSpace,
    node: Node,
    mass: (f64, f64),
    params: &CooptParams,
    q1: &mut GridMeasure,
    q2: &mut GridMeasure,
    rng: &mut RandomStream,
) -> Result<()> {
    if params.is_forced_terminal(space, node) || bernoulli(params.gamma0, rng) {
        // Shared conditional law: one base draw on the node, scaled per sample.
        let mut shared = GridMeasure::zeros(space, &q1.depths)?;
        prior_opt_node(space, node, 1.0, &params.base_params(), &UniformBase, &mut shared, rng)?;
        for (i, m) in shared.masses.iter().enumerate() {
            q1.masses[i] += mass.0 * m;
            q2.masses[i] += mass.1 * m;
        }
        return Ok(());
    }
    let weights = selector_log_weights(space, node, params.selector_weights.as_deref());
    let probs: Vec<f64> = weights.iter().map(|w| w.1.exp()).collect();
    let dim = weights[sample_categorical(&probs, rng)].0;
    let (t1, _) = sample_dirichlet2(params.alpha1, params.alpha1, rng);
    let (t2, _) = sample_dirichlet2(params.alpha2, params.alpha2, rng);
    let (l, r) = space.children_unchecked(node, dim);
    let ml = (mass.0 * t1, mass.1 * t2);
    prior_pair_node(space, l, ml, params, q1, q2, rng)?;
    prior_pair_node(space, r, (mass.0 - ml.0, mass.1 - ml.1), params, q1, q2, rng)
}
