//! The coupling optional Pólya tree: joint two-sample recursion and its
//! conjugate posterior.
//!
//! For every node the engine evaluates
//!
//! ```text
//! P(x1,x2|A) = γ P0(x1,x2|A)
//!            + (1 − γ) Σ_j λ_j D(n1^j+α1)/D(α1) D(n2^j+α2)/D(α2) Π_i P(x1,x2|A^j_i)
//! ```
//!
//! together with the pooled base marginal `P0`, memoised by canonical node.
//! Only nodes holding at least two pooled observations are expanded; their
//! children are stored, so every posterior parameter of an expanded node can
//! be recovered from the table without further recursion.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use dashmap::DashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{exp_prob, ln_prob, log_dirichlet_ratio2, log_sum_exp_unchecked};
use crate::opt::{depth_cap, log_uniform, selector_log_weights, split_term, validate_weights, OptParams};
use crate::space::{BinnedData, Dataset, Node, NodeKey, SampleSpace};

/// Prior parameters of a co-OPT with dyadic splits.
///
/// Pseudo-counts are per child and identical for the two children of a
/// split; with this parameterisation the one-observation closed form holds at
/// every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooptParams {
    /// Coupling probability γ.
    pub gamma0: f64,
    /// Base stopping probability ρ.
    pub rho0: f64,
    /// Coupling selector weights per dimension (`None` = uniform).
    pub selector_weights: Option<Vec<f64>>,
    /// Base selector weights per dimension (`None` = uniform).
    pub base_selector_weights: Option<Vec<f64>>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha_base: f64,
    /// Relative measure at or below which nodes are forced to couple and stop.
    pub cutoff: f64,
    pub max_depth: Option<u32>,
}

impl Default for CooptParams {
    fn default() -> Self {
        CooptParams {
            gamma0: 0.5,
            rho0: 0.5,
            selector_weights: None,
            base_selector_weights: None,
            alpha1: 0.5,
            alpha2: 0.5,
            alpha_base: 0.5,
            cutoff: 1e-3,
            max_depth: None,
        }
    }
}

impl CooptParams {
    /// Defaults for distance sampling: cutoff 1/10000.
    pub fn for_distances() -> Self {
        CooptParams {
            cutoff: 1e-4,
            ..CooptParams::default()
        }
    }

    pub fn validate(&self, space: &SampleSpace) -> Result<()> {
        for (name, v) in [("gamma0", self.gamma0), ("rho0", self.rho0)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(format!("{name} must lie in (0,1], got {v}")));
            }
        }
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha_base", self.alpha_base),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.cutoff >= 0.0) {
            return Err(Error::param("cutoff must be non-negative"));
        }
        validate_weights(self.selector_weights.as_deref(), space.dims())?;
        validate_weights(self.base_selector_weights.as_deref(), space.dims())
    }

    /// The shared base OPT used on coupled nodes.
    pub fn base_params(&self) -> OptParams {
        OptParams {
            rho0: self.rho0,
            selector_weights: self.base_selector_weights.clone(),
            alpha_total: 2.0 * self.alpha_base,
            cutoff: self.cutoff,
            max_depth: self.max_depth,
        }
    }

    pub fn depth_cap(&self) -> Option<u32> {
        depth_cap(self.cutoff, self.max_depth)
    }

    /// Atoms and nodes at the technical cutoff are coupled and stopped with probability one.
    pub fn is_forced_terminal(&self, space: &SampleSpace, node: Node) -> bool {
        space.is_atom(node) || self.depth_cap().is_some_and(|c| space.total_depth(node) >= c)
    }
}

/// Execution options for [`fit_with`].
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    /// Evaluate sibling subtrees on the rayon pool.
    pub parallel: bool,
    /// Refuse to store more than this many nodes.
    pub node_limit: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            parallel: true,
            node_limit: 20_000_000,
        }
    }
}

/// Stored recursion values of one node, relative to `μ(Ω) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeEntry {
    pub n1: u32,
    pub n2: u32,
    pub log_p: f64,
    pub log_p0: f64,
    /// Pooled index of the only observation, when there is exactly one.
    single: Option<u32>,
}

/// A node together with its recursion values; nodes below the one-point
/// closed form are synthesised on demand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeStats {
    pub node: Node,
    pub n1: u32,
    pub n2: u32,
    pub log_p: f64,
    pub log_p0: f64,
    single: Option<u32>,
}

impl NodeStats {
    pub fn n(&self) -> u32 {
        self.n1 + self.n2
    }
}

/// Conjugate posterior parameters of one node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CooptNodePosterior {
    pub n1: u32,
    pub n2: u32,
    pub gamma_post: f64,
    pub rho_post: f64,
    /// `(dimension, λ_j(A|x1,x2))`.
    pub lambda_post: Vec<(usize, f64)>,
    /// `(dimension, α1 + n1 per child)`.
    pub alpha1_post: Vec<(usize, (f64, f64))>,
    pub alpha2_post: Vec<(usize, (f64, f64))>,
    /// `(dimension, λ^b_j(A|x1,x2))`.
    pub base_lambda_post: Vec<(usize, f64)>,
    /// `(dimension, α^b + n1 + n2 per child)`.
    pub base_alpha_post: Vec<(usize, (f64, f64))>,
    pub forced_terminal: bool,
}

/// The fitted co-OPT posterior.
#[derive(Clone, Debug)]
pub struct PosteriorTable {
    space: SampleSpace,
    params: CooptParams,
    entries: HashMap<Node, NodeEntry>,
    pooled: BinnedData,
    n1_total: usize,
    root: Node,
}

struct Engine<'a> {
    space: &'a SampleSpace,
    params: &'a CooptParams,
    pooled: &'a BinnedData,
    n1_total: u32,
    memo: DashMap<Node, NodeEntry>,
    stored: AtomicUsize,
    options: FitOptions,
}

/// Minimum pooled count for which split children are evaluated in parallel.
const PARALLEL_GRAIN: usize = 256;

impl Engine<'_> {
    fn eval(&self, node: Node, idx: &[u32]) -> Result<(f64, f64)> {
        let cached = self.memo.get(&node).map(|e| (e.log_p, e.log_p0));
        if let Some(v) = cached {
            return Ok(v);
        }
        let n1 = idx.iter().filter(|&&i| i < self.n1_total).count() as u32;
        let n2 = idx.len() as u32 - n1;
        let n = n1 + n2;
        let log_u = log_uniform(self.space, node, n);
        let (log_p, log_p0) = if n == 0 {
            (0.0, 0.0)
        } else if n == 1 || self.params.is_forced_terminal(self.space, node) {
            (log_u, log_u)
        } else {
            self.expand(node, idx, log_u)?
        };
        let single = if n == 1 { Some(idx[0]) } else { None };
        self.memo.insert(
            node,
            NodeEntry {
                n1,
                n2,
                log_p,
                log_p0,
                single,
            },
        );
        let stored = self.stored.fetch_add(1, Ordering::Relaxed) + 1;
        if stored > self.options.node_limit {
            return Err(Error::ResourceLimit {
                what: "posterior table nodes".into(),
                limit: self.options.node_limit,
            });
        }
        Ok((log_p, log_p0))
    }

    fn expand(&self, node: Node, idx: &[u32], log_u: f64) -> Result<(f64, f64)> {
        let p = self.params;
        let dims = self.space.splittable_dims(node);
        let split = |dim: usize| -> Result<SplitValues> {
            let (left, right) = self.space.children_unchecked(node, dim);
            let (li, ri): (Vec<u32>, Vec<u32>) = idx
                .iter()
                .partition(|&&i| self.space.contains_leaf(left, self.pooled.leaf(i as usize)));
            let l1 = li.iter().filter(|&&i| i < self.n1_total).count() as u32;
            let r1 = ri.iter().filter(|&&i| i < self.n1_total).count() as u32;
            let counts1 = (l1, r1);
            let counts2 = (li.len() as u32 - l1, ri.len() as u32 - r1);
            let (lp_l, lp0_l) = self.eval(left, &li)?;
            let (lp_r, lp0_r) = self.eval(right, &ri)?;
            Ok(SplitValues {
                counts1,
                counts2,
                lp: (lp_l, lp_r),
                lp0: (lp0_l, lp0_r),
            })
        };
        let values: Vec<SplitValues> = if self.options.parallel && idx.len() >= PARALLEL_GRAIN {
            dims.par_iter().map(|&d| split(d)).collect::<Result<_>>()?
        } else {
            dims.iter().map(|&d| split(d)).collect::<Result<_>>()?
        };

        let base_w = selector_log_weights(self.space, node, p.base_selector_weights.as_deref());
        let log_go_base = ln_prob(1.0 - p.rho0);
        let mut base_terms = Vec::with_capacity(dims.len() + 1);
        base_terms.push(p.rho0.ln() + log_u);
        for ((_, lw), v) in base_w.iter().zip(&values) {
            let pooled = (v.counts1.0 + v.counts2.0, v.counts1.1 + v.counts2.1);
            let ldm = log_dirichlet_ratio2(pooled, (p.alpha_base, p.alpha_base));
            base_terms.push(split_term(log_go_base + lw, ldm, v.lp0.0, v.lp0.1));
        }
        let log_p0 = log_sum_exp_unchecked(&base_terms);

        let couple_w = selector_log_weights(self.space, node, p.selector_weights.as_deref());
        let log_split = ln_prob(1.0 - p.gamma0);
        let mut terms = Vec::with_capacity(dims.len() + 1);
        terms.push(p.gamma0.ln() + log_p0);
        for ((_, lw), v) in couple_w.iter().zip(&values) {
            let ldm = log_dirichlet_ratio2(v.counts1, (p.alpha1, p.alpha1))
                + log_dirichlet_ratio2(v.counts2, (p.alpha2, p.alpha2));
            terms.push(split_term(log_split + lw, ldm, v.lp.0, v.lp.1));
        }
        Ok((log_sum_exp_unchecked(&terms), log_p0))
    }
}

struct SplitValues {
    counts1: (u32, u32),
    counts2: (u32, u32),
    lp: (f64, f64),
    lp0: (f64, f64),
}

/// Fit the full posterior with default options.
pub fn fit(
    space: &SampleSpace,
    data1: &Dataset,
    data2: &Dataset,
    params: &CooptParams,
) -> Result<PosteriorTable> {
    fit_with(space, data1, data2, params, FitOptions::default())
}

pub fn fit_with(
    space: &SampleSpace,
    data1: &Dataset,
    data2: &Dataset,
    params: &CooptParams,
    options: FitOptions,
) -> Result<PosteriorTable> {
    fit_at(space, space.root(), data1, data2, params, options)
}

fn fit_at(
    space: &SampleSpace,
    node: Node,
    data1: &Dataset,
    data2: &Dataset,
    params: &CooptParams,
    options: FitOptions,
) -> Result<PosteriorTable> {
    params.validate(space)?;
    if !space.is_valid(node) {
        return Err(Error::UnreachableNode(node.key().to_string()));
    }
    let b1 = space.bin(data1)?;
    let b2 = space.bin(data2)?;
    let pooled = b1.pooled(&b2);
    let engine = Engine {
        space,
        params,
        pooled: &pooled,
        n1_total: b1.len() as u32,
        memo: DashMap::new(),
        stored: AtomicUsize::new(0),
        options,
    };
    let idx: Vec<u32> = (0..pooled.len() as u32)
        .filter(|&i| space.contains_leaf(node, pooled.leaf(i as usize)))
        .collect();
    engine.eval(node, &idx)?;
    let entries: HashMap<Node, NodeEntry> = engine.memo.into_iter().collect();
    Ok(PosteriorTable {
        space: space.clone(),
        params: params.clone(),
        entries,
        n1_total: b1.len(),
        pooled,
        root: node,
    })
}

impl PosteriorTable {
    pub fn space(&self) -> &SampleSpace {
        &self.space
    }

    pub fn params(&self) -> &CooptParams {
        &self.params
    }

    /// Number of stored nodes (also the peak cache size: nothing is evicted).
    pub fn node_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, node: Node) -> Option<&NodeEntry> {
        self.entries.get(&node)
    }

    /// Stored nodes in key order.
    pub fn nodes(&self) -> Vec<Node> {
        let mut nodes: Vec<Node> = self.entries.keys().copied().collect();
        nodes.sort();
        nodes
    }

    pub fn root(&self) -> Node {
        self.root
    }

    pub fn root_stats(&self) -> NodeStats {
        self.stats(self.root).expect("root is always stored")
    }

    /// Stats of a stored node.
    pub fn stats(&self, node: Node) -> Result<NodeStats> {
        let e = self
            .entries
            .get(&node)
            .ok_or_else(|| Error::IncompleteFit(self.space.describe(node)))?;
        Ok(NodeStats {
            node,
            n1: e.n1,
            n2: e.n2,
            log_p: e.log_p,
            log_p0: e.log_p0,
            single: e.single,
        })
    }

    /// Stats of `child`, synthesised from `parent` when the child lies below
    /// the empty-node or one-observation closed forms.
    pub fn child_stats(&self, parent: &NodeStats, child: Node) -> Result<NodeStats> {
        if let Ok(s) = self.stats(child) {
            return Ok(s);
        }
        let mut s = NodeStats {
            node: child,
            n1: 0,
            n2: 0,
            log_p: 0.0,
            log_p0: 0.0,
            single: None,
        };
        match (parent.n(), parent.single) {
            (0, _) => Ok(s),
            (1, Some(i)) => {
                if self
                    .space
                    .contains_leaf(child, self.pooled.leaf(i as usize))
                {
                    if (i as usize) < self.n1_total {
                        s.n1 = 1;
                    } else {
                        s.n2 = 1;
                    }
                    s.single = Some(i);
                    s.log_p = log_uniform(&self.space, child, 1);
                    s.log_p0 = s.log_p;
                }
                Ok(s)
            }
            _ => Err(Error::IncompleteFit(self.space.describe(child))),
        }
    }

    pub fn is_forced_terminal(&self, node: Node) -> bool {
        self.params.is_forced_terminal(&self.space, node)
    }

    /// `γ(A|x1,x2)`.
    pub fn gamma_post(&self, s: &NodeStats) -> f64 {
        if self.is_forced_terminal(s.node) {
            1.0
        } else {
            exp_prob(self.params.gamma0.ln() + s.log_p0 - s.log_p)
        }
    }

    /// `ρ(A|x1,x2)` of the base OPT on the pooled sample.
    pub fn rho_post(&self, s: &NodeStats) -> f64 {
        if self.is_forced_terminal(s.node) {
            1.0
        } else {
            let log_u = log_uniform(&self.space, s.node, s.n());
            exp_prob(self.params.rho0.ln() + log_u - s.log_p0)
        }
    }

    /// Posterior coupling selector probabilities and both samples' children stats.
    pub fn coupling_splits(&self, s: &NodeStats) -> Result<Vec<PosteriorSplit>> {
        if self.is_forced_terminal(s.node) {
            return Ok(Vec::new());
        }
        let p = &self.params;
        let weights = selector_log_weights(&self.space, s.node, p.selector_weights.as_deref());
        let mut out = Vec::with_capacity(weights.len());
        for (dim, lw) in weights {
            let (l, r) = self.space.children_unchecked(s.node, dim);
            let ls = self.child_stats(s, l)?;
            let rs = self.child_stats(s, r)?;
            let ldm = log_dirichlet_ratio2((ls.n1, rs.n1), (p.alpha1, p.alpha1))
                + log_dirichlet_ratio2((ls.n2, rs.n2), (p.alpha2, p.alpha2));
            out.push(PosteriorSplit {
                dim,
                weight: split_term(lw, ldm, ls.log_p, rs.log_p),
                left: ls,
                right: rs,
            });
        }
        normalize(&mut out);
        Ok(out)
    }

    fn base_splits(&self, s: &NodeStats) -> Result<Vec<PosteriorSplit>> {
        if self.is_forced_terminal(s.node) {
            return Ok(Vec::new());
        }
        let p = &self.params;
        let weights = selector_log_weights(&self.space, s.node, p.base_selector_weights.as_deref());
        let mut out = Vec::with_capacity(weights.len());
        for (dim, lw) in weights {
            let (l, r) = self.space.children_unchecked(s.node, dim);
            let ls = self.child_stats(s, l)?;
            let rs = self.child_stats(s, r)?;
            let ldm = log_dirichlet_ratio2((ls.n(), rs.n()), (p.alpha_base, p.alpha_base));
            out.push(PosteriorSplit {
                dim,
                weight: split_term(lw, ldm, ls.log_p0, rs.log_p0),
                left: ls,
                right: rs,
            });
        }
        normalize(&mut out);
        Ok(out)
    }

    /// All conjugate posterior parameters of a node.
    pub fn posterior_at(&self, s: &NodeStats) -> Result<CooptNodePosterior> {
        let p = &self.params;
        let coupling = self.coupling_splits(s)?;
        let base = self.base_splits(s)?;
        Ok(CooptNodePosterior {
            n1: s.n1,
            n2: s.n2,
            gamma_post: self.gamma_post(s),
            rho_post: self.rho_post(s),
            lambda_post: coupling.iter().map(|c| (c.dim, c.weight)).collect(),
            alpha1_post: coupling
                .iter()
                .map(|c| (c.dim, (p.alpha1 + c.left.n1 as f64, p.alpha1 + c.right.n1 as f64)))
                .collect(),
            alpha2_post: coupling
                .iter()
                .map(|c| (c.dim, (p.alpha2 + c.left.n2 as f64, p.alpha2 + c.right.n2 as f64)))
                .collect(),
            base_lambda_post: base.iter().map(|c| (c.dim, c.weight)).collect(),
            base_alpha_post: base
                .iter()
                .map(|c| {
                    (
                        c.dim,
                        (p.alpha_base + c.left.n() as f64, p.alpha_base + c.right.n() as f64),
                    )
                })
                .collect(),
            forced_terminal: self.is_forced_terminal(s.node),
        })
    }

    pub fn posterior(&self, node: Node) -> Result<CooptNodePosterior> {
        self.posterior_at(&self.stats(node)?)
    }

    /// `ln P(x1,x2|A)` relative to `μ(Ω) = 1`.
    pub fn log_marginal_relative(&self, node: Node) -> Result<f64> {
        Ok(self.stats(node)?.log_p)
    }

    /// `ln P(x1,x2|A)` in the natural measure of the space.
    pub fn log_marginal(&self, node: Node) -> Result<f64> {
        let s = self.stats(node)?;
        Ok(s.log_p - s.n() as f64 * self.space.log_natural_measure())
    }

    /// `ln P0(x1,x2|A)` of the pooled sample, natural measure.
    pub fn log_base_marginal(&self, node: Node) -> Result<f64> {
        let s = self.stats(node)?;
        Ok(s.log_p0 - s.n() as f64 * self.space.log_natural_measure())
    }

    /// The co-OPT statistic `γ(Ω|x1,x2)`.
    pub fn coupling_statistic(&self) -> f64 {
        self.gamma_post(&self.root_stats())
    }

    /// JSON form: one record per stored node, sorted by key.
    pub fn to_json(&self) -> Result<PosteriorTableJson> {
        let log_mu = self.space.log_natural_measure();
        let mut nodes = Vec::with_capacity(self.entries.len());
        for node in self.nodes() {
            let s = self.stats(node)?;
            let post = self.posterior_at(&s)?;
            nodes.push(NodeRecord {
                key: node.key(),
                region: self.space.describe(node),
                n1: s.n1,
                n2: s.n2,
                gamma_post: post.gamma_post,
                rho_post: post.rho_post,
                lambda_post: post
                    .lambda_post
                    .iter()
                    .map(|&(dim, prob)| SplitProb { dim: dim + 1, prob })
                    .collect(),
                log_p: s.log_p - s.n() as f64 * log_mu,
                log_p0: s.log_p0 - s.n() as f64 * log_mu,
            });
        }
        Ok(PosteriorTableJson {
            space: self.space.clone(),
            params: self.params.clone(),
            coupling_statistic: self.coupling_statistic(),
            nodes,
        })
    }
}

/// One posterior split option with its children.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorSplit {
    pub dim: usize,
    /// Posterior selector probability (after normalisation).
    pub weight: f64,
    pub left: NodeStats,
    pub right: NodeStats,
}

fn normalize(splits: &mut [PosteriorSplit]) {
    let logs: Vec<f64> = splits.iter().map(|s| s.weight).collect();
    if logs.is_empty() {
        return;
    }
    let norm = log_sum_exp_unchecked(&logs);
    for s in splits.iter_mut() {
        s.weight = (s.weight - norm).exp();
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitProb {
    /// 1-based dimension.
    pub dim: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeRecord {
    pub key: NodeKey,
    pub region: String,
    pub n1: u32,
    pub n2: u32,
    pub gamma_post: f64,
    pub rho_post: f64,
    pub lambda_post: Vec<SplitProb>,
    /// Natural-measure log marginal likelihoods.
    pub log_p: f64,
    pub log_p0: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorTableJson {
    pub space: SampleSpace,
    pub params: CooptParams,
    pub coupling_statistic: f64,
    pub nodes: Vec<NodeRecord>,
}

/// `ln P(x1,x2|A)` in natural units.
pub fn coopt_log_marginal(
    space: &SampleSpace,
    node: Node,
    data1: &Dataset,
    data2: &Dataset,
    params: &CooptParams,
) -> Result<f64> {
    fit_at(space, node, data1, data2, params, FitOptions::default())?.log_marginal(node)
}

/// Posterior parameters at `node`.
pub fn coopt_posterior(
    space: &SampleSpace,
    node: Node,
    data1: &Dataset,
    data2: &Dataset,
    params: &CooptParams,
) -> Result<CooptNodePosterior> {
    fit_at(space, node, data1, data2, params, FitOptions::default())?.posterior(node)
}

/// The co-OPT statistic `γ(Ω|x1,x2)`; small values indicate a difference.
pub fn coupling_statistic(
    space: &SampleSpace,
    data1: &Dataset,
    data2: &Dataset,
    params: &CooptParams,
) -> Result<f64> {
    Ok(fit(space, data1, data2, params)?.coupling_statistic())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opt::{opt_log_marginal, UniformBase};
    use std::f64::consts::LN_2;

    fn cells(counts: (usize, usize)) -> Dataset {
        let mut c = vec![vec![0u8]; counts.0];
        c.extend(vec![vec![1u8]; counts.1]);
        Dataset::from_cells(1, &c).unwrap()
    }

    #[test]
    fn two_cell_identical_samples() {
        let space = SampleSpace::table(1).unwrap();
        let t = fit(&space, &cells((1, 1)), &cells((1, 1)), &CooptParams::default()).unwrap();
        let root = space.root();
        assert!((t.log_marginal(root).unwrap() - (15.0f64 / 512.0).ln()).abs() < 1e-12);
        assert!((t.log_base_marginal(root).unwrap() - (11.0f64 / 256.0).ln()).abs() < 1e-12);
        assert!((t.coupling_statistic() - 11.0 / 15.0).abs() < 1e-12);
        assert!((t.posterior(root).unwrap().rho_post - 8.0 / 11.0).abs() < 1e-12);
        assert_eq!(t.node_count(), 3);
    }

    #[test]
    fn two_cell_disjoint_samples() {
        let space = SampleSpace::table(1).unwrap();
        let t = fit(&space, &cells((2, 0)), &cells((0, 2)), &CooptParams::default()).unwrap();
        assert!((t.log_marginal(space.root()).unwrap() - (47.0f64 / 512.0).ln()).abs() < 1e-12);
        assert!((t.coupling_statistic() - 11.0 / 47.0).abs() < 1e-12);
        let post = t.posterior(space.root()).unwrap();
        assert_eq!(post.alpha1_post, vec![(0, (2.5, 0.5))]);
        assert_eq!(post.alpha2_post, vec![(0, (0.5, 2.5))]);
        assert_eq!(post.base_alpha_post, vec![(0, (2.5, 2.5))]);
        assert_eq!(post.lambda_post, vec![(0, 1.0)]);
    }

    #[test]
    fn empty_data_leaves_prior_untouched() {
        let space = SampleSpace::table(3).unwrap();
        let empty = Dataset::new(3);
        let t = fit(&space, &empty, &empty, &CooptParams::default()).unwrap();
        assert_eq!(t.coupling_statistic(), 0.5);
        let post = t.posterior(space.root()).unwrap();
        assert_eq!(post.rho_post, 0.5);
        for (_, l) in post.lambda_post {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(t.log_marginal(space.root()).unwrap(), 0.0);
    }

    #[test]
    fn fully_coupled_prior_gives_unit_gamma() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0)], 10).unwrap();
        let d1 = Dataset::from_values(&[0.1, 0.2, 0.25, 0.8]);
        let d2 = Dataset::from_values(&[0.6, 0.7, 0.75, 0.9]);
        let params = CooptParams {
            gamma0: 1.0,
            ..CooptParams::default()
        };
        let t = fit(&space, &d1, &d2, &params).unwrap();
        for node in t.nodes() {
            assert_eq!(t.gamma_post(&t.stats(node).unwrap()), 1.0);
        }
    }

    #[test]
    fn coupled_reduction_is_exact() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0), (0.0, 1.0)], 10).unwrap();
        let d1 = Dataset::from_rows(2, (0..30).map(|i| vec![(i as f64 * 0.37) % 1.0, (i as f64 * 0.11) % 1.0]))
            .unwrap();
        let d2 = Dataset::from_rows(2, (0..25).map(|i| vec![(i as f64 * 0.53) % 1.0, (i as f64 * 0.29) % 1.0]))
            .unwrap();
        let params = CooptParams {
            gamma0: 1.0,
            ..CooptParams::default()
        };
        let t = fit(&space, &d1, &d2, &params).unwrap();
        let pooled = space.bin(&d1.pooled(&d2).unwrap()).unwrap();
        let opt = opt_log_marginal(&space, space.root(), &pooled, &params.base_params(), &UniformBase)
            .unwrap();
        assert_eq!(t.log_marginal(space.root()).unwrap(), opt);
    }

    #[test]
    fn single_observation_closed_form() {
        let space = SampleSpace::rectangle(vec![(0.0, 2.0), (0.0, 1.0)], 12).unwrap();
        let d1 = Dataset::from_rows(2, vec![vec![0.3, 0.4]]).unwrap();
        let t = fit(&space, &d1, &Dataset::new(2), &CooptParams::default()).unwrap();
        // 1/μ(Ω) with Lebesgue measure μ(Ω) = 2.
        assert!((t.log_marginal(space.root()).unwrap() + 2f64.ln()).abs() < 1e-12);
        assert_eq!(t.node_count(), 1);
    }

    #[test]
    fn single_observation_matches_full_recursion() {
        // Disable the closed form by comparing against a table recursion that
        // reaches the observation through a two-point parent.
        let space = SampleSpace::table(3).unwrap();
        let d1 = Dataset::from_cells(3, &[vec![0, 1, 1], vec![1, 0, 1]]).unwrap();
        let t = fit(&space, &d1, &Dataset::new(3), &CooptParams::default()).unwrap();
        let (a, _) = space.children(space.root(), 0).unwrap();
        let s = t.stats(a).unwrap();
        assert_eq!(s.n(), 1);
        assert!((t.log_marginal(a).unwrap() + 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn label_swap_symmetry() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0)], 10).unwrap();
        let d1 = Dataset::from_values(&[0.1, 0.12, 0.4, 0.41, 0.9]);
        let d2 = Dataset::from_values(&[0.5, 0.52, 0.55, 0.7]);
        let params = CooptParams::default();
        let a = fit(&space, &d1, &d2, &params).unwrap();
        let b = fit(&space, &d2, &d1, &params).unwrap();
        assert_eq!(a.log_marginal(space.root()).unwrap(), b.log_marginal(space.root()).unwrap());
        assert_eq!(a.coupling_statistic(), b.coupling_statistic());
    }

    #[test]
    fn log_p_dominates_coupled_branch() {
        let space = SampleSpace::table(3).unwrap();
        let d1 = Dataset::from_cells(3, &[vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 1]]).unwrap();
        let d2 = Dataset::from_cells(3, &[vec![0, 0, 0], vec![1, 0, 1]]).unwrap();
        let params = CooptParams {
            gamma0: 0.3,
            rho0: 0.9,
            ..CooptParams::default()
        };
        let t = fit(&space, &d1, &d2, &params).unwrap();
        assert!(t.node_count() <= 27);
        for node in t.nodes() {
            let s = t.stats(node).unwrap();
            if !t.is_forced_terminal(node) {
                assert!(s.log_p >= params.gamma0.ln() + s.log_p0 - 1e-12);
            }
            let post = t.posterior(node).unwrap();
            assert!((0.0..=1.0).contains(&post.gamma_post));
            assert!((0.0..=1.0).contains(&post.rho_post));
            if !post.lambda_post.is_empty() {
                let sum: f64 = post.lambda_post.iter().map(|l| l.1).sum();
                assert!((sum - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn node_limit_is_enforced() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0)], 10).unwrap();
        let d = Dataset::from_values(&(0..50).map(|i| i as f64 / 50.0).collect::<Vec<_>>());
        let opts = FitOptions {
            parallel: false,
            node_limit: 10,
        };
        let err = fit_with(&space, &d, &d, &CooptParams::default(), opts);
        assert!(matches!(err, Err(Error::ResourceLimit { .. })));
    }

    #[test]
    fn json_lists_every_node() {
        let space = SampleSpace::table(1).unwrap();
        let t = fit(&space, &cells((2, 0)), &cells((0, 2)), &CooptParams::default()).unwrap();
        let json = t.to_json().unwrap();
        assert_eq!(json.nodes.len(), 3);
        let text = serde_json::to_string(&json).unwrap();
        let back: PosteriorTableJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.nodes[0].region, json.nodes[0].region);
        assert!((back.coupling_statistic - 11.0 / 47.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let space = SampleSpace::table(2).unwrap();
        let d = Dataset::new(2);
        for params in [
            CooptParams { gamma0: 0.0, ..CooptParams::default() },
            CooptParams { rho0: 1.5, ..CooptParams::default() },
            CooptParams { alpha1: -1.0, ..CooptParams::default() },
            CooptParams { selector_weights: Some(vec![1.0]), ..CooptParams::default() },
        ] {
            assert!(fit(&space, &d, &d, &params).is_err());
        }
    }
}
