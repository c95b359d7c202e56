//! Optional Pólya tree inference for a single sample.
//!
//! Marginal likelihoods are computed by the recursion
//!
//! ```text
//! P(x|A) = ρ q0(x|A) + (1 − ρ) Σ_j λ_j D(n^j + α^j)/D(α^j) Π_i P(x|A^j_i)
//! ```
//!
//! memoised over canonical nodes. Internally every value is expressed
//! relative to `μ(Ω) = 1`; the public accessors convert back to the natural
//! measure of the space (counting measure on tables, Lebesgue on rectangles).

use std::collections::HashMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{exp_prob, ln_prob, log_dirichlet_ratio2, log_sum_exp_unchecked};
use crate::space::{BinnedData, Node, SampleSpace};

/// Total depth at which nodes are forcibly terminated, if any.
///
/// A cutoff `c > 0` stops every node with relative measure `≤ c`, i.e. with
/// total depth `≥ ⌈log2(1/c)⌉`.
pub fn depth_cap(cutoff: f64, max_depth: Option<u32>) -> Option<u32> {
    let from_cutoff = if cutoff > 0.0 {
        if cutoff >= 1.0 {
            Some(0)
        } else {
            let mut d = (-cutoff.log2()).ceil().max(0.0) as u32;
            while d > 0 && 2f64.powi(-(d as i32 - 1)) <= cutoff {
                d -= 1;
            }
            while 2f64.powi(-(d as i32)) > cutoff {
                d += 1;
            }
            Some(d)
        }
    } else {
        None
    };
    match (from_cutoff, max_depth) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Normalised partition selector weights over the splittable dimensions.
pub(crate) fn selector_log_weights(
    space: &SampleSpace,
    node: Node,
    weights: Option<&[f64]>,
) -> Vec<(usize, f64)> {
    let dims = space.splittable_dims(node);
    match weights {
        None => {
            let lw = -(dims.len() as f64).ln();
            dims.into_iter().map(|d| (d, lw)).collect()
        }
        Some(w) => {
            let total: f64 = dims.iter().map(|&d| w[d]).sum();
            dims.into_iter().map(|d| (d, (w[d] / total).ln())).collect()
        }
    }
}

pub(crate) fn validate_weights(weights: Option<&[f64]>, dims: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != dims {
            return Err(Error::param(format!(
                "{} selector weights for a {dims}-dimensional space",
                w.len()
            )));
        }
        if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::param("selector weights must be positive"));
        }
    }
    Ok(())
}

/// One summand of the split branch: `ln w + ln[D(n+α)/D(α)] + ln P(left) + ln P(right)`.
#[inline]
pub(crate) fn split_term(log_weight: f64, log_dm: f64, left: f64, right: f64) -> f64 {
    log_weight + log_dm + left + right
}

/// Uniform likelihood `u(x|A)` of `n` points in relative units: `(μ(Ω)/μ(A))^n`.
#[inline]
pub(crate) fn log_uniform(space: &SampleSpace, node: Node, n: u32) -> f64 {
    n as f64 * space.total_depth(node) as f64 * LN_2
}

/// Prior parameters of an optional Pólya tree with dyadic splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptParams {
    /// Stopping probability ρ, constant across nodes.
    pub rho0: f64,
    /// Per-dimension selector weights; `None` means λ_j = 1/M(A).
    pub selector_weights: Option<Vec<f64>>,
    /// Sum of the two pseudo-counts of every split.
    pub alpha_total: f64,
    /// Relative measure at or below which nodes are forcibly stopped (0 disables).
    pub cutoff: f64,
    /// Optional cap on total node depth.
    pub max_depth: Option<u32>,
}

impl Default for OptParams {
    fn default() -> Self {
        OptParams {
            rho0: 0.5,
            selector_weights: None,
            alpha_total: 1.0,
            cutoff: 1e-3,
            max_depth: None,
        }
    }
}

impl OptParams {
    pub fn validate(&self, space: &SampleSpace) -> Result<()> {
        if !(self.rho0 > 0.0 && self.rho0 <= 1.0) {
            return Err(Error::param(format!("rho0 must lie in (0,1], got {}", self.rho0)));
        }
        if !(self.alpha_total > 0.0) || !self.alpha_total.is_finite() {
            return Err(Error::param("pseudo-count total must be positive"));
        }
        if !(self.cutoff >= 0.0) {
            return Err(Error::param("cutoff must be non-negative"));
        }
        validate_weights(self.selector_weights.as_deref(), space.dims())
    }

    pub fn is_forced_terminal(&self, space: &SampleSpace, node: Node) -> bool {
        space.is_atom(node)
            || depth_cap(self.cutoff, self.max_depth).is_some_and(|cap| space.total_depth(node) >= cap)
    }
}

/// A global base measure `Q0` with density `q0` relative to `μ/μ(Ω)`.
pub trait BaseMeasure: Send + Sync {
    /// `ln Q0(A)`.
    fn log_mass(&self, space: &SampleSpace, node: Node) -> f64;

    /// `ln q0(x)` at a point given by its leaf heap indices.
    fn log_density(&self, space: &SampleSpace, leaf: &[u32]) -> f64;

    /// Closed-form uniform base; enables exact shortcuts.
    fn is_uniform(&self) -> bool {
        false
    }
}

/// The natural (uniform) base measure.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformBase;

impl BaseMeasure for UniformBase {
    fn log_mass(&self, space: &SampleSpace, node: Node) -> f64 {
        space.log_relative_measure(node)
    }

    fn log_density(&self, _space: &SampleSpace, _leaf: &[u32]) -> f64 {
        0.0
    }

    fn is_uniform(&self) -> bool {
        true
    }
}

/// Piecewise-constant base measure on a dyadic grid.
///
/// Dimension `d` is cut into `2^depths[d]` equal bins; `masses` lists the
/// cell probabilities in row-major order with dimension 0 slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBase {
    depths: Vec<u32>,
    masses: Vec<f64>,
}

impl GridBase {
    pub fn new(depths: Vec<u32>, masses: Vec<f64>) -> Result<Self> {
        let total_depth: u32 = depths.iter().sum();
        if total_depth > 24 {
            return Err(Error::param("grid base has too many cells"));
        }
        if masses.len() != 1usize << total_depth {
            return Err(Error::param(format!(
                "grid with depths {depths:?} needs {} masses, got {}",
                1usize << total_depth,
                masses.len()
            )));
        }
        if masses.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::param("grid masses must be positive"));
        }
        let total: f64 = masses.iter().sum();
        let masses = masses.into_iter().map(|m| m / total).collect();
        Ok(GridBase { depths, masses })
    }

    pub fn depths(&self) -> &[u32] {
        &self.depths
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn check_space(&self, space: &SampleSpace) -> Result<()> {
        if self.depths.len() != space.dims() {
            return Err(Error::param("grid base dimension does not match the space"));
        }
        if self.depths.iter().any(|&g| g > space.resolution()) {
            return Err(Error::param("grid base is finer than the space resolution"));
        }
        Ok(())
    }

    fn stride(&self, dim: usize) -> usize {
        1usize << self.depths[dim + 1..].iter().sum::<u32>()
    }
}

impl BaseMeasure for GridBase {
    fn log_mass(&self, space: &SampleSpace, node: Node) -> f64 {
        // Covered bin range and area fraction per dimension.
        let mut ranges = Vec::with_capacity(self.depths.len());
        let mut log_fraction = 0.0;
        for (d, &g) in self.depths.iter().enumerate() {
            let k = space.depth(node, d);
            let i = space.index(node, d) as usize;
            if k <= g {
                let w = 1usize << (g - k);
                ranges.push((i * w, (i + 1) * w));
            } else {
                let b = i >> (k - g);
                ranges.push((b, b + 1));
                log_fraction -= (k - g) as f64 * LN_2;
            }
        }
        let mut total = 0.0;
        let mut cursor: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            let idx: usize = cursor
                .iter()
                .enumerate()
                .map(|(d, &b)| b * self.stride(d))
                .sum();
            total += self.masses[idx];
            let mut d = cursor.len();
            loop {
                if d == 0 {
                    return total.ln() + log_fraction;
                }
                d -= 1;
                cursor[d] += 1;
                if cursor[d] < ranges[d].1 {
                    break;
                }
                cursor[d] = ranges[d].0;
            }
        }
    }

    fn log_density(&self, space: &SampleSpace, leaf: &[u32]) -> f64 {
        let r = space.resolution();
        let idx: usize = leaf
            .iter()
            .enumerate()
            .map(|(d, &l)| {
                let bin = (l - (1 << r)) >> (r - self.depths[d]);
                bin as usize * self.stride(d)
            })
            .sum();
        let cells: u32 = self.depths.iter().sum();
        self.masses[idx].ln() + cells as f64 * LN_2
    }
}

/// Per-child pseudo-counts proportional to the base's conditional masses,
/// scaled to sum to `total`.
pub fn centered_pseudocounts(
    space: &SampleSpace,
    node: Node,
    split_dim: usize,
    base: &dyn BaseMeasure,
    total: f64,
) -> Result<(f64, f64)> {
    let (left, right) = space.children(node, split_dim)?;
    if base.is_uniform() {
        return Ok((total / 2.0, total / 2.0));
    }
    let parent = base.log_mass(space, node);
    if parent == f64::NEG_INFINITY {
        return Err(Error::BaseSupport(space.describe(node)));
    }
    let l = (base.log_mass(space, left) - parent).exp();
    let r = (base.log_mass(space, right) - parent).exp();
    Ok((total * l, total * r))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OptEntry {
    n: u32,
    log_stop: f64,
    log_p: f64,
}

/// Posterior parameters at one node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptNodePosterior {
    pub n: u32,
    pub rho_post: f64,
    /// `(dimension, λ_j(A|x))` over splittable dimensions.
    pub lambda_post: Vec<(usize, f64)>,
    /// `(dimension, (α_1 + n_1, α_2 + n_2))`.
    pub alpha_post: Vec<(usize, (f64, f64))>,
    pub forced_terminal: bool,
}

/// Memoised OPT recursion over one dataset.
pub struct OptFit<'a> {
    space: &'a SampleSpace,
    params: &'a OptParams,
    base: &'a dyn BaseMeasure,
    data: &'a BinnedData,
    memo: HashMap<Node, OptEntry>,
}

impl<'a> OptFit<'a> {
    /// Evaluate the recursion from the root.
    pub fn new(
        space: &'a SampleSpace,
        data: &'a BinnedData,
        params: &'a OptParams,
        base: &'a dyn BaseMeasure,
    ) -> Result<Self> {
        Self::at(space, space.root(), data, params, base)
    }

    /// Evaluate the recursion from `node`, using only the points inside it.
    pub fn at(
        space: &'a SampleSpace,
        node: Node,
        data: &'a BinnedData,
        params: &'a OptParams,
        base: &'a dyn BaseMeasure,
    ) -> Result<Self> {
        params.validate(space)?;
        if !space.is_valid(node) {
            return Err(Error::UnreachableNode(format!("{:?}", node.key())));
        }
        let mut fit = OptFit {
            space,
            params,
            base,
            data,
            memo: HashMap::new(),
        };
        let idx: Vec<u32> = (0..data.len() as u32)
            .filter(|&i| space.contains_leaf(node, data.leaf(i as usize)))
            .collect();
        fit.eval(node, &idx)?;
        Ok(fit)
    }

    fn log_stop(&self, node: Node, idx: &[u32]) -> f64 {
        if self.base.is_uniform() {
            return log_uniform(self.space, node, idx.len() as u32);
        }
        let dens: f64 = idx
            .iter()
            .map(|&i| self.base.log_density(self.space, self.data.leaf(i as usize)))
            .sum();
        dens - idx.len() as f64 * self.base.log_mass(self.space, node)
    }

    fn alpha(&self, node: Node, dim: usize) -> Result<(f64, f64)> {
        centered_pseudocounts(self.space, node, dim, self.base, self.params.alpha_total)
    }

    fn eval(&mut self, node: Node, idx: &[u32]) -> Result<f64> {
        if let Some(e) = self.memo.get(&node) {
            return Ok(e.log_p);
        }
        let n = idx.len() as u32;
        let log_stop = if n == 0 { 0.0 } else { self.log_stop(node, idx) };
        let log_p = if n == 0
            || self.params.is_forced_terminal(self.space, node)
            || (n == 1 && self.base.is_uniform())
        {
            log_stop
        } else {
            let log_rho = self.params.rho0.ln();
            let log_go = ln_prob(1.0 - self.params.rho0);
            let mut terms = vec![log_rho + log_stop];
            for (dim, lw) in
                selector_log_weights(self.space, node, self.params.selector_weights.as_deref())
            {
                let (left, right) = self.space.children_unchecked(node, dim);
                let (li, ri): (Vec<u32>, Vec<u32>) = idx
                    .iter()
                    .partition(|&&i| self.space.contains_leaf(left, self.data.leaf(i as usize)));
                let alpha = self.alpha(node, dim)?;
                let ldm = log_dirichlet_ratio2((li.len() as u32, ri.len() as u32), alpha);
                let lp_l = self.eval(left, &li)?;
                let lp_r = self.eval(right, &ri)?;
                terms.push(split_term(log_go + lw, ldm, lp_l, lp_r));
            }
            log_sum_exp_unchecked(&terms)
        };
        self.memo.insert(
            node,
            OptEntry {
                n,
                log_stop,
                log_p,
            },
        );
        Ok(log_p)
    }

    fn entry(&mut self, node: Node) -> Result<OptEntry> {
        if let Some(e) = self.memo.get(&node) {
            return Ok(*e);
        }
        if !self.space.is_valid(node) {
            return Err(Error::UnreachableNode(format!("{:?}", node.key())));
        }
        let idx: Vec<u32> = (0..self.data.len() as u32)
            .filter(|&i| self.space.contains_leaf(node, self.data.leaf(i as usize)))
            .collect();
        self.eval(node, &idx)?;
        Ok(self.memo[&node])
    }

    /// `ln P(x|A)` relative to `μ(Ω) = 1`.
    pub fn log_marginal_relative(&mut self, node: Node) -> Result<f64> {
        Ok(self.entry(node)?.log_p)
    }

    /// `ln P(x|A)` in the natural measure of the space.
    pub fn log_marginal(&mut self, node: Node) -> Result<f64> {
        let e = self.entry(node)?;
        Ok(e.log_p - e.n as f64 * self.space.log_natural_measure())
    }

    pub fn root_log_marginal(&mut self) -> Result<f64> {
        self.log_marginal(self.space.root())
    }

    /// Conjugate posterior parameters at `node`.
    pub fn posterior(&mut self, node: Node) -> Result<OptNodePosterior> {
        let e = self.entry(node)?;
        let forced = self.params.is_forced_terminal(self.space, node);
        let rho_post = if forced {
            1.0
        } else {
            exp_prob(self.params.rho0.ln() + e.log_stop - e.log_p)
        };
        let mut lambda_post = Vec::new();
        let mut alpha_post = Vec::new();
        if !forced {
            let mut terms = Vec::new();
            for (dim, lw) in
                selector_log_weights(self.space, node, self.params.selector_weights.as_deref())
            {
                let (left, right) = self.space.children_unchecked(node, dim);
                let l = self.entry(left)?;
                let r = self.entry(right)?;
                let alpha = self.alpha(node, dim)?;
                let ldm = log_dirichlet_ratio2((l.n, r.n), alpha);
                terms.push((dim, split_term(lw, ldm, l.log_p, r.log_p)));
                alpha_post.push((dim, (alpha.0 + l.n as f64, alpha.1 + r.n as f64)));
            }
            let logs: Vec<f64> = terms.iter().map(|t| t.1).collect();
            let norm = log_sum_exp_unchecked(&logs);
            lambda_post = terms
                .into_iter()
                .map(|(d, t)| (d, (t - norm).exp()))
                .collect();
        }
        Ok(OptNodePosterior {
            n: e.n,
            rho_post,
            lambda_post,
            alpha_post,
            forced_terminal: forced,
        })
    }

    /// Number of memoised nodes.
    pub fn node_count(&self) -> usize {
        self.memo.len()
    }
}

/// `ln P0(x|A)` in the natural measure of the space.
pub fn opt_log_marginal(
    space: &SampleSpace,
    node: Node,
    data: &BinnedData,
    params: &OptParams,
    base: &dyn BaseMeasure,
) -> Result<f64> {
    OptFit::at(space, node, data, params, base)?.log_marginal(node)
}

/// Posterior stopping probability, selector probabilities and pseudo-counts at `node`.
pub fn opt_posterior(
    space: &SampleSpace,
    node: Node,
    data: &BinnedData,
    params: &OptParams,
    base: &dyn BaseMeasure,
) -> Result<OptNodePosterior> {
    OptFit::at(space, node, data, params, base)?.posterior(node)
}

/// One-sample goodness-of-fit statistic: the posterior stopping probability of Ω.
pub fn gof_statistic(
    space: &SampleSpace,
    data: &BinnedData,
    params: &OptParams,
    base: &dyn BaseMeasure,
) -> Result<f64> {
    Ok(OptFit::new(space, data, params, base)?
        .posterior(space.root())?
        .rho_post)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Dataset;
    use proptest::prelude::*;

    fn two_cell(counts: (usize, usize)) -> (SampleSpace, BinnedData) {
        let space = SampleSpace::table(1).unwrap();
        let mut cells = vec![vec![0u8]; counts.0];
        cells.extend(vec![vec![1u8]; counts.1]);
        let data = space.bin(&Dataset::from_cells(1, &cells).unwrap()).unwrap();
        (space, data)
    }

    #[test]
    fn depth_cap_from_cutoff() {
        assert_eq!(depth_cap(0.0, None), None);
        assert_eq!(depth_cap(1e-3, None), Some(10));
        assert_eq!(depth_cap(1e-4, None), Some(14));
        assert_eq!(depth_cap(1.0 / 1024.0, None), Some(10));
        assert_eq!(depth_cap(0.5, None), Some(1));
        assert_eq!(depth_cap(1e-3, Some(4)), Some(4));
        assert_eq!(depth_cap(0.0, Some(6)), Some(6));
    }

    #[test]
    fn empty_node_has_unit_likelihood() {
        let (space, data) = two_cell((0, 0));
        let lp = opt_log_marginal(&space, space.root(), &data, &OptParams::default(), &UniformBase)
            .unwrap();
        assert_eq!(lp, 0.0);
        let post = opt_posterior(&space, space.root(), &data, &OptParams::default(), &UniformBase)
            .unwrap();
        assert_eq!(post.rho_post, 0.5);
    }

    #[test]
    fn two_cell_closed_form() {
        // 0.5 * (1/2)^4 + 0.5 * D(2.5,2.5)/D(.5,.5) = 1/32 + 3/256 = 11/256
        let (space, data) = two_cell((2, 2));
        let params = OptParams::default();
        let lp = opt_log_marginal(&space, space.root(), &data, &params, &UniformBase).unwrap();
        assert!((lp - (11.0f64 / 256.0).ln()).abs() < 1e-12);
        let post = opt_posterior(&space, space.root(), &data, &params, &UniformBase).unwrap();
        assert!((post.rho_post - 8.0 / 11.0).abs() < 1e-12);
        assert_eq!(post.lambda_post.len(), 1);
        assert!((post.lambda_post[0].1 - 1.0).abs() < 1e-15);
        assert_eq!(post.alpha_post, vec![(0, (2.5, 2.5))]);
    }

    #[test]
    fn single_observation_is_inverse_measure() {
        let space = SampleSpace::table(4).unwrap();
        let data = space
            .bin(&Dataset::from_cells(4, &[vec![1, 0, 1, 1]]).unwrap())
            .unwrap();
        let params = OptParams::default();
        // Root: M = 4 intact dimensions.
        let lp = opt_log_marginal(&space, space.root(), &data, &params, &UniformBase).unwrap();
        assert!((lp + 4.0 * LN_2).abs() < 1e-12);
        // A node with two intact dimensions containing the point.
        let (_, a) = space.children(space.root(), 0).unwrap();
        let (b, _) = space.children(a, 1).unwrap();
        let lp = opt_log_marginal(&space, b, &data, &params, &UniformBase).unwrap();
        assert!((lp + 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn forced_stopping_gives_base_likelihood() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0)], 8).unwrap();
        let data = space
            .bin(&Dataset::from_values(&[0.1, 0.15, 0.7, 0.71, 0.72]))
            .unwrap();
        let params = OptParams {
            rho0: 1.0,
            ..OptParams::default()
        };
        let mut fit = OptFit::new(&space, &data, &params, &UniformBase).unwrap();
        assert_eq!(fit.log_marginal_relative(space.root()).unwrap(), 0.0);
        assert_eq!(fit.posterior(space.root()).unwrap().rho_post, 1.0);
        let (l, _) = space.children(space.root(), 0).unwrap();
        assert_eq!(fit.posterior(l).unwrap().rho_post, 1.0);
    }

    #[test]
    fn centered_pseudocounts_follow_base() {
        let space = SampleSpace::table(2).unwrap();
        assert_eq!(
            centered_pseudocounts(&space, space.root(), 0, &UniformBase, 1.0).unwrap(),
            (0.5, 0.5)
        );
        // Q0 over cells (1,1),(1,2),(2,1),(2,2).
        let base = GridBase::new(vec![1, 1], vec![0.45, 0.30, 0.15, 0.10]).unwrap();
        let (a, b) = centered_pseudocounts(&space, space.root(), 0, &base, 1.0).unwrap();
        assert!((a - 0.75).abs() < 1e-12 && (b - 0.25).abs() < 1e-12);
        let (a, b) = centered_pseudocounts(&space, space.root(), 1, &base, 2.0).unwrap();
        assert!((a - 1.2).abs() < 1e-12 && (b - 0.8).abs() < 1e-12);
    }

    #[test]
    fn grid_base_masses_are_additive() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0), (0.0, 1.0)], 4).unwrap();
        let masses: Vec<f64> = (1..=8).map(f64::from).collect();
        let base = GridBase::new(vec![1, 2], masses).unwrap();
        assert!(base.log_mass(&space, space.root()).abs() < 1e-12);
        for node in space.enumerate_nodes(1 << 16).unwrap() {
            for d in space.splittable_dims(node) {
                let (l, r) = space.children(node, d).unwrap();
                let sum = base.log_mass(&space, l).exp() + base.log_mass(&space, r).exp();
                assert!((sum - base.log_mass(&space, node).exp()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn general_base_matching_uniform_reproduces_uniform() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0)], 6).unwrap();
        let data = space
            .bin(&Dataset::from_values(&[0.05, 0.1, 0.3, 0.31, 0.8, 0.9, 0.95]))
            .unwrap();
        let params = OptParams::default();
        let flat = GridBase::new(vec![2], vec![1.0; 4]).unwrap();
        let a = opt_log_marginal(&space, space.root(), &data, &params, &UniformBase).unwrap();
        let b = opt_log_marginal(&space, space.root(), &data, &params, &flat).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn eq2_consistency_at_every_memoised_node() {
        let space = SampleSpace::table(3).unwrap();
        let cells = vec![
            vec![0, 0, 1],
            vec![0, 1, 1],
            vec![1, 1, 1],
            vec![1, 1, 0],
            vec![0, 0, 1],
        ];
        let data = space.bin(&Dataset::from_cells(3, &cells).unwrap()).unwrap();
        let params = OptParams {
            rho0: 0.3,
            ..OptParams::default()
        };
        let mut fit = OptFit::new(&space, &data, &params, &UniformBase).unwrap();
        let nodes: Vec<Node> = fit.memo.keys().copied().collect();
        for node in nodes {
            let e = fit.memo[&node];
            if e.n < 2 || space.is_atom(node) {
                continue;
            }
            let mut total = params.rho0 * e.log_stop.exp();
            let m = space.num_splits(node) as f64;
            for d in space.splittable_dims(node) {
                let (l, r) = space.children(node, d).unwrap();
                let (el, er) = (fit.entry(l).unwrap(), fit.entry(r).unwrap());
                let dm = log_dirichlet_ratio2((el.n, er.n), (0.5, 0.5)).exp();
                total += (1.0 - params.rho0) / m * dm * el.log_p.exp() * er.log_p.exp();
            }
            assert!((total.ln() - e.log_p).abs() < 1e-10);
        }
    }

    #[test]
    fn gof_prefers_matching_base() {
        let space = SampleSpace::rectangle(vec![(0.0, 1.0)], 10).unwrap();
        let empty = space.bin(&Dataset::new(1)).unwrap();
        let params = OptParams {
            cutoff: 1e-3,
            ..OptParams::default()
        };
        assert_eq!(gof_statistic(&space, &empty, &params, &UniformBase).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn order_of_observations_is_irrelevant(
            xs in proptest::collection::vec(0.0f64..1.0, 0..30),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let space = SampleSpace::rectangle(vec![(0.0, 1.0)], 8).unwrap();
            let params = OptParams::default();
            let a = space.bin(&Dataset::from_values(&xs)).unwrap();
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = space.bin(&Dataset::from_values(&shuffled)).unwrap();
            let la = opt_log_marginal(&space, space.root(), &a, &params, &UniformBase).unwrap();
            let lb = opt_log_marginal(&space, space.root(), &b, &params, &UniformBase).unwrap();
            prop_assert_eq!(la, lb);
        }
    }
}
