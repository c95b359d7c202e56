//! Brute-force marginal likelihoods on small binary tables.
//!
//! Every complete assignment of the stopping, coupling and selector
//! variables is listed explicitly and scored by its prior weight times the
//! closed-form Dirichlet–multinomial integrals. Nothing is memoised and no
//! code is shared with the recursive engine apart from the Gamma function,
//! so the two computations check each other. Values are in natural units
//! (counting measure on cells).

use crate::coopt::CooptParams;
use crate::error::{Error, Result};
use crate::numerics::{log_dirichlet_norm, log_sum_exp};
use crate::opt::{depth_cap, OptParams};
use crate::space::{Dataset, SampleSpace, SpaceKind};

/// Refuse enumerations larger than this many configurations.
pub const DEFAULT_ENUMERATION_BOUND: u64 = 10_000_000;

/// Decision taken at the root by one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RootChoice {
    Couple,
    Stop,
    Split(usize),
    Terminal,
}

/// One complete configuration and its contribution to the marginal likelihood.
#[derive(Clone, Debug)]
pub struct EnumeratedConfig {
    pub log_contribution: f64,
    pub root: RootChoice,
    /// Decisions in depth-first order, e.g. `C(*,*) S(1,*) ...`.
    pub description: String,
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub log_marginal: f64,
    pub configs: Vec<EnumeratedConfig>,
}

impl OracleResult {
    /// Posterior probability of the root decision satisfying `pred`.
    pub fn root_posterior(&self, pred: impl Fn(RootChoice) -> bool) -> f64 {
        self.configs
            .iter()
            .filter(|c| pred(c.root))
            .map(|c| (c.log_contribution - self.log_marginal).exp())
            .sum()
    }

    /// Σ of posterior configuration weights; 1 up to rounding.
    pub fn total_posterior_weight(&self) -> f64 {
        self.root_posterior(|_| true)
    }
}

/// Table region: `None` = both levels, `Some(v)` = level `v` (0 or 1).
type Region = Vec<Option<u8>>;

struct Table {
    cap: Option<u32>,
    points1: Vec<Vec<u8>>,
    points2: Vec<Vec<u8>>,
}

#[derive(Clone)]
struct Partial {
    log: f64,
    text: String,
}

fn describe(region: &Region) -> String {
    let cells: Vec<String> = region
        .iter()
        .map(|c| match c {
            None => "*".to_string(),
            Some(v) => (v + 1).to_string(),
        })
        .collect();
    format!("({})", cells.join(","))
}

fn inside(region: &Region, point: &[u8]) -> bool {
    region
        .iter()
        .zip(point)
        .all(|(r, &x)| r.map_or(true, |v| v == x))
}

fn intact(region: &Region) -> Vec<usize> {
    (0..region.len()).filter(|&d| region[d].is_none()).collect()
}

fn halves(region: &Region, dim: usize) -> (Region, Region) {
    let mut a = region.clone();
    let mut b = region.clone();
    a[dim] = Some(0);
    b[dim] = Some(1);
    (a, b)
}

fn selector(weights: Option<&[f64]>, dims: &[usize], dim: usize) -> f64 {
    match weights {
        None => 1.0 / dims.len() as f64,
        Some(w) => w[dim] / dims.iter().map(|&d| w[d]).sum::<f64>(),
    }
}

/// `ln[D(n + a) / D(a)]` for a two-child split with equal pseudo-counts.
fn dm_integral(n: (usize, usize), a: f64) -> Result<f64> {
    Ok(log_dirichlet_norm(&[n.0 as f64 + a, n.1 as f64 + a])? - log_dirichlet_norm(&[a, a])?)
}

impl Table {
    fn fixed(region: &Region) -> u32 {
        region.iter().filter(|r| r.is_some()).count() as u32
    }

    fn terminal(&self, region: &Region) -> bool {
        let m = intact(region).len();
        m == 0 || self.cap.is_some_and(|c| Self::fixed(region) >= c)
    }

    fn count(points: &[Vec<u8>], region: &Region) -> usize {
        points.iter().filter(|p| inside(region, p)).count()
    }

    fn pooled_count(&self, region: &Region) -> usize {
        Self::count(&self.points1, region) + Self::count(&self.points2, region)
    }

    /// `ln u(x|A)` with counting measure: `-n ln(#cells)`.
    fn log_uniform(&self, region: &Region) -> f64 {
        let cells = intact(region).len() as f64;
        -(self.pooled_count(region) as f64) * cells * std::f64::consts::LN_2
    }

    /// Configurations depend only on the number of intact dimensions, and
    /// both halves of a split are alike, so counting is a single chain.
    fn count_base(&self, region: &Region) -> u64 {
        if self.terminal(region) {
            return 1;
        }
        let dims = intact(region);
        let (half, _) = halves(region, dims[0]);
        let c = self.count_base(&half);
        1u64.saturating_add((dims.len() as u64).saturating_mul(c.saturating_mul(c)))
    }

    fn count_coupled(&self, region: &Region) -> u64 {
        if self.terminal(region) {
            return 1;
        }
        let dims = intact(region);
        let (half, _) = halves(region, dims[0]);
        let c = self.count_coupled(&half);
        self.count_base(region)
            .saturating_add((dims.len() as u64).saturating_mul(c.saturating_mul(c)))
    }

    /// All base (standard OPT) configurations inside `region` for the pooled data.
    fn base_configs(&self, region: &Region, p: &OptParams) -> Result<Vec<Partial>> {
        let here = describe(region);
        if self.terminal(region) {
            return Ok(vec![Partial {
                log: self.log_uniform(region),
                text: format!("T{here}"),
            }]);
        }
        let mut out = vec![Partial {
            log: p.rho0.ln() + self.log_uniform(region),
            text: format!("S{here}"),
        }];
        if p.rho0 < 1.0 {
            let dims = intact(region);
            for &d in &dims {
                let (a, b) = halves(region, d);
                let na = self.pooled_count(&a);
                let nb = self.pooled_count(&b);
                let w = (1.0 - p.rho0).ln()
                    + selector(p.selector_weights.as_deref(), &dims, d).ln()
                    + dm_integral((na, nb), p.alpha_total / 2.0)?;
                let left = self.base_configs(&a, p)?;
                let right = self.base_configs(&b, p)?;
                for l in &left {
                    for r in &right {
                        out.push(Partial {
                            log: w + l.log + r.log,
                            text: format!("J{d}{here} {} {}", l.text, r.text),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// All coupling configurations inside `region`.
    fn coupled_configs(&self, region: &Region, p: &CooptParams) -> Result<Vec<Partial>> {
        let here = describe(region);
        if self.terminal(region) {
            return Ok(vec![Partial {
                log: self.log_uniform(region),
                text: format!("T{here}"),
            }]);
        }
        let base = p.base_params();
        let mut out: Vec<Partial> = self
            .base_configs(region, &base)?
            .into_iter()
            .map(|c| Partial {
                log: p.gamma0.ln() + c.log,
                text: format!("C{here} {}", c.text),
            })
            .collect();
        if p.gamma0 < 1.0 {
            let dims = intact(region);
            for &d in &dims {
                let (a, b) = halves(region, d);
                let n1 = (Self::count(&self.points1, &a), Self::count(&self.points1, &b));
                let n2 = (Self::count(&self.points2, &a), Self::count(&self.points2, &b));
                let w = (1.0 - p.gamma0).ln()
                    + selector(p.selector_weights.as_deref(), &dims, d).ln()
                    + dm_integral(n1, p.alpha1)?
                    + dm_integral(n2, p.alpha2)?;
                let left = self.coupled_configs(&a, p)?;
                let right = self.coupled_configs(&b, p)?;
                for l in &left {
                    for r in &right {
                        out.push(Partial {
                            log: w + l.log + r.log,
                            text: format!("U{d}{here} {} {}", l.text, r.text),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

fn cells_of(space: &SampleSpace, data: &Dataset) -> Result<Vec<Vec<u8>>> {
    data.points()
        .map(|p| {
            p.iter()
                .map(|&x| {
                    if x == 0.0 {
                        Ok(0u8)
                    } else if x == 1.0 {
                        Ok(1u8)
                    } else {
                        Err(Error::input(format!("non-binary table value {x}")))
                    }
                })
                .collect::<Result<Vec<u8>>>()
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|cells| {
            if data.dims() != space.dims() {
                Err(Error::input("dataset dimension does not match the table"))
            } else {
                Ok(cells)
            }
        })
}

fn root_choice(text: &str) -> RootChoice {
    match text.as_bytes()[0] {
        b'C' => RootChoice::Couple,
        b'S' => RootChoice::Stop,
        b'T' => RootChoice::Terminal,
        _ => {
            let digits: String = text[1..].chars().take_while(|c| c.is_ascii_digit()).collect();
            RootChoice::Split(digits.parse().unwrap_or(0))
        }
    }
}

fn finish(parts: Vec<Partial>) -> Result<OracleResult> {
    let logs: Vec<f64> = parts.iter().map(|c| c.log).collect();
    let log_marginal = log_sum_exp(&logs)?;
    let configs = parts
        .into_iter()
        .map(|c| EnumeratedConfig {
            log_contribution: c.log,
            root: root_choice(&c.text),
            description: c.text,
        })
        .collect();
    Ok(OracleResult {
        log_marginal,
        configs,
    })
}

fn check_table(space: &SampleSpace) -> Result<()> {
    if space.kind() != SpaceKind::BinaryTable {
        return Err(Error::param("the brute-force oracle only handles binary tables"));
    }
    Ok(())
}

/// Enumerate every OPT configuration on a small table.
pub fn brute_force_opt(
    space: &SampleSpace,
    data: &Dataset,
    params: &OptParams,
    bound: u64,
) -> Result<OracleResult> {
    check_table(space)?;
    params.validate(space)?;
    let table = Table {
        cap: depth_cap(params.cutoff, params.max_depth),
        points1: cells_of(space, data)?,
        points2: Vec::new(),
    };
    let root: Region = vec![None; space.dims()];
    let count = table.count_base(&root);
    if count > bound {
        return Err(Error::ResourceLimit {
            what: format!("{count} OPT configurations"),
            limit: bound as usize,
        });
    }
    finish(table.base_configs(&root, params)?)
}

/// Enumerate every co-OPT configuration on a small table.
pub fn brute_force_coopt(
    space: &SampleSpace,
    data1: &Dataset,
    data2: &Dataset,
    params: &CooptParams,
    bound: u64,
) -> Result<OracleResult> {
    check_table(space)?;
    params.validate(space)?;
    let table = Table {
        cap: depth_cap(params.cutoff, params.max_depth),
        points1: cells_of(space, data1)?,
        points2: cells_of(space, data2)?,
    };
    let root: Region = vec![None; space.dims()];
    let count = table.count_coupled(&root);
    if count > bound {
        return Err(Error::ResourceLimit {
            what: format!("{count} co-OPT configurations"),
            limit: bound as usize,
        });
    }
    finish(table.coupled_configs(&root, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell(c1: (usize, usize)) -> Dataset {
        let mut cells = vec![vec![0u8]; c1.0];
        cells.extend(vec![vec![1u8]; c1.1]);
        Dataset::from_cells(1, &cells).unwrap()
    }

    #[test]
    fn opt_two_cell_enumeration() {
        let space = SampleSpace::table(1).unwrap();
        let r = brute_force_opt(&space, &two_cell((2, 2)), &OptParams::default(), 100).unwrap();
        assert_eq!(r.configs.len(), 2);
        assert!((r.log_marginal - (11.0f64 / 256.0).ln()).abs() < 1e-12);
        assert!((r.root_posterior(|c| c == RootChoice::Stop) - 8.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn opt_empty_and_forced_stop() {
        let space = SampleSpace::table(2).unwrap();
        let r = brute_force_opt(&space, &Dataset::new(2), &OptParams::default(), 100).unwrap();
        assert!(r.log_marginal.abs() < 1e-12);

        let data = Dataset::from_cells(2, &[vec![0, 1], vec![1, 1], vec![1, 1]]).unwrap();
        let params = OptParams {
            rho0: 1.0,
            ..OptParams::default()
        };
        let r = brute_force_opt(&space, &data, &params, 100).unwrap();
        assert_eq!(r.configs.len(), 1);
        assert!((r.log_marginal + 3.0 * 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn coopt_two_cell_enumerations() {
        let space = SampleSpace::table(1).unwrap();
        let params = CooptParams::default();
        let r = brute_force_coopt(&space, &two_cell((1, 1)), &two_cell((1, 1)), &params, 100)
            .unwrap();
        assert_eq!(r.configs.len(), 3);
        assert!((r.log_marginal - (15.0f64 / 512.0).ln()).abs() < 1e-12);
        assert!((r.root_posterior(|c| c == RootChoice::Couple) - 11.0 / 15.0).abs() < 1e-12);

        let r = brute_force_coopt(&space, &two_cell((2, 0)), &two_cell((0, 2)), &params, 100)
            .unwrap();
        assert!((r.log_marginal - (47.0f64 / 512.0).ln()).abs() < 1e-12);
        assert!((r.root_posterior(|c| c == RootChoice::Couple) - 11.0 / 47.0).abs() < 1e-12);
    }

    #[test]
    fn fully_coupled_prior_matches_pooled_opt() {
        let space = SampleSpace::table(2).unwrap();
        let d1 = Dataset::from_cells(2, &[vec![0, 0], vec![1, 0]]).unwrap();
        let d2 = Dataset::from_cells(2, &[vec![1, 1], vec![1, 0], vec![1, 0]]).unwrap();
        let params = CooptParams {
            gamma0: 1.0,
            ..CooptParams::default()
        };
        let co = brute_force_coopt(&space, &d1, &d2, &params, 1000).unwrap();
        let pooled = d1.pooled(&d2).unwrap();
        let base = brute_force_opt(&space, &pooled, &params.base_params(), 1000).unwrap();
        assert!((co.log_marginal - base.log_marginal).abs() < 1e-12);
    }

    #[test]
    fn configuration_counts_and_weights() {
        let space = SampleSpace::table(3).unwrap();
        let d1 = Dataset::from_cells(3, &[vec![0, 0, 1], vec![1, 0, 1]]).unwrap();
        let d2 = Dataset::from_cells(3, &[vec![1, 1, 1]]).unwrap();
        let r = brute_force_coopt(&space, &d1, &d2, &CooptParams::default(), 1 << 20).unwrap();
        // g(M) = f(M) + M g(M-1)^2 with f(M) = 1 + M f(M-1)^2: g(3) = 244 + 3 * 27^2.
        assert_eq!(r.configs.len(), 2431);
        assert!((r.total_posterior_weight() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn refuses_large_enumerations() {
        let space = SampleSpace::table(4).unwrap();
        let d = Dataset::from_cells(4, &[vec![0, 0, 1, 1]]).unwrap();
        let err = brute_force_coopt(&space, &d, &d, &CooptParams::default(), DEFAULT_ENUMERATION_BOUND);
        assert!(matches!(err, Err(Error::ResourceLimit { .. })));
        let cont = SampleSpace::rectangle(vec![(0.0, 1.0)], 3).unwrap();
        assert!(brute_force_opt(&cont, &Dataset::new(1), &OptParams::default(), 10).is_err());
    }
}
