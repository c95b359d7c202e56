//! Reference two-sample statistics: Kolmogorov–Smirnov (1-d) and the
//! ε-statistic of a dependent Dirichlet mixture on binary tables.

use std::collections::BTreeMap;

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bernoulli, sample_dirichlet, RandomStream};
use crate::space::Dataset;

/// `sup_t |F1(t) − F2(t)|`, evaluated after all jumps at each distinct value.
pub fn ks_statistic(x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.is_empty() || x2.is_empty() {
        return Err(Error::input("KS statistic needs two nonempty samples"));
    }
    if x1.iter().chain(x2).any(|x| x.is_nan()) {
        return Err(Error::input("KS statistic got a NaN value"));
    }
    let mut a = x1.to_vec();
    let mut b = x2.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    Ok(d)
}

/// Settings of the ε-Gibbs sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonGibbsConfig {
    /// Pseudo-count per observed cell.
    pub alpha_h: f64,
    pub a_eps: f64,
    pub b_eps: f64,
    pub burn_in: usize,
    pub kept: usize,
    pub seed: u64,
}

impl Default for EpsilonGibbsConfig {
    fn default() -> Self {
        EpsilonGibbsConfig {
            alpha_h: 0.5,
            a_eps: 3.0,
            b_eps: 3.0,
            burn_in: 10_000,
            kept: 10_000,
            seed: 0,
        }
    }
}

impl EpsilonGibbsConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_h", self.alpha_h), ("a_eps", self.a_eps), ("b_eps", self.b_eps)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.kept == 0 {
            return Err(Error::param("at least one kept draw is needed"));
        }
        Ok(())
    }
}

/// Chain state. `j[i] == true` means observation `i` came from the shared `H0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub j1: Vec<bool>,
    pub j2: Vec<bool>,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonGibbsResult {
    /// The ε-statistic: mean of kept draws.
    pub mean: f64,
    pub draws: Vec<f64>,
}

/// Probability that an observation with `H0` mass `p0` and idiosyncratic
/// mass `pi` came from the shared component.
pub(crate) fn shared_probability(epsilon: f64, p0: f64, pi: f64) -> f64 {
    let shared = epsilon * p0;
    let total = shared + (1.0 - epsilon) * pi;
    if total > 0.0 {
        shared / total
    } else {
        epsilon
    }
}

fn cell_of(point: &[f64]) -> u64 {
    point
        .iter()
        .fold(0u64, |acc, &v| (acc << 1) | (v != 0.0) as u64)
}

/// Run the ε-Gibbs sampler on two binary-table samples.
///
/// The support is the set of cells observed in either sample; with no data
/// at all the chain samples ε from its prior.
pub fn epsilon_gibbs(
    data1: &Dataset,
    data2: &Dataset,
    cfg: &EpsilonGibbsConfig,
) -> Result<EpsilonGibbsResult> {
    cfg.validate()?;
    if data1.dims() != data2.dims() {
        return Err(Error::input("samples have different dimensions"));
    }
    if data1.dims() > 64 {
        return Err(Error::input("tables wider than 64 columns are not supported"));
    }
    let mut support = BTreeMap::new();
    for p in data1.points().chain(data2.points()) {
        if p.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::input("table observations must be 0/1"));
        }
        let next = support.len();
        support.entry(cell_of(p)).or_insert(next);
    }
    let x1: Vec<usize> = data1.points().map(|p| support[&cell_of(p)]).collect();
    let x2: Vec<usize> = data2.points().map(|p| support[&cell_of(p)]).collect();
    let k = support.len();
    let mut rng = RandomStream::new(cfg.seed);

    let uniform = if k == 0 { Vec::new() } else { vec![1.0 / k as f64; k] };
    let mut state = GibbsState {
        h0: uniform.clone(),
        h1: uniform.clone(),
        h2: uniform,
        j1: vec![false; x1.len()],
        j2: vec![false; x2.len()],
        epsilon: 0.5,
    };
    let n_total = (x1.len() + x2.len()) as f64;
    let mut draws = Vec::with_capacity(cfg.kept);
    let mut c0 = vec![0.0; k];
    let mut c1 = vec![0.0; k];
    let mut c2 = vec![0.0; k];
    for sweep in 0..cfg.burn_in + cfg.kept {
        if k > 0 {
            c0.iter_mut().chain(&mut c1).chain(&mut c2).for_each(|c| *c = cfg.alpha_h);
            for (&x, &j) in x1.iter().zip(&state.j1) {
                if j { c0[x] += 1.0 } else { c1[x] += 1.0 }
            }
            for (&x, &j) in x2.iter().zip(&state.j2) {
                if j { c0[x] += 1.0 } else { c2[x] += 1.0 }
            }
            state.h0 = sample_dirichlet(&c0, &mut rng)?;
            state.h1 = sample_dirichlet(&c1, &mut rng)?;
            state.h2 = sample_dirichlet(&c2, &mut rng)?;
            let eps = state.epsilon;
            for (j, &x) in state.j1.iter_mut().zip(&x1) {
                *j = bernoulli(shared_probability(eps, state.h0[x], state.h1[x]), &mut rng);
            }
            for (j, &x) in state.j2.iter_mut().zip(&x2) {
                *j = bernoulli(shared_probability(eps, state.h0[x], state.h2[x]), &mut rng);
            }
        }
        let shared = state.j1.iter().chain(&state.j2).filter(|&&j| j).count() as f64;
        let beta = Beta::new(cfg.a_eps + shared, cfg.b_eps + n_total - shared)
            .map_err(|e| Error::param(e.to_string()))?;
        state.epsilon = beta.sample(&mut rng);
        debug_assert!(state_is_consistent(&state));
        if sweep >= cfg.burn_in {
            draws.push(state.epsilon);
        }
    }
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    Ok(EpsilonGibbsResult { mean, draws })
}

fn state_is_consistent(s: &GibbsState) -> bool {
    let simplex = |h: &[f64]| {
        h.is_empty() || (h.iter().all(|&v| (0.0..=1.0).contains(&v)) && (h.iter().sum::<f64>() - 1.0).abs() < 1e-12)
    };
    simplex(&s.h0) && simplex(&s.h1) && simplex(&s.h2) && (0.0..=1.0).contains(&s.epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        // Ties are resolved after all jumps at the shared value.
        assert!((ks_statistic(&[1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_monotone_invariant(
            a in proptest::collection::vec(-5.0f64..5.0, 1..30),
            b in proptest::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
            let ta: Vec<f64> = a.iter().map(|x| x.exp()).collect();
            let tb: Vec<f64> = b.iter().map(|x| x.exp()).collect();
            prop_assert_eq!(d, ks_statistic(&ta, &tb).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }

    #[test]
    fn shared_probability_limits() {
        assert_eq!(shared_probability(0.0, 0.3, 0.2), 0.0);
        assert_eq!(shared_probability(1.0, 0.3, 0.2), 1.0);
        assert!((shared_probability(0.5, 0.3, 0.1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn no_data_returns_prior_mean() {
        let cfg = EpsilonGibbsConfig {
            burn_in: 100,
            kept: 4000,
            seed: 3,
            ..EpsilonGibbsConfig::default()
        };
        let r = epsilon_gibbs(&Dataset::new(3), &Dataset::new(3), &cfg).unwrap();
        // Beta(3,3): sd = sqrt(1/28).
        let se = (1.0f64 / 28.0).sqrt() / (cfg.kept as f64).sqrt();
        assert!((r.mean - 0.5).abs() < 3.0 * se, "{}", r.mean);
    }

    #[test]
    fn strong_prior_dominates() {
        let d = Dataset::from_cells(2, &[vec![0, 1], vec![1, 1]]).unwrap();
        let cfg = EpsilonGibbsConfig {
            a_eps: 3000.0,
            b_eps: 3.0,
            burn_in: 200,
            kept: 500,
            ..EpsilonGibbsConfig::default()
        };
        assert!(epsilon_gibbs(&d, &d, &cfg).unwrap().mean > 0.99);
    }

    #[test]
    fn deterministic_given_seed() {
        let d1 = Dataset::from_cells(2, &[vec![0, 1], vec![1, 1], vec![0, 0]]).unwrap();
        let d2 = Dataset::from_cells(2, &[vec![1, 0], vec![1, 1]]).unwrap();
        let cfg = EpsilonGibbsConfig {
            burn_in: 50,
            kept: 50,
            seed: 8,
            ..EpsilonGibbsConfig::default()
        };
        assert_eq!(epsilon_gibbs(&d1, &d2, &cfg).unwrap(), epsilon_gibbs(&d1, &d2, &cfg).unwrap());
    }
}
