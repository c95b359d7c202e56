//! Log-domain special functions and reproducible random streams.
//!
//! Every probability in the engine is carried as a natural logarithm. The
//! helpers here are the only place where Gamma-function arithmetic and
//! normalisation over the simplex happen.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// A natural-log probability (or density ratio). `-inf` encodes zero.
pub type LogReal = f64;

const LANCZOS_G: f64 = 5.242_187_5;
const LANCZOS_COEF: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];
const SQRT_TWO_PI: f64 = 2.506_628_274_631_000_5;

/// `ln Γ(x)` for `x > 0` (14-term Lanczos series).
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

#[inline]
pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    // Exact values at the integers the recursion hits most often.
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let tmp = x + LANCZOS_G;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_092;
    let mut y = x;
    for c in LANCZOS_COEF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (SQRT_TWO_PI * ser / x).ln()
}

/// `ln D(t) = Σ ln Γ(t_i) − ln Γ(Σ t_i)`, the Dirichlet normaliser.
pub fn log_dirichlet_norm(t: &[f64]) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::domain("log_dirichlet_norm of an empty vector"));
    }
    if let Some(bad) = t.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!(
            "log_dirichlet_norm requires positive components, got {bad}"
        )));
    }
    Ok(log_dirichlet_norm_unchecked(t))
}

#[inline]
pub(crate) fn log_dirichlet_norm_unchecked(t: &[f64]) -> f64 {
    let total: f64 = t.iter().sum();
    t.iter().map(|&v| log_gamma_unchecked(v)).sum::<f64>() - log_gamma_unchecked(total)
}

/// `ln [D(n + α) / D(α)]` for a two-child split with integer counts.
///
/// This is the Dirichlet–multinomial integral that weights every split in
/// the recursions.
#[inline]
pub(crate) fn log_dirichlet_ratio2(counts: (u32, u32), alpha: (f64, f64)) -> f64 {
    if counts == (0, 0) {
        return 0.0;
    }
    let (a, b) = alpha;
    let (na, nb) = (counts.0 as f64, counts.1 as f64);
    log_dirichlet_norm_unchecked(&[na + a, nb + b]) - log_dirichlet_norm_unchecked(&[a, b])
}

/// `ln Σ exp(v_i)`, shifted by the maximum. Returns `-inf` iff every input is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("log_sum_exp of an empty vector"));
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    // Summing in sorted order makes the result independent of term order.
    let mut terms: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    terms.sort_unstable_by(f64::total_cmp);
    max + terms.iter().sum::<f64>().ln()
}

/// Two-term `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln p` with `ln 0 = -inf`.
#[inline]
pub(crate) fn ln_prob(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

/// Exponentiate a log-probability and clamp into `[0, 1]`.
#[inline]
pub(crate) fn exp_prob(lp: f64) -> f64 {
    lp.exp().clamp(0.0, 1.0)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded random stream addressed by `(seed, path)`.
///
/// Identical addresses reproduce identical draws. Sub-streams are derived by
/// extending the path, so the draws of one sub-stream never depend on how
/// many values were taken from any other.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, Vec::new())
    }

    fn at(seed: u64, path: Vec<u64>) -> Self {
        let mut h = splitmix64(seed);
        for &p in &path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0x6a09_e667_f3bc_c909)));
        }
        let mut bytes = [0u8; 32];
        let mut state = h;
        for chunk in bytes.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        RandomStream {
            seed,
            path,
            rng: ChaCha8Rng::from_seed(bytes),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Child stream at `path ++ [index]`. Does not advance `self`.
    pub fn substream(&self, index: u64) -> RandomStream {
        let mut path = self.path.clone();
        path.push(index);
        Self::at(self.seed, path)
    }

    /// Child stream keyed by a 128-bit node key.
    pub fn node_substream(&self, key: u128) -> RandomStream {
        let mut path = self.path.clone();
        path.push(key as u64);
        path.push((key >> 64) as u64);
        Self::at(self.seed, path)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for small shapes.
fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape checked positive");
        return ln_prob(g.sample(rng));
    }
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    let g = Gamma::new(shape + 1.0, 1.0).expect("shape checked positive");
    let u: f64 = rng.gen::<f64>();
    ln_prob(g.sample(rng)) + ln_prob(1.0 - u) / shape
}

/// Draw from `Dirichlet(alpha)` by normalising independent Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::domain("sample_dirichlet needs at least one component"));
    }
    if let Some(bad) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::domain(format!(
            "Dirichlet parameters must be positive, got {bad}"
        )));
    }
    if alpha.len() == 1 {
        return Ok(vec![1.0]);
    }
    let logs: Vec<f64> = alpha.iter().map(|&a| sample_log_gamma(a, rng)).collect();
    let norm = log_sum_exp_unchecked(&logs);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - norm).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Two-component Dirichlet (a Beta draw) returned as `(θ, 1 − θ)`.
pub(crate) fn sample_dirichlet2<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> (f64, f64) {
    let la = sample_log_gamma(a, rng);
    let lb = sample_log_gamma(b, rng);
    let norm = log_add_exp(la, lb);
    let left = (la - norm).exp().clamp(0.0, 1.0);
    (left, 1.0 - left)
}

/// Draw `Bernoulli(p)`; returns `true` with probability `p`.
pub fn sample_bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("Bernoulli rate must lie in [0,1], got {p}")));
    }
    Ok(bernoulli(p, rng))
}

#[inline]
pub(crate) fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < p
}

/// Draw an index from unnormalised non-negative weights.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::RngCore;
    use std::f64::consts::PI;

    // Reference values of ln Γ(x) from 40-digit arithmetic.
    const REFERENCE: [(f64, f64); 10] = [
        (0.25, 1.288_022_524_698_077_457),
        (0.5, 0.572_364_942_924_700_087_1),
        (0.75, 0.203_280_951_431_295_371_5),
        (1.5, -0.120_782_237_635_245_222_3),
        (2.5, 0.284_682_870_472_919_159_6),
        (3.7, 1.428_072_326_665_387_921_9),
        (10.0, 12.801_827_480_081_469_611),
        (33.3, 82.603_723_581_654_952_928),
        (100.5, 361.435_540_467_777_621_555),
        (500.0, 2605.115_850_361_733_892_66),
    ];

    #[test]
    fn log_gamma_trivial_values() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert!((log_gamma(0.5).unwrap() - 0.5 * PI.ln()).abs() < 1e-14);
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn log_gamma_matches_high_precision_reference() {
        for (x, want) in REFERENCE {
            let got = log_gamma(x).unwrap();
            assert!((got - want).abs() <= 1e-12, "x={x}: {got} vs {want}");
        }
        // Beyond |ln Γ| ~ 4e3 the f64 spacing itself exceeds 1e-12; check relative error.
        for (x, want) in [
            (1234.5, 7550.550_901_077_894_895_7),
            (1e5, 1_051_287.708_973_656_894_9),
            (1e6, 12_815_504.569_147_611_66),
        ] {
            let got = log_gamma(x).unwrap();
            assert!(((got - want) / want).abs() <= 1e-14, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn log_gamma_rejects_non_positive() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
    }

    #[test]
    fn dirichlet_norm_examples() {
        assert!((log_dirichlet_norm(&[0.5, 0.5]).unwrap() - PI.ln()).abs() < 1e-14);
        assert_eq!(log_dirichlet_norm(&[1.0, 1.0]).unwrap(), 0.0);
        assert!((log_dirichlet_norm(&[1.0, 1.0, 1.0]).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        assert!(log_dirichlet_norm(&[]).is_err());
        assert!(log_dirichlet_norm(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, -3.25]).unwrap(), -3.25);
        assert_eq!(log_sum_exp(&[7.5]).unwrap(), 7.5);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_sum_exp(&[]).is_err());
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
    }

    #[test]
    fn dirichlet_singleton_and_determinism() {
        let mut rng = RandomStream::new(3);
        assert_eq!(sample_dirichlet(&[2.5], &mut rng).unwrap(), vec![1.0]);

        let alpha = [0.5, 1.5, 3.0];
        let a = sample_dirichlet(&alpha, &mut RandomStream::new(11)).unwrap();
        let b = sample_dirichlet(&alpha, &mut RandomStream::new(11)).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sample_dirichlet(&[1.0, -1.0], &mut rng).is_err());
    }

    #[test]
    fn dirichlet_uniform_marginal_mean() {
        // First coordinate of Dirichlet(1,1) is Uniform(0,1): mean 1/2, sd 1/sqrt(12).
        let mut rng = RandomStream::new(2024);
        let draws = 10_000;
        let mean = (0..draws)
            .map(|_| sample_dirichlet(&[1.0, 1.0], &mut rng).unwrap()[0])
            .sum::<f64>()
            / draws as f64;
        let se = (1.0 / 12.0f64).sqrt() / (draws as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn dirichlet_symmetric_alpha_is_exchangeable() {
        let mut rng = RandomStream::new(99);
        let draws = 10_000;
        let alpha = [0.7; 4];
        let mut sums = [0.0; 4];
        for _ in 0..draws {
            let v = sample_dirichlet(&alpha, &mut rng).unwrap();
            for (s, x) in sums.iter_mut().zip(v) {
                *s += x;
            }
        }
        // Var of a Dirichlet marginal: a_i (A - a_i) / (A^2 (A + 1)).
        let total: f64 = alpha.iter().sum();
        let var = 0.7 * (total - 0.7) / (total * total * (total + 1.0));
        let se = (var / draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64 - 0.25).abs() < 3.0 * se);
        }
    }

    #[test]
    fn bernoulli_examples() {
        let mut rng = RandomStream::new(5);
        for _ in 0..100 {
            assert!(!sample_bernoulli(0.0, &mut rng).unwrap());
            assert!(sample_bernoulli(1.0, &mut rng).unwrap());
        }
        assert!(sample_bernoulli(1.5, &mut rng).is_err());
        assert!(sample_bernoulli(-0.1, &mut rng).is_err());

        let draws = 10_000;
        let hits = (0..draws)
            .filter(|_| sample_bernoulli(0.5, &mut rng).unwrap())
            .count();
        let se = (0.25f64 / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let root = RandomStream::new(42);
        let mut a = root.substream(7);
        let mut b = root.substream(7);
        let mut c = root.substream(8);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_eq!(root.substream(7).path(), &[7]);
        assert_ne!(
            root.node_substream(1).next_u64(),
            root.node_substream(1 << 64).next_u64()
        );
    }

    proptest! {
        #[test]
        fn single_component_norm_is_zero(a in 0.01f64..500.0) {
            prop_assert!(log_dirichlet_norm(&[a]).unwrap().abs() < 1e-12);
        }

        #[test]
        fn gamma_recurrence_for_unit_increment(
            t in proptest::collection::vec(0.05f64..50.0, 1..6),
            pick in 0usize..6,
        ) {
            let i = pick % t.len();
            let mut bumped = t.clone();
            bumped[i] += 1.0;
            let lhs = log_dirichlet_norm(&bumped).unwrap() - log_dirichlet_norm(&t).unwrap();
            let rhs = t[i].ln() - t.iter().sum::<f64>().ln();
            prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn log_sum_exp_shift_and_permutation(
            v in proptest::collection::vec(-50f64..50.0, 1..8),
            c in -100f64..100.0,
        ) {
            let base = log_sum_exp(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert!((log_sum_exp(&shifted).unwrap() - (base + c)).abs() < 1e-10);
            let mut rev = v.clone();
            rev.reverse();
            prop_assert!((log_sum_exp(&rev).unwrap() - base).abs() < 1e-12);
        }
    }
}
