//! Simulation scenarios, ROC / power evaluation and data ingestion.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{epsilon_gibbs, ks_statistic, EpsilonGibbsConfig};
use crate::coopt::{fit, CooptParams};
use crate::error::{Error, Result};
use crate::numerics::{bernoulli, RandomStream};
use crate::opt::GridBase;
use crate::space::{Dataset, SampleSpace, SpaceKind};

/// A sampling law on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub enum Law {
    /// `shift + Beta(a, b)`.
    Beta { a: f64, b: f64, shift: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Multivariate normal given a mean and a lower-triangular Cholesky factor.
    Normal { mean: Vec<f64>, chol: Vec<Vec<f64>> },
    Mixture(Vec<(f64, Law)>),
}

impl Law {
    pub fn beta(a: f64, b: f64) -> Law {
        Law::Beta { a, b, shift: 0.0 }
    }

    /// Normal with covariance matrix `cov` (must be positive definite).
    pub fn normal(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Law {
        let d = mean.len();
        let mut l = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                l[i][j] = if i == j {
                    (cov[i][i] - s).sqrt()
                } else {
                    (cov[i][j] - s) / l[j][j]
                };
            }
        }
        Law::Normal { mean, chol: l }
    }

    /// Normal with independent coordinates of standard deviation `sd`.
    pub fn isotropic(mean: Vec<f64>, sd: f64) -> Law {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { sd * sd } else { 0.0 }).collect())
            .collect();
        Law::normal(mean, cov)
    }

    pub fn dims(&self) -> usize {
        match self {
            Law::Beta { .. } | Law::Uniform { .. } => 1,
            Law::Normal { mean, .. } => mean.len(),
            Law::Mixture(parts) => parts[0].1.dims(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Law::Beta { a, b, shift } => {
                vec![shift + Beta::new(*a, *b).expect("valid beta law").sample(rng)]
            }
            Law::Uniform { lo, hi } => vec![rng.gen_range(*lo..*hi)],
            Law::Normal { mean, chol } => {
                let z: Vec<f64> = mean.iter().map(|_| StandardNormal.sample(rng)).collect();
                mean.iter()
                    .enumerate()
                    .map(|(i, m)| m + (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
                    .collect()
            }
            Law::Mixture(parts) => {
                let mut u = rng.gen::<f64>();
                for (w, law) in parts {
                    if u < *w {
                        return law.sample(rng);
                    }
                    u -= w;
                }
                parts.last().expect("nonempty mixture").1.sample(rng)
            }
        }
    }
}

/// How a scenario produces its two samples.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Continuous { law1: Law, law2: Law },
    /// Binary predictors with a planted case/control response, sampled
    /// retrospectively: controls form sample 1, cases sample 2.
    Table { p: usize, markov: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: SpaceKind,
    pub dims: usize,
    pub default_sizes: (usize, usize),
    /// Explicit sample space; `None` uses the pooled data range.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub generator: Generator,
    /// Both samples come from the sample-1 law.
    pub null: bool,
}

/// Names accepted by [`ScenarioSpec::by_name`] (each also with a `-null` suffix).
pub const SCENARIOS: &[&str] = &[
    "1d-location",
    "1d-local",
    "1d-dispersion",
    "2d-location",
    "2d-subset",
    "2d-dispersion",
    "2d-local",
    "table-indep",
    "table-markov",
    "beta-distance",
    "2d-mixture-distance",
];

fn continuous(
    name: &str,
    law1: Law,
    law2: Law,
    n: usize,
    bounds: Option<Vec<(f64, f64)>>,
) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        kind: SpaceKind::ContinuousRectangle,
        dims: law1.dims(),
        default_sizes: (n, n),
        bounds,
        generator: Generator::Continuous { law1, law2 },
        null: false,
    }
}

impl ScenarioSpec {
    /// Look up a scenario. Table scenarios take an optional `-p<N>` suffix
    /// (default 15 predictors); any name takes a `-null` suffix.
    pub fn by_name(name: &str) -> Result<ScenarioSpec> {
        let unknown = || Error::UnknownScenario(name.to_string());
        if let Some(base) = name.strip_suffix("-null") {
            return Ok(Self::by_name(base).map_err(|_| unknown())?.null_variant());
        }
        for (prefix, markov) in [("table-indep", false), ("table-markov", true)] {
            if let Some(rest) = name.strip_prefix(prefix) {
                let p = match rest {
                    "" => 15,
                    r => r
                        .strip_prefix("-p")
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(unknown)?,
                };
                return Self::table(markov, p);
            }
        }
        let unit = Some(vec![(0.0, 1.0)]);
        let spec = match name {
            "1d-location" => continuous(
                name,
                Law::beta(4.0, 6.0),
                Law::Beta { a: 4.0, b: 6.0, shift: 0.2 },
                20,
                Some(vec![(0.0, 1.2)]),
            ),
            "1d-local" => continuous(
                name,
                Law::Uniform { lo: 0.0, hi: 1.0 },
                Law::Mixture(vec![(0.5, Law::beta(20.0, 10.0)), (0.5, Law::beta(10.0, 20.0))]),
                30,
                unit,
            ),
            "1d-dispersion" => continuous(
                name,
                Law::isotropic(vec![0.0], 1.0),
                Law::isotropic(vec![0.0], 2.0),
                40,
                None,
            ),
            "2d-location" => continuous(
                name,
                Law::isotropic(vec![1.0, 0.0], 2.0),
                Law::isotropic(vec![0.0, 1.0], 2.0),
                50,
                None,
            ),
            "2d-subset" => continuous(
                name,
                Law::isotropic(vec![0.0, 0.0], 0.3),
                Law::Mixture(vec![
                    (0.8, Law::isotropic(vec![0.0, 0.0], 0.3)),
                    (0.2, Law::isotropic(vec![0.5, 0.5], 0.3)),
                ]),
                100,
                None,
            ),
            "2d-dispersion" => continuous(
                name,
                Law::isotropic(vec![0.0, 0.0], 1.0),
                Law::isotropic(vec![0.0, 0.0], 0.5),
                50,
                None,
            ),
            "2d-local" => continuous(
                name,
                Law::normal(vec![0.0, 0.0], vec![vec![1.0, 0.25], vec![0.25, 1.0]]),
                Law::Mixture(vec![
                    (0.5, Law::isotropic(vec![0.5, 0.5], 0.4)),
                    (0.5, Law::isotropic(vec![-0.5, -0.5], 0.4)),
                ]),
                50,
                None,
            ),
            "beta-distance" => continuous(name, Law::beta(2.0, 5.0), Law::beta(20.0, 15.0), 1000, unit),
            "2d-mixture-distance" => continuous(
                name,
                Law::isotropic(vec![0.0, 0.0], 2.0),
                Law::Mixture(vec![
                    (0.5, Law::isotropic(vec![1.0, 1.0], 1.0)),
                    (0.5, Law::isotropic(vec![-1.0, -1.0], 1.0)),
                ]),
                1000,
                None,
            ),
            _ => return Err(unknown()),
        };
        Ok(spec)
    }

    /// The case/control table scenario with `p ≥ 10` predictors.
    pub fn table(markov: bool, p: usize) -> Result<ScenarioSpec> {
        if !(10..=64).contains(&p) {
            return Err(Error::param(format!(
                "table scenarios need between 10 and 64 predictors, got {p}"
            )));
        }
        let base = if markov { "table-markov" } else { "table-indep" };
        Ok(ScenarioSpec {
            name: if p == 15 { base.to_string() } else { format!("{base}-p{p}") },
            kind: SpaceKind::BinaryTable,
            dims: p,
            default_sizes: (500, 500),
            bounds: None,
            generator: Generator::Table { p, markov },
            null: false,
        })
    }

    pub fn null_variant(&self) -> ScenarioSpec {
        let mut spec = self.clone();
        if !spec.null {
            spec.name.push_str("-null");
        }
        spec.null = true;
        spec
    }

    /// The sample space used to analyse data generated from this scenario.
    pub fn space(&self, d1: &Dataset, d2: &Dataset) -> Result<SampleSpace> {
        match (self.kind, &self.bounds) {
            (SpaceKind::BinaryTable, _) => SampleSpace::table(self.dims),
            (_, Some(b)) => SampleSpace::rectangle(b.clone(), default_resolution(self.dims)),
            (_, None) => SampleSpace::rectangle_from_data(&[d1, d2], default_resolution(self.dims)),
        }
    }
}

/// Per-dimension resolution for continuous spaces: as fine as the node key allows, at most 24.
pub fn default_resolution(dims: usize) -> u32 {
    ((128 / dims.max(1)) as u32).saturating_sub(1).min(24)
}

/// Draw `n1` and `n2` points from the scenario's two laws.
pub fn generate_scenario<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    n1: usize,
    n2: usize,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::param("scenario sample sizes must be at least 1"));
    }
    match &spec.generator {
        Generator::Continuous { law1, law2 } => {
            let law2 = if spec.null { law1 } else { law2 };
            let d1 = Dataset::from_rows(spec.dims, (0..n1).map(|_| law1.sample(rng)))?;
            let d2 = Dataset::from_rows(spec.dims, (0..n2).map(|_| law2.sample(rng)))?;
            Ok((d1, d2))
        }
        Generator::Table { p, markov } => {
            let (mut controls, mut cases) = (Dataset::new(*p), Dataset::new(*p));
            let want_cases = if spec.null { 0 } else { n2 };
            let want_controls = if spec.null { n1 + n2 } else { n1 };
            let limit = 1000 * (n1 + n2) + 100_000;
            for _ in 0..limit {
                if controls.len() >= want_controls && cases.len() >= want_cases {
                    break;
                }
                let (x, y) = draw_subject(*p, *markov, rng);
                let row: Vec<f64> = x.iter().map(|&b| f64::from(b)).collect();
                if y && cases.len() < want_cases {
                    cases.push(&row)?;
                } else if !y && controls.len() < want_controls {
                    controls.push(&row)?;
                }
            }
            if controls.len() < want_controls || cases.len() < want_cases {
                return Err(Error::ResourceLimit {
                    what: "retrospective sampling draws".into(),
                    limit,
                });
            }
            if spec.null {
                let rows: Vec<Vec<f64>> = controls.points().map(|r| r.to_vec()).collect();
                let d1 = Dataset::from_rows(*p, rows[..n1].iter().cloned())?;
                let d2 = Dataset::from_rows(*p, rows[n1..].iter().cloned())?;
                return Ok((d1, d2));
            }
            Ok((controls, cases))
        }
    }
}

/// One population member: predictors `X1..Xp` and the response.
fn draw_subject<R: Rng + ?Sized>(p: usize, markov: bool, rng: &mut R) -> (Vec<u8>, bool) {
    let mut x = vec![0u8; p];
    for t in 0..p {
        x[t] = if markov && t > 0 && t < 8 {
            let stay = bernoulli(0.7, rng);
            if stay { x[t - 1] } else { 1 - x[t - 1] }
        } else {
            bernoulli(0.5, rng) as u8
        };
    }
    let (x3, x7, x10) = (x[2], x[6], x[9]);
    let rate = if (x3 == 1 && x7 == 1) || (x7 == 0 && x10 == 0) { 0.3 } else { 0.1 };
    (x, bernoulli(rate, rng))
}

/// A two-sample test statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// `γ_post(Ω)`; small values indicate a difference.
    Coopt,
    Ks,
    /// Posterior mean of ε; small values indicate a difference.
    Epsilon,
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coopt" => Ok(Statistic::Coopt),
            "ks" => Ok(Statistic::Ks),
            "epsilon" => Ok(Statistic::Epsilon),
            other => Err(Error::input(format!("unknown statistic `{other}`"))),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Coopt => "coopt",
            Statistic::Ks => "ks",
            Statistic::Epsilon => "epsilon",
        })
    }
}

/// Settings shared by every replicate of an evaluation run.
#[derive(Clone, Debug, Default)]
pub struct StatisticSettings {
    pub coopt: CooptParams,
    /// The seed is replaced per replicate.
    pub gibbs: EpsilonGibbsConfig,
}

impl Statistic {
    /// The statistic's own value on a pair of samples.
    pub fn value(
        self,
        spec: &ScenarioSpec,
        d1: &Dataset,
        d2: &Dataset,
        settings: &StatisticSettings,
        seed: u64,
    ) -> Result<f64> {
        match self {
            Statistic::Coopt => {
                let space = spec.space(d1, d2)?;
                Ok(fit(&space, d1, d2, &settings.coopt)?.coupling_statistic())
            }
            Statistic::Ks => {
                if spec.dims != 1 {
                    return Err(Error::input("the KS statistic needs 1-dimensional data"));
                }
                ks_statistic(&d1.column(0), &d2.column(0))
            }
            Statistic::Epsilon => {
                if spec.kind != SpaceKind::BinaryTable {
                    return Err(Error::input("the epsilon statistic needs binary table data"));
                }
                let cfg = EpsilonGibbsConfig {
                    seed,
                    ..settings.gibbs.clone()
                };
                Ok(epsilon_gibbs(d1, d2, &cfg)?.mean)
            }
        }
    }

    /// Oriented so that larger values are stronger evidence of a difference.
    pub fn evidence(self, value: f64) -> f64 {
        match self {
            Statistic::Ks => value,
            Statistic::Coopt | Statistic::Epsilon => -value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocResult {
    pub statistic: String,
    /// Raw statistic values per replicate.
    pub null_values: Vec<f64>,
    pub alt_values: Vec<f64>,
    /// `(false positive rate, true positive rate)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub power: Option<f64>,
}

/// Raw statistic values on `reps` replicates; replicate `i` uses substream `i` of `stream`.
pub fn replicate_values(
    stat: Statistic,
    spec: &ScenarioSpec,
    n1: usize,
    n2: usize,
    reps: usize,
    settings: &StatisticSettings,
    stream: &RandomStream,
) -> Result<Vec<f64>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.substream(i);
            let (d1, d2) = generate_scenario(spec, n1, n2, &mut rng)?;
            let seed = rng.gen::<u64>();
            stat.value(spec, &d1, &d2, settings, seed)
        })
        .collect()
}

/// ROC points and trapezoidal AUC from evidence values (larger = more different).
///
/// Thresholds sweep the distinct pooled values, so tied null/alternative
/// values contribute a diagonal segment (half credit).
pub fn roc_curve(null: &[f64], alt: &[f64]) -> (Vec<(f64, f64)>, f64) {
    let mut thresholds: Vec<f64> = null.iter().chain(alt).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |v: &[f64], t: f64| v.iter().filter(|&&x| x >= t).count() as f64 / v.len() as f64;
    let mut points = vec![(0.0, 0.0)];
    points.extend(thresholds.iter().map(|&t| (rate(null, t), rate(alt, t))));
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    (points, auc)
}

/// ROC of a statistic: `reps` null and `reps` alternative replicates.
pub fn roc(
    stat: Statistic,
    spec: &ScenarioSpec,
    n1: usize,
    n2: usize,
    reps: usize,
    settings: &StatisticSettings,
    stream: &RandomStream,
) -> Result<RocResult> {
    if reps < 2 {
        return Err(Error::param("ROC needs at least 2 replicates"));
    }
    let null_spec = spec.null_variant();
    let null_values = replicate_values(stat, &null_spec, n1, n2, reps, settings, &stream.substream(0))?;
    let alt_values = replicate_values(stat, spec, n1, n2, reps, settings, &stream.substream(1))?;
    let ev = |v: &[f64]| v.iter().map(|&x| stat.evidence(x)).collect::<Vec<_>>();
    let (points, auc) = roc_curve(&ev(&null_values), &ev(&alt_values));
    Ok(RocResult {
        statistic: stat.to_string(),
        null_values,
        alt_values,
        points,
        auc,
        power: None,
    })
}

/// Fraction of `alt` evidence values beyond the level-`level` critical value of `null`.
///
/// The critical value is the `⌊level·reps⌋`-th largest null value (0-based);
/// strictly larger alternatives are rejections. `level = 1` rejects everything.
pub fn power_from_values(null: &[f64], alt: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::param(format!("level must lie in (0,1], got {level}")));
    }
    if null.is_empty() || alt.is_empty() {
        return Err(Error::param("power needs null and alternative replicates"));
    }
    let mut sorted = null.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (level * null.len() as f64 + 1e-9).floor() as usize;
    if k >= sorted.len() {
        return Ok(1.0);
    }
    let crit = sorted[k];
    Ok(alt.iter().filter(|&&x| x > crit).count() as f64 / alt.len() as f64)
}

/// Power at a level, calibrated on `reps` null replicates.
#[allow(clippy::too_many_arguments)]
pub fn power_at_level(
    stat: Statistic,
    spec: &ScenarioSpec,
    n1: usize,
    n2: usize,
    level: f64,
    reps: usize,
    settings: &StatisticSettings,
    stream: &RandomStream,
) -> Result<f64> {
    let r = roc(stat, spec, n1, n2, reps, settings, stream)?;
    let ev = |v: &[f64]| v.iter().map(|&x| stat.evidence(x)).collect::<Vec<_>>();
    power_from_values(&ev(&r.null_values), &ev(&r.alt_values), level)
}

/// How input columns are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Continuous,
    /// Columns of 0/1 values (0 = first cell, 1 = second cell).
    Table,
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(InputMode::Continuous),
            "table" => Ok(InputMode::Table),
            other => Err(Error::input(format!("unknown mode `{other}`"))),
        }
    }
}

/// Guess the delimiter from a file extension: tab for `.tsv`/`.tab`, else comma.
pub fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    }
}

fn parse_value(field: &str, mode: InputMode, line: u64, column: &str) -> Result<f64> {
    let field = field.trim();
    match mode {
        InputMode::Continuous => field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::input(format!("line {line}, column `{column}`: `{field}` is not a finite number"))
            }),
        InputMode::Table => match field {
            "0" => Ok(0.0),
            "1" => Ok(1.0),
            _ => Err(Error::input(format!(
                "line {line}, column `{column}`: table values must be 0 or 1, got `{field}`"
            ))),
        },
    }
}

/// Parse delimited text with a header. With `group = Some(col)` the rows are
/// split by that column's two labels, the lexicographically smaller label
/// giving sample 1; all other columns are data.
pub fn parse_delimited<R: Read>(
    reader: R,
    delimiter: u8,
    mode: InputMode,
    group: Option<&str>,
) -> Result<(Vec<String>, Vec<(Option<String>, Vec<f64>)>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let group_idx = match group {
        Some(g) => Some(
            headers
                .iter()
                .position(|h| h == g)
                .ok_or_else(|| Error::input(format!("no column named `{g}`")))?,
        ),
        None => None,
    };
    let columns: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != group_idx).collect();
    if columns.is_empty() {
        return Err(Error::input("input has no data columns"));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::input(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::input(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let values = columns
            .iter()
            .map(|&c| parse_value(&record[c], mode, line, &headers[c]))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((group_idx.map(|g| record[g].to_string()), values));
    }
    let names = columns.iter().map(|&c| headers[c].clone()).collect();
    Ok((names, rows))
}

/// Read one sample from a file.
pub fn read_dataset(path: &Path, mode: InputMode) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let (names, rows) = parse_delimited(file, delimiter_for(path), mode, None)?;
    let data = Dataset::from_rows(names.len(), rows.into_iter().map(|r| r.1))?;
    if data.is_empty() {
        return Err(Error::input(format!("{}: no observations", path.display())));
    }
    Ok(data)
}

/// Read two samples from two files.
pub fn read_two(path1: &Path, path2: &Path, mode: InputMode) -> Result<(Dataset, Dataset)> {
    let d1 = read_dataset(path1, mode)?;
    let d2 = read_dataset(path2, mode)?;
    if d1.dims() != d2.dims() {
        return Err(Error::input(format!(
            "inputs have {} and {} data columns",
            d1.dims(),
            d2.dims()
        )));
    }
    Ok((d1, d2))
}

/// Split parsed rows by group label.
pub fn split_groups(
    dims: usize,
    rows: Vec<(Option<String>, Vec<f64>)>,
) -> Result<(Dataset, Dataset, [String; 2])> {
    let mut labels: Vec<String> = rows.iter().filter_map(|r| r.0.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != 2 {
        return Err(Error::input(format!(
            "group column must have exactly two labels, found {}",
            labels.len()
        )));
    }
    let (mut d1, mut d2) = (Dataset::new(dims), Dataset::new(dims));
    for (label, values) in rows {
        if label.as_deref() == Some(labels[0].as_str()) {
            d1.push(&values)?;
        } else {
            d2.push(&values)?;
        }
    }
    Ok((d1, d2, [labels[0].clone(), labels[1].clone()]))
}

/// Read two samples from one file with a group column.
pub fn read_grouped(path: &Path, group: &str, mode: InputMode) -> Result<(Dataset, Dataset, [String; 2])> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let (names, rows) = parse_delimited(file, delimiter_for(path), mode, Some(group))?;
    split_groups(names.len(), rows)
}

/// The analysis space for user data: the table, explicit bounds, or the pooled data range.
pub fn space_for_data(
    mode: InputMode,
    d1: &Dataset,
    d2: &Dataset,
    bounds: Option<Vec<(f64, f64)>>,
) -> Result<SampleSpace> {
    let space = match (mode, bounds) {
        (InputMode::Table, _) => SampleSpace::table(d1.dims())?,
        (InputMode::Continuous, Some(b)) => SampleSpace::rectangle(b, default_resolution(d1.dims()))?,
        (InputMode::Continuous, None) => {
            SampleSpace::rectangle_from_data(&[d1, d2], default_resolution(d1.dims()))?
        }
    };
    // Surface out-of-space values with their row and column.
    space.bin(d1)?;
    space.bin(d2)?;
    Ok(space)
}

/// Read a grid base measure: one integer bin-index column per dimension
/// (named anything) plus a `mass` column. Bin counts per dimension must be
/// powers of two and every cell must be listed exactly once.
pub fn read_grid_base(path: &Path) -> Result<GridBase> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let (names, rows) = parse_delimited(file, delimiter_for(path), InputMode::Continuous, None)?;
    let mass_col = names
        .iter()
        .position(|n| n == "mass")
        .ok_or_else(|| Error::input("grid file needs a `mass` column"))?;
    let dims = names.len() - 1;
    if dims == 0 {
        return Err(Error::input("grid file needs at least one index column"));
    }
    let mut bins = vec![0usize; dims];
    let mut cells = Vec::with_capacity(rows.len());
    for (row, (_, values)) in rows.iter().enumerate() {
        let mut idx = Vec::with_capacity(dims);
        for (c, &v) in values.iter().enumerate().filter(|&(c, _)| c != mass_col) {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::input(format!(
                    "grid row {}: index column `{}` must be a non-negative integer",
                    row + 1,
                    names[c]
                )));
            }
            idx.push(v as usize);
        }
        for (b, &i) in bins.iter_mut().zip(&idx) {
            *b = (*b).max(i + 1);
        }
        cells.push((idx, values[mass_col]));
    }
    let depths: Vec<u32> = bins.iter().map(|&b| b.next_power_of_two().trailing_zeros()).collect();
    if bins.iter().any(|b| !b.is_power_of_two()) {
        return Err(Error::input("grid bins per dimension must be a power of two"));
    }
    let total_cells: usize = bins.iter().product();
    if cells.len() != total_cells {
        return Err(Error::input(format!(
            "grid lists {} cells, expected {total_cells}",
            cells.len()
        )));
    }
    let mut masses = vec![f64::NAN; total_cells];
    for (idx, m) in cells {
        let flat = idx.iter().zip(&bins).fold(0usize, |acc, (&i, &b)| acc * b + i);
        if !masses[flat].is_nan() {
            return Err(Error::input(format!("grid cell {idx:?} is listed twice")));
        }
        masses[flat] = m;
    }
    GridBase::new(depths, masses)
}

/// Write two samples as one delimited table with a `group` column (labels `1`, `2`).
pub fn write_samples<W: Write>(out: W, d1: &Dataset, d2: &Dataset, table: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d1.dims()).map(|d| format!("x{d}")).collect();
    header.push("group".into());
    w.write_record(&header)?;
    for (label, data) in [("1", d1), ("2", d2)] {
        for p in data.points() {
            let mut rec: Vec<String> = p
                .iter()
                .map(|v| if table { format!("{}", *v as u8) } else { format!("{v}") })
                .collect();
            rec.push(label.into());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
