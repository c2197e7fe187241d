//! Monte Carlo driver: effective-conductance replicas, summary statistics,
//! normality and variance-scaling tests, and the built-in self test.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::environment::{mix, sample, ConductanceLaw, Environment};
use crate::error::{OhmError, Result};
use crate::lattice::{BoxDomain, EdgeKey};
use crate::solver::{effective_conductance, effective_conductance_direct, series_conductance};

/// Banded storage above this many entries switches `run_ceff` to CG.
const DIRECT_LIMIT: usize = 1 << 22;

/// Nonparametric resamples behind the standard errors.
pub const SE_RESAMPLES: usize = 200;
/// Parametric resamples behind the KS p-value.
pub const KS_RESAMPLES: usize = 1000;
/// Resamples behind the variance-scaling intervals.
pub const CI_RESAMPLES: usize = 1000;
/// Smallest sample accepted by [`clt_test`].
pub const MIN_CLT_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    Constant,
    Uniform,
    TwoPoint,
}

impl FromStr for LawKind {
    type Err = OhmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LawKind::Constant),
            "uniform" => Ok(LawKind::Uniform),
            "two-point" | "two_point" | "bernoulli" => Ok(LawKind::TwoPoint),
            _ => Err(OhmError::Invalid(format!(
                "unknown law {s:?} (expected constant, uniform or two-point)"
            ))),
        }
    }
}

impl fmt::Display for LawKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LawKind::Constant => "constant",
            LawKind::Uniform => "uniform",
            LawKind::TwoPoint => "two-point",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = OhmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(OhmError::Invalid(format!("unknown format {s:?} (expected csv or json)"))),
        }
    }
}

/// One experiment. `p` is the weight of the high value `1/λ` under the
/// two-point law; the constant law puts `a ≡ 1` on every edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    #[serde(rename = "L")]
    pub sides: Vec<usize>,
    pub lambda: f64,
    pub law: LawKind,
    pub p: f64,
    /// Empty means `e_1`.
    pub t: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub tol: f64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// Zero lets the pool pick.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 2,
            sides: vec![8],
            lambda: 0.9,
            law: LawKind::Uniform,
            p: 0.5,
            t: Vec::new(),
            replicas: 100,
            seed: 0,
            tol: 1e-10,
            out: None,
            format: OutputFormat::Csv,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn direction(&self) -> Vec<f64> {
        if self.t.is_empty() {
            let mut t = vec![0.0; self.dim];
            if self.dim > 0 {
                t[0] = 1.0;
            }
            t
        } else {
            self.t.clone()
        }
    }

    pub fn conductance_law(&self) -> Result<ConductanceLaw> {
        let law = match self.law {
            LawKind::Constant => ConductanceLaw::constant(1.0),
            LawKind::Uniform => ConductanceLaw::uniform(self.lambda),
            LawKind::TwoPoint => ConductanceLaw::two_point(self.lambda, self.p),
        };
        law.validate()?;
        Ok(law)
    }

    /// Full validation, including `M ≥ 2`.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(2)
    }

    pub fn validate_with(&self, min_replicas: usize) -> Result<()> {
        if !(1..=4).contains(&self.dim) {
            return Err(OhmError::Invalid(format!("dimension must be 1..=4, got {}", self.dim)));
        }
        if self.sides.is_empty() {
            return Err(OhmError::Invalid("at least one side is required".into()));
        }
        if let Some(&l) = self.sides.iter().find(|&&l| l < 2) {
            return Err(OhmError::Invalid(format!("sides must be at least 2, got {l}")));
        }
        if self.replicas < min_replicas {
            return Err(OhmError::Invalid(format!(
                "need at least {min_replicas} replicas, got {}",
                self.replicas
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(OhmError::Range {
                what: "lambda",
                value: self.lambda,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let t = self.direction();
        if t.len() != self.dim || t.iter().any(|x| !x.is_finite()) {
            return Err(OhmError::Invalid(format!(
                "t must have {} finite components",
                self.dim
            )));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(OhmError::Range {
                what: "tol",
                value: self.tol,
                lo: 0.0,
                hi: 1.0,
            });
        }
        self.conductance_law()?;
        Ok(())
    }
}

/// Run `f` on a pool of `threads` workers, or on the global pool for zero.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| OhmError::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: usize,
    #[serde(rename = "L")]
    pub side: usize,
    pub seed: u64,
    pub ceff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub replica: usize,
    #[serde(rename = "L")]
    pub side: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideSummary {
    #[serde(rename = "L")]
    pub side: usize,
    #[serde(flatten)]
    pub stats: SummaryStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CeffRun {
    pub records: Vec<ReplicaRecord>,
    pub failures: Vec<ReplicaFailure>,
    /// Empty when a box has fewer than two replicas.
    pub summaries: Vec<SideSummary>,
}

impl CeffRun {
    /// Values at side `l`, in replica order.
    pub fn values(&self, l: usize) -> Vec<f64> {
        self.records.iter().filter(|r| r.side == l).map(|r| r.ceff).collect()
    }

    pub fn groups(&self) -> Vec<(usize, Vec<f64>)> {
        let mut sides: Vec<usize> = self.records.iter().map(|r| r.side).collect();
        sides.sort_unstable();
        sides.dedup();
        sides.into_iter().map(|l| (l, self.values(l))).collect()
    }
}

/// `C^eff_L(t)` of one environment: banded Cholesky when it fits, CG otherwise.
pub fn replica_ceff(env: &Environment, t: &[f64], tol: f64) -> Result<f64> {
    let dom = env.domain();
    let band = dom.side().pow(dom.dim() as u32 - 1);
    if dom.volume() * (band + 1) <= DIRECT_LIMIT {
        effective_conductance_direct(env, t)
    } else {
        effective_conductance(env, t, tol)
    }
}

/// `M` replicas of `C^eff_L(t)` for every `L` in the config.
///
/// Replica `j` (counted across all sides) uses seed `mix(seed, j)`. Numerical
/// failures are recorded and skipped; more than 1% of them aborts the run.
pub fn run_ceff(config: &ExperimentConfig) -> Result<CeffRun> {
    config.validate_with(1)?;
    let law = config.conductance_law()?;
    let t = config.direction();
    let m = config.replicas;
    let jobs: Vec<(usize, usize)> = config
        .sides
        .iter()
        .flat_map(|&l| (0..m).map(move |r| (l, r)))
        .collect();
    let domains: Vec<Arc<BoxDomain>> = config
        .sides
        .iter()
        .map(|&l| BoxDomain::new(config.dim, l).map(Arc::new))
        .collect::<Result<_>>()?;
    let outcomes: Vec<Result<(usize, usize, u64, f64)>> = with_threads(config.threads, || {
        jobs.par_iter()
            .enumerate()
            .map(|(j, &(l, _))| {
                let seed = mix(config.seed, j as u64);
                let dom = &domains[config.sides.iter().position(|&s| s == l).unwrap()];
                let env = sample(&law, dom.clone(), seed)?;
                let c = replica_ceff(&env, &t, config.tol)?;
                Ok((j, l, seed, c))
            })
            .collect()
    })?;
    let mut records = Vec::with_capacity(jobs.len());
    let mut failures = Vec::new();
    for (j, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok((replica, side, seed, ceff)) => records.push(ReplicaRecord {
                replica,
                side,
                seed,
                ceff,
            }),
            Err(e) if e.is_numerical() => failures.push(ReplicaFailure {
                replica: j,
                side: jobs[j].0,
                seed: mix(config.seed, j as u64),
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    if failures.len() * 100 > jobs.len() {
        return Err(OhmError::CheckFailed(format!(
            "{} of {} replicas failed; first: {}",
            failures.len(),
            jobs.len(),
            failures[0].message
        )));
    }
    let mut run = CeffRun {
        records,
        failures,
        summaries: Vec::new(),
    };
    for (l, values) in run.groups() {
        if values.len() >= 2 {
            let stats = SummaryStats::compute(&values, config.dim, l, mix(config.seed, u64::MAX - l as u64))?;
            run.summaries.push(SideSummary { side: l, stats });
        }
    }
    Ok(run)
}

pub fn write_records_csv(records: &[ReplicaRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "replica,L,seed,ceff")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.replica, r.side, r.seed, r.ceff)?;
    }
    Ok(())
}

/// Sample moments `(mean, unbiased variance, skewness, excess kurtosis)`;
/// the shape coefficients are the moment ratios `m₃/m₂^{3/2}` and
/// `m₄/m₂² − 3`, `None` for constant data.
pub fn moments(x: &[f64]) -> (f64, f64, Option<f64>, Option<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let var = if x.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 <= f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE) * mean.abs() {
        return (mean, var, None, None);
    }
    (mean, var, Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2) - 3.0))
}

/// Kolmogorov–Smirnov distance between the standardized sample and `N(0,1)`.
pub fn ks_normal(x: &[f64]) -> Option<f64> {
    let (mean, var, _, _) = moments(x);
    if !(var > 0.0) {
        return None;
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let phi = Normal::new(0.0, 1.0).unwrap();
    let n = z.len() as f64;
    Some(z.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = phi.cdf(v);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    }))
}

/// Parametric-bootstrap p-value of the KS distance with fitted mean and
/// variance: normal samples of the same size, refitted each time.
pub fn ks_bootstrap_p_value(n: usize, observed: f64, resamples: usize, seed: u64) -> f64 {
    let exceed = (0..resamples)
        .into_par_iter()
        .filter(|&b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b as u64));
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            ks_normal(&z).is_some_and(|d| d >= observed)
        })
        .count();
    (exceed + 1) as f64 / (resamples + 1) as f64
}

fn resample(x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..x.len()).map(|_| x[rng.gen_range(0..x.len())]).collect()
}

fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    moments(x).1.sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub bootstrap_p_value: Option<f64>,
    pub variance_per_volume: f64,
    pub mean_se: f64,
    pub variance_se: f64,
    pub skewness_se: Option<f64>,
    pub excess_kurtosis_se: Option<f64>,
    pub variance_per_volume_se: f64,
}

impl SummaryStats {
    /// Statistics of `values` from boxes `Λ_L` in dimension `dim`. Standard
    /// errors come from nonparametric resampling, the p-value from the
    /// parametric bootstrap; `seed` drives both.
    pub fn compute(values: &[f64], dim: usize, side: usize, seed: u64) -> Result<Self> {
        if values.len() < 2 {
            return Err(OhmError::Invalid("summary statistics need at least two values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OhmError::Invalid("values must be finite".into()));
        }
        let volume = (side as f64).powi(dim as i32);
        let (mean, variance, skewness, excess_kurtosis) = moments(values);
        let ks_statistic = ks_normal(values);
        let bootstrap_p_value =
            ks_statistic.map(|d| ks_bootstrap_p_value(values.len(), d, KS_RESAMPLES, mix(seed, 1)));
        let reps: Vec<(f64, f64, Option<f64>, Option<f64>)> = (0..SE_RESAMPLES)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed, 2), b as u64));
                moments(&resample(values, &mut rng))
            })
            .collect();
        let col = |f: &dyn Fn(&(f64, f64, Option<f64>, Option<f64>)) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = reps.iter().map(f).collect();
            v.map(|v| sd(&v))
        };
        let variance_se = col(&|r| Some(r.1)).unwrap();
        Ok(SummaryStats {
            n: values.len(),
            mean,
            variance,
            skewness,
            excess_kurtosis,
            ks_statistic,
            bootstrap_p_value,
            variance_per_volume: variance / volume,
            mean_se: col(&|r| Some(r.0)).unwrap(),
            variance_se,
            skewness_se: skewness.and(col(&|r| r.2)),
            excess_kurtosis_se: excess_kurtosis.and(col(&|r| r.3)),
            variance_per_volume_se: variance_se / volume,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LindebergRow {
    pub epsilon: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CltReport {
    #[serde(flatten)]
    pub stats: SummaryStats,
    pub lindeberg: Vec<LindebergRow>,
    pub ks_pass: bool,
    pub skewness_pass: bool,
    pub kurtosis_pass: bool,
    /// `|skewness| > 3·SE`.
    pub skewness_significant: bool,
    pub passed: bool,
}

/// Significance level of the KS test.
pub const KS_LEVEL: f64 = 0.01;
pub const SKEWNESS_BOUND: f64 = 0.2;
pub const KURTOSIS_BOUND: f64 = 0.5;

/// Non-rejection test of normality for `n ≥ 500` values from `Λ_L`.
///
/// A shape coefficient passes when it is below its bound and within three
/// standard errors of zero.
pub fn clt_test(values: &[f64], dim: usize, side: usize, seed: u64) -> Result<CltReport> {
    if values.len() < MIN_CLT_SAMPLES {
        return Err(OhmError::Refused(format!(
            "normality test needs at least {MIN_CLT_SAMPLES} values, got {}",
            values.len()
        )));
    }
    let stats = SummaryStats::compute(values, dim, side, seed)?;
    let sd = stats.variance.sqrt();
    let scale = (side as f64).powf(dim as f64 / 2.0) * sd;
    let lindeberg = [1.0, 2.0, 4.0]
        .iter()
        .map(|&epsilon| LindebergRow {
            epsilon,
            fraction: values.iter().filter(|&&c| (c - stats.mean).abs() > epsilon * scale).count() as f64
                / values.len() as f64,
        })
        .collect();
    let shape = |v: Option<f64>, se: Option<f64>, bound: f64| match (v, se) {
        (Some(v), Some(se)) => v.abs() < bound && v.abs() <= 3.0 * se,
        _ => false,
    };
    let ks_pass = stats.bootstrap_p_value.is_some_and(|p| p > KS_LEVEL);
    let skewness_pass = shape(stats.skewness, stats.skewness_se, SKEWNESS_BOUND);
    let kurtosis_pass = shape(stats.excess_kurtosis, stats.excess_kurtosis_se, KURTOSIS_BOUND);
    let skewness_significant = match (stats.skewness, stats.skewness_se) {
        (Some(v), Some(se)) => v.abs() > 3.0 * se,
        _ => false,
    };
    Ok(CltReport {
        stats,
        lindeberg,
        ks_pass,
        skewness_pass,
        kurtosis_pass,
        skewness_significant,
        passed: ks_pass && skewness_pass && kurtosis_pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    #[serde(rename = "L")]
    pub sides: Vec<usize>,
    pub variances: Vec<f64>,
    pub variance_ci: Vec<[f64; 2]>,
    pub variance_per_volume: Vec<f64>,
    pub variance_per_volume_ci: Vec<[f64; 2]>,
    pub slope: Option<f64>,
    pub slope_ci: Option<[f64; 2]>,
    pub intercept: Option<f64>,
    /// `|V_last/V_prev − 1|` for `V = Var/L^d` at the two largest sides.
    pub last_relative_change: Option<f64>,
    pub note: Option<String>,
}

fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn percentile_interval(mut v: Vec<f64>) -> [f64; 2] {
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    [at(0.025), at(0.975)]
}

/// Least-squares fit of `log Var` against `log L` over at least three
/// sides, with percentile intervals from resampling every group.
pub fn variance_scaling(groups: &[(usize, Vec<f64>)], dim: usize, seed: u64) -> Result<ScalingReport> {
    let mut groups = groups.to_vec();
    groups.sort_by_key(|g| g.0);
    let distinct = groups.windows(2).all(|w| w[0].0 < w[1].0);
    if groups.len() < 3 || !distinct {
        return Err(OhmError::Invalid("variance scaling needs at least three distinct sides".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.1.len() < 2) {
        return Err(OhmError::Invalid(format!("side {} has fewer than two values", g.0)));
    }
    let sides: Vec<usize> = groups.iter().map(|g| g.0).collect();
    let volumes: Vec<f64> = sides.iter().map(|&l| (l as f64).powi(dim as i32)).collect();
    let logl: Vec<f64> = sides.iter().map(|&l| (l as f64).ln()).collect();
    let variances: Vec<f64> = groups.iter().map(|g| moments(&g.1).1).collect();
    let per_volume: Vec<f64> = variances.iter().zip(&volumes).map(|(v, w)| v / w).collect();
    let boot: Vec<Vec<f64>> = (0..CI_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b as u64));
            groups.iter().map(|g| moments(&resample(&g.1, &mut rng)).1).collect()
        })
        .collect();
    let column = |i: usize, scale: f64| percentile_interval(boot.iter().map(|v| v[i] / scale).collect());
    let variance_ci = (0..sides.len()).map(|i| column(i, 1.0)).collect();
    let variance_per_volume_ci = (0..sides.len()).map(|i| column(i, volumes[i])).collect();
    let k = per_volume.len();
    let last_relative_change = (per_volume[k - 2] > 0.0).then(|| (per_volume[k - 1] / per_volume[k - 2] - 1.0).abs());
    let mut report = ScalingReport {
        sides,
        variances: variances.clone(),
        variance_ci,
        variance_per_volume: per_volume,
        variance_per_volume_ci,
        slope: None,
        slope_ci: None,
        intercept: None,
        last_relative_change,
        note: None,
    };
    if variances.iter().any(|&v| !(v > 0.0)) {
        report.note = Some("zero variance at some side; log-log fit refused".into());
        return Ok(report);
    }
    let logv: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let (slope, intercept) = fit_line(&logl, &logv);
    let slopes: Vec<f64> = boot
        .iter()
        .filter(|v| v.iter().all(|&x| x > 0.0))
        .map(|v| fit_line(&logl, &v.iter().map(|x| x.ln()).collect::<Vec<_>>()).0)
        .collect();
    report.slope = Some(slope);
    report.intercept = Some(intercept);
    report.slope_ci = (!slopes.is_empty()).then(|| percentile_interval(slopes));
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelftestCase {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelftestReport {
    pub cases: Vec<SelftestCase>,
    pub passed: usize,
    pub failed: usize,
}

fn case(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> SelftestCase {
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, e.to_string()),
    };
    SelftestCase {
        name: name.into(),
        passed,
        detail,
    }
}

/// Exact small-instance checks of every module; a few seconds in total.
pub fn selftest() -> SelftestReport {
    use crate::green::{g_edge, reflected_green, massive_green_column, srw_green};
    use crate::martingale::{
        estimate_sigma_sq, h_closed_form, h_quadrature, increment_representation_check, increments_exact,
        rank_one_check, SigmaConfig,
    };
    use crate::meyers::{meyers_fixed_point, KOperator, VectorField};

    let dom = |d: usize, l: usize| Arc::new(BoxDomain::new(d, l).unwrap());
    let mut cases = Vec::new();
    cases.push(case("homogeneous box energy", || {
        let mut worst = 0.0f64;
        for d in 1..=3 {
            for l in [2usize, 4] {
                let env = Environment::homogeneous(dom(d, l), 1.0);
                let t: Vec<f64> = (0..d).map(|i| 1.0 - 0.3 * i as f64).collect();
                let exact = (l + 1) as f64 * (l as f64).powi(d as i32 - 1) * t.iter().map(|x| x * x).sum::<f64>();
                let c = effective_conductance(&env, &t, 1e-13)?;
                worst = worst.max((c / exact - 1.0).abs());
            }
        }
        Ok((worst <= 1e-10, format!("max relative error {worst:.2e}")))
    }));
    cases.push(case("series resistors", || {
        let env = sample(&ConductanceLaw::uniform(0.2), dom(1, 16), 5)?;
        let a = replica_ceff(&env, &[1.3], 1e-13)?;
        let b = series_conductance(&env, 1.3)?;
        let r = (a / b - 1.0).abs();
        Ok((r <= 1e-9, format!("relative error {r:.2e}")))
    }));
    cases.push(case("g on the unit path", || {
        let env = Environment::homogeneous(dom(1, 2), 1.0);
        let g = g_edge(&env, &EdgeKey::new(vec![0], 0), 1e-14)?.value;
        Ok(((g - 2.0 / 3.0).abs() <= 1e-10, format!("g = {g}")))
    }));
    cases.push(case("rank-one factor on the unit path", || {
        let env = Environment::homogeneous(dom(1, 2), 1.0).with_lambda(0.4)?;
        let r = rank_one_check(&env, &EdgeKey::new(vec![0], 0), 2.0, 1e-10)?;
        Ok((r.passed && (r.factor - 0.6).abs() <= 1e-10, format!("factor = {}", r.factor)))
    }));
    cases.push(case("rank-one identities on a random box", || {
        let env = sample(&ConductanceLaw::uniform(0.5), dom(2, 6), 11)?;
        let r = rank_one_check(&env, &EdgeKey::new(vec![2, 3], 0), 1.7, 1e-8)?;
        Ok((r.passed, format!("max residual {:.2e}", r.max_residual())))
    }));
    cases.push(case("lattice Green function in d = 1", || {
        let eps = 0.5f64;
        let s = (eps * eps + 4.0 * eps).sqrt();
        let rho = (2.0 + eps - s) / 2.0;
        let r = (srw_green(eps, &[3])? / (rho.powi(3) / s) - 1.0).abs();
        Ok((r <= 1e-10, format!("relative error {r:.2e}")))
    }));
    cases.push(case("reflection principle", || {
        let d = dom(2, 6);
        let y = d.center();
        let col = massive_green_column(d.clone(), 0.2, &y, 1e-14)?;
        let x = vec![1i64, 4];
        let r = reflected_green(0.2, &d, &x, &y, 8)?;
        let err = (r - col[d.vertex_index(&x).unwrap()]).abs();
        Ok((err <= 1e-8, format!("error {err:.2e}")))
    }));
    cases.push(case("K is −1 on gradients", || {
        let d = dom(2, 6);
        let u: Vec<f64> = (0..d.n_vertices())
            .map(|v| if d.is_interior(v) { ((v * 7919) % 13) as f64 - 6.0 } else { 0.0 })
            .collect();
        let g = VectorField::gradient_of(d.clone(), &u)?;
        let kg = KOperator::new(d)?.apply(&g)?;
        let mut sum = kg.clone();
        for (a, b) in sum.values_mut().iter_mut().zip(g.values()) {
            *a += b;
        }
        let r = sum.norm(2.0) / g.norm(2.0);
        Ok((r <= 1e-8, format!("relative residual {r:.2e}")))
    }));
    cases.push(case("Meyers fixed point", || {
        let env = sample(&ConductanceLaw::uniform(0.9), dom(2, 6), 3)?;
        let fp = meyers_fixed_point(&env, &[1.0, 0.0], 2.0, 1e-12)?;
        Ok((fp.iterations < 200, format!("{} sweeps", fp.iterations)))
    }));
    cases.push(case("h closed form against quadrature", || {
        let law = ConductanceLaw::uniform(0.5);
        let a = h_closed_form(1.1, 0.2, &law);
        let (b, _) = h_quadrature(1.1, 0.2, &law, 1e-12);
        let r = (a - b).abs() / a.abs().max(1e-300);
        Ok((r <= 1e-8, format!("relative gap {r:.2e}")))
    }));
    cases.push(case("exhaustive martingale increments", || {
        let table = increments_exact(dom(1, 3), &ConductanceLaw::two_point(0.5, 0.3), &[1.0], 1e-9)?;
        let r = table.telescoping_residual.max(table.martingale_residual);
        Ok((r <= 1e-9, format!("max residual {r:.2e}")))
    }));
    cases.push(case("increment representation", || {
        let rep = increment_representation_check(dom(1, 3), &ConductanceLaw::two_point(0.5, 0.5), &[1.0], 1e-9)?;
        Ok((rep.max_residual <= 1e-9, format!("max residual {:.2e}", rep.max_residual)))
    }));
    cases.push(case("σ² vanishes for constant conductances", || {
        let cfg = SigmaConfig {
            law: ConductanceLaw::constant(1.0),
            dim: 2,
            proxy_side: 4,
            outer: 100,
            inner: 100,
            seed: 1,
        };
        let est = estimate_sigma_sq(&cfg, &[1.0, 0.0])?;
        Ok((est.sigma_sq == 0.0, format!("σ² = {}", est.sigma_sq)))
    }));
    cases.push(case("summary moments of a symmetric sample", || {
        let x: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (m, v, s, k) = moments(&x);
        let ok = (m - 0.5).abs() < 1e-12
            && (v - 1.0 / 12.0).abs() < 1e-4
            && s.unwrap().abs() < 1e-12
            && (k.unwrap() + 1.2).abs() < 1e-4;
        Ok((ok, format!("mean {m}, variance {v}")))
    }));
    let passed = cases.iter().filter(|c| c.passed).count();
    SelftestReport {
        failed: cases.len() - passed,
        passed,
        cases,
    }
}
