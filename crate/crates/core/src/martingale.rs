//! Martingale increments of the effective conductance, the `h` integrals,
//! rank-one perturbation identities and the limiting-variance estimator.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{mix, sample, unit_f64, ConductanceLaw, Environment};
use crate::error::{OhmError, Result};
use crate::green::g_edge_with_factor;
use crate::lattice::{BoxDomain, EdgeKey};
use crate::quadrature::{adaptive, adaptive_with_floor};
use crate::solver::{dot_point, solve_with_factor, BandedCholesky};

fn edge_index(dom: &BoxDomain, e: &EdgeKey) -> Result<usize> {
    dom.edge_index(e)
        .ok_or_else(|| OhmError::Domain(format!("edge {e} is not in 𝔹(Λ)")))
}

/// `Ψ_Λ` component `j` over `Λ ∪ ∂Λ` from a factor.
fn coordinate(env: &Environment, factor: &BandedCholesky, j: usize) -> Vec<f64> {
    let dom = env.domain();
    let n = dom.volume();
    let fixed: Vec<f64> = dom.points().iter().map(|p| p[j] as f64).collect();
    solve_with_factor(env, factor, &fixed, &vec![0.0; n])
}

/// `t·Ψ_Λ` over `Λ ∪ ∂Λ` from a factor.
fn linear_solution(env: &Environment, factor: &BandedCholesky, t: &[f64]) -> Vec<f64> {
    let dom = env.domain();
    let n = dom.volume();
    let fixed: Vec<f64> = dom.points().iter().map(|p| dot_point(t, p)).collect();
    solve_with_factor(env, factor, &fixed, &vec![0.0; n])
}

fn edge_gradient(dom: &BoxDomain, u: &[f64], k: usize) -> f64 {
    let (a, b) = dom.edge_ends(k);
    u[b] - u[a]
}

fn check_t(dom: &BoxDomain, t: &[f64]) -> Result<()> {
    if t.len() != dom.dim() || t.iter().any(|x| !x.is_finite()) {
        return Err(OhmError::Invalid(format!(
            "t must have {} finite components",
            dom.dim()
        )));
    }
    Ok(())
}

/// Residuals of the single-edge perturbation identities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankOneReport {
    pub edge: EdgeKey,
    pub old_value: f64,
    pub new_value: f64,
    pub g_old: f64,
    pub g_new: f64,
    /// `1 − (ω′_b − ω_b) g(ω′)`.
    pub factor: f64,
    /// `(1 + (ω′_b − ω_b) g(ω))⁻¹`.
    pub factor_inverse_form: f64,
    /// `g(ω′) / g(ω)`.
    pub factor_ratio_form: f64,
    /// Full-field identity for `Ψ(ω′) − Ψ(ω)`, relative to its largest entry.
    pub field_residual: f64,
    /// `∇_iΨ(ω′) = factor · ∇_iΨ(ω)` on the edge, relative.
    pub gradient_residual: f64,
    /// Largest relative gap between the factor and its two other forms.
    pub alternative_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl RankOneReport {
    pub fn max_residual(&self) -> f64 {
        self.field_residual
            .max(self.gradient_residual)
            .max(self.alternative_residual)
    }
}

fn rel(diff: f64, scale: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

/// Change the conductance of interior edge `e` to `new_value` and compare
/// the re-solved harmonic coordinate with the rank-one formulas.
pub fn rank_one_check(env: &Environment, e: &EdgeKey, new_value: f64, tol: f64) -> Result<RankOneReport> {
    let dom = env.domain().clone();
    let k = edge_index(&dom, e)?;
    if !dom.edge_is_interior(k) {
        return Err(OhmError::Domain(format!(
            "edge {e} has an endpoint outside the box"
        )));
    }
    let env2 = env.perturb_index(k, new_value)?;
    let f1 = BandedCholesky::new(env, 0.0)?;
    let f2 = BandedCholesky::new(&env2, 0.0)?;
    let d = dom.dim();
    let n = dom.volume();
    let (x, y) = dom.edge_ends(k);
    let psi1: Vec<Vec<f64>> = (0..d).map(|j| coordinate(env, &f1, j)).collect();
    let psi2: Vec<Vec<f64>> = (0..d).map(|j| coordinate(&env2, &f2, j)).collect();
    let column = |v: usize| {
        let mut rhs = vec![0.0; n];
        rhs[v] = 1.0;
        solve_with_factor(&env2, &f2, &vec![0.0; dom.n_vertices()], &rhs)
    };
    let (gx, gy) = (column(x), column(y));
    let eps = new_value - env.get(k);

    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    for j in 0..d {
        let grad = psi1[j][y] - psi1[j][x];
        for z in 0..dom.n_vertices() {
            let lhs = psi2[j][z] - psi1[j][z];
            let rhs = -eps * (gy[z] - gx[z]) * grad;
            scale = scale.max(lhs.abs());
            worst = worst.max((lhs - rhs).abs());
        }
    }
    let field_residual = rel(worst, scale);

    let g_old = g_edge_with_factor(env, &f1, k);
    let g_new = g_edge_with_factor(&env2, &f2, k);
    let factor = 1.0 - eps * g_new;
    let factor_inverse_form = 1.0 / (1.0 + eps * g_old);
    let factor_ratio_form = g_new / g_old;

    let mut gscale = 0.0f64;
    let mut gworst = 0.0f64;
    for j in 0..d {
        let lhs = psi2[j][y] - psi2[j][x];
        let rhs = factor * (psi1[j][y] - psi1[j][x]);
        gscale = gscale.max(lhs.abs()).max(rhs.abs());
        gworst = gworst.max((lhs - rhs).abs());
    }
    let gradient_residual = rel(gworst, gscale);
    let alternative_residual = ((factor - factor_inverse_form).abs())
        .max((factor - factor_ratio_form).abs())
        / factor.abs();

    let mut report = RankOneReport {
        edge: e.clone(),
        old_value: env.get(k),
        new_value,
        g_old,
        g_new,
        factor,
        factor_inverse_form,
        factor_ratio_form,
        field_residual,
        gradient_residual,
        alternative_residual,
        tolerance: tol,
        passed: false,
    };
    report.passed = report.max_residual() <= tol && factor > 0.0;
    Ok(report)
}

/// `h_Λ` on one edge, by two routes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HValue {
    pub edge: EdgeKey,
    pub omega: f64,
    pub g: f64,
    /// Closed form `∫ℙ(dω′)(ω_b − ω′) g(ω′)/g(ω)`.
    pub value: f64,
    /// Double integral with `g` updated along the inner variable.
    pub quadrature: f64,
    pub error_estimate: f64,
}

/// `h` from `ω_b` and `g_Λ(ω)` by the closed form.
pub fn h_closed_form(omega: f64, g: f64, law: &ConductanceLaw) -> f64 {
    law.expect(|w| (omega - w) / (1.0 + (w - omega) * g))
}

/// `h` from `ω_b` and `g_Λ(ω)` by integrating `[1 − (s − ω_b) g(s)]²` over
/// `s` between each atom and `ω_b`, with `g(s) = g / (1 + (s − ω_b) g)`.
pub fn h_quadrature(omega: f64, g: f64, law: &ConductanceLaw, rel_tol: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut error = 0.0;
    for (w, p) in law.atoms() {
        let int = adaptive(w, omega, rel_tol, |s| {
            let gs = g / (1.0 + (s - omega) * g);
            let f = 1.0 - (s - omega) * gs;
            f * f
        });
        value += p * int.value;
        error += p * int.error;
    }
    (value, error)
}

/// `h_Λ(ω, x, i)` for any edge of `𝔹(Λ)`, with the zero-extended `g_Λ`.
pub fn h_edge(env: &Environment, e: &EdgeKey, law: &ConductanceLaw, tol: f64) -> Result<HValue> {
    law.validate()?;
    let dom = env.domain();
    let k = edge_index(dom, e)?;
    let factor = BandedCholesky::new(env, 0.0)?;
    let g = g_edge_with_factor(env, &factor, k);
    let omega = env.get(k);
    let value = h_closed_form(omega, g, law);
    let mut rel_tol = (tol * 1e-2).max(1e-15);
    for attempt in 0..2 {
        let (quadrature, error_estimate) = h_quadrature(omega, g, law, rel_tol);
        if (quadrature - value).abs() <= tol * value.abs().max(1.0) {
            return Ok(HValue {
                edge: e.clone(),
                omega,
                g,
                value,
                quadrature,
                error_estimate,
            });
        }
        if attempt == 1 {
            return Err(OhmError::CheckFailed(format!(
                "h on {e}: quadrature {quadrature} vs closed form {value}"
            )));
        }
        rel_tol = (rel_tol * 1e-2).max(1e-16);
    }
    unreachable!()
}

fn two_point_parts(law: &ConductanceLaw) -> Result<(f64, f64, f64)> {
    match *law {
        ConductanceLaw::TwoPoint { lambda, p } => {
            law.validate()?;
            Ok((lambda, 1.0 / lambda, p))
        }
        _ => Err(OhmError::Invalid(format!(
            "exhaustive enumeration needs a two-point law, got {}",
            law.name()
        ))),
    }
}

/// Largest edge count for exhaustive enumeration.
pub const MAX_ENUMERATED_EDGES: usize = 14;

/// Bit `k` of a configuration index selects the high value on edge `k`.
fn config_env(dom: &Arc<BoxDomain>, law: &ConductanceLaw, lo: f64, hi: f64, c: usize) -> Result<Environment> {
    let values = (0..dom.n_edges())
        .map(|k| if c >> k & 1 == 1 { hi } else { lo })
        .collect();
    Environment::from_values(dom.clone(), values, law.clone())
}

fn energy(env: &Environment, u: &[f64]) -> f64 {
    let dom = env.domain();
    (0..dom.n_edges())
        .map(|k| env.get(k) * edge_gradient(dom, u, k).powi(2))
        .sum()
}

/// Average out the top bit of an array indexed by configurations.
fn reduce_top(arr: &[f64], p: f64) -> Vec<f64> {
    let half = arr.len() / 2;
    (0..half)
        .map(|c| (1.0 - p) * arr[c] + p * arr[c + half])
        .collect()
}

/// Every conditional expectation `E(C^eff | F_k)` of a small box under a
/// two-point law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementTable {
    pub edges: Vec<EdgeKey>,
    pub law: ConductanceLaw,
    pub t: Vec<f64>,
    /// `C^eff` per configuration.
    pub ceff: Vec<f64>,
    pub probability: Vec<f64>,
    pub mean: f64,
    /// `conditional[k][c]` is `E(C^eff | F_k)` on the prefix `c` of length `k`.
    pub conditional: Vec<Vec<f64>>,
    pub telescoping_residual: f64,
    pub martingale_residual: f64,
    /// Increments recomputed by integrating `∂q/∂ω̃_k` over the edge value.
    pub integral_route_residual: f64,
    pub integral_route_checked: Vec<usize>,
}

impl IncrementTable {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// `Z_k` for `k ∈ 1..=N` at a full configuration.
    pub fn increment(&self, k: usize, config: usize) -> f64 {
        let now = config & ((1usize << k) - 1);
        let before = config & ((1usize << (k - 1)) - 1);
        self.conditional[k][now] - self.conditional[k - 1][before]
    }
}

/// Exhaustive martingale decomposition of `C^eff(t)` on a box with at most
/// [`MAX_ENUMERATED_EDGES`] edges.
pub fn increments_exact(dom: Arc<BoxDomain>, law: &ConductanceLaw, t: &[f64], tol: f64) -> Result<IncrementTable> {
    let (lo, hi, p) = two_point_parts(law)?;
    check_t(&dom, t)?;
    let n = dom.n_edges();
    if n > MAX_ENUMERATED_EDGES {
        return Err(OhmError::Refused(format!(
            "{n} edges need 2^{n} configurations, limit is {MAX_ENUMERATED_EDGES} edges"
        )));
    }
    let total = 1usize << n;
    let ceff: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|c| {
            let env = config_env(&dom, law, lo, hi, c)?;
            let f = BandedCholesky::new(&env, 0.0)?;
            Ok(energy(&env, &linear_solution(&env, &f, t)))
        })
        .collect::<Result<_>>()?;
    let probability: Vec<f64> = (0..total)
        .map(|c| {
            let ones = (c as u64).count_ones() as i32;
            p.powi(ones) * (1.0 - p).powi(n as i32 - ones)
        })
        .collect();

    let mut conditional = vec![Vec::new(); n + 1];
    conditional[n] = ceff.clone();
    for k in (0..n).rev() {
        conditional[k] = reduce_top(&conditional[k + 1], p);
    }
    let mean = conditional[0][0];

    let mut table = IncrementTable {
        edges: dom.edges().to_vec(),
        law: law.clone(),
        t: t.to_vec(),
        ceff,
        probability,
        mean,
        conditional,
        telescoping_residual: 0.0,
        martingale_residual: 0.0,
        integral_route_residual: 0.0,
        integral_route_checked: Vec::new(),
    };

    let mut tele = 0.0f64;
    for c in 0..total {
        let sum: f64 = (1..=n).map(|k| table.increment(k, c)).sum();
        tele = tele.max((sum - (table.ceff[c] - mean)).abs());
    }
    let mut mart = 0.0f64;
    for k in 1..=n {
        for prefix in 0..(1usize << (k - 1)) {
            let m = (1.0 - p) * table.increment(k, prefix) + p * table.increment(k, prefix | 1 << (k - 1));
            mart = mart.max(m.abs());
        }
    }
    table.telescoping_residual = tele;
    table.martingale_residual = mart;

    let mut checked: Vec<usize> = vec![1, n.div_ceil(2), n];
    checked.dedup();
    let mut worst = 0.0f64;
    for &k in &checked {
        for prefix in sampled_prefixes(k) {
            let z = integral_route(&dom, law, lo, hi, p, t, k, prefix)?;
            worst = worst.max((z - table.increment(k, prefix)).abs());
        }
    }
    table.integral_route_residual = worst;
    table.integral_route_checked = checked;

    let scale = table.ceff.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    if tele > tol * scale || mart > tol * scale || worst > tol * scale {
        return Err(OhmError::CheckFailed(format!(
            "increment invariants: telescoping {tele:.3e}, martingale {mart:.3e}, integral route {worst:.3e}"
        )));
    }
    Ok(table)
}

fn sampled_prefixes(k: usize) -> Vec<usize> {
    let count = 1usize << k;
    let stride = (count / 4).max(1);
    (0..count).step_by(stride).take(4).collect()
}

/// `Z_k` at `prefix` from the Riemann-integral representation, with a fresh
/// solve at every quadrature node.
#[allow(clippy::too_many_arguments)]
fn integral_route(
    dom: &Arc<BoxDomain>,
    law: &ConductanceLaw,
    lo: f64,
    hi: f64,
    p: f64,
    t: &[f64],
    k: usize,
    prefix: usize,
) -> Result<f64> {
    let n = dom.n_edges();
    let edge = k - 1;
    let omega_k = if prefix >> edge & 1 == 1 { hi } else { lo };
    let head = prefix & ((1usize << edge) - 1);
    let floor = 1e-15 * t.iter().map(|x| x * x).sum::<f64>() * (hi - lo);
    let mut total = 0.0;
    for (wk, pk) in [(lo, 1.0 - p), (hi, p)] {
        if pk == 0.0 || wk == omega_k {
            continue;
        }
        for suffix in 0..(1usize << (n - k)) {
            let ones = (suffix as u64).count_ones() as i32;
            let ps = p.powi(ones) * (1.0 - p).powi((n - k) as i32 - ones);
            if ps == 0.0 {
                continue;
            }
            let base = config_env(dom, law, lo, hi, head | suffix << k)?;
            let mut failure = None;
            let int = adaptive_with_floor(wk, omega_k, 1e-13, floor, |s| {
                let env = match base.perturb_index(edge, s) {
                    Ok(env) => env,
                    Err(e) => {
                        failure = Some(e);
                        return 0.0;
                    }
                };
                match BandedCholesky::new(&env, 0.0) {
                    Ok(f) => edge_gradient(dom, &linear_solution(&env, &f, t), edge).powi(2),
                    Err(e) => {
                        failure = Some(e);
                        0.0
                    }
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            total += pk * ps * int.value;
        }
    }
    Ok(total)
}

/// Per-edge residuals of `Z_k = E(h_Λ |∇_{b_k}(t·Ψ_Λ)|² | F_k)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub tolerance: f64,
}

/// Recompute every increment from `h_Λ` and the edge gradients, with `h_Λ`
/// taken from the enumerated `g_Λ` in its ratio form, and compare with
/// [`increments_exact`].
pub fn increment_representation_check(
    dom: Arc<BoxDomain>,
    law: &ConductanceLaw,
    t: &[f64],
    tol: f64,
) -> Result<RepresentationReport> {
    let table = increments_exact(dom.clone(), law, t, tol)?;
    let (lo, hi, p) = two_point_parts(law)?;
    let n = dom.n_edges();
    let total = 1usize << n;
    // Per configuration: g on every edge and the squared edge gradients.
    let per_config: Vec<(Vec<f64>, Vec<f64>)> = (0..total)
        .into_par_iter()
        .map(|c| {
            let env = config_env(&dom, law, lo, hi, c)?;
            let f = BandedCholesky::new(&env, 0.0)?;
            let u = linear_solution(&env, &f, t);
            let g = (0..n).map(|k| g_edge_with_factor(&env, &f, k)).collect();
            let grad = (0..n).map(|k| edge_gradient(&dom, &u, k).powi(2)).collect();
            Ok((g, grad))
        })
        .collect::<Result<_>>()?;

    let mut residuals = Vec::with_capacity(n);
    for k in 1..=n {
        let edge = k - 1;
        let bit = 1usize << edge;
        let mut arr: Vec<f64> = (0..total)
            .map(|c| {
                let omega = if c & bit != 0 { hi } else { lo };
                let g = per_config[c].0[edge];
                let h: f64 = [(lo, 1.0 - p, c & !bit), (hi, p, c | bit)]
                    .iter()
                    .map(|&(w, pw, c2)| pw * (omega - w) * per_config[c2].0[edge] / g)
                    .sum();
                h * per_config[c].1[edge]
            })
            .collect();
        while arr.len() > 1 << k {
            arr = reduce_top(&arr, p);
        }
        let worst = (0..arr.len())
            .map(|c| (arr[c] - table.increment(k, c)).abs())
            .fold(0.0, f64::max);
        residuals.push(worst);
    }
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    if max_residual > tol {
        return Err(OhmError::CheckFailed(format!(
            "increment representation off by {max_residual:.3e}; per edge {residuals:?}"
        )));
    }
    Ok(RepresentationReport {
        residuals,
        max_residual,
        tolerance: tol,
    })
}

/// Parameters of the limiting-variance estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaConfig {
    pub law: ConductanceLaw,
    pub dim: usize,
    pub proxy_side: usize,
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
}

/// Recorded inner samples: for each direction `i`, outer replica `r` and
/// inner draw `m`, the value of `h_Λ` and the `d`-vector `∇_iΨ_Λ` at the
/// central edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaSamples {
    pub config: SigmaConfig,
    pub h: Vec<Vec<f64>>,
    pub gradient: Vec<Vec<f64>>,
}

/// Monte Carlo estimate of `σ_t²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub t: Vec<f64>,
    /// `E((t, Ẑ(0,i) t)²)` for each direction.
    pub per_direction: Vec<f64>,
    pub per_direction_se: Vec<f64>,
    pub sigma_sq: f64,
    pub standard_error: f64,
    pub outer: usize,
    pub inner: usize,
    pub proxy_side: usize,
}

/// Smallest replica count accepted by the estimator.
pub const MIN_REPLICAS: usize = 100;

/// Draw the samples behind [`SigmaSamples::estimate`].
///
/// Outer replica `r` uses environment seed `mix(seed, r)`. Inner draw `m`
/// resamples every edge after the central edge in the stationary order from
/// `mix(mix(seed, r), m)`, shared between directions.
pub fn sample_sigma(config: &SigmaConfig) -> Result<SigmaSamples> {
    config.law.validate()?;
    let l = config.proxy_side;
    if l < 2 || !l.is_multiple_of(2) {
        return Err(OhmError::Invalid(format!("proxy side must be even and at least 2, got {l}")));
    }
    if config.outer < MIN_REPLICAS || config.inner < MIN_REPLICAS {
        return Err(OhmError::Invalid(format!(
            "replica counts must be at least {MIN_REPLICAS}, got {} and {}",
            config.outer, config.inner
        )));
    }
    let d = config.dim;
    let dom = Arc::new(BoxDomain::new(d, l)?);
    let center = dom.center();
    let mut h = Vec::with_capacity(d);
    let mut gradient = Vec::with_capacity(d);
    for i in 0..d {
        let kb = edge_index(&dom, &EdgeKey::new(center.clone(), i))?;
        let first = (kb + 1..dom.n_edges())
            .flat_map(|k| {
                let (a, b) = dom.edge_ends(k);
                [a, b]
            })
            .filter(|&v| dom.is_interior(v))
            .min()
            .unwrap_or(dom.volume());
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..config.outer)
            .into_par_iter()
            .map(|r| {
                let outer_seed = mix(config.seed, r as u64);
                let mut env = sample(&config.law, dom.clone(), outer_seed)?;
                let mut factor = BandedCholesky::new(&env, 0.0)?;
                let mut hs = Vec::with_capacity(config.inner);
                let mut grads = Vec::with_capacity(config.inner * d);
                for m in 0..config.inner {
                    let inner_seed = mix(outer_seed, m as u64);
                    for k in kb + 1..dom.n_edges() {
                        env.set_unchecked(k, config.law.draw(unit_f64(mix(inner_seed, k as u64))));
                    }
                    factor.refactor_from(&env, first)?;
                    let g = g_edge_with_factor(&env, &factor, kb);
                    hs.push(h_closed_form(env.get(kb), g, &config.law));
                    for j in 0..d {
                        let u = coordinate(&env, &factor, j);
                        grads.push(edge_gradient(&dom, &u, kb));
                    }
                }
                Ok((hs, grads))
            })
            .collect::<Result<_>>()?;
        let (hi, gi): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        h.push(hi.concat());
        gradient.push(gi.concat());
    }
    Ok(SigmaSamples {
        config: config.clone(),
        h,
        gradient,
    })
}

impl SigmaSamples {
    /// `σ_t² = Σ_i E((t, Ẑ(0,i) t)²)` from the recorded samples. The inner
    /// mean is squared with the unbiased correction `mean² − s²/M_inner`.
    pub fn estimate(&self, t: &[f64]) -> Result<SigmaEstimate> {
        let d = self.config.dim;
        if t.len() != d || t.iter().any(|x| !x.is_finite()) {
            return Err(OhmError::Invalid(format!("t must have {d} finite components")));
        }
        let (outer, inner) = (self.config.outer, self.config.inner);
        let mut per_replica = vec![0.0; outer];
        let mut per_direction = Vec::with_capacity(d);
        let mut per_direction_se = Vec::with_capacity(d);
        for i in 0..d {
            let ys: Vec<f64> = (0..outer)
                .map(|r| {
                    let xs: Vec<f64> = (0..inner)
                        .map(|m| {
                            let s = r * inner + m;
                            let grad = &self.gradient[i][s * d..(s + 1) * d];
                            let tg: f64 = t.iter().zip(grad).map(|(a, b)| a * b).sum();
                            self.h[i][s] * tg * tg
                        })
                        .collect();
                    let (mean, var) = mean_var(&xs);
                    mean * mean - var / inner as f64
                })
                .collect();
            for (acc, y) in per_replica.iter_mut().zip(&ys) {
                *acc += y;
            }
            let (mean, var) = mean_var(&ys);
            per_direction.push(mean);
            per_direction_se.push((var / outer as f64).sqrt());
        }
        let (mean, var) = mean_var(&per_replica);
        Ok(SigmaEstimate {
            t: t.to_vec(),
            per_direction,
            per_direction_se,
            sigma_sq: mean.max(0.0),
            standard_error: (var / outer as f64).sqrt(),
            outer,
            inner,
            proxy_side: self.config.proxy_side,
        })
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Sample and evaluate in one step.
pub fn estimate_sigma_sq(config: &SigmaConfig, t: &[f64]) -> Result<SigmaEstimate> {
    sample_sigma(config)?.estimate(t)
}
