//! The singular operator `𝒦_Λ = ∇(−Δ)⁻¹_Λ ∇*`, estimates of its `ℓᵖ` norm
//! and the fixed-point form of the corrector equation.
//!
//! Vector fields live on the edges of `𝔹(Λ)`: the component `i` at `x` is the
//! value on the edge `⟨x, x + e_i⟩`, for every `x ∈ Λ ∪ ∂Λ` whose edge touches
//! `Λ`. All other values are zero. On this space `−𝒦_Λ` is the orthogonal
//! projection onto gradients of functions vanishing on `∂Λ`.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{mix, Environment};
use crate::error::{OhmError, Result};
use crate::lattice::{BoxDomain, EdgeKey};
use crate::solver::{solve_scalar, BandedCholesky, LatticeField};

/// A `d`-vector field on `Λ`, stored per edge of `𝔹(Λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    domain: Arc<BoxDomain>,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(domain: Arc<BoxDomain>) -> Self {
        let n = domain.n_edges();
        VectorField {
            domain,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(domain: Arc<BoxDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.n_edges() {
            return Err(OhmError::Invalid(format!(
                "expected {} edge values, got {}",
                domain.n_edges(),
                values.len()
            )));
        }
        Ok(VectorField { domain, values })
    }

    /// `g(x) = t` at every `x`.
    pub fn constant(domain: Arc<BoxDomain>, t: &[f64]) -> Result<Self> {
        check_t(&domain, t)?;
        let values = domain.edges().iter().map(|e| t[e.axis]).collect();
        Ok(VectorField { domain, values })
    }

    /// `g_i(x) = t_i a_{x,x+e_i}`, the source whose potential is the corrector
    /// in direction `t`.
    pub fn conductance_source(env: &Environment, t: &[f64]) -> Result<Self> {
        let domain = env.domain().clone();
        check_t(&domain, t)?;
        let values = domain
            .edges()
            .iter()
            .zip(env.conductances())
            .map(|(e, a)| t[e.axis] * a)
            .collect();
        Ok(VectorField { domain, values })
    }

    /// `∇u` of a vertex vector over `Λ ∪ ∂Λ`.
    pub fn gradient_of(domain: Arc<BoxDomain>, u: &[f64]) -> Result<Self> {
        if u.len() != domain.n_vertices() {
            return Err(OhmError::Invalid(format!(
                "expected {} vertex values, got {}",
                domain.n_vertices(),
                u.len()
            )));
        }
        let values = (0..domain.n_edges())
            .map(|k| {
                let (a, b) = domain.edge_ends(k);
                u[b] - u[a]
            })
            .collect();
        Ok(VectorField { domain, values })
    }

    /// `∇f` of a scalar lattice field.
    pub fn gradient(f: &LatticeField) -> Result<Self> {
        if f.arity() != 1 {
            return Err(OhmError::Invalid("gradient needs a scalar field".into()));
        }
        Self::gradient_of(f.domain().clone(), f.values())
    }

    pub fn domain(&self) -> &Arc<BoxDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Component `i` at `x`, zero off `𝔹(Λ)`.
    pub fn at(&self, x: &[i64], i: usize) -> f64 {
        match self.domain.edge_index(&EdgeKey::new(x.to_vec(), i)) {
            Some(k) => self.values[k],
            None => 0.0,
        }
    }

    /// `∇*·g` on `Λ`, with `∇*_i g(x) = g_i(x) − g_i(x − e_i)`.
    pub fn divergence(&self) -> Vec<f64> {
        let dom = &self.domain;
        (0..dom.volume())
            .map(|v| {
                dom.neighbors(v)
                    .iter()
                    .map(|&(_, e)| {
                        if dom.edge_ends(e).0 == v {
                            self.values[e]
                        } else {
                            -self.values[e]
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Entrywise `ℓᵖ` norm over edges; `p = ∞` gives the maximum.
    pub fn norm(&self, p: f64) -> f64 {
        lp_norm(&self.values, p)
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn distance(&self, other: &VectorField, p: f64) -> f64 {
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        lp_norm(&diff, p)
    }
}

fn check_t(domain: &BoxDomain, t: &[f64]) -> Result<()> {
    if t.len() != domain.dim() {
        return Err(OhmError::Invalid(format!(
            "t has {} components, box has dimension {}",
            t.len(),
            domain.dim()
        )));
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(OhmError::Invalid("t must be finite".into()));
    }
    Ok(())
}

fn lp_norm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else if p == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(OhmError::Range {
            what: "p",
            value: p,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    Ok(())
}

fn gradient_interior(dom: &Arc<BoxDomain>, u: &[f64]) -> VectorField {
    let n = dom.volume();
    let at = |v: usize| if v < n { u[v] } else { 0.0 };
    let values = (0..dom.n_edges())
        .map(|k| {
            let (a, b) = dom.edge_ends(k);
            at(b) - at(a)
        })
        .collect();
    VectorField {
        domain: dom.clone(),
        values,
    }
}

/// `𝒦_Λ g` by an iterative Poisson solve at relative tolerance `tol`.
pub fn apply_k(g: &VectorField, tol: f64) -> Result<VectorField> {
    let dom = g.domain().clone();
    let lap = Environment::homogeneous(dom.clone(), 1.0);
    let fixed = vec![0.0; dom.n_vertices()];
    let (u, _) = solve_scalar(&lap, 0.0, &fixed, &g.divergence(), tol)?;
    Ok(gradient_interior(&dom, &u))
}

/// `𝒦_Λ` with the Dirichlet Laplacian factored once.
#[derive(Debug, Clone)]
pub struct KOperator {
    domain: Arc<BoxDomain>,
    factor: BandedCholesky,
}

impl KOperator {
    pub fn new(domain: Arc<BoxDomain>) -> Result<Self> {
        let lap = Environment::homogeneous(domain.clone(), 1.0);
        let factor = BandedCholesky::new(&lap, 0.0)?;
        Ok(KOperator { domain, factor })
    }

    pub fn domain(&self) -> &Arc<BoxDomain> {
        &self.domain
    }

    pub fn apply(&self, g: &VectorField) -> Result<VectorField> {
        if **g.domain() != *self.domain {
            return Err(OhmError::Domain("field and operator live on different boxes".into()));
        }
        Ok(self.apply_raw(&g.divergence()))
    }

    fn apply_raw(&self, div: &[f64]) -> VectorField {
        gradient_interior(&self.domain, &self.factor.solve(div))
    }

    fn apply_values(&self, v: &[f64]) -> Vec<f64> {
        let g = VectorField {
            domain: self.domain.clone(),
            values: v.to_vec(),
        };
        self.apply_raw(&g.divergence()).values
    }
}

/// Options for the `ℓᵖ` norm search.
#[derive(Debug, Clone, Copy)]
pub struct NormSearch {
    pub max_iterations: usize,
    /// Start from (and so stay in) the range of `𝒦`, i.e. gradient fields.
    pub gradients_only: bool,
}

impl Default for NormSearch {
    fn default() -> Self {
        NormSearch {
            max_iterations: 200,
            gradients_only: false,
        }
    }
}

/// Lower bound on `‖𝒦_Λ‖_p` from several power-iteration runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormEstimate {
    pub side: usize,
    pub p: f64,
    pub estimate: f64,
    pub trials: usize,
    pub per_trial: Vec<f64>,
}

/// Estimate `‖𝒦_Λ‖_p` from below by nonlinear power iteration.
pub fn estimate_norm(domain: Arc<BoxDomain>, p: f64, trials: usize, seed: u64) -> Result<NormEstimate> {
    estimate_norm_with(domain, p, trials, seed, NormSearch::default())
}

pub fn estimate_norm_with(
    domain: Arc<BoxDomain>,
    p: f64,
    trials: usize,
    seed: u64,
    search: NormSearch,
) -> Result<NormEstimate> {
    check_p(p)?;
    if trials == 0 {
        return Err(OhmError::Invalid("need at least one trial".into()));
    }
    let op = KOperator::new(domain.clone())?;
    let per_trial: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|r| power_iteration(&op, p, mix(seed, r as u64), search))
        .collect();
    let estimate = per_trial.iter().cloned().fold(0.0, f64::max);
    Ok(NormEstimate {
        side: domain.side(),
        p,
        estimate,
        trials,
        per_trial,
    })
}

fn dual_map(v: &[f64], r: f64) -> Vec<f64> {
    v.iter().map(|x| x.signum() * x.abs().powf(r - 1.0)).collect()
}

fn normalize(v: &mut [f64], p: f64) -> bool {
    let n = lp_norm(v, p);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn power_iteration(op: &KOperator, p: f64, seed: u64, search: NormSearch) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.domain.n_edges();
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    if search.gradients_only {
        x = op.apply_values(&x);
    }
    if !normalize(&mut x, p) {
        return 0.0;
    }
    let q = p / (p - 1.0);
    let mut best = 0.0f64;
    for _ in 0..search.max_iterations {
        let y = op.apply_values(&x);
        let ratio = lp_norm(&y, p);
        let gain = ratio - best;
        best = best.max(ratio);
        if ratio == 0.0 {
            break;
        }
        // 𝒦 is symmetric on edge fields, so it is its own transpose.
        let z = op.apply_values(&dual_map(&y, p));
        let mut next = dual_map(&z, q);
        if !normalize(&mut next, p) {
            break;
        }
        x = next;
        if gain.abs() <= 1e-13 * best {
            break;
        }
    }
    best
}

/// One row of a norm sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormSweepRow {
    #[serde(rename = "L")]
    pub side: usize,
    pub p: f64,
    pub estimate: f64,
    pub trials: usize,
}

pub fn norm_sweep(dim: usize, sides: &[usize], p: f64, trials: usize, seed: u64) -> Result<Vec<NormSweepRow>> {
    sides
        .iter()
        .map(|&l| {
            let dom = Arc::new(BoxDomain::new(dim, l)?);
            let est = estimate_norm(dom, p, trials, seed)?;
            Ok(NormSweepRow {
                side: l,
                p,
                estimate: est.estimate,
                trials,
            })
        })
        .collect()
}

pub fn write_norm_sweep_csv(rows: &[NormSweepRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "L,p,estimate,trials")?;
    for r in rows {
        writeln!(w, "{},{},{:.12e},{}", r.side, r.p, r.estimate, r.trials)?;
    }
    Ok(())
}

/// `‖𝒦‖_p`, `‖A − id‖_∞` and their product for one environment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Contraction {
    pub p: f64,
    pub k_norm: f64,
    pub deviation: f64,
    pub product: f64,
}

/// `‖𝒦‖₂ = 1` exactly; other exponents use the power-iteration estimate.
pub fn contraction(env: &Environment, p: f64) -> Result<Contraction> {
    check_p(p)?;
    let k_norm = if p == 2.0 {
        1.0
    } else {
        estimate_norm(env.domain().clone(), p, 4, 0)?.estimate
    };
    let deviation = env.max_deviation_from_one();
    Ok(Contraction {
        p,
        k_norm,
        deviation,
        product: k_norm * deviation,
    })
}

/// Result of the fixed-point iteration for `∇χ_Λ`.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub gradient: VectorField,
    pub contraction: Contraction,
    pub iterations: usize,
    /// `ℓ²` norm of `∇f_{n+1} − ∇f_n` for each sweep.
    pub changes: Vec<f64>,
}

impl FixedPoint {
    /// Successive ratios of the changes.
    pub fn ratios(&self) -> Vec<f64> {
        self.changes
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

const MAX_SWEEPS: usize = 10_000;

/// Iterate `∇f ← 𝒦[g + (A − id)∇f]` from zero with `g_i(x) = t_i a_{x,x+e_i}`.
/// The limit is the gradient of the corrector `t·Ψ_Λ − t·x`.
pub fn meyers_fixed_point(env: &Environment, t: &[f64], p: f64, tol: f64) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(OhmError::Range {
            what: "tol",
            value: tol,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let c = contraction(env, p)?;
    if c.product >= 1.0 {
        return Err(OhmError::Refused(format!(
            "contraction product ‖𝒦‖_{p} ‖A − id‖_∞ = {:.4} × {:.4} = {:.4} is not below 1",
            c.k_norm, c.deviation, c.product
        )));
    }
    let dom = env.domain().clone();
    let op = KOperator::new(dom.clone())?;
    let g = VectorField::conductance_source(env, t)?;
    let dev: Vec<f64> = env.conductances().iter().map(|a| a - 1.0).collect();
    let mut f = VectorField::zeros(dom.clone());
    let mut changes = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let mut rhs = g.clone();
        for ((r, d), x) in rhs.values.iter_mut().zip(&dev).zip(&f.values) {
            *r += d * x;
        }
        let next = op.apply(&rhs)?;
        let change = next.distance(&f, 2.0);
        changes.push(change);
        f = next;
        if change < tol {
            return Ok(FixedPoint {
                gradient: f,
                contraction: c,
                iterations: sweep,
                changes,
            });
        }
    }
    Err(OhmError::CheckFailed(format!(
        "fixed point did not settle in {MAX_SWEEPS} sweeps, last change {:.3e}",
        changes.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Level-set counts of `𝒦δ_e` for a unit input on one edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakTypeProfile {
    pub side: usize,
    pub alphas: Vec<f64>,
    pub counts: Vec<usize>,
    /// `max_α α·|{|𝒦δ_e| > α}| / ‖δ_e‖₁`.
    pub constant: f64,
}

/// Level sets of `𝒦` applied to the unit field on the central edge in
/// direction `axis`.
pub fn weak_type_profile(domain: Arc<BoxDomain>, axis: usize, alphas: &[f64]) -> Result<WeakTypeProfile> {
    if axis >= domain.dim() {
        return Err(OhmError::Invalid(format!("axis {axis} out of range")));
    }
    let op = KOperator::new(domain.clone())?;
    let k = domain
        .edge_index(&EdgeKey::new(domain.center(), axis))
        .ok_or_else(|| OhmError::Domain("central edge missing".into()))?;
    let mut delta = VectorField::zeros(domain.clone());
    delta.values[k] = 1.0;
    let image = op.apply(&delta)?;
    let counts: Vec<usize> = alphas
        .iter()
        .map(|&a| image.values.iter().filter(|v| v.abs() > a).count())
        .collect();
    let constant = alphas
        .iter()
        .zip(&counts)
        .map(|(a, &c)| a * c as f64)
        .fold(0.0, f64::max);
    Ok(WeakTypeProfile {
        side: domain.side(),
        alphas: alphas.to_vec(),
        counts,
        constant,
    })
}
