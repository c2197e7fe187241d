//! The random Laplacian, Dirichlet solves, harmonic coordinates and
//! effective conductance.

mod banded;
pub(crate) mod cg;

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{OhmError, Result};
use crate::lattice::{BoxDomain, EdgeKey, Point};

pub use banded::BandedCholesky;
pub(crate) use cg::InteriorSystem;

/// Default relative-residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Outcome of one linear solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub tolerance: f64,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, relative residual {:.3e} (tolerance {:.1e})",
            self.iterations, self.relative_residual, self.tolerance
        )
    }
}

impl SolveReport {
    fn worst(reports: &[SolveReport]) -> SolveReport {
        reports
            .iter()
            .copied()
            .fold(None::<SolveReport>, |acc, r| match acc {
                None => Some(r),
                Some(a) => Some(SolveReport {
                    iterations: a.iterations.max(r.iterations),
                    relative_residual: a.relative_residual.max(r.relative_residual),
                    tolerance: a.tolerance.max(r.tolerance),
                }),
            })
            .unwrap_or(SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                tolerance: 0.0,
            })
    }
}

/// A scalar or vector function on `Λ ∪ ∂Λ`, stored vertex-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    domain: Arc<BoxDomain>,
    arity: usize,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn zeros(domain: Arc<BoxDomain>, arity: usize) -> Self {
        let n = domain.n_vertices() * arity;
        LatticeField {
            domain,
            arity,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(domain: Arc<BoxDomain>, arity: usize, values: Vec<f64>) -> Result<Self> {
        if arity == 0 || values.len() != domain.n_vertices() * arity {
            return Err(OhmError::Invalid(format!(
                "field needs {} values of arity {arity}, got {}",
                domain.n_vertices() * arity,
                values.len()
            )));
        }
        Ok(LatticeField {
            domain,
            arity,
            values,
        })
    }

    /// Scalar field `x ↦ f(x)`.
    pub fn scalar_from_fn(domain: Arc<BoxDomain>, mut f: impl FnMut(&[i64]) -> f64) -> Self {
        let values = domain.points().iter().map(|p| f(p)).collect();
        LatticeField {
            domain,
            arity: 1,
            values,
        }
    }

    /// The linear function `x ↦ t·x`.
    pub fn linear(domain: Arc<BoxDomain>, t: &[f64]) -> Result<Self> {
        check_t(&domain, t)?;
        Ok(Self::scalar_from_fn(domain, |p| dot_point(t, p)))
    }

    /// The identity `x ↦ x` as a vector field.
    pub fn coordinates(domain: Arc<BoxDomain>) -> Self {
        let d = domain.dim();
        let values = domain
            .points()
            .iter()
            .flat_map(|p| p.iter().map(|&c| c as f64))
            .collect();
        LatticeField {
            domain,
            arity: d,
            values,
        }
    }

    /// Scalar indicator of vertex `v`.
    pub fn delta(domain: Arc<BoxDomain>, v: usize) -> Self {
        let mut f = Self::zeros(domain, 1);
        f.values[v] = 1.0;
        f
    }

    pub fn domain(&self) -> &Arc<BoxDomain> {
        &self.domain
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Value at vertex index `v`.
    pub fn at(&self, v: usize) -> &[f64] {
        &self.values[v * self.arity..(v + 1) * self.arity]
    }

    pub fn at_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.values[v * self.arity..(v + 1) * self.arity]
    }

    /// Value at point `p`, if `p ∈ Λ ∪ ∂Λ`.
    pub fn at_point(&self, p: &[i64]) -> Option<&[f64]> {
        self.domain.vertex_index(p).map(|v| self.at(v))
    }

    /// Component `j` as a scalar field.
    pub fn component(&self, j: usize) -> LatticeField {
        let values = self.values.iter().skip(j).step_by(self.arity).copied().collect();
        LatticeField {
            domain: self.domain.clone(),
            arity: 1,
            values,
        }
    }

    /// `Σ_j t_j f_j` for a vector field.
    pub fn contract(&self, t: &[f64]) -> Result<LatticeField> {
        if t.len() != self.arity {
            return Err(OhmError::Invalid(format!(
                "contraction vector has length {}, field arity is {}",
                t.len(),
                self.arity
            )));
        }
        let values = self
            .values
            .chunks(self.arity)
            .map(|c| c.iter().zip(t).map(|(a, b)| a * b).sum())
            .collect();
        Ok(LatticeField {
            domain: self.domain.clone(),
            arity: 1,
            values,
        })
    }

    /// `f(head) − f(tail)` on edge `k`, one entry per component.
    pub fn edge_difference(&self, k: usize) -> Vec<f64> {
        let (a, b) = self.domain.edge_ends(k);
        self.at(b).iter().zip(self.at(a)).map(|(y, x)| y - x).collect()
    }

    /// `|f(head) − f(tail)|²` on edge `k`.
    pub fn edge_difference_sq(&self, k: usize) -> f64 {
        let (a, b) = self.domain.edge_ends(k);
        self.at(b)
            .iter()
            .zip(self.at(a))
            .map(|(y, x)| (y - x) * (y - x))
            .sum()
    }

    /// `∇_i f(x) = f(x + e_i) − f(x)`, zero outside `Λ ∪ ∂Λ`.
    pub fn gradient(&self, x: &[i64], axis: usize) -> Vec<f64> {
        let mut y = x.to_vec();
        y[axis] += 1;
        let fx = self.at_point(x);
        let fy = self.at_point(&y);
        (0..self.arity)
            .map(|j| fy.map_or(0.0, |v| v[j]) - fx.map_or(0.0, |v| v[j]))
            .collect()
    }

    /// `∇*_i f(x) = f(x) − f(x − e_i)`, zero outside `Λ ∪ ∂Λ`.
    pub fn adjoint_gradient(&self, x: &[i64], axis: usize) -> Vec<f64> {
        let mut y = x.to_vec();
        y[axis] -= 1;
        let fx = self.at_point(x);
        let fy = self.at_point(&y);
        (0..self.arity)
            .map(|j| fx.map_or(0.0, |v| v[j]) - fy.map_or(0.0, |v| v[j]))
            .collect()
    }

    /// Write `x1,...,xd,value...` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let d = self.domain.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        if self.arity == 1 {
            header.push("value".into());
        } else {
            header.extend((1..=self.arity).map(|j| format!("value{j}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for (v, p) in self.domain.points().iter().enumerate() {
            let coords: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            let vals: Vec<String> = self.at(v).iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{},{}", coords.join(","), vals.join(","))?;
        }
        Ok(())
    }
}

/// The finite-volume harmonic coordinate `Ψ_Λ` with its solve reports.
#[derive(Debug, Clone)]
pub struct HarmonicCoordinate {
    pub psi: LatticeField,
    pub reports: Vec<SolveReport>,
}

impl HarmonicCoordinate {
    /// `χ_Λ(x) = Ψ_Λ(x) − x`.
    pub fn corrector(&self) -> LatticeField {
        let mut chi = self.psi.clone();
        let x = LatticeField::coordinates(self.psi.domain.clone());
        for (c, xi) in chi.values.iter_mut().zip(x.values) {
            *c -= xi;
        }
        chi
    }

    /// Worst report across the `d` solves.
    pub fn report(&self) -> SolveReport {
        SolveReport::worst(&self.reports)
    }
}

fn check_t(domain: &BoxDomain, t: &[f64]) -> Result<()> {
    if t.len() != domain.dim() {
        return Err(OhmError::Invalid(format!(
            "t has {} components, dimension is {}",
            t.len(),
            domain.dim()
        )));
    }
    if t.iter().any(|x| !x.is_finite()) {
        return Err(OhmError::Invalid("t must be finite".into()));
    }
    Ok(())
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(OhmError::Range {
            what: "tol",
            value: tol,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

fn check_same_box(env: &Environment, f: &LatticeField) -> Result<()> {
    let (a, b) = (env.domain(), f.domain());
    if a.dim() != b.dim() || a.side() != b.side() {
        return Err(OhmError::Domain(format!(
            "field lives on a d={} L={} box, environment on d={} L={}",
            b.dim(),
            b.side(),
            a.dim(),
            a.side()
        )));
    }
    Ok(())
}

pub(crate) fn dot_point(t: &[f64], p: &[i64]) -> f64 {
    t.iter().zip(p).map(|(a, &b)| a * b as f64).sum()
}

/// `(ℒ_ω f)(v) = Σ_{y~v} a_vy (f(y) − f(v))` at interior vertex index `v`.
pub fn apply_operator_at(env: &Environment, f: &LatticeField, v: usize) -> Vec<f64> {
    let dom = env.domain();
    let fv = f.at(v);
    let mut out = vec![0.0; f.arity()];
    for &(w, e) in dom.neighbors(v) {
        let a = env.get(e);
        for (o, (fw, fv)) in out.iter_mut().zip(f.at(w).iter().zip(fv)) {
            *o += a * (fw - fv);
        }
    }
    out
}

/// `(ℒ_ω f)(x)` for `x ∈ Λ`.
pub fn apply_operator(env: &Environment, f: &LatticeField, x: &[i64]) -> Result<Vec<f64>> {
    check_same_box(env, f)?;
    let dom = env.domain();
    match dom.vertex_index(x) {
        Some(v) if dom.is_interior(v) => Ok(apply_operator_at(env, f, v)),
        _ => Err(OhmError::Domain(format!("{x:?} is not in the box"))),
    }
}

/// `max_{x∈Λ} |ℒ_ω f(x)|` over all components.
pub fn max_residual(env: &Environment, f: &LatticeField) -> f64 {
    (0..env.domain().volume())
        .flat_map(|v| apply_operator_at(env, f, v))
        .fold(0.0, |m, r| m.max(r.abs()))
}

/// Solve `−ℒ_ω f = rhs` in `Λ` with `f = boundary` on `∂Λ`.
///
/// Both fields must have the same arity; each component is an independent
/// scalar solve and the returned report is the worst of them.
pub fn solve_dirichlet(
    env: &Environment,
    boundary: &LatticeField,
    rhs: &LatticeField,
    tol: f64,
) -> Result<(LatticeField, SolveReport)> {
    check_tol(tol)?;
    check_same_box(env, boundary)?;
    check_same_box(env, rhs)?;
    if boundary.arity() != rhs.arity() {
        return Err(OhmError::Invalid("boundary and rhs arities differ".into()));
    }
    let arity = boundary.arity();
    let n = env.domain().volume();
    let system = InteriorSystem {
        env,
        mass: 0.0,
        free: None,
    };
    let mut out = LatticeField::zeros(env.domain().clone(), arity);
    let mut reports = Vec::with_capacity(arity);
    for j in 0..arity {
        let fixed = boundary.component(j);
        let r: Vec<f64> = rhs.component(j).values[..n].to_vec();
        let (sol, rep) = system.solve(fixed.values(), &r, tol, None)?;
        for (v, x) in sol.into_iter().enumerate() {
            out.at_mut(v)[j] = x;
        }
        reports.push(rep);
    }
    Ok((out, SolveReport::worst(&reports)))
}

/// Scalar Dirichlet solve with mass term, on raw vectors. `fixed` covers all
/// of `Λ ∪ ∂Λ` (only `∂Λ` entries are read), `rhs` covers `Λ`.
pub(crate) fn solve_scalar(
    env: &Environment,
    mass: f64,
    fixed: &[f64],
    rhs: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, SolveReport)> {
    check_tol(tol)?;
    InteriorSystem {
        env,
        mass,
        free: None,
    }
    .solve(fixed, rhs, tol, None)
}

/// Interior right-hand side `rhs + Σ_{boundary nbrs} a_e f(w)` for a direct
/// solve, given boundary values on all of `Λ ∪ ∂Λ`.
pub fn eliminate_boundary(env: &Environment, fixed: &[f64], rhs: &[f64]) -> Vec<f64> {
    let dom = env.domain();
    (0..dom.volume())
        .map(|v| {
            let mut b = rhs[v];
            for &(w, e) in dom.neighbors(v) {
                if !dom.is_interior(w) {
                    b += env.get(e) * fixed[w];
                }
            }
            b
        })
        .collect()
}

/// Solve with a precomputed factor; returns the full vertex vector.
pub fn solve_with_factor(
    env: &Environment,
    factor: &BandedCholesky,
    fixed: &[f64],
    rhs: &[f64],
) -> Vec<f64> {
    let n = env.domain().volume();
    let b = eliminate_boundary(env, fixed, rhs);
    let u = factor.solve(&b);
    let mut full = fixed.to_vec();
    full[..n].copy_from_slice(&u);
    full
}

/// `Ψ_Λ` by `d` scalar solves with boundary data `x_j`.
pub fn harmonic_coordinate(env: &Environment, tol: f64) -> Result<HarmonicCoordinate> {
    check_tol(tol)?;
    let dom = env.domain().clone();
    let d = dom.dim();
    let n = dom.volume();
    let rhs = vec![0.0; n];
    let system = InteriorSystem {
        env,
        mass: 0.0,
        free: None,
    };
    let coords = LatticeField::coordinates(dom.clone());
    let mut psi = LatticeField::zeros(dom, d);
    let mut reports = Vec::with_capacity(d);
    for j in 0..d {
        let fixed = coords.component(j);
        // The coordinate itself is an excellent starting guess.
        let (sol, rep) = system.solve(fixed.values(), &rhs, tol, Some(fixed.values()))?;
        for (v, x) in sol.into_iter().enumerate() {
            psi.at_mut(v)[j] = x;
        }
        reports.push(rep);
    }
    Ok(HarmonicCoordinate { psi, reports })
}

/// `t·Ψ_Λ`: the minimizer of `Q_Λ` under boundary data `t·x`.
pub fn linear_response(env: &Environment, t: &[f64], tol: f64) -> Result<(LatticeField, SolveReport)> {
    check_tol(tol)?;
    let dom = env.domain().clone();
    check_t(&dom, t)?;
    let fixed = LatticeField::linear(dom.clone(), t)?;
    let rhs = vec![0.0; dom.volume()];
    let (sol, rep) = InteriorSystem {
        env,
        mass: 0.0,
        free: None,
    }
    .solve(fixed.values(), &rhs, tol, Some(fixed.values()))?;
    Ok((LatticeField::from_values(dom, 1, sol)?, rep))
}

/// `Q_Λ(f) = Σ_{b∈𝔹(Λ)} a_b |∇f(b)|²`, accumulated in edge order.
pub fn dirichlet_energy(env: &Environment, f: &LatticeField) -> f64 {
    (0..env.domain().n_edges())
        .map(|k| env.get(k) * f.edge_difference_sq(k))
        .sum()
}

/// `C^eff_L(t) = Q_Λ(t·Ψ_Λ)`.
pub fn effective_conductance(env: &Environment, t: &[f64], tol: f64) -> Result<f64> {
    if t.iter().all(|&x| x == 0.0) {
        check_t(env.domain(), t)?;
        return Ok(0.0);
    }
    let (u, _) = linear_response(env, t, tol)?;
    Ok(dirichlet_energy(env, &u))
}

/// `C^eff_L(t)` through a banded Cholesky factor instead of CG.
pub fn effective_conductance_direct(env: &Environment, t: &[f64]) -> Result<f64> {
    let dom = env.domain();
    check_t(dom, t)?;
    let factor = BandedCholesky::new(env, 0.0)?;
    let fixed: Vec<f64> = dom.points().iter().map(|p| dot_point(t, p)).collect();
    let u = solve_with_factor(env, &factor, &fixed, &vec![0.0; dom.volume()]);
    Ok((0..dom.n_edges())
        .map(|k| {
            let (a, b) = dom.edge_ends(k);
            let g = u[b] - u[a];
            env.get(k) * g * g
        })
        .sum())
}

/// `∂C^eff/∂a_e = [∇(t·Ψ_Λ)(e)]²`.
pub fn energy_derivative(env: &Environment, t: &[f64], e: &EdgeKey, tol: f64) -> Result<f64> {
    let k = env
        .domain()
        .edge_index(e)
        .ok_or_else(|| OhmError::Domain(format!("edge {e} is not in the box")))?;
    let (u, _) = linear_response(env, t, tol)?;
    Ok(u.edge_difference_sq(k))
}

/// `(|Λ|⁻¹ Σ_{b∈𝔹(Λ)} |∇f(b)|^p)^{1/p}`.
pub fn gradient_norm(f: &LatticeField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(OhmError::Range {
            what: "p",
            value: p,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    let dom = f.domain();
    let s: f64 = (0..dom.n_edges())
        .map(|k| f.edge_difference_sq(k).sqrt().powf(p))
        .sum();
    Ok((s / dom.volume() as f64).powf(1.0 / p))
}

/// Series-resistor value `t²(L+1)²(Σ 1/a_e)⁻¹` of a one-dimensional box.
pub fn series_conductance(env: &Environment, t: f64) -> Result<f64> {
    let dom = env.domain();
    if dom.dim() != 1 {
        return Err(OhmError::Domain("series formula needs d = 1".into()));
    }
    let r: f64 = env.conductances().iter().map(|a| 1.0 / a).sum();
    let l1 = (dom.side() + 1) as f64;
    Ok(t * t * l1 * l1 / r)
}

/// Point helper: the vertex `x + e_axis`.
pub fn step(x: &[i64], axis: usize, by: i64) -> Point {
    let mut y = x.to_vec();
    y[axis] += by;
    y
}
