//! Jacobi-preconditioned conjugate gradient on the interior Dirichlet system.
//!
//! The operator is `(A u)(x) = Σ_{y~x} a_xy (u(x) − u(y)) + m u(x)` on the
//! free interior vertices. Boundary vertices, and optionally pinned interior
//! vertices, carry fixed values that are eliminated into the right-hand side.

use crate::environment::Environment;
use crate::error::{OhmError, Result};

use super::SolveReport;

/// Interior system with fixed values on `∂Λ` and on non-free interior sites.
pub(crate) struct InteriorSystem<'a> {
    pub env: &'a Environment,
    pub mass: f64,
    /// `free[v]` for interior `v`; `None` means every interior vertex is free.
    pub free: Option<&'a [bool]>,
}

impl InteriorSystem<'_> {
    fn is_free(&self, v: usize) -> bool {
        let dom = self.env.domain();
        dom.is_interior(v) && self.free.is_none_or(|f| f[v])
    }

    fn diagonal(&self) -> Vec<f64> {
        let dom = self.env.domain();
        (0..dom.volume())
            .map(|v| {
                dom.neighbors(v)
                    .iter()
                    .map(|&(_, e)| self.env.get(e))
                    .sum::<f64>()
                    + self.mass
            })
            .collect()
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let dom = self.env.domain();
        let cond = self.env.conductances();
        for v in 0..dom.volume() {
            if !self.is_free(v) {
                out[v] = 0.0;
                continue;
            }
            let uv = u[v];
            let mut acc = self.mass * uv;
            for &(w, e) in dom.neighbors(v) {
                let uw = if self.is_free(w) { u[w] } else { 0.0 };
                acc += cond[e] * (uv - uw);
            }
            out[v] = acc;
        }
    }

    /// `rhs + Σ_{fixed neighbours} a_e · value(w)` on free vertices, 0 elsewhere.
    fn effective_rhs(&self, fixed: &[f64], rhs: &[f64]) -> Vec<f64> {
        let dom = self.env.domain();
        let cond = self.env.conductances();
        (0..dom.volume())
            .map(|v| {
                if !self.is_free(v) {
                    return 0.0;
                }
                let mut b = rhs[v];
                for &(w, e) in dom.neighbors(v) {
                    if !self.is_free(w) {
                        b += cond[e] * fixed[w];
                    }
                }
                b
            })
            .collect()
    }

    /// Solve and return the full vertex vector (fixed values copied through).
    ///
    /// `fixed` has one entry per vertex of `Λ ∪ ∂Λ`; only non-free entries are
    /// read. `rhs` has one entry per interior vertex.
    pub fn solve(
        &self,
        fixed: &[f64],
        rhs: &[f64],
        tol: f64,
        guess: Option<&[f64]>,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let dom = self.env.domain();
        let n = dom.volume();
        let n_free = (0..n).filter(|&v| self.is_free(v)).count().max(1);
        let max_iter = (50.0 * (n_free as f64).sqrt() * dom.dim() as f64).ceil() as usize;

        let b = self.effective_rhs(fixed, rhs);
        let diag = self.diagonal();
        let b_norm = norm(&b);

        let mut x: Vec<f64> = match guess {
            Some(g) => (0..n).map(|v| if self.is_free(v) { g[v] } else { 0.0 }).collect(),
            None => vec![0.0; n],
        };
        let mut report = SolveReport {
            iterations: 0,
            relative_residual: 0.0,
            tolerance: tol,
        };

        if b_norm > 0.0 {
            let mut ax = vec![0.0; n];
            let mut r = vec![0.0; n];
            let mut z = vec![0.0; n];
            let mut p = vec![0.0; n];
            let mut ap = vec![0.0; n];
            let mut converged = false;
            // Restart loop: re-derive the true residual whenever the recurrence
            // claims convergence.
            while report.iterations < max_iter {
                self.apply(&x, &mut ax);
                for v in 0..n {
                    r[v] = b[v] - ax[v];
                }
                let true_res = norm(&r) / b_norm;
                report.relative_residual = true_res;
                if true_res <= tol {
                    converged = true;
                    break;
                }
                for v in 0..n {
                    z[v] = r[v] / diag[v];
                    p[v] = z[v];
                }
                let mut rz = dot(&r, &z);
                while report.iterations < max_iter {
                    self.apply(&p, &mut ap);
                    let pap = dot(&p, &ap);
                    if pap <= 0.0 {
                        break;
                    }
                    let alpha = rz / pap;
                    for v in 0..n {
                        x[v] += alpha * p[v];
                        r[v] -= alpha * ap[v];
                    }
                    report.iterations += 1;
                    if norm(&r) / b_norm <= 0.5 * tol {
                        break;
                    }
                    for v in 0..n {
                        z[v] = r[v] / diag[v];
                    }
                    let rz_new = dot(&r, &z);
                    let beta = rz_new / rz;
                    rz = rz_new;
                    for v in 0..n {
                        p[v] = z[v] + beta * p[v];
                    }
                }
            }
            if !converged {
                self.apply(&x, &mut ax);
                let res: Vec<f64> = (0..n).map(|v| b[v] - ax[v]).collect();
                report.relative_residual = norm(&res) / b_norm;
                if report.relative_residual > tol {
                    return Err(OhmError::SolverFailed { report });
                }
            }
        }

        let mut full = fixed.to_vec();
        for v in 0..n {
            if self.is_free(v) {
                full[v] = x[v];
            }
        }
        Ok((full, report))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
