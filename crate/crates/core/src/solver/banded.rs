//! Banded Cholesky factorization of the interior Dirichlet matrix.
//!
//! Interior vertices are numbered lexicographically, so every neighbour of
//! vertex `v` lies within `L^{d-1}` positions of `v`. The factor stores, for
//! each row `j`, the entries `L[j, j-b..=j]`. Rows below a given index depend
//! only on matrix rows below that index, which allows cheap refactoring after
//! a change confined to late vertices.

use crate::environment::Environment;
use crate::error::{OhmError, Result};

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    mass: f64,
    factor: Vec<f64>,
}

impl BandedCholesky {
    /// Factor `−ℒ_ω + m` restricted to the interior of the box.
    pub fn new(env: &Environment, mass: f64) -> Result<Self> {
        let dom = env.domain();
        let n = dom.volume();
        let mut bw = 0;
        for v in 0..n {
            for &(w, _) in dom.neighbors(v) {
                if dom.is_interior(w) {
                    bw = bw.max(v.abs_diff(w));
                }
            }
        }
        let mut chol = BandedCholesky {
            n,
            bw,
            mass,
            factor: vec![0.0; n * (bw + 1)],
        };
        chol.refactor_from(env, 0)?;
        Ok(chol)
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, j: usize, k: usize) -> usize {
        j * (self.bw + 1) + (k + self.bw - j)
    }

    /// Recompute rows `first..n` of the factor from `env`. Rows before `first`
    /// are kept, so `env` must agree with the factored matrix there.
    pub fn refactor_from(&mut self, env: &Environment, first: usize) -> Result<()> {
        let dom = env.domain();
        let cond = env.conductances();
        let bw = self.bw;
        let width = bw + 1;
        let mut row = vec![0.0; width];
        for j in first..self.n {
            row.iter_mut().for_each(|x| *x = 0.0);
            let mut diag = self.mass;
            for &(w, e) in dom.neighbors(j) {
                diag += cond[e];
                if dom.is_interior(w) && w < j {
                    row[w + bw - j] -= cond[e];
                }
            }
            row[bw] = diag;
            let lo = j.saturating_sub(bw);
            let base_j = j * width;
            for k in lo..j {
                let base_k = k * width;
                let m0 = lo.max(k.saturating_sub(bw));
                let mut s = row[k + bw - j];
                for m in m0..k {
                    s -= self.factor[base_j + m + bw - j] * self.factor[base_k + m + bw - k];
                }
                let lkk = self.factor[base_k + bw];
                self.factor[base_j + k + bw - j] = s / lkk;
            }
            let mut s = row[bw];
            for m in lo..j {
                let l = self.factor[base_j + m + bw - j];
                s -= l * l;
            }
            if !(s > 0.0) {
                return Err(OhmError::CheckFailed(format!(
                    "banded Cholesky lost positive definiteness at row {j}"
                )));
            }
            self.factor[base_j + bw] = s.sqrt();
        }
        Ok(())
    }

    /// Solve `A u = b` for interior `u`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let bw = self.bw;
        let mut y = b[..n].to_vec();
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut s = y[j];
            for m in lo..j {
                s -= self.factor[self.at(j, m)] * y[m];
            }
            y[j] = s / self.factor[self.at(j, j)];
        }
        for j in (0..n).rev() {
            y[j] /= self.factor[self.at(j, j)];
            let yj = y[j];
            let lo = j.saturating_sub(bw);
            for m in lo..j {
                y[m] -= self.factor[self.at(j, m)] * yj;
            }
        }
        y
    }
}
