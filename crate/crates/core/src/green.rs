//! Green functions of `ℒ_ω` and of the simple random walk, the double
//! gradient `g_Λ`, the boundary Poisson kernel and triple-gradient decay.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{shift, Environment};
use crate::error::{OhmError, Result};
use crate::lattice::{BoxDomain, EdgeKey, Point};
use crate::quadrature::GaussLegendre;
use crate::solver::{
    dirichlet_energy, max_residual, solve_scalar, solve_with_factor, BandedCholesky,
    InteriorSystem, LatticeField, SolveReport,
};

/// `G_Λ(·, y; ω)` with zero boundary values.
#[derive(Debug, Clone)]
pub struct GreenColumn {
    pub source: Point,
    pub values: LatticeField,
    pub report: SolveReport,
}

impl GreenColumn {
    /// `G_Λ(x, y)`, zero for `x` outside `Λ ∪ ∂Λ`.
    pub fn at(&self, x: &[i64]) -> f64 {
        self.values.at_point(x).map_or(0.0, |v| v[0])
    }
}

/// One value of `g_Λ^{(i)}(ω, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenEdgeCoefficient {
    pub edge: EdgeKey,
    pub value: f64,
}

fn interior_index(dom: &BoxDomain, y: &[i64]) -> Result<usize> {
    match dom.vertex_index(y) {
        Some(v) if dom.is_interior(v) => Ok(v),
        _ => Err(OhmError::Domain(format!("{y:?} is not in the box"))),
    }
}

fn edge_index(dom: &BoxDomain, e: &EdgeKey) -> Result<usize> {
    dom.edge_index(e)
        .ok_or_else(|| OhmError::Domain(format!("edge {e} is not in the box")))
}

/// Solve `−ℒ_ω u + m u = rhs` with zero boundary values.
fn zero_boundary_solve(env: &Environment, mass: f64, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
    let fixed = vec![0.0; env.domain().n_vertices()];
    solve_scalar(env, mass, &fixed, rhs, tol)
}

/// Green column with source `y ∈ Λ`.
pub fn green_column(env: &Environment, y: &[i64], tol: f64) -> Result<GreenColumn> {
    let dom = env.domain();
    let v = interior_index(dom, y)?;
    let mut rhs = vec![0.0; dom.volume()];
    rhs[v] = 1.0;
    let (u, report) = zero_boundary_solve(env, 0.0, &rhs, tol)?;
    Ok(GreenColumn {
        source: y.to_vec(),
        values: LatticeField::from_values(dom.clone(), 1, u)?,
        report,
    })
}

/// Right-hand side `δ_y − δ_x` for edge `k`, dropping endpoints on `∂Λ`.
fn dipole(dom: &BoxDomain, k: usize) -> Vec<f64> {
    let (a, b) = dom.edge_ends(k);
    let mut rhs = vec![0.0; dom.volume()];
    if dom.is_interior(b) {
        rhs[b] += 1.0;
    }
    if dom.is_interior(a) {
        rhs[a] -= 1.0;
    }
    rhs
}

/// `u(y) − u(x)` for the solution `u = G(δ_y − δ_x)`, which equals
/// `G(y,y) − 2G(x,y) + G(x,x)`.
fn dipole_value(dom: &BoxDomain, k: usize, u: &[f64]) -> f64 {
    let (a, b) = dom.edge_ends(k);
    u[b] - u[a]
}

/// `g_Λ` on an edge with both endpoints in `Λ`.
pub fn g_edge(env: &Environment, e: &EdgeKey, tol: f64) -> Result<GreenEdgeCoefficient> {
    let dom = env.domain();
    let k = edge_index(dom, e)?;
    if !dom.edge_is_interior(k) {
        return Err(OhmError::Domain(format!(
            "edge {e} has an endpoint outside the box"
        )));
    }
    g_edge_extended(env, e, tol)
}

/// `g_Λ` on any edge of `𝔹(Λ)`, with `G_Λ(x, ·) = 0` for `x ∈ ∂Λ`.
pub fn g_edge_extended(env: &Environment, e: &EdgeKey, tol: f64) -> Result<GreenEdgeCoefficient> {
    let dom = env.domain();
    let k = edge_index(dom, e)?;
    let (u, _) = zero_boundary_solve(env, 0.0, &dipole(dom, k), tol)?;
    Ok(GreenEdgeCoefficient {
        edge: e.clone(),
        value: dipole_value(dom, k, &u),
    })
}

/// Zero-extended `g_Λ` on edge index `k` from a precomputed factor.
pub fn g_edge_with_factor(env: &Environment, factor: &BandedCholesky, k: usize) -> f64 {
    let dom = env.domain();
    let u = factor.solve(&dipole(dom, k));
    let (a, b) = dom.edge_ends(k);
    let ub = if dom.is_interior(b) { u[b] } else { 0.0 };
    let ua = if dom.is_interior(a) { u[a] } else { 0.0 };
    ub - ua
}

/// `inf { Q_Λ(f) : f(y) − f(x) = 1, f = 0 on ∂Λ }` for an interior edge,
/// computed without the Green function: with `f(x) = s` and `f(y) = s + 1`
/// pinned, the minimum over the remaining values is a quadratic in `s`.
pub fn constrained_energy_min(env: &Environment, e: &EdgeKey, tol: f64) -> Result<f64> {
    let dom = env.domain();
    let k = edge_index(dom, e)?;
    if !dom.edge_is_interior(k) {
        return Err(OhmError::Domain(format!(
            "edge {e} has an endpoint outside the box"
        )));
    }
    let (a, b) = dom.edge_ends(k);
    let mut free = vec![true; dom.volume()];
    free[a] = false;
    free[b] = false;
    let system = InteriorSystem {
        env,
        mass: 0.0,
        free: Some(&free),
    };
    let rhs = vec![0.0; dom.volume()];
    let mut q = [0.0; 3];
    for (slot, s) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        let mut fixed = vec![0.0; dom.n_vertices()];
        fixed[a] = s;
        fixed[b] = s + 1.0;
        let (f, _) = system.solve(&fixed, &rhs, tol, None)?;
        q[slot] = dirichlet_energy(env, &LatticeField::from_values(dom.clone(), 1, f)?);
    }
    let qa = 0.5 * (q[2] + q[0] - 2.0 * q[1]);
    let qb = 0.5 * (q[2] - q[0]);
    Ok(q[1] - qb * qb / (4.0 * qa))
}

/// Sequence of `g_Λ` values on nested centred boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GLimitReport {
    pub axis: usize,
    pub sides: Vec<usize>,
    pub values: Vec<f64>,
    pub gaps: Vec<f64>,
    pub monotone: bool,
    pub gaps_decreasing: bool,
    /// Last value of the sequence; a lower bound for the limit.
    pub estimate: f64,
    pub last_gap: f64,
}

/// Sub-box of side `l` centred in `env`'s box, as an environment on `Λ_l`.
pub fn centered_restriction(env: &Environment, l: usize) -> Result<Environment> {
    let big = env.domain();
    if l > big.side() {
        return Err(OhmError::Domain(format!(
            "side {l} exceeds the source side {}",
            big.side()
        )));
    }
    let off = (big.side() / 2 - l / 2) as i64;
    let z = vec![off; big.dim()];
    shift(env, &z, Arc::new(BoxDomain::new(big.dim(), l)?))
}

/// `g_{Λ_L}` at the centred edge `(⌊L/2⌋·1, axis)` for each `L` in `sides`,
/// with all boxes cut from `env` around its own centre.
pub fn g_limit_estimate(env: &Environment, axis: usize, sides: &[usize], tol: f64) -> Result<GLimitReport> {
    if sides.is_empty() || sides.windows(2).any(|w| w[0] >= w[1]) {
        return Err(OhmError::Invalid("sides must be strictly increasing".into()));
    }
    if axis >= env.domain().dim() {
        return Err(OhmError::Invalid(format!("axis {axis} out of range")));
    }
    let mut values = Vec::with_capacity(sides.len());
    for &l in sides {
        if l < 2 {
            return Err(OhmError::Invalid("sides must be at least 2".into()));
        }
        let sub = centered_restriction(env, l)?;
        let e = EdgeKey::new(sub.domain().center(), axis);
        values.push(g_edge(&sub, &e, tol)?.value);
    }
    let gaps: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let slack = 1e-9;
    Ok(GLimitReport {
        axis,
        sides: sides.to_vec(),
        monotone: gaps.iter().all(|&g| g >= -slack),
        gaps_decreasing: gaps.windows(2).all(|w| w[1] <= w[0] + slack),
        estimate: *values.last().unwrap(),
        last_gap: gaps.last().copied().unwrap_or(0.0),
        values,
        gaps,
    })
}

/// `ρ^{|x|}/√(m²+4m)`: the one-dimensional `(m − Δ)^{-1}` kernel.
fn g1(m: f64, x: i64) -> f64 {
    let s = (m * m + 4.0 * m).sqrt();
    // 2 + m − s written to avoid cancellation for large m.
    let rho = 2.0 / (2.0 + m + s);
    rho.powi(x.unsigned_abs() as i32) / s
}

/// Graded Gauss–Legendre nodes on `[0, π]`, refined geometrically toward 0
/// down to `scale`, each segment split into `sub` equal panels.
fn graded_nodes(rule: &GaussLegendre, scale: f64, sub: usize) -> Vec<(f64, f64)> {
    let mut breaks = vec![std::f64::consts::PI];
    while *breaks.last().unwrap() > scale {
        let b = 0.5 * breaks.last().unwrap();
        breaks.push(b);
    }
    breaks.push(0.0);
    breaks.reverse();
    let mut nodes = Vec::new();
    for w in breaks.windows(2) {
        let h = (w[1] - w[0]) / sub as f64;
        for p in 0..sub {
            let lo = w[0] + p as f64 * h;
            nodes.extend(rule.mapped(lo, lo + h));
        }
    }
    nodes
}

fn fourier_sum(eps: f64, x: &[i64], nodes: &[(f64, f64)]) -> f64 {
    let d = x.len();
    let pi = std::f64::consts::PI;
    if d == 1 {
        return nodes
            .iter()
            .map(|&(k, w)| w * (k * x[0] as f64).cos() / (eps + 2.0 * (1.0 - k.cos())))
            .sum::<f64>()
            / pi;
    }
    // Integrate the first d−1 coordinates numerically, the last in closed form.
    let outer = d - 1;
    let mut idx = vec![0usize; outer];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        let mut m = eps;
        for (j, &i) in idx.iter().enumerate() {
            let (k, w) = nodes[i];
            weight *= w * (k * x[j] as f64).cos();
            m += 2.0 * (1.0 - k.cos());
        }
        total += weight * g1(m, x[outer]);
        let mut j = 0;
        loop {
            if j == outer {
                return total / pi.powi(outer as i32);
            }
            idx[j] += 1;
            if idx[j] < nodes.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// `G^ε(x)`, the kernel of `(ε − Δ)^{-1}` on `ℤ^d`, by Fourier quadrature.
pub fn srw_green(eps: f64, x: &[i64]) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(OhmError::Domain(format!("eps must be positive, got {eps}")));
    }
    if x.is_empty() {
        return Err(OhmError::Invalid("empty point".into()));
    }
    // Symmetric in each coordinate and under permutations; put the largest
    // coordinate last so the oscillatory factor is handled in closed form.
    let mut xs: Vec<i64> = x.iter().map(|c| c.abs()).collect();
    xs.sort_unstable();
    let rule = GaussLegendre::new(16);
    let scale = eps.sqrt().min(1.0) / 4.0;
    let mut sub = 4usize;
    let mut prev = fourier_sum(eps, &xs, &graded_nodes(&rule, scale, sub));
    let max_sub = if xs.len() >= 3 { 64 } else { 1024 };
    loop {
        sub *= 2;
        let cur = fourier_sum(eps, &xs, &graded_nodes(&rule, scale, sub));
        if (cur - prev).abs() <= 1e-13 + 1e-12 * cur.abs() || sub >= max_sub {
            return Ok(cur);
        }
        prev = cur;
    }
}

/// Image of `y` under `r^i_n` for the box `[0, L)^d`, on coordinate `axis`.
///
/// The walls sit at `−1` and `L`, so the period is `2(L+1)`.
fn reflect(y: i64, n: i64, side: usize) -> i64 {
    let p = side as i64 + 1;
    let m = n.div_euclid(2);
    if n.rem_euclid(2) == 0 {
        2 * m * p + y
    } else {
        2 * (m + 1) * p - y - 2
    }
}

struct ImageSum<'a> {
    eps: f64,
    dom: &'a BoxDomain,
    cache: HashMap<Point, f64>,
}

impl ImageSum<'_> {
    fn kernel(&mut self, diff: Point) -> Result<f64> {
        let mut key: Point = diff.iter().map(|c| c.abs()).collect();
        key.sort_unstable();
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = srw_green(self.eps, &key)?;
        self.cache.insert(key, v);
        Ok(v)
    }

    /// Sum over `z` with `|z|_∞` exactly `r` (the shell), or all of `r = 0`.
    fn shell(&mut self, x: &[i64], y: &[i64], r: i64) -> Result<f64> {
        let d = self.dom.dim();
        let mut z = vec![-r; d];
        let mut total = 0.0;
        loop {
            if z.iter().map(|c| c.abs()).max().unwrap_or(0) == r {
                let diff: Point = (0..d)
                    .map(|j| x[j] - reflect(y[j], z[j], self.dom.side()))
                    .collect();
                let sign = if z.iter().sum::<i64>().rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                total += sign * self.kernel(diff)?;
            }
            let mut j = 0;
            loop {
                if j == d {
                    return Ok(total);
                }
                z[j] += 1;
                if z[j] <= r {
                    break;
                }
                z[j] = -r;
                j += 1;
            }
        }
    }
}

fn check_pair(dom: &BoxDomain, x: &[i64], y: &[i64]) -> Result<()> {
    for p in [x, y] {
        if p.len() != dom.dim() || dom.vertex_index(p).is_none() {
            return Err(OhmError::Domain(format!("{p:?} is not in the closed box")));
        }
    }
    Ok(())
}

/// Alternating image sum `Σ_{|z|_∞≤R} (−1)^{Σz} G^ε(x − r_z(y))`.
pub fn reflected_green(eps: f64, dom: &BoxDomain, x: &[i64], y: &[i64], radius: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(OhmError::Domain(format!("eps must be positive, got {eps}")));
    }
    check_pair(dom, x, y)?;
    if radius < 1 {
        return Err(OhmError::Invalid("truncation radius must be at least 1".into()));
    }
    let mut sum = ImageSum {
        eps,
        dom,
        cache: HashMap::new(),
    };
    let mut total = 0.0;
    for r in 0..=radius as i64 {
        total += sum.shell(x, y, r)?;
    }
    Ok(total)
}

/// Image sum with `R` grown until a shell changes the total by less than
/// `1e-10`. Returns the value and the radius used.
pub fn reflected_green_adaptive(eps: f64, dom: &BoxDomain, x: &[i64], y: &[i64]) -> Result<(f64, usize)> {
    if !(eps > 0.0) {
        return Err(OhmError::Domain(format!("eps must be positive, got {eps}")));
    }
    check_pair(dom, x, y)?;
    let mut sum = ImageSum {
        eps,
        dom,
        cache: HashMap::new(),
    };
    let mut total = sum.shell(x, y, 0)?;
    for r in 1..=64i64 {
        let s = sum.shell(x, y, r)?;
        total += s;
        if s.abs() < 1e-10 && r >= 1 {
            return Ok((total, r as usize));
        }
    }
    Err(OhmError::CheckFailed("image sum did not settle within R = 64".into()))
}

/// Column `y` of `(ε − Δ)^{-1}` on the box with zero boundary values.
pub fn massive_green_column(dom: Arc<BoxDomain>, eps: f64, y: &[i64], tol: f64) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(OhmError::Domain(format!("eps must be non-negative, got {eps}")));
    }
    let v = interior_index(&dom, y)?;
    let env = Environment::homogeneous(dom.clone(), 1.0);
    let mut rhs = vec![0.0; dom.volume()];
    rhs[v] = 1.0;
    Ok(zero_boundary_solve(&env, eps, &rhs, tol)?.0)
}

/// A point of a decay profile.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayPoint {
    pub distance: f64,
    pub value: f64,
}

/// Power-law fit `|value| ≈ C · distance^{exponent}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub dim: usize,
    pub side: usize,
    pub eps: f64,
    pub triple: [usize; 3],
    pub exponent: f64,
    pub prefactor: f64,
    pub n_used: usize,
    pub points: Vec<DecayPoint>,
}

impl DecayFit {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "distance,value")?;
        for p in &self.points {
            writeln!(w, "{},{:.17e}", p.distance, p.value)?;
        }
        Ok(())
    }

    /// Fit summary without the point list.
    pub fn summary_json(&self) -> Result<String> {
        let v = serde_json::json!({
            "dim": self.dim,
            "side": self.side,
            "eps": self.eps,
            "triple": self.triple.iter().map(|i| i + 1).collect::<Vec<_>>(),
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "n_used": self.n_used,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// `∇_i^{(2)}∇_j^{(1)}∇_k^{(2)} G^ε_Λ(x, y)` for unit conductances, as a
/// function of `x` (vertex-indexed, zero where the stencil leaves the box).
pub fn triple_gradient(dom: Arc<BoxDomain>, eps: f64, y: &[i64], triple: [usize; 3]) -> Result<Vec<f64>> {
    let [i, j, k] = triple;
    let d = dom.dim();
    if i >= d || j >= d || k >= d {
        return Err(OhmError::Invalid("direction out of range".into()));
    }
    if !(eps >= 0.0) {
        return Err(OhmError::Domain(format!("eps must be non-negative, got {eps}")));
    }
    let env = Environment::homogeneous(dom.clone(), 1.0);
    let factor = BandedCholesky::new(&env, eps)?;
    let zero = vec![0.0; dom.n_vertices()];
    let column = |src: &[i64]| -> Vec<f64> {
        let mut rhs = vec![0.0; dom.volume()];
        if let Some(v) = dom.vertex_index(src).filter(|&v| dom.is_interior(v)) {
            rhs[v] = 1.0;
        }
        solve_with_factor(&env, &factor, &zero, &rhs)
    };
    let yi = crate::solver::step(y, i, 1);
    let yk = crate::solver::step(y, k, 1);
    let yik = crate::solver::step(&yi, k, 1);
    let (g0, gi, gk, gik) = (column(y), column(&yi), column(&yk), column(&yik));
    let second: Vec<f64> = (0..dom.n_vertices())
        .map(|v| gik[v] - gi[v] - gk[v] + g0[v])
        .collect();
    let out = (0..dom.n_vertices())
        .map(|v| {
            let x = dom.point(v);
            let xj = crate::solver::step(x, j, 1);
            match dom.vertex_index(&xj) {
                Some(w) => second[w] - second[v],
                None => 0.0,
            }
        })
        .collect();
    Ok(out)
}

/// Least-squares slope and intercept of `(x, y)` pairs.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Decay of the triple gradient away from the centre of the box, along the
/// coordinate rays, fitted on a log–log scale.
///
/// The difference stencil approximates the derivative at its midpoint
/// `x + e_j/2` against `y + (e_i + e_k)/2`, so distances are measured
/// between those points. At each radius `m ∈ [3, L/4]` the profile keeps the
/// axis ray with the largest magnitude; values below `1e-14` are dropped.
pub fn triple_gradient_decay(dom: Arc<BoxDomain>, eps: f64, triple: [usize; 3]) -> Result<DecayFit> {
    let d = dom.dim();
    let l = dom.side();
    if l < 16 {
        return Err(OhmError::Invalid("decay fits need L ≥ 16".into()));
    }
    let y = dom.center();
    let values = triple_gradient(dom.clone(), eps, &y, triple)?;
    let [i, j, k] = triple;
    let mut offset = vec![0.0; d];
    offset[j] += 0.5;
    offset[i] -= 0.5;
    offset[k] -= 0.5;
    let mut points = Vec::new();
    for m in 3..=(l / 4) as i64 {
        let mut best = DecayPoint {
            distance: m as f64,
            value: 0.0,
        };
        for axis in 0..d {
            for sign in [-1i64, 1] {
                let x = crate::solver::step(&y, axis, sign * m);
                if let Some(v) = dom.vertex_index(&x) {
                    if values[v].abs() > best.value {
                        let dist = (0..d)
                            .map(|c| {
                                let r = (x[c] - y[c]) as f64 + offset[c];
                                r * r
                            })
                            .sum::<f64>()
                            .sqrt();
                        best = DecayPoint {
                            distance: dist,
                            value: values[v].abs(),
                        };
                    }
                }
            }
        }
        points.push(best);
    }
    let used: Vec<&DecayPoint> = points.iter().filter(|p| p.value >= 1e-14).collect();
    if used.len() < 3 {
        return Err(OhmError::CheckFailed("too few points above the noise floor".into()));
    }
    let xs: Vec<f64> = used.iter().map(|p| p.distance.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.value.ln()).collect();
    let (slope, icpt) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        dim: d,
        side: l,
        eps,
        triple,
        exponent: slope,
        prefactor: icpt.exp(),
        n_used: used.len(),
        points,
    })
}

/// Outcome of the boundary-kernel energy identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoissonKernelReport {
    pub energy: f64,
    pub kernel_energy: f64,
    /// `|Q − ½ΣK(Δh)²| / max(1, Q)`.
    pub residual: f64,
    /// Largest `|Σ_z K(y,z) − Σ_x a_xy|`.
    pub row_sum_residual: f64,
    /// Largest `|K(y,z) − K(z,y)|`.
    pub symmetry_residual: f64,
}

/// Boundary kernel `K(y, z) = Σ_{x∈Λ, x~y} a_xy p_Λ(x, z)` for `y, z ∈ ∂Λ`,
/// indexed by boundary position (`v − |Λ|`).
pub fn boundary_kernel(env: &Environment) -> Result<Vec<Vec<f64>>> {
    let dom = env.domain();
    let n = dom.volume();
    let nb = dom.n_boundary();
    let factor = BandedCholesky::new(env, 0.0)?;
    let rhs = vec![0.0; n];
    // Boundary vertex -> incident (interior vertex, edge).
    let mut incident: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nb];
    for k in 0..dom.n_edges() {
        let (a, b) = dom.edge_ends(k);
        if !dom.is_interior(a) {
            incident[a - n].push((b, k));
        }
        if !dom.is_interior(b) {
            incident[b - n].push((a, k));
        }
    }
    let mut kernel = vec![vec![0.0; nb]; nb];
    for zb in 0..nb {
        let mut fixed = vec![0.0; dom.n_vertices()];
        fixed[n + zb] = 1.0;
        let p = solve_with_factor(env, &factor, &fixed, &rhs);
        for (yb, inc) in incident.iter().enumerate() {
            kernel[yb][zb] = inc.iter().map(|&(x, e)| env.get(e) * p[x]).sum();
        }
    }
    Ok(kernel)
}

/// Check `Q_Λ(h) = ½ Σ_{y,z∈∂Λ} K(y,z)[h(z) − h(y)]²` and the row sums of `K`.
pub fn poisson_kernel_energy_check(env: &Environment, h: &LatticeField, tol: f64) -> Result<PoissonKernelReport> {
    let dom = env.domain();
    if h.arity() != 1 || h.domain().dim() != dom.dim() || h.domain().side() != dom.side() {
        return Err(OhmError::Invalid("h must be a scalar field on the same box".into()));
    }
    let scale = h.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let res = max_residual(env, h);
    if res > tol * scale {
        return Err(OhmError::Precondition(format!(
            "h is not harmonic: max |ℒh| = {res:.3e}"
        )));
    }
    let n = dom.volume();
    let nb = dom.n_boundary();
    let kernel = boundary_kernel(env)?;
    let energy = dirichlet_energy(env, h);
    let mut kernel_energy = 0.0;
    let mut symmetry_residual: f64 = 0.0;
    for y in 0..nb {
        for z in 0..nb {
            let dh = h.at(n + z)[0] - h.at(n + y)[0];
            kernel_energy += 0.5 * kernel[y][z] * dh * dh;
            symmetry_residual = symmetry_residual.max((kernel[y][z] - kernel[z][y]).abs());
        }
    }
    let mut adjacent = vec![0.0; nb];
    for k in 0..dom.n_edges() {
        let (a, b) = dom.edge_ends(k);
        for v in [a, b] {
            if !dom.is_interior(v) {
                adjacent[v - n] += env.get(k);
            }
        }
    }
    let row_sum_residual = (0..nb)
        .map(|y| (kernel[y].iter().sum::<f64>() - adjacent[y]).abs())
        .fold(0.0, f64::max);
    Ok(PoissonKernelReport {
        energy,
        kernel_energy,
        residual: (energy - kernel_energy).abs() / energy.max(1.0),
        row_sum_residual,
        symmetry_residual,
    })
}
