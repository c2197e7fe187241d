//! Conductance configurations and the single-edge law.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{OhmError, Result};
use crate::lattice::{BoxDomain, EdgeKey};
use crate::quadrature::GaussLegendre;

/// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream value from a master seed and an index.
///
/// `mix(s, k) = splitmix64(splitmix64(s) ^ k.wrapping_mul(0xD6E8FEB86659FD93))`.
/// Every per-edge draw and every per-replica seed goes through this, so the
/// values do not depend on iteration order or thread scheduling.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Uniform double in `[0, 1)` from the top 53 bits.
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The single-edge conductance distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConductanceLaw {
    /// Every edge has conductance `a`.
    Constant { a: f64 },
    /// Uniform on `[λ, 1/λ]`; `nodes` is the Gauss–Legendre node count used
    /// for integrals against the law.
    Uniform { lambda: f64, nodes: usize },
    /// `1/λ` with probability `p`, `λ` otherwise.
    TwoPoint { lambda: f64, p: f64 },
}

impl ConductanceLaw {
    pub fn constant(a: f64) -> Self {
        ConductanceLaw::Constant { a }
    }

    pub fn uniform(lambda: f64) -> Self {
        ConductanceLaw::Uniform { lambda, nodes: 16 }
    }

    pub fn two_point(lambda: f64, p: f64) -> Self {
        ConductanceLaw::TwoPoint { lambda, p }
    }

    pub fn validate(&self) -> Result<()> {
        let check_lambda = |lambda: f64| {
            if lambda > 0.0 && lambda < 1.0 {
                Ok(())
            } else {
                Err(OhmError::Range {
                    what: "lambda",
                    value: lambda,
                    lo: 0.0,
                    hi: 1.0,
                })
            }
        };
        match *self {
            ConductanceLaw::Constant { a } if !(a.is_finite() && a > 0.0) => {
                Err(OhmError::Invalid(format!("constant conductance must be positive, got {a}")))
            }
            ConductanceLaw::Constant { .. } => Ok(()),
            ConductanceLaw::Uniform { lambda, nodes } => {
                check_lambda(lambda)?;
                if nodes == 0 {
                    return Err(OhmError::Invalid("quadrature needs at least one node".into()));
                }
                Ok(())
            }
            ConductanceLaw::TwoPoint { lambda, p } => {
                check_lambda(lambda)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(OhmError::Range {
                        what: "p",
                        value: p,
                        lo: 0.0,
                        hi: 1.0,
                    });
                }
                Ok(())
            }
        }
    }

    /// Ellipticity bounds `[lo, hi]` for this law.
    ///
    /// For the constant law the tightest window `min(a, 1/a)` is used.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ConductanceLaw::Constant { a } => (a.min(1.0 / a), a.max(1.0 / a)),
            ConductanceLaw::Uniform { lambda, .. } | ConductanceLaw::TwoPoint { lambda, .. } => {
                (lambda, 1.0 / lambda)
            }
        }
    }

    pub fn lambda(&self) -> f64 {
        self.support().0
    }

    /// True when the law is a point mass.
    pub fn is_degenerate(&self) -> bool {
        match *self {
            ConductanceLaw::Constant { .. } => true,
            ConductanceLaw::Uniform { .. } => false,
            ConductanceLaw::TwoPoint { p, .. } => p == 0.0 || p == 1.0,
        }
    }

    /// Map a uniform `u ∈ [0, 1)` to a draw.
    pub fn draw(&self, u: f64) -> f64 {
        match *self {
            ConductanceLaw::Constant { a } => a,
            ConductanceLaw::Uniform { lambda, .. } => lambda + u * (1.0 / lambda - lambda),
            ConductanceLaw::TwoPoint { lambda, p } => {
                if u < p {
                    1.0 / lambda
                } else {
                    lambda
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.atoms().iter().map(|(x, w)| x * w).sum()
    }

    /// Quadrature atoms `(value, weight)` with weights summing to one.
    ///
    /// Exact for the discrete laws; Gauss–Legendre on `[λ, 1/λ]` for the
    /// uniform law (exact for polynomials up to degree `2·nodes − 1`).
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match *self {
            ConductanceLaw::Constant { a } => vec![(a, 1.0)],
            ConductanceLaw::TwoPoint { lambda, p } => {
                let mut v = Vec::with_capacity(2);
                if p < 1.0 {
                    v.push((lambda, 1.0 - p));
                }
                if p > 0.0 {
                    v.push((1.0 / lambda, p));
                }
                v
            }
            ConductanceLaw::Uniform { lambda, nodes } => {
                let (a, b) = (lambda, 1.0 / lambda);
                GaussLegendre::new(nodes)
                    .mapped(a, b)
                    .into_iter()
                    .map(|(x, w)| (x, w / (b - a)))
                    .collect()
            }
        }
    }

    /// `E f(ω_b)` under this law.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.atoms().into_iter().map(|(x, w)| w * f(x)).sum()
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConductanceLaw::Constant { .. } => "constant",
            ConductanceLaw::Uniform { .. } => "uniform",
            ConductanceLaw::TwoPoint { .. } => "two_point",
        }
    }
}

/// A conductance configuration on the edges of a box.
#[derive(Debug, Clone)]
pub struct Environment {
    domain: Arc<BoxDomain>,
    conductances: Vec<f64>,
    law: ConductanceLaw,
    lambda: f64,
    seed: Option<u64>,
}

impl PartialEq for Environment {
    fn eq(&self, other: &Self) -> bool {
        self.domain.dim() == other.domain.dim()
            && self.domain.side() == other.domain.side()
            && self.conductances == other.conductances
    }
}

impl Environment {
    /// Build from explicit values in edge-index order.
    pub fn from_values(
        domain: Arc<BoxDomain>,
        conductances: Vec<f64>,
        law: ConductanceLaw,
    ) -> Result<Self> {
        if conductances.len() != domain.n_edges() {
            return Err(OhmError::Invalid(format!(
                "expected {} conductances, got {}",
                domain.n_edges(),
                conductances.len()
            )));
        }
        law.validate()?;
        let env = Environment {
            domain,
            conductances,
            lambda: law.lambda(),
            law,
            seed: None,
        };
        env.check_ellipticity()?;
        Ok(env)
    }

    /// All edges set to `a`.
    pub fn homogeneous(domain: Arc<BoxDomain>, a: f64) -> Self {
        let n = domain.n_edges();
        Environment {
            domain,
            conductances: vec![a; n],
            lambda: a.min(1.0 / a),
            law: ConductanceLaw::constant(a),
            seed: None,
        }
    }

    /// Widen (or narrow) the ellipticity window to `[λ, 1/λ]`.
    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(OhmError::Range {
                what: "lambda",
                value: lambda,
                lo: 0.0,
                hi: 1.0,
            });
        }
        self.lambda = lambda;
        self.check_ellipticity()?;
        Ok(self)
    }

    /// Ellipticity window `[λ, 1/λ]`.
    pub fn support(&self) -> (f64, f64) {
        (self.lambda, 1.0 / self.lambda)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn domain(&self) -> &Arc<BoxDomain> {
        &self.domain
    }

    pub fn law(&self) -> &ConductanceLaw {
        &self.law
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn conductances(&self) -> &[f64] {
        &self.conductances
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.conductances[edge]
    }

    pub fn conductance(&self, e: &EdgeKey) -> Option<f64> {
        self.domain.edge_index(e).map(|k| self.conductances[k])
    }

    pub fn check_ellipticity(&self) -> Result<()> {
        let (lo, hi) = self.support();
        let slack = 1e-12 * hi;
        for &a in &self.conductances {
            if !(a >= lo - slack && a <= hi + slack) {
                return Err(OhmError::Range {
                    what: "conductance",
                    value: a,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    /// `max_b |a_b − 1|`.
    pub fn max_deviation_from_one(&self) -> f64 {
        self.conductances
            .iter()
            .map(|a| (a - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Same configuration with edge `edge` set to `value`.
    pub fn perturb_index(&self, edge: usize, value: f64) -> Result<Self> {
        let (lo, hi) = self.support();
        if edge >= self.conductances.len() {
            return Err(OhmError::Domain(format!("edge index {edge} outside the box")));
        }
        if !(value >= lo && value <= hi) {
            return Err(OhmError::Range {
                what: "conductance",
                value,
                lo,
                hi,
            });
        }
        let mut out = self.clone();
        out.conductances[edge] = value;
        Ok(out)
    }

    /// Overwrite a batch of edges without the range check (internal use by
    /// resampling code that draws from the law).
    pub(crate) fn set_unchecked(&mut self, edge: usize, value: f64) {
        self.conductances[edge] = value;
    }
}

/// Draw an i.i.d. configuration. Edge `k` gets `law.draw(unit(mix(seed, k)))`.
pub fn sample(law: &ConductanceLaw, domain: Arc<BoxDomain>, seed: u64) -> Result<Environment> {
    law.validate()?;
    let conductances = (0..domain.n_edges() as u64)
        .map(|k| law.draw(unit_f64(mix(seed, k))))
        .collect();
    Ok(Environment {
        domain,
        conductances,
        lambda: law.lambda(),
        law: law.clone(),
        seed: Some(seed),
    })
}

/// Replace the conductance of one edge.
pub fn perturb(env: &Environment, e: &EdgeKey, value: f64) -> Result<Environment> {
    let k = env
        .domain
        .edge_index(e)
        .ok_or_else(|| OhmError::Domain(format!("edge {e} not in the box")))?;
    env.perturb_index(k, value)
}

/// `τ_z ω` restricted to `sub_box`: edge `(x, i)` of the output carries the
/// input conductance of `(x + z, i)`.
pub fn shift(env: &Environment, z: &[i64], sub_box: Arc<BoxDomain>) -> Result<Environment> {
    if z.len() != env.domain.dim() || sub_box.dim() != env.domain.dim() {
        return Err(OhmError::Domain("shift dimension mismatch".into()));
    }
    let conductances = sub_box
        .edges()
        .iter()
        .map(|e| {
            env.conductance(&crate::lattice::shift_edge(e, z))
                .ok_or_else(|| OhmError::Domain(format!("shifted edge of {e} not covered")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Environment {
        domain: sub_box,
        conductances,
        law: env.law.clone(),
        lambda: env.lambda,
        seed: env.seed,
    })
}

/// Header written in front of a serialized environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentHeader {
    pub dim: usize,
    pub side: usize,
    pub lambda: f64,
    pub law: ConductanceLaw,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct EnvironmentJson {
    header: EnvironmentHeader,
    conductances: Vec<f64>,
}

const BINARY_MAGIC: &[u8; 8] = b"OHMENV01";

impl Environment {
    pub fn header(&self) -> EnvironmentHeader {
        EnvironmentHeader {
            dim: self.domain.dim(),
            side: self.domain.side(),
            lambda: self.lambda,
            law: self.law.clone(),
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&EnvironmentJson {
            header: self.header(),
            conductances: self.conductances.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let parsed: EnvironmentJson = serde_json::from_str(s)?;
        Self::from_parts(parsed.header, parsed.conductances)
    }

    fn from_parts(header: EnvironmentHeader, conductances: Vec<f64>) -> Result<Self> {
        let domain = Arc::new(BoxDomain::new(header.dim, header.side)?);
        let mut env = Environment::from_values(domain, conductances, header.law)?;
        env.seed = header.seed;
        env.with_lambda(header.lambda)
    }

    /// Binary layout: magic, u32 header length, JSON header, then the
    /// conductances as little-endian f64 in edge-index order.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for a in &self.conductances {
            w.write_all(&a.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(OhmError::Invalid("not an environment file".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: EnvironmentHeader = serde_json::from_slice(&header)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() % 8 != 0 {
            return Err(OhmError::Invalid("truncated conductance array".into()));
        }
        let values = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parts(header, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(d: usize, l: usize) -> Arc<BoxDomain> {
        Arc::new(BoxDomain::new(d, l).unwrap())
    }

    #[test]
    fn degenerate_laws() {
        let env = sample(&ConductanceLaw::constant(1.0), dom(2, 4), 3).unwrap();
        assert!(env.conductances().iter().all(|&a| a == 1.0));
        let env = sample(&ConductanceLaw::two_point(0.5, 1.0), dom(2, 4), 3).unwrap();
        assert!(env.conductances().iter().all(|&a| a == 2.0));
    }

    #[test]
    fn uniform_mean_within_three_standard_errors() {
        let law = ConductanceLaw::uniform(0.9);
        let n = 100_000u64;
        let draws: Vec<f64> = (0..n).map(|k| law.draw(unit_f64(mix(11, k)))).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let width = 1.0 / 0.9 - 0.9;
        let se = width / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - (0.9 + 1.0 / 0.9) / 2.0).abs() < 3.0 * se);
        assert!((law.mean() - (0.9 + 1.0 / 0.9) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn perturb_roundtrip_and_range() {
        let env = Environment::homogeneous(dom(2, 3), 1.0)
            .with_lambda(0.5)
            .unwrap();
        let e = env.domain().edge(5).clone();
        let p = perturb(&env, &e, 2.0).unwrap();
        let diff = p
            .conductances()
            .iter()
            .zip(env.conductances())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(diff, 1);
        p.check_ellipticity().unwrap();
        let back = perturb(&p, &e, 1.0).unwrap();
        assert_eq!(back, env);
        assert!(matches!(perturb(&env, &e, 3.0), Err(OhmError::Range { .. })));
    }

    #[test]
    fn shift_identity_and_one_dimensional_translation() {
        let env = sample(&ConductanceLaw::uniform(0.5), dom(1, 6), 9).unwrap();
        let same = shift(&env, &[0], env.domain().clone()).unwrap();
        assert_eq!(same, env);
        let small = dom(1, 5);
        let moved = shift(&env, &[1], small).unwrap();
        for k in 0..moved.conductances().len() {
            assert_eq!(moved.get(k), env.get(k + 1));
        }
        assert!(shift(&env, &[2], dom(1, 6)).is_err());
    }

    #[test]
    fn serialization_preserves_values() {
        let env = sample(&ConductanceLaw::two_point(0.3, 0.4), dom(2, 3), 5).unwrap();
        let back = Environment::from_json(&env.to_json().unwrap()).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.seed(), Some(5));
        let mut buf = Vec::new();
        env.write_binary(&mut buf).unwrap();
        let back = Environment::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.header(), env.header());
    }
}
