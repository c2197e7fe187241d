//! Box geometry on the hypercubic lattice.
//!
//! The box `Λ_L = [0, L)^d` comes with its outer vertex boundary (vertices
//! outside the box with an edge into it) and the edge set of all
//! nearest-neighbour edges with at least one endpoint in the box. Edges are
//! keyed canonically as `(x, i)`, the edge from `x` to `x + e_i`, and are
//! enumerated in the stationary lexicographic order: first by base vertex
//! (lexicographic, first coordinate most significant), then by axis.
//!
//! Vertices are indexed with all interior vertices first, in lexicographic
//! order, followed by the boundary vertices, also lexicographically.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OhmError, Result};

/// A point of `Z^d`.
pub type Point = Vec<i64>;

const NONE: u32 = u32::MAX;

/// The nearest-neighbour edge `⟨x, x + e_axis⟩`.
///
/// `axis` is zero-based. The derived ordering compares the base vertex
/// lexicographically and then the axis, which is exactly the stationary edge
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub base: Point,
    pub axis: usize,
}

impl EdgeKey {
    pub fn new(base: impl Into<Point>, axis: usize) -> Self {
        Self {
            base: base.into(),
            axis,
        }
    }

    /// The endpoint `x + e_axis`.
    pub fn head(&self) -> Point {
        let mut h = self.base.clone();
        h[self.axis] += 1;
        h
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {})", self.base, self.axis + 1)
    }
}

/// Translate an edge by `z`. Order preserving: `e ≼ e'` implies
/// `shift_edge(e, z) ≼ shift_edge(e', z)`.
pub fn shift_edge(e: &EdgeKey, z: &[i64]) -> EdgeKey {
    debug_assert_eq!(e.base.len(), z.len());
    EdgeKey {
        base: e.base.iter().zip(z).map(|(a, b)| a + b).collect(),
        axis: e.axis,
    }
}

/// Lexicographic comparison of lattice points.
pub fn lex_cmp(a: &[i64], b: &[i64]) -> Ordering {
    a.cmp(b)
}

/// The box `[0, L)^d` with its boundary, edge set and index maps.
#[derive(Debug, Clone)]
pub struct BoxDomain {
    dim: usize,
    side: usize,
    n_interior: usize,
    points: Vec<Point>,
    edges: Vec<EdgeKey>,
    edge_ends: Vec<(usize, usize)>,
    // Dense lookup over the extended grid [-1, L]^d.
    vertex_lookup: Vec<u32>,
    // Dense lookup over base points in [-1, L]^d times axes.
    edge_lookup: Vec<u32>,
    // For interior vertex v: 2d entries of (neighbour vertex, edge index).
    adjacency: Vec<(usize, usize)>,
}

impl PartialEq for BoxDomain {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.side == other.side
    }
}

impl BoxDomain {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 || side == 0 {
            return Err(OhmError::Invalid(format!(
                "box needs positive dimension and side, got d={dim}, L={side}"
            )));
        }
        let ext = side + 2;
        let ext_len = ext
            .checked_pow(dim as u32)
            .filter(|&n| n < NONE as usize / (dim + 1))
            .ok_or_else(|| OhmError::Invalid(format!("box d={dim}, L={side} is too large")))?;

        let l = side as i64;
        let inside = |p: &[i64]| p.iter().all(|&c| (0..l).contains(&c));
        let on_boundary = |p: &[i64]| {
            let out = p.iter().filter(|&&c| c == -1 || c == l).count();
            out == 1 && p.iter().all(|&c| (-1..=l).contains(&c))
        };

        // Enumerate [-1, L]^d lexicographically.
        let ext_points: Vec<Point> = (0..ext_len)
            .map(|k| {
                let mut p = vec![0i64; dim];
                let mut r = k;
                for j in (0..dim).rev() {
                    p[j] = (r % ext) as i64 - 1;
                    r /= ext;
                }
                p
            })
            .collect();

        let mut points: Vec<Point> = ext_points.iter().filter(|p| inside(p)).cloned().collect();
        let n_interior = points.len();
        points.extend(ext_points.iter().filter(|p| on_boundary(p)).cloned());

        let mut domain = BoxDomain {
            dim,
            side,
            n_interior,
            points,
            edges: Vec::new(),
            edge_ends: Vec::new(),
            vertex_lookup: vec![NONE; ext_len],
            edge_lookup: vec![NONE; ext_len * dim],
            adjacency: Vec::new(),
        };
        for (v, p) in domain.points.iter().enumerate() {
            let slot = domain.ext_slot(p).expect("point inside extended grid");
            domain.vertex_lookup[slot] = v as u32;
        }

        // Edge enumeration: base points in lexicographic order, then axis.
        for p in &ext_points {
            for axis in 0..dim {
                let e = EdgeKey::new(p.clone(), axis);
                let head = e.head();
                if inside(p) || inside(&head) {
                    let tail_v = domain.vertex_index(p).expect("tail in domain");
                    let head_v = domain.vertex_index(&head).expect("head in domain");
                    let slot = domain.ext_slot(p).unwrap() * dim + axis;
                    domain.edge_lookup[slot] = domain.edges.len() as u32;
                    domain.edges.push(e);
                    domain.edge_ends.push((tail_v, head_v));
                }
            }
        }

        let mut adjacency = Vec::with_capacity(n_interior * 2 * dim);
        for v in 0..n_interior {
            let p = domain.points[v].clone();
            for axis in 0..dim {
                let mut q = p.clone();
                q[axis] -= 1;
                let e_lo = domain.edge_index(&EdgeKey::new(q.clone(), axis)).unwrap();
                adjacency.push((domain.vertex_index(&q).unwrap(), e_lo));
                q[axis] += 2;
                let e_hi = domain.edge_index(&EdgeKey::new(p.clone(), axis)).unwrap();
                adjacency.push((domain.vertex_index(&q).unwrap(), e_hi));
            }
        }
        domain.adjacency = adjacency;
        Ok(domain)
    }

    fn ext_slot(&self, p: &[i64]) -> Option<usize> {
        if p.len() != self.dim {
            return None;
        }
        let ext = self.side as i64 + 2;
        let mut slot = 0usize;
        for &c in p {
            if c < -1 || c > self.side as i64 {
                return None;
            }
            slot = slot * ext as usize + (c + 1) as usize;
        }
        Some(slot)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// `|Λ| = L^d`.
    pub fn volume(&self) -> usize {
        self.n_interior
    }

    pub fn n_boundary(&self) -> usize {
        self.points.len() - self.n_interior
    }

    /// Number of vertices in `Λ ∪ ∂Λ`.
    pub fn n_vertices(&self) -> usize {
        self.points.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// All vertices, interior first.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, v: usize) -> &Point {
        &self.points[v]
    }

    pub fn is_interior(&self, v: usize) -> bool {
        v < self.n_interior
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        p.len() == self.dim && p.iter().all(|&c| c >= 0 && c < self.side as i64)
    }

    pub fn vertex_index(&self, p: &[i64]) -> Option<usize> {
        self.ext_slot(p)
            .map(|s| self.vertex_lookup[s])
            .filter(|&v| v != NONE)
            .map(|v| v as usize)
    }

    /// Index of an edge in the stationary order, if it belongs to `𝔹(Λ)`.
    pub fn edge_index(&self, e: &EdgeKey) -> Option<usize> {
        if e.axis >= self.dim {
            return None;
        }
        self.ext_slot(&e.base)
            .map(|s| self.edge_lookup[s * self.dim + e.axis])
            .filter(|&k| k != NONE)
            .map(|k| k as usize)
    }

    /// Edges of `𝔹(Λ)` in strictly increasing stationary order.
    pub fn edges(&self) -> &[EdgeKey] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> &EdgeKey {
        &self.edges[k]
    }

    /// `(tail, head)` vertex indices of edge `k`.
    pub fn edge_ends(&self, k: usize) -> (usize, usize) {
        self.edge_ends[k]
    }

    /// Neighbours of interior vertex `v` as `(vertex, edge)` pairs, ordered
    /// `-e_1, +e_1, -e_2, +e_2, ...`.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        debug_assert!(v < self.n_interior);
        let k = 2 * self.dim;
        &self.adjacency[v * k..(v + 1) * k]
    }

    /// The vertex `(⌊L/2⌋, ..., ⌊L/2⌋)`.
    pub fn center(&self) -> Point {
        vec![(self.side / 2) as i64; self.dim]
    }

    /// True when both endpoints of edge `k` are interior.
    pub fn edge_is_interior(&self, k: usize) -> bool {
        let (a, b) = self.edge_ends[k];
        self.is_interior(a) && self.is_interior(b)
    }
}

/// Edges of `𝔹(Λ)` sorted by the stationary order.
pub fn enumerate_edges(domain: &BoxDomain) -> Vec<EdgeKey> {
    domain.edges().to_vec()
}

/// Vertices outside the box adjacent to it, in lexicographic order.
pub fn boundary_vertices(domain: &BoxDomain) -> Vec<Point> {
    domain.points()[domain.volume()..].to_vec()
}
