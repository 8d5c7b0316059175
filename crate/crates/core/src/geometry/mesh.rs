use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::{pairwise_sum, Real};

/// Indexed triangle surface mesh.
///
/// Triangles are counter-clockwise when seen from outside, so the right-hand
/// normal `(v1 − v0) × (v2 − v0)` points outward.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh<T> {
    vertices: Vec<Vec3<T>>,
    triangles: Vec<[usize; 3]>,
    closed: bool,
}

impl<T: Real> TriMesh<T> {
    /// Validates indices and computes whether the mesh is closed.
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::invalid(format!(
                    "triangle {t} references vertex out of range (have {n})"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::invalid(format!("triangle {t} is degenerate: {tri:?}")));
            }
        }
        let closed = edges_closed(&triangles);
        Ok(Self {
            vertices,
            triangles,
            closed,
        })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            closed: true,
        }
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Every directed edge has exactly one reversed partner.
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3<T>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            triangles: self.triangles.clone(),
            closed: self.closed,
        })
    }

    pub fn translated(&self, d: Vec3<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v + d).collect(),
            triangles: self.triangles.clone(),
            closed: self.closed,
        }
    }

    /// Applies `x ↦ R·x + t` to every vertex.
    pub fn transformed(&self, r: &Mat3<T>, t: Vec3<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| r.mul_vec(v) + t).collect(),
            triangles: self.triangles.clone(),
            closed: self.closed,
        }
    }

    /// Reverses every triangle, flipping all normals.
    pub fn inverted(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            closed: self.closed,
        }
    }

    pub fn corners(&self, t: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Area-weighted normal `½ (v1 − v0) × (v2 − v0)` of triangle `t`.
    pub fn area_normal(&self, t: usize) -> Vec3<T> {
        let [a, b, c] = self.corners(t);
        (b - a).cross(c - a) * T::lit(0.5)
    }

    pub fn centroid(&self, t: usize) -> Vec3<T> {
        let [a, b, c] = self.corners(t);
        (a + b + c) * (T::one() / T::lit(3.0))
    }

    pub fn surface_area(&self) -> T {
        let areas: Vec<T> = (0..self.triangles.len()).map(|t| self.area_normal(t).norm()).collect();
        pairwise_sum(&areas)
    }

    /// Axis-aligned bounds `(min, max)`; `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                Vec3::new(lo.x.min(v.x), lo.y.min(v.y), lo.z.min(v.z)),
                Vec3::new(hi.x.max(v.x), hi.y.max(v.y), hi.z.max(v.z)),
            )
        }))
    }

    /// Every undirected edge is used by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *count.entry((u.min(v), u.max(v))).or_default() += 1;
            }
        }
        count.values().all(|&c| c == 2)
    }
}

fn edges_closed(triangles: &[[usize; 3]]) -> bool {
    let mut directed: HashMap<(usize, usize), u32> = HashMap::with_capacity(triangles.len() * 3);
    for &[a, b, c] in triangles {
        for e in [(a, b), (b, c), (c, a)] {
            *directed.entry(e).or_default() += 1;
        }
    }
    directed
        .iter()
        .all(|(&(u, v), &n)| n == 1 && directed.get(&(v, u)) == Some(&1))
}
