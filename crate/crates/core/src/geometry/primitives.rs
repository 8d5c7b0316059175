//! Procedural closed meshes used by tests, examples and the default study.

use std::collections::HashMap;

use crate::geometry::TriMesh;
use crate::linalg::Vec3;
use crate::scalar::Real;

/// Axis-aligned box with outward-facing triangles.
pub fn box_mesh<T: Real>(min: Vec3<T>, max: Vec3<T>) -> TriMesh<T> {
    let v = |i: usize| {
        Vec3::new(
            if i & 1 == 0 { min.x } else { max.x },
            if i & 2 == 0 { min.y } else { max.y },
            if i & 4 == 0 { min.z } else { max.z },
        )
    };
    let vertices = (0..8).map(v).collect();
    // corner i has bits (x, y, z)
    let triangles = vec![
        [0, 2, 3], [0, 3, 1], // z = min
        [4, 5, 7], [4, 7, 6], // z = max
        [0, 1, 5], [0, 5, 4], // y = min
        [2, 6, 7], [2, 7, 3], // y = max
        [0, 4, 6], [0, 6, 2], // x = min
        [1, 3, 7], [1, 7, 5], // x = max
    ];
    TriMesh::new(vertices, triangles).expect("box connectivity is valid")
}

/// The unit cube `[0, 1]³`.
pub fn unit_cube<T: Real>() -> TriMesh<T> {
    box_mesh(Vec3::zero(), Vec3::new(T::one(), T::one(), T::one()))
}

/// Geodesic sphere from a subdivided icosahedron: `20·4ⁿ` triangles.
pub fn icosphere<T: Real>(radius: T, subdivisions: u32) -> TriMesh<T> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let base: [[f64; 3]; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut verts: Vec<[f64; 3]> = base
        .iter()
        .map(|p| {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            [p[0] / n, p[1] / n, p[2] / n]
        })
        .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                let m = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
                let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                verts.push([m[0] / n, m[1] / n, m[2] / n]);
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for &[a, b, c] in &tris {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let vertices = verts
        .into_iter()
        .map(|p| Vec3::from_f64(p) * radius)
        .collect();
    TriMesh::new(vertices, tris).expect("icosphere connectivity is valid")
}

/// Dimensions of the parabolic test hull built by [`parabolic_hull`].
#[derive(Debug, Clone, Copy)]
pub struct HullShape {
    pub length: f64,
    pub beam: f64,
    pub depth: f64,
    /// Stations along the length (even).
    pub stations: usize,
    /// Waterlines between keel and deck.
    pub waterlines: usize,
}

impl Default for HullShape {
    fn default() -> Self {
        Self {
            length: 5.72,
            beam: 0.9,
            depth: 0.8,
            stations: 40,
            waterlines: 12,
        }
    }
}

/// Closed Wigley-type hull with a flat deck.
///
/// Keel on `z = 0`, deck on `z = depth`, centerplane `y = 0`, midship at
/// `x = 0`. The half-breadth is `(B/2)(1 − ξ²)(1 − ζ²)` with `ξ = 2x/L` and
/// `ζ = (D − z)/D`, so the enclosed volume tends to `4/9·L·B·D`.
pub fn parabolic_hull<T: Real>(shape: &HullShape) -> TriMesh<T> {
    let (nx, nz) = (shape.stations.max(2), shape.waterlines.max(2));
    let (l, b, d) = (shape.length, shape.beam, shape.depth);
    let mut vertices = Vec::new();
    let mut index: HashMap<(usize, usize, i8), usize> = HashMap::new();
    let on_centerline = |i: usize, j: usize| i == 0 || i == nx || j == 0;
    let mut vid = |i: usize, j: usize, side: i8, vertices: &mut Vec<Vec3<T>>| -> usize {
        let side = if on_centerline(i, j) { 0 } else { side };
        *index.entry((i, j, side)).or_insert_with(|| {
            let x = -l / 2.0 + l * i as f64 / nx as f64;
            let z = d * j as f64 / nz as f64;
            let xi = 2.0 * x / l;
            let zeta = (d - z) / d;
            let h = if side == 0 { 0.0 } else { 0.5 * b * (1.0 - xi * xi) * (1.0 - zeta * zeta) };
            vertices.push(Vec3::from_f64([x, f64::from(side) * h, z]));
            vertices.len() - 1
        })
    };

    let mut triangles = Vec::new();
    for side in [1i8, -1] {
        for i in 0..nx {
            for j in 0..nz {
                let a = vid(i, j, side, &mut vertices);
                let bq = vid(i, j + 1, side, &mut vertices);
                let c = vid(i + 1, j + 1, side, &mut vertices);
                let dq = vid(i + 1, j, side, &mut vertices);
                // the aft keel corner would otherwise produce a triangle lying on the centerplane
                let quad = if i == nx - 1 && j == 0 {
                    [[a, bq, dq], [bq, c, dq]]
                } else {
                    [[a, bq, c], [a, c, dq]]
                };
                for [p, q, r] in quad {
                    triangles.push(if side > 0 { [p, q, r] } else { [p, r, q] });
                }
            }
        }
    }
    for i in 0..nx {
        let s0 = vid(i, nz, 1, &mut vertices);
        let s1 = vid(i + 1, nz, 1, &mut vertices);
        let p0 = vid(i, nz, -1, &mut vertices);
        let p1 = vid(i + 1, nz, -1, &mut vertices);
        if p1 != s1 {
            triangles.push([p0, p1, s1]);
        }
        if p0 != s0 {
            triangles.push([p0, s1, s0]);
        }
    }
    TriMesh::new(vertices, triangles).expect("hull connectivity is valid")
}
