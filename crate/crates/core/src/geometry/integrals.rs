use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::linalg::Vec3;
use crate::scalar::{pairwise_sum, Real};

/// Enclosed volume by the divergence theorem, `Σ v0·(v1×v2)/6`.
///
/// Positive for outward orientation. Vertices are taken relative to the
/// bounding-box center to limit cancellation for meshes far from the origin.
pub fn signed_volume<T: Real>(mesh: &TriMesh<T>) -> Result<T> {
    if !mesh.is_closed() {
        return Err(Error::invalid("signed volume needs a closed, consistently oriented mesh"));
    }
    let Some((lo, hi)) = mesh.bounds() else {
        return Ok(T::zero());
    };
    let r = (lo + hi) * T::lit(0.5);
    let terms: Vec<T> = (0..mesh.triangle_count())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            (a - r).dot((b - r).cross(c - r))
        })
        .collect();
    Ok(pairwise_sum(&terms) / T::lit(6.0))
}

/// Force exerted on the body by a pressure field acting on its surface.
///
/// Evaluates `∫ p n dΓ` with `n` the normal pointing from the fluid into the
/// body, which for an outward-oriented mesh is `−Σ p(centroid)·(area·n̂_out)`.
/// A hydrostatic field `p = −ρ g Z` over a submerged closed body therefore
/// yields the upward buoyancy `(0, 0, ρ g V)`.
pub fn pressure_force<T: Real>(mesh: &TriMesh<T>, pressure: impl Fn(Vec3<T>) -> T) -> Result<Vec3<T>> {
    let n = mesh.triangle_count();
    let mut fx = Vec::with_capacity(n);
    let mut fy = Vec::with_capacity(n);
    let mut fz = Vec::with_capacity(n);
    for t in 0..n {
        let c = mesh.centroid(t);
        let p = pressure(c);
        if !p.is_finite() {
            return Err(Error::Numerical(format!("non-finite pressure {p} at triangle {t}")));
        }
        let f = mesh.area_normal(t) * (-p);
        fx.push(f.x);
        fy.push(f.y);
        fz.push(f.z);
    }
    Ok(Vec3::new(pairwise_sum(&fx), pairwise_sum(&fy), pairwise_sum(&fz)))
}

/// Longitudinal (`e_X`) component of [`pressure_force`].
pub fn pressure_resistance<T: Real>(mesh: &TriMesh<T>, pressure: impl Fn(Vec3<T>) -> T) -> Result<T> {
    Ok(pressure_force(mesh, pressure)?.x)
}

/// Result of clipping a closed mesh against a horizontal plane.
#[derive(Debug, Clone)]
pub struct ClippedMesh<T> {
    /// Closed mesh of the region below the plane; hull triangles come first,
    /// followed by the waterplane cap.
    pub mesh: TriMesh<T>,
    pub hull_triangles: usize,
}

impl<T: Real> ClippedMesh<T> {
    /// Area of the original surface below the plane, cap excluded.
    pub fn wetted_area(&self) -> T {
        let areas: Vec<T> = (0..self.hull_triangles)
            .map(|t| self.mesh.area_normal(t).norm())
            .collect();
        pairwise_sum(&areas)
    }

    pub fn cap_triangles(&self) -> usize {
        self.mesh.triangle_count() - self.hull_triangles
    }
}

/// Keeps the part of a closed mesh with `Z ≤ z` and closes it with a cap.
pub fn clip_below_plane<T: Real>(mesh: &TriMesh<T>, z: T) -> TriMesh<T> {
    clip_below_plane_detailed(mesh, z).mesh
}

/// Like [`clip_below_plane`] but also reports which triangles form the cap.
///
/// Triangles straddling the plane are cut along their edges; every cut point
/// is shared between the two triangles adjacent to the cut edge, and the open
/// boundary left on the plane is closed by a fan around a single center, so
/// the output is watertight whenever the input is.
pub fn clip_below_plane_detailed<T: Real>(mesh: &TriMesh<T>, z: T) -> ClippedMesh<T> {
    let src = mesh.vertices();
    let depth: Vec<T> = src.iter().map(|v| v.z - z).collect();

    let mut vertices: Vec<Vec3<T>> = Vec::new();
    let mut kept: HashMap<usize, usize> = HashMap::new();
    let mut cuts: HashMap<(usize, usize), usize> = HashMap::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    for &tri in mesh.triangles() {
        let below = tri.iter().filter(|&&i| depth[i] <= T::zero()).count();
        if below == 0 {
            continue;
        }
        let mut poly: Vec<usize> = Vec::with_capacity(4);
        for k in 0..3 {
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            let (dp, dq) = (depth[p], depth[q]);
            if dp <= T::zero() {
                let id = *kept.entry(p).or_insert_with(|| {
                    vertices.push(src[p]);
                    vertices.len() - 1
                });
                poly.push(id);
            }
            let crosses = (dp < T::zero() && dq > T::zero()) || (dp > T::zero() && dq < T::zero());
            if crosses {
                let key = (p.min(q), p.max(q));
                let id = *cuts.entry(key).or_insert_with(|| {
                    let (lo, hi) = key;
                    let (dl, dh) = (depth[lo], depth[hi]);
                    let s = dl / (dl - dh);
                    let mut x = src[lo] + (src[hi] - src[lo]) * s;
                    x.z = z;
                    vertices.push(x);
                    vertices.len() - 1
                });
                poly.push(id);
            }
        }
        for k in 1..poly.len().saturating_sub(1) {
            triangles.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    let hull_triangles = triangles.len();

    // open boundary: directed edges whose reverse is missing, in emission order
    let mut directed: HashSet<(usize, usize)> = HashSet::with_capacity(triangles.len() * 3);
    for &[a, b, c] in &triangles {
        directed.extend([(a, b), (b, c), (c, a)]);
    }
    let mut boundary: Vec<(usize, usize)> = Vec::new();
    for &[a, b, c] in &triangles {
        for e in [(a, b), (b, c), (c, a)] {
            if !directed.contains(&(e.1, e.0)) {
                boundary.push(e);
            }
        }
    }
    if !boundary.is_empty() {
        let mut seen = HashSet::new();
        let mut sum = Vec3::zero();
        let mut count = 0usize;
        for &(u, _) in &boundary {
            if seen.insert(u) {
                sum += vertices[u];
                count += 1;
            }
        }
        let mut center = sum * (T::one() / T::from_count(count));
        center.z = z;
        vertices.push(center);
        let c = vertices.len() - 1;
        for &(u, v) in &boundary {
            triangles.push([v, u, c]);
        }
    }

    let mesh = TriMesh::new(vertices, triangles).expect("clipped connectivity is valid");
    ClippedMesh {
        mesh,
        hull_triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{box_mesh, icosphere, unit_cube};
    use crate::linalg::Mat3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_cube_volume() {
        assert!((signed_volume(&unit_cube::<f64>()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverted_cube_volume_is_negative() {
        let v = signed_volume(&unit_cube::<f64>().inverted()).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
    }

    #[test]
    fn open_mesh_volume_errors() {
        let v = vec![Vec3::<f64>::zero(), Vec3::unit(0), Vec3::unit(1)];
        let m = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert!(signed_volume(&m).is_err());
    }

    #[test]
    fn icosphere_volume_close_to_analytic() {
        let s = icosphere::<f64>(1.0, 4);
        let v = signed_volume(&s).unwrap();
        let exact = 4.0 * PI / 3.0;
        assert!((v - exact).abs() / exact < 5e-3, "{v}");
        assert!(v < exact);
    }

    #[test]
    fn clip_cube_half() {
        let c = clip_below_plane_detailed(&unit_cube::<f64>(), 0.5);
        assert!(c.mesh.is_closed());
        assert!(c.mesh.is_watertight());
        assert!((signed_volume(&c.mesh).unwrap() - 0.5).abs() < 1e-15);
        // bottom face + 4 half side faces
        assert!((c.wetted_area() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn clip_above_mesh_is_noop_volume() {
        let m = unit_cube::<f64>();
        let c = clip_below_plane_detailed(&m, 2.0);
        assert_eq!(c.cap_triangles(), 0);
        assert!((signed_volume(&c.mesh).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clip_below_mesh_is_empty() {
        let c = clip_below_plane(&unit_cube::<f64>(), -1.0);
        assert_eq!(c.triangle_count(), 0);
        assert_eq!(signed_volume(&c).unwrap(), 0.0);
    }

    #[test]
    fn clip_through_vertices_on_plane() {
        // plane passes exactly through the bottom face
        let c = clip_below_plane(&unit_cube::<f64>(), 0.0);
        assert!(c.is_closed());
        assert!(signed_volume(&c).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hemisphere_volume() {
        let s = icosphere::<f64>(1.0, 4);
        let c = clip_below_plane(&s, 0.0);
        assert!(c.is_closed());
        let v = signed_volume(&c).unwrap();
        let exact = 2.0 * PI / 3.0;
        assert!((v - exact).abs() / exact < 5e-3, "{v}");
    }

    #[test]
    fn constant_pressure_on_closed_mesh_cancels() {
        let f = pressure_force(&unit_cube::<f64>(), |_| 5.0).unwrap();
        assert!(f.max_abs() < 1e-12);
    }

    #[test]
    fn archimedes_on_submerged_box() {
        let (rho, g) = (998.0f64, 9.81);
        let m = box_mesh(Vec3::new(-1.0, -0.5, -3.0), Vec3::new(1.0, 0.5, -1.0));
        let v = signed_volume(&m).unwrap();
        let f = pressure_force(&m, |x| -rho * g * x.z).unwrap();
        assert!((f.z - rho * g * v).abs() <= 1e-10 * rho * g * v);
        assert!(f.x.abs() < 1e-9 && f.y.abs() < 1e-9);
    }

    #[test]
    fn single_triangle_unit_pressure() {
        let v = vec![Vec3::<f64>::zero(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0)];
        let m = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        // area 3, outward normal +z; the force on the body pushes along −n̂_out
        let f = pressure_force(&m, |_| 1.0).unwrap();
        assert_eq!(f, Vec3::new(0.0, 0.0, -3.0));
    }

    #[test]
    fn non_finite_pressure_names_triangle() {
        let err = pressure_force(&unit_cube::<f64>(), |x| if x.z > 0.9 { f64::NAN } else { 0.0 }).unwrap_err();
        assert!(err.to_string().contains("triangle 2"), "{err}");
    }

    proptest! {
        #[test]
        fn volume_invariant_under_rigid_motion(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
            angle in -3.0f64..3.0,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
        ) {
            let m = icosphere::<f64>(1.3, 2);
            let v0 = signed_volume(&m).unwrap();
            let r = Mat3::axis_angle(Vec3::new(ax, ay, az), angle);
            let v1 = signed_volume(&m.transformed(&r, Vec3::new(tx, ty, tz))).unwrap();
            prop_assert!((v1 - v0).abs() <= 1e-12 * v0.abs());
        }

        #[test]
        fn clip_is_watertight_and_monotone(z1 in -1.2f64..1.2, dz in 0.0f64..1.0) {
            let m = icosphere::<f64>(1.0, 2);
            let a = clip_below_plane(&m, z1);
            let b = clip_below_plane(&m, z1 + dz);
            prop_assert!(a.is_closed() && b.is_closed());
            prop_assert!(a.triangle_count() == 0 || a.is_watertight());
            let (va, vb) = (signed_volume(&a).unwrap(), signed_volume(&b).unwrap());
            prop_assert!(va <= vb + 1e-14);
        }

        #[test]
        fn constant_pressure_cancels_on_sphere(p in -1e3f64..1e3) {
            let m = icosphere::<f64>(1.0, 2);
            let f = pressure_force(&m, |_| p).unwrap();
            prop_assert!(f.norm() <= 1e-10 * p.abs().max(1.0) * m.surface_area());
        }
    }
}
