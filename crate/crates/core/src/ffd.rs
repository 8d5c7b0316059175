//! Trivariate Bernstein free-form deformation.
//!
//! A point `X` is mapped to the unit reference cube by the affine map
//! `ψ(X) = diag(1/lengths)·Rᵀ·(X − origin)`. Inside the cube the reference
//! point moves to `Σ b_l(y₀) b_m(y₁) b_n(y₂) (P_lmn + μ_lmn)` where `P_lmn`
//! is the regular grid `(l/L, m/M, n/N)` and `μ_lmn` the control point
//! displacement; the result is mapped back with `ψ⁻¹`. Points outside the
//! closed cube are left untouched.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Highest polynomial degree accepted per lattice axis.
pub const MAX_DEGREE: usize = 20;

/// `C(n, k)` by the multiplicative recurrence; exact for `n ≤ 20`.
pub fn binomial(n: usize, k: usize) -> Result<u64> {
    if k > n {
        return Err(Error::invalid(format!("binomial index {k} exceeds degree {n}")));
    }
    if n > MAX_DEGREE {
        return Err(Error::invalid(format!("degree {n} exceeds maximum {MAX_DEGREE}")));
    }
    let k = k.min(n - k);
    let mut c: u64 = 1;
    for j in 0..k {
        c = c * (n - j) as u64 / (j + 1) as u64;
    }
    Ok(c)
}

/// Bernstein basis polynomial `C(n,i) tⁱ (1−t)ⁿ⁻ⁱ`.
pub fn bernstein<T: Real>(i: usize, n: usize, t: T) -> Result<T> {
    let c = binomial(n, i)?;
    Ok(T::lit(c as f64) * t.powi(i as i32) * (T::one() - t).powi((n - i) as i32))
}

/// All `n + 1` Bernstein values at `t`.
fn bernstein_all<T: Real>(n: usize, t: T) -> Vec<T> {
    (0..=n)
        .map(|i| bernstein(i, n, t).expect("degree validated at lattice construction"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfdLattice<T> {
    origin: Vec3<T>,
    rotation: Mat3<T>,
    lengths: Vec3<T>,
    degrees: [usize; 3],
    /// Indexed `(l·(M+1) + m)·(N+1) + n`, in reference-cube units.
    displacements: Vec<Vec3<T>>,
}

impl<T: Real> FfdLattice<T> {
    /// Undeformed lattice. `degrees` are the polynomial degrees `(L, M, N)`.
    pub fn new(origin: Vec3<T>, rotation: Mat3<T>, lengths: Vec3<T>, degrees: [usize; 3]) -> Result<Self> {
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        if rotation.orthogonality_error() > tol || (rotation.det() - T::one()).abs() > tol {
            return Err(Error::invalid("lattice rotation must be a proper orthogonal matrix"));
        }
        if (0..3).any(|k| !(lengths[k] > T::zero() && lengths[k].is_finite())) {
            return Err(Error::invalid("lattice edge lengths must be positive"));
        }
        if degrees.iter().any(|&d| d == 0 || d > MAX_DEGREE) {
            return Err(Error::invalid(format!(
                "lattice degrees must lie in 1..={MAX_DEGREE}, got {degrees:?}"
            )));
        }
        let count = degrees.iter().map(|d| d + 1).product();
        Ok(Self {
            origin,
            rotation,
            lengths,
            degrees,
            displacements: vec![Vec3::zero(); count],
        })
    }

    /// Axis-aligned lattice.
    pub fn axis_aligned(origin: Vec3<T>, lengths: Vec3<T>, degrees: [usize; 3]) -> Result<Self> {
        Self::new(origin, Mat3::identity(), lengths, degrees)
    }

    pub fn degrees(&self) -> [usize; 3] {
        self.degrees
    }

    pub fn origin(&self) -> Vec3<T> {
        self.origin
    }

    pub fn rotation(&self) -> &Mat3<T> {
        &self.rotation
    }

    pub fn lengths(&self) -> Vec3<T> {
        self.lengths
    }

    pub fn control_point_count(&self) -> usize {
        self.displacements.len()
    }

    fn index(&self, l: usize, m: usize, n: usize) -> Result<usize> {
        let [dl, dm, dn] = self.degrees;
        if l > dl || m > dm || n > dn {
            return Err(Error::invalid(format!(
                "control point ({l},{m},{n}) outside lattice of degrees {:?}",
                self.degrees
            )));
        }
        Ok((l * (dm + 1) + m) * (dn + 1) + n)
    }

    pub fn displacement(&self, l: usize, m: usize, n: usize) -> Result<Vec3<T>> {
        Ok(self.displacements[self.index(l, m, n)?])
    }

    pub fn set_displacement(&mut self, l: usize, m: usize, n: usize, d: Vec3<T>) -> Result<()> {
        let i = self.index(l, m, n)?;
        self.displacements[i] = d;
        Ok(())
    }

    /// Iterator over `((l, m, n), displacement)` for displaced control points.
    pub fn displaced_points(&self) -> impl Iterator<Item = ([usize; 3], Vec3<T>)> + '_ {
        let [_, dm, dn] = self.degrees;
        self.displacements
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != Vec3::zero())
            .map(move |(i, &d)| {
                let n = i % (dn + 1);
                let m = (i / (dn + 1)) % (dm + 1);
                let l = i / ((dn + 1) * (dm + 1));
                ([l, m, n], d)
            })
    }

    /// The map `ψ` to reference coordinates.
    pub fn to_reference(&self, x: Vec3<T>) -> Vec3<T> {
        let local = self.rotation.transpose().mul_vec(x - self.origin);
        Vec3::new(local.x / self.lengths.x, local.y / self.lengths.y, local.z / self.lengths.z)
    }

    /// The inverse map `ψ⁻¹`.
    pub fn from_reference(&self, y: Vec3<T>) -> Vec3<T> {
        self.origin + self.rotation.mul_vec(y.hadamard(self.lengths))
    }

    /// Whether a reference point lies in the closed unit cube.
    pub fn contains_reference(y: Vec3<T>) -> bool {
        (0..3).all(|k| y[k] >= T::zero() && y[k] <= T::one())
    }

    /// Physical position of the displaced control point `P⁰_lmn`.
    pub fn control_point(&self, l: usize, m: usize, n: usize) -> Result<Vec3<T>> {
        let [dl, dm, dn] = self.degrees;
        let p = Vec3::new(
            T::from_count(l) / T::from_count(dl),
            T::from_count(m) / T::from_count(dm),
            T::from_count(n) / T::from_count(dn),
        );
        Ok(self.from_reference(p + self.displacement(l, m, n)?))
    }

    /// Deformation `T = ψ⁻¹ ∘ T̂ ∘ ψ`.
    ///
    /// Uses linear precision of the Bernstein basis, `Σ b_lmn(Y)·P_lmn = Y`,
    /// to evaluate only the displacement sum; zero displacements therefore
    /// return `x` bit for bit.
    pub fn deform_point(&self, x: Vec3<T>) -> Vec3<T> {
        let y = self.to_reference(x);
        if !Self::contains_reference(y) {
            return x;
        }
        let [dl, dm, dn] = self.degrees;
        let bl = bernstein_all(dl, y.x);
        let bm = bernstein_all(dm, y.y);
        let bn = bernstein_all(dn, y.z);
        let mut d = Vec3::zero();
        let mut i = 0;
        for &wl in &bl {
            for &wm in &bm {
                let wlm = wl * wm;
                for &wn in &bn {
                    let mu = self.displacements[i];
                    if mu != Vec3::zero() {
                        d += mu * (wlm * wn);
                    }
                    i += 1;
                }
            }
        }
        if d == Vec3::zero() {
            return x;
        }
        x + self.rotation.mul_vec(d.hadamard(self.lengths))
    }

    /// Applies [`deform_point`](Self::deform_point) to every vertex; connectivity is unchanged.
    pub fn deform_mesh(&self, mesh: &TriMesh<T>) -> TriMesh<T> {
        let moved: Vec<Vec3<T>> = mesh.vertices().par_iter().map(|&v| self.deform_point(v)).collect();
        mesh.with_vertices(moved).expect("vertex count preserved")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// One geometric design parameter: a displacement component of one control point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    /// Control point `(l, m, n)`.
    pub point: [usize; 3],
    pub axis: Axis,
    pub lower: f64,
    pub upper: f64,
}

/// Declarative lattice configuration, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeProfile {
    pub origin: [f64; 3],
    pub lengths: [f64; 3],
    pub degrees: [usize; 3],
    #[serde(default = "default_axis")]
    pub rotation_axis: [f64; 3],
    #[serde(default)]
    pub rotation_angle_deg: f64,
    /// Copy every binding to the control point mirrored across the local
    /// y mid-plane, negating the y component.
    #[serde(default)]
    pub mirror_y: bool,
    pub bindings: Vec<Binding>,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

const BUNDLED_PROFILE: &str = include_str!("../profiles/hull.toml");

impl Default for LatticeProfile {
    /// Six-parameter hull profile matching the built-in parabolic hull.
    fn default() -> Self {
        Self::from_toml(BUNDLED_PROFILE).expect("bundled profile parses")
    }
}

impl LatticeProfile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.bindings {
            if !(b.lower < b.upper) {
                return Err(Error::invalid(format!("binding {} has empty bounds", b.name)));
            }
            if (0..3).any(|k| b.point[k] > self.degrees[k]) {
                return Err(Error::invalid(format!("binding {} addresses a point outside the lattice", b.name)));
            }
            if self.mirror_y && b.axis == Axis::Y && 2 * b.point[1] == self.degrees[1] {
                return Err(Error::invalid(format!(
                    "binding {} moves a mid-plane point in y, which cannot stay symmetric",
                    b.name
                )));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.bindings.iter().map(|b| b.name.clone()).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.bindings.iter().map(|b| (b.lower, b.upper)).collect()
    }

    /// Undeformed lattice described by the profile.
    pub fn base_lattice<T: Real>(&self) -> Result<FfdLattice<T>> {
        let rotation = Mat3::axis_angle(
            Vec3::from_f64(self.rotation_axis),
            T::lit(self.rotation_angle_deg.to_radians()),
        );
        FfdLattice::new(
            Vec3::from_f64(self.origin),
            rotation,
            Vec3::from_f64(self.lengths),
            self.degrees,
        )
    }
}

/// Values of the geometric design parameters, one per profile binding.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoParams<T> {
    pub values: Vec<T>,
}

impl<T: Real> GeoParams<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![T::zero(); n])
    }

    pub fn validate(&self, profile: &LatticeProfile) -> Result<()> {
        if self.values.len() != profile.bindings.len() {
            return Err(Error::DimensionMismatch {
                expected: profile.bindings.len(),
                got: self.values.len(),
            });
        }
        for (v, b) in self.values.iter().zip(&profile.bindings) {
            let x = v.as_f64();
            if !(x >= b.lower && x <= b.upper) {
                return Err(Error::OutOfBounds {
                    name: b.name.clone(),
                    value: x,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
        Ok(())
    }
}

/// Builds the deformed lattice for a parameter vector.
///
/// Each value is written to its bound control point component; with
/// `mirror_y` the point mirrored across the y mid-plane gets the same value
/// with the y component negated.
pub fn hull_lattice<T: Real>(params: &GeoParams<T>, profile: &LatticeProfile) -> Result<FfdLattice<T>> {
    params.validate(profile)?;
    let mut lattice = profile.base_lattice()?;
    let my = profile.degrees[1];
    for (&v, b) in params.values.iter().zip(&profile.bindings) {
        let [l, m, n] = b.point;
        let k = b.axis.index();
        let mut d = lattice.displacement(l, m, n)?;
        d[k] = v;
        lattice.set_displacement(l, m, n, d)?;
        if profile.mirror_y {
            let mut dm = lattice.displacement(l, my - m, n)?;
            dm[k] = if b.axis == Axis::Y { -v } else { v };
            lattice.set_displacement(l, my - m, n, dm)?;
        }
    }
    Ok(lattice)
}
