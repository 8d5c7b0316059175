//! Rigid-body kinematics with unit quaternions.
//!
//! The state carries the center of gravity `X^G`, its velocity, the
//! orientation quaternion `q` and the angular velocity `ω` in the global
//! frame. The equations advanced by [`step`] are
//!
//! ```text
//! m Ẍ^G          = m g + F(t)
//! J ω̇ + ω × J ω  = M(t),      J = R(q) I^G R(q)ᵀ
//! q̇              = ½ [0, ω] q
//! ```
//!
//! integrated with the classical fourth-order Runge–Kutta scheme; the
//! quaternion is renormalized after every step.

use std::io::Write as _;
use std::ops::Mul;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{clip_below_plane, FlowConstants, TriMesh};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Quaternion `[s, v]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T> {
    pub s: T,
    pub v: Vec3<T>,
}

impl<T: Real> Quaternion<T> {
    pub fn new(s: T, v: Vec3<T>) -> Self {
        Self { s, v }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), Vec3::zero())
    }

    /// Unit quaternion rotating by `angle` about `axis`.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let half = angle * T::lit(0.5);
        Self::new(half.cos(), axis.normalized() * half.sin())
    }

    pub fn norm(&self) -> T {
        (self.s * self.s + self.v.dot(self.v)).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > T::zero() && n.is_finite()) {
            return Err(Error::Numerical(format!("cannot normalize quaternion of norm {n}")));
        }
        Ok(self.scale(T::one() / n))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.s, -self.v)
    }

    pub fn scale(&self, k: T) -> Self {
        Self::new(self.s * k, self.v * k)
    }

    fn add(&self, o: &Self) -> Self {
        Self::new(self.s + o.s, self.v + o.v)
    }

    /// Largest componentwise difference.
    pub fn max_abs_diff(&self, o: &Self) -> T {
        (self.s - o.s).abs().max((self.v - o.v).max_abs())
    }

    /// Rotation matrix of the quaternion.
    ///
    /// Quaternions whose norm is off by more than `1e-6` are normalized first.
    pub fn to_rotation(&self) -> Result<Mat3<T>> {
        let n = self.norm();
        if n == T::zero() {
            return Err(Error::invalid("zero quaternion has no rotation"));
        }
        let q = if (n - T::one()).abs() > T::lit(1e-6) {
            self.normalized()?
        } else {
            *self
        };
        let (s, x, y, z) = (q.s, q.v.x, q.v.y, q.v.z);
        let two = T::lit(2.0);
        let one = T::one();
        Ok(Mat3::new([
            [one - two * (y * y + z * z), two * (x * y - s * z), two * (x * z + s * y)],
            [two * (x * y + s * z), one - two * (x * x + z * z), two * (y * z - s * x)],
            [two * (x * z - s * y), two * (y * z + s * x), one - two * (x * x + y * y)],
        ]))
    }
}

impl<T: Real> Mul for Quaternion<T> {
    type Output = Self;

    /// Hamilton product `[s₁s₂ − v₁·v₂, s₁v₂ + s₂v₁ + v₁×v₂]`.
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.s * o.s - self.v.dot(o.v),
            o.v * self.s + self.v * o.s + self.v.cross(o.v),
        )
    }
}

/// Skew tensor with `skew(ω)·u = ω × u`.
pub fn skew<T: Real>(w: Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    Mat3::new([[z, -w.z, w.y], [w.z, z, -w.x], [-w.y, w.x, z]])
}

/// One explicit Euler step of `Ṙ = skew(ω)·R`, without re-orthogonalization.
pub fn evolve_rotation_matrix<T: Real>(r: &Mat3<T>, omega: Vec3<T>, dt: T) -> Mat3<T> {
    r.add(&skew(omega).mul_mat(r).scale(dt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState<T> {
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
    pub orientation: Quaternion<T>,
    /// Angular velocity in the global frame.
    pub omega: Vec3<T>,
}

impl<T: Real> RigidState<T> {
    pub fn at_rest(position: Vec3<T>) -> Self {
        Self {
            position,
            velocity: Vec3::zero(),
            orientation: Quaternion::identity(),
            omega: Vec3::zero(),
        }
    }

    fn offset(&self, d: &Derivative<T>, h: T) -> Self {
        Self {
            position: self.position + d.position * h,
            velocity: self.velocity + d.velocity * h,
            orientation: self.orientation.add(&d.orientation.scale(h)),
            omega: self.omega + d.omega * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyProps<T> {
    pub mass: T,
    /// Inertia about the center of gravity, body frame.
    pub inertia: Mat3<T>,
    pub gravity: Vec3<T>,
}

impl<T: Real> BodyProps<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > T::zero() && self.mass.is_finite()) {
            return Err(Error::invalid(format!("mass must be positive, got {}", self.mass)));
        }
        let i = &self.inertia.m;
        let scale = self.inertia.max_abs();
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0)) * scale;
        for r in 0..3 {
            for c in 0..3 {
                if (i[r][c] - i[c][r]).abs() > tol {
                    return Err(Error::invalid("inertia matrix must be symmetric"));
                }
            }
        }
        // leading principal minors
        let m1 = i[0][0];
        let m2 = i[0][0] * i[1][1] - i[0][1] * i[1][0];
        let m3 = self.inertia.det();
        if !(m1 > T::zero() && m2 > T::zero() && m3 > T::zero()) {
            return Err(Error::invalid("inertia matrix must be positive definite"));
        }
        Ok(())
    }

    /// Global-frame inertia `R I Rᵀ`.
    pub fn world_inertia(&self, r: &Mat3<T>) -> Mat3<T> {
        r.mul_mat(&self.inertia).mul_mat(&r.transpose())
    }

    pub fn kinetic_energy(&self, state: &RigidState<T>) -> Result<T> {
        let j = self.world_inertia(&state.orientation.to_rotation()?);
        let half = T::lit(0.5);
        Ok(half * self.mass * state.velocity.dot(state.velocity) + half * state.omega.dot(j.mul_vec(state.omega)))
    }

    pub fn rotational_energy(&self, state: &RigidState<T>) -> Result<T> {
        let j = self.world_inertia(&state.orientation.to_rotation()?);
        Ok(T::lit(0.5) * state.omega.dot(j.mul_vec(state.omega)))
    }

    /// Angular momentum `R I Rᵀ ω` about the center of gravity.
    pub fn angular_momentum(&self, state: &RigidState<T>) -> Result<Vec3<T>> {
        let j = self.world_inertia(&state.orientation.to_rotation()?);
        Ok(j.mul_vec(state.omega))
    }
}

#[derive(Debug, Clone, Copy)]
struct Derivative<T> {
    position: Vec3<T>,
    velocity: Vec3<T>,
    orientation: Quaternion<T>,
    omega: Vec3<T>,
}

fn derivative<T: Real, F, M>(state: &RigidState<T>, props: &BodyProps<T>, force: &F, moment: &M, t: T) -> Result<Derivative<T>>
where
    F: Fn(T, &RigidState<T>) -> Vec3<T>,
    M: Fn(T, &RigidState<T>) -> Vec3<T>,
{
    let r = state.orientation.normalized()?.to_rotation()?;
    let j = props.world_inertia(&r);
    let f = force(t, state);
    let m = moment(t, state);
    let rhs = m - state.omega.cross(j.mul_vec(state.omega));
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
    let omega_dot = j
        .solve(rhs, tol)
        .ok_or_else(|| Error::Numerical("world inertia became singular".into()))?;
    let w = Quaternion::new(T::zero(), state.omega);
    Ok(Derivative {
        position: state.velocity,
        velocity: props.gravity + f * (T::one() / props.mass),
        orientation: (w * state.orientation).scale(T::lit(0.5)),
        omega: omega_dot,
    })
}

/// Result of one integration step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome<T> {
    pub state: RigidState<T>,
    /// `|‖q‖ − 1|` just before renormalization.
    pub norm_drift: T,
}

/// Advances the state by one fourth-order Runge–Kutta step.
pub fn step<T: Real, F, M>(state: &RigidState<T>, props: &BodyProps<T>, force: F, moment: M, t: T, dt: T) -> Result<RigidState<T>>
where
    F: Fn(T, &RigidState<T>) -> Vec3<T>,
    M: Fn(T, &RigidState<T>) -> Vec3<T>,
{
    Ok(step_detailed(state, props, &force, &moment, t, dt)?.state)
}

pub fn step_detailed<T: Real, F, M>(
    state: &RigidState<T>,
    props: &BodyProps<T>,
    force: &F,
    moment: &M,
    t: T,
    dt: T,
) -> Result<StepOutcome<T>>
where
    F: Fn(T, &RigidState<T>) -> Vec3<T>,
    M: Fn(T, &RigidState<T>) -> Vec3<T>,
{
    if !(dt > T::zero()) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let half = dt * T::lit(0.5);
    let k1 = derivative(state, props, force, moment, t)?;
    let k2 = derivative(&state.offset(&k1, half), props, force, moment, t + half)?;
    let k3 = derivative(&state.offset(&k2, half), props, force, moment, t + half)?;
    let k4 = derivative(&state.offset(&k3, dt), props, force, moment, t + dt)?;
    let w = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let combine = |a: Vec3<T>, b: Vec3<T>, c: Vec3<T>, d: Vec3<T>| (a + (b + c) * two + d) * w;
    let dq = k1
        .orientation
        .add(&k2.orientation.scale(two))
        .add(&k3.orientation.scale(two))
        .add(&k4.orientation)
        .scale(w);
    let q = state.orientation.add(&dq);
    let norm_drift = (q.norm() - T::one()).abs();
    Ok(StepOutcome {
        state: RigidState {
            position: state.position + combine(k1.position, k2.position, k3.position, k4.position),
            velocity: state.velocity + combine(k1.velocity, k2.velocity, k3.velocity, k4.velocity),
            orientation: q.normalized()?,
            omega: state.omega + combine(k1.omega, k2.omega, k3.omega, k4.omega),
        },
        norm_drift,
    })
}

/// Integrates `steps` steps from `t0`, recording every `stride`-th state
/// (the initial state is always recorded).
pub fn simulate<T: Real, F, M>(
    initial: RigidState<T>,
    props: &BodyProps<T>,
    force: F,
    moment: M,
    t0: T,
    dt: T,
    steps: usize,
    stride: usize,
) -> Result<Vec<(T, RigidState<T>)>>
where
    F: Fn(T, &RigidState<T>) -> Vec3<T>,
    M: Fn(T, &RigidState<T>) -> Vec3<T>,
{
    props.validate()?;
    let stride = stride.max(1);
    let mut out = vec![(t0, initial)];
    let mut state = initial;
    for k in 0..steps {
        let t = t0 + dt * T::from_count(k);
        state = step_detailed(&state, props, &force, &moment, t, dt)?.state;
        if (k + 1) % stride == 0 {
            out.push((t0 + dt * T::from_count(k + 1), state));
        }
    }
    Ok(out)
}

/// Writes a trajectory as CSV: `t, X, Y, Z, q_s, q_x, q_y, q_z, omega_x, omega_y, omega_z`.
pub fn write_trajectory_csv<T: Real>(path: impl AsRef<Path>, trajectory: &[(T, RigidState<T>)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    writeln!(buf, "t,X,Y,Z,q_s,q_x,q_y,q_z,omega_x,omega_y,omega_z").unwrap();
    for (t, s) in trajectory {
        let vals = [
            *t,
            s.position.x,
            s.position.y,
            s.position.z,
            s.orientation.s,
            s.orientation.v.x,
            s.orientation.v.y,
            s.orientation.v.z,
            s.omega.x,
            s.omega.y,
            s.omega.z,
        ];
        let line: Vec<String> = vals.iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
        writeln!(buf, "{}", line.join(",")).unwrap();
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Hydrostatic force and moment (about the center of gravity) on a hull
/// whose body-frame mesh is placed at `state`, free surface on `Z = 0`.
pub fn hydrostatic_load<T: Real>(
    body_mesh: &TriMesh<T>,
    constants: &FlowConstants<T>,
    state: &RigidState<T>,
) -> Result<(Vec3<T>, Vec3<T>)> {
    let r = state.orientation.to_rotation()?;
    let placed = body_mesh.transformed(&r, state.position);
    let wet = clip_below_plane(&placed, T::zero());
    let (rho, g) = (constants.rho, constants.g);
    let mut force = Vec3::zero();
    let mut moment = Vec3::zero();
    for t in 0..wet.triangle_count() {
        let c = wet.centroid(t);
        let f = wet.area_normal(t) * (rho * g * c.z);
        force += f;
        moment += (c - state.position).cross(f);
    }
    Ok((force, moment))
}
