use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip_below_plane_detailed, pressure_force, signed_volume, TriMesh};
use crate::linalg::Vec3;
use crate::scalar::Real;

/// Fluid and scale constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConstants<T> {
    /// Water density, kg/m³.
    pub rho: T,
    /// Gravity, m/s².
    pub g: T,
    /// Kinematic viscosity, m²/s.
    pub nu: T,
    /// Reference length for Reynolds and Froude numbers, m.
    pub lref: T,
}

impl<T: Real> Default for FlowConstants<T> {
    /// Fresh water at 20 °C and a 5.72 m model.
    fn default() -> Self {
        Self {
            rho: T::lit(998.0),
            g: T::lit(9.81),
            nu: T::lit(1.09e-6),
            lref: T::lit(5.72),
        }
    }
}

impl<T: Real> FlowConstants<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho", self.rho), ("g", self.g), ("nu", self.nu), ("lref", self.lref)] {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::invalid(format!("flow constant {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn reynolds(&self, speed: T) -> T {
        speed * self.lref / self.nu
    }
}

/// Floating position and the submerged quantities at that position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydroState<T> {
    /// Vertical translation applied to the mesh, m.
    pub sinkage: T,
    pub submerged_volume: T,
    /// Hull skin below the waterline (waterplane cap excluded).
    pub wetted_area: T,
    pub buoyancy_force: Vec3<T>,
    pub iterations: usize,
}

/// Vertical-only hydrostatic equilibrium for a hull of the given mass (kg).
///
/// Bisects on the vertical translation `s` so that `ρ·V_sub = weight`, with
/// the free surface on `Z = 0`, to a relative tolerance of `1e-8`.
pub fn hydrostatic_equilibrium<T: Real>(
    mesh: &TriMesh<T>,
    weight: T,
    constants: &FlowConstants<T>,
) -> Result<HydroState<T>> {
    constants.validate()?;
    if !mesh.is_closed() {
        return Err(Error::invalid("hydrostatic equilibrium needs a closed mesh"));
    }
    if !(weight > T::zero() && weight.is_finite()) {
        return Err(Error::invalid(format!(
            "weight {weight} does not bracket an equilibrium (must be positive)"
        )));
    }
    let rho = constants.rho;
    let total = signed_volume(mesh)?;
    let tol = T::lit(1e-8).max(T::epsilon() * T::lit(128.0));
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::invalid("empty mesh"))?;

    // mesh translated by s, waterplane at 0  <=>  untranslated mesh clipped at -s
    let displaced = |s: T| -> Result<T> {
        let clipped = clip_below_plane_detailed(mesh, -s);
        Ok(rho * signed_volume(&clipped.mesh)? - weight)
    };

    let max_displacement = rho * total;
    if max_displacement < weight * (T::one() - tol) {
        return Err(Error::Infeasible(format!(
            "weight {weight} exceeds maximum displacement {max_displacement}"
        )));
    }

    let (mut s_deep, mut s_high) = (-hi.z, -lo.z);
    let mut s = s_deep;
    let mut iterations = 0;
    let mut residual = displaced(s_deep)?;
    if residual.abs() > tol * weight {
        const MAX_ITER: usize = 200;
        loop {
            if iterations == MAX_ITER {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: (residual / weight).as_f64(),
                });
            }
            iterations += 1;
            s = (s_deep + s_high) * T::lit(0.5);
            residual = displaced(s)?;
            if residual.abs() <= tol * weight {
                break;
            }
            if residual > T::zero() {
                s_deep = s;
            } else {
                s_high = s;
            }
        }
    }

    let clipped = clip_below_plane_detailed(mesh, -s);
    let submerged_volume = signed_volume(&clipped.mesh)?;
    let g = constants.g;
    let buoyancy_force = pressure_force(&clipped.mesh, |x| -rho * g * (x.z + s))?;
    Ok(HydroState {
        sinkage: s,
        submerged_volume,
        wetted_area: clipped.wetted_area(),
        buoyancy_force,
        iterations,
    })
}

/// ITTC-57 friction line `C_F = 0.075 / (log₁₀ Re − 2)²`.
pub fn ittc57_cf<T: Real>(speed: T, constants: &FlowConstants<T>) -> Result<T> {
    constants.validate()?;
    if !(speed > T::zero()) {
        return Err(Error::Domain(format!("speed must be positive, got {speed}")));
    }
    let re = constants.reynolds(speed);
    let d = re.log10() - T::lit(2.0);
    if !(d > T::zero()) {
        return Err(Error::Domain(format!("Reynolds number {re} must exceed 100")));
    }
    Ok(T::lit(0.075) / (d * d))
}

/// Viscous drag `½ ρ C_F S V²`.
pub fn friction_drag<T: Real>(speed: T, wetted_area: T, constants: &FlowConstants<T>) -> Result<T> {
    let cf = ittc57_cf(speed, constants)?;
    Ok(T::lit(0.5) * constants.rho * cf * wetted_area * speed * speed)
}

/// Froude number `V / √(g·Lref)`.
pub fn froude<T: Real>(speed: T, constants: &FlowConstants<T>) -> T {
    speed / (constants.g * constants.lref).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{icosphere, unit_cube};
    use std::f64::consts::PI;

    fn consts(lref: f64, nu: f64) -> FlowConstants<f64> {
        FlowConstants {
            lref,
            nu,
            ..FlowConstants::default()
        }
    }

    #[test]
    fn cube_floats_half_submerged() {
        let c = FlowConstants::<f64>::default();
        let w = 0.5 * c.rho;
        let st = hydrostatic_equilibrium(&unit_cube(), w, &c).unwrap();
        assert!((st.sinkage + 0.5).abs() < 1e-8);
        assert!((c.rho * st.submerged_volume - w).abs() / w <= 1e-8);
        assert!((st.wetted_area - 3.0).abs() < 1e-7);
        let expected = c.rho * c.g * st.submerged_volume;
        assert!((st.buoyancy_force.z - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn fully_submerged_limit() {
        let c = FlowConstants::<f64>::default();
        let st = hydrostatic_equilibrium(&unit_cube(), c.rho, &c).unwrap();
        assert!((st.sinkage + 1.0).abs() < 1e-12, "deck at waterline");
        assert!((st.submerged_volume - 1.0).abs() < 1e-12);
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn overweight_is_infeasible() {
        let c = FlowConstants::<f64>::default();
        let err = hydrostatic_equilibrium(&unit_cube(), 1.01 * c.rho, &c).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn nonpositive_weight_rejected() {
        let c = FlowConstants::<f64>::default();
        assert!(hydrostatic_equilibrium(&unit_cube(), 0.0, &c).is_err());
    }

    #[test]
    fn sphere_waterline_at_center() {
        let c = FlowConstants::<f64>::default();
        let s = icosphere::<f64>(1.0, 4);
        let st = hydrostatic_equilibrium(&s, c.rho * 2.0 * PI / 3.0, &c).unwrap();
        // edge length of the 5120-triangle sphere is ~0.06
        assert!(st.sinkage.abs() < 0.06, "{}", st.sinkage);
    }

    #[test]
    fn ittc_reference_values() {
        let c6 = consts(1.0, 1e-6);
        assert!((ittc57_cf(1.0, &c6).unwrap() - 4.6875e-3).abs() < 1e-15);
        assert!((ittc57_cf(10.0, &c6).unwrap() - 3.0e-3).abs() < 1e-15);
        assert!(matches!(ittc57_cf(0.0, &c6), Err(Error::Domain(_))));
        // Re = 50
        assert!(matches!(ittc57_cf(50e-6, &c6), Err(Error::Domain(_))));
    }

    #[test]
    fn froude_values() {
        let c = FlowConstants::<f64>::default();
        assert_eq!(froude(0.0, &c), 0.0);
        assert!((froude((c.g * c.lref).sqrt(), &c) - 1.0).abs() < 1e-15);
        let fr = froude(2.097, &c);
        assert!((fr - 0.28).abs() < 5e-4, "{fr}");
    }

    #[test]
    fn invalid_constants_rejected() {
        let c = FlowConstants {
            rho: -1.0,
            ..FlowConstants::<f64>::default()
        };
        assert!(c.validate().is_err());
    }
}
