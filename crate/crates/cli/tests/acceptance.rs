//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hullspace::extrapolate::{steady_value, TimeSeries, DEFAULT_WINDOW};
use hullspace::ffd::{hull_lattice, FfdLattice, GeoParams, LatticeProfile};
use hullspace::geometry::primitives::icosphere;
use hullspace::geometry::{clip_below_plane, hydrostatic_equilibrium, pressure_force, signed_volume, FlowConstants, TriMesh};
use hullspace::linalg::{Mat3, Matrix, Vec3};
use hullspace::rigidbody::{evolve_rotation_matrix, step_detailed, BodyProps, Quaternion, RigidState};
use hullspace::subspace::{
    bootstrap_eigenvalues, local_linear_gradients, suggest_dim, ActiveSubspace, BootstrapOptions, GradientSet,
    IntervalKind, SampleSet,
};
use hullspace::surface::{error_matrix, ErrorMatrixConfig, GradientSource};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fixed ridge direction in eight dimensions, scaled to `‖a‖₁ = 1` so the
/// ridge argument `aᵀμ` spans exactly `[-1, 1]` over the cube.
fn ridge_direction() -> Vec<f64> {
    let v = [0.7, -0.3, 0.5, 0.1, -0.6, 0.2, 0.4, -0.25];
    let l1: f64 = v.iter().map(|x: &f64| x.abs()).sum();
    v.iter().map(|x| x / l1).collect()
}

/// Uniform samples on `[-1, 1]^m`.
fn cube_samples(n: usize, m: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..=1.0))
}

fn with_outputs(x: Matrix<f64>, f: impl Fn(&[f64]) -> f64) -> SampleSet<f64> {
    let y = x.rows_iter().map(&f).collect();
    let m = x.ncols();
    SampleSet::new(x, Some(y), vec![(-1.0, 1.0); m]).unwrap()
}

fn gradient_rows(x: &Matrix<f64>, g: impl Fn(&[f64]) -> Vec<f64>) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = x.rows_iter().map(g).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Largest principal angle between span(`w`) and the span of the orthonormal
/// columns `basis`, from the residual of `w` after projection.
fn span_angle(w: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
    let residuals: Vec<Vec<f64>> = w
        .iter()
        .map(|c| {
            let mut r = c.clone();
            for b in basis {
                let p = dot(c, b);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= p * bi;
                }
            }
            r
        })
        .collect();
    // spectral norm of the residual block through its Gram matrix
    let k = residuals.len();
    let s = match k {
        1 => dot(&residuals[0], &residuals[0]).sqrt(),
        2 => {
            let (a, b, c) = (
                dot(&residuals[0], &residuals[0]),
                dot(&residuals[0], &residuals[1]),
                dot(&residuals[1], &residuals[1]),
            );
            let tr = a + c;
            let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
            (0.5 * (tr + disc)).sqrt()
        }
        _ => unreachable!(),
    };
    s.min(1.0).asin()
}

fn within(elapsed: Duration, budget: f64) -> bool {
    elapsed.as_secs_f64() < budget
}

fn exact_ridge_recovery() -> Outcome {
    let start = Instant::now();
    let a = ridge_direction();
    let x = cube_samples(104, 8, 1);
    let grads = gradient_rows(&x, |mu| {
        let t = dot(&a, mu);
        a.iter().map(|ai| (3.0 * t * t + 1.0) * ai).collect()
    });
    let sub = ActiveSubspace::from_gradients(&GradientSet::from_rows(grads).unwrap()).unwrap();
    let ratio = sub.eigenvalues[1] / sub.eigenvalues[0];
    let angle = span_angle(&[sub.eigenvectors.col(0)], &[unit(&a)]);
    let elapsed = start.elapsed();
    check(
        ratio <= 1e-10 && angle <= 1e-4 && within(elapsed, 1.0),
        format!("λ2/λ1 = {ratio:.2e}, angle = {angle:.2e} rad, {:.3} s", elapsed.as_secs_f64()),
    )
}

/// One estimated-gradient ridge study: (angle to a, suggested dimension, gradients).
fn estimated_ridge(seed: u64) -> (f64, usize, GradientSet<f64>, ActiveSubspace<f64>) {
    let a = ridge_direction();
    let samples = with_outputs(cube_samples(104, 8, seed), |mu| {
        let t = dot(&a, mu);
        t * t * t + t
    });
    let grads = local_linear_gradients(&samples, 14).unwrap();
    let sub = ActiveSubspace::from_gradients(&grads).unwrap();
    let angle = span_angle(&[sub.eigenvectors.col(0)], &[unit(&a)]);
    (angle, suggest_dim(&sub.eigenvalues).unwrap(), grads, sub)
}

fn estimated_ridge_recovery() -> Outcome {
    let start = Instant::now();
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (angle, dim, _, _) = estimated_ridge(seed);
        worst = worst.max(angle);
        if angle <= 5f64.to_radians() && dim == 1 {
            good += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        good >= 95 && within(elapsed, 30.0),
        format!(
            "{good}/100 seeds recover a within 5° with dimension 1 (worst angle {:.2}°), {:.2} s",
            worst.to_degrees(),
            elapsed.as_secs_f64()
        ),
    )
}

fn orthonormal_pair(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1 = unit(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    let mut a2: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..2 {
        let p = dot(&a1, &a2);
        for (x, y) in a2.iter_mut().zip(&a1) {
            *x -= p * y;
        }
    }
    (a1, unit(&a2))
}

fn two_dimensional_structure() -> Outcome {
    let (a1, a2) = orthonormal_pair(17);
    let x = cube_samples(104, 8, 2);
    let grads = gradient_rows(&x, |mu| {
        let (t1, t2) = (dot(&a1, mu), dot(&a2, mu));
        (0..8).map(|i| 2.0 * t1 * a1[i] + t2 * a2[i]).collect()
    });
    let sub = ActiveSubspace::from_gradients(&GradientSet::from_rows(grads).unwrap()).unwrap();
    let l = &sub.eigenvalues;
    let ratio = l[2] / l[1];
    let angle = span_angle(&[sub.eigenvectors.col(0), sub.eigenvectors.col(1)], &[a1, a2]);
    check(
        l[0] > 0.0 && l[1] > 0.0 && ratio <= 1e-10 && angle <= 1e-4,
        format!("λ1 = {:.3e}, λ2 = {:.3e}, λ3/λ2 = {ratio:.2e}, span angle = {angle:.2e} rad", l[0], l[1]),
    )
}

fn response_surface_exactness() -> Outcome {
    let (w1, w2) = orthonormal_pair(29);
    let g = |y1: f64, y2: f64| {
        1.0 + y1 - 0.5 * y2 + 0.3 * y1 * y2 + 0.8 * y1 * y1 - 0.2 * y2 * y2 * y2 + 0.25 * y1 * y1 * y2 * y2 + 0.1 * y1.powi(4)
    };
    let dg = |y1: f64, y2: f64| {
        (
            1.0 + 0.3 * y2 + 1.6 * y1 + 0.5 * y1 * y2 * y2 + 0.4 * y1.powi(3),
            -0.5 + 0.3 * y1 - 0.6 * y2 * y2 + 0.5 * y1 * y1 * y2,
        )
    };
    let x = cube_samples(130, 8, 3);
    let grads = gradient_rows(&x, |mu| {
        let (d1, d2) = dg(dot(&w1, mu), dot(&w2, mu));
        (0..8).map(|i| d1 * w1[i] + d2 * w2[i]).collect()
    });
    let samples = with_outputs(x, |mu| g(dot(&w1, mu), dot(&w2, mu)));
    let em = error_matrix(
        &samples,
        &ErrorMatrixConfig {
            dims: vec![1, 2, 3],
            degrees: vec![1, 2, 3, 4],
            repetitions: 20,
            split: 0.8,
            seed: 0,
            gradients: GradientSource::Supplied(grads),
        },
    )
    .unwrap();
    let (e24, e21) = (em.get(2, 4).unwrap(), em.get(2, 1).unwrap());
    check(
        e24 <= 1e-6 && e21 > e24,
        format!("error(dim 2, deg 4) = {e24:.2e}, error(dim 2, deg 1) = {e21:.2e}"),
    )
}

fn extrapolation_accuracy() -> Outcome {
    let start = Instant::now();
    let series = TimeSeries::sample(0.0, 30.0, 0.01, |t: f64| 50.0 + 10.0 * (-0.2 * t).exp() * (4.0 * t).cos()).unwrap();
    let s = steady_value(&series, DEFAULT_WINDOW).unwrap();
    let rel = (s.value - 50.0).abs() / 50.0;
    let elapsed = start.elapsed();
    check(
        rel <= 1e-3 && within(elapsed, 1.0),
        format!("steady value {:.6}, relative error {rel:.2e}, {:.3} s", s.value, elapsed.as_secs_f64()),
    )
}

fn ffd_identity_and_affine_precision() -> Outcome {
    // identity on a 10⁴-vertex mesh inside the hull lattice
    let profile = LatticeProfile::default();
    let lattice: FfdLattice<f64> = hull_lattice(&GeoParams::zeros(profile.bindings.len()), &profile).unwrap();
    let center = lattice.from_reference(Vec3::new(0.5, 0.5, 0.5));
    let l = lattice.lengths();
    let r = 0.45 * l.x.min(l.y).min(l.z);
    let sphere: TriMesh<f64> = icosphere(r, 5).translated(center);
    let moved = lattice.deform_mesh(&sphere);
    let identity_err = sphere
        .vertices()
        .iter()
        .zip(moved.vertices())
        .map(|(a, b)| (*a - *b).norm())
        .fold(0.0, f64::max);

    // affine displacement of every control point
    let mut lat = FfdLattice::axis_aligned(Vec3::new(-1.0, 0.5, 2.0), Vec3::new(2.0, 3.0, 1.5), [3, 2, 4]).unwrap();
    let a = Mat3::new([[1.1, 0.2, -0.1], [0.05, 0.9, 0.3], [-0.2, 0.1, 1.2]]);
    let b = Vec3::new(0.3, -0.2, 0.5);
    let affine = |x: Vec3<f64>| a.mul_vec(x) + b;
    let lens = lat.lengths();
    for i in 0..=3 {
        for j in 0..=2 {
            for k in 0..=4 {
                let p = lat.control_point(i, j, k).unwrap();
                let d = affine(p) - p;
                lat.set_displacement(i, j, k, Vec3::new(d.x / lens.x, d.y / lens.y, d.z / lens.z)).unwrap();
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut affine_err: f64 = 0.0;
    for _ in 0..1000 {
        let y = Vec3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let x = lat.from_reference(y);
        affine_err = affine_err.max((lat.deform_point(x) - affine(x)).norm());
    }
    check(
        sphere.vertex_count() >= 10_000 && identity_err <= 1e-12 && affine_err <= 1e-10,
        format!(
            "identity error {identity_err:.1e} on {} vertices, affine error {affine_err:.1e}",
            sphere.vertex_count()
        ),
    )
}

fn hydrostatics() -> Outcome {
    let sphere: TriMesh<f64> = icosphere(1.0, 4);
    let volume = signed_volume(&sphere).unwrap();
    let vol_err = (volume - 4.0 * PI / 3.0).abs() / (4.0 * PI / 3.0);
    let edge = sphere
        .triangles()
        .iter()
        .flat_map(|t| {
            let v = sphere.vertices();
            [(v[t[0]] - v[t[1]]).norm(), (v[t[1]] - v[t[2]]).norm(), (v[t[2]] - v[t[0]]).norm()]
        })
        .fold(0.0, f64::max);
    let c = FlowConstants::default();
    let state = hydrostatic_equilibrium(&sphere, c.rho * 2.0 * PI / 3.0, &c).unwrap();
    // waterline sits at body height -sinkage; the center is at 0
    let waterline_offset = state.sinkage.abs();

    let floating = sphere.translated(Vec3::new(0.0, 0.0, state.sinkage));
    let wet = clip_below_plane(&floating, 0.0);
    let v_sub = signed_volume(&wet).unwrap();
    let f = pressure_force(&wet, |x| -c.rho * c.g * x.z).unwrap();
    let force_err = (f.z - c.rho * c.g * v_sub).abs() / (c.rho * c.g * v_sub);
    check(
        sphere.triangle_count() == 5120 && vol_err <= 5e-3 && waterline_offset <= edge && force_err <= 1e-3,
        format!(
            "volume error {vol_err:.2e}, waterline offset {waterline_offset:.2e} (edge {edge:.3}), pressure force error {force_err:.2e}"
        ),
    )
}

fn rigid_body() -> Outcome {
    let props = BodyProps {
        mass: 2.0,
        inertia: Mat3::diag(Vec3::new(1.0, 2.0, 3.0)),
        gravity: Vec3::zero(),
    };
    let q0 = Quaternion::from_axis_angle(Vec3::new(1.0, 1.0, 0.0).normalized(), 0.3);
    let axis = q0.to_rotation().unwrap().col(2);
    let start = RigidState {
        position: Vec3::zero(),
        velocity: Vec3::zero(),
        orientation: q0,
        omega: axis * 5.0,
    };
    let none = |_: f64, _: &RigidState<f64>| Vec3::zero();
    let dt = 1e-3;
    let e0 = props.kinetic_energy(&start).unwrap();
    let l0 = props.angular_momentum(&start).unwrap();
    let mut s = start;
    let mut drift: f64 = 0.0;
    for k in 0..1000 {
        let out = step_detailed(&s, &props, &none, &none, k as f64 * dt, dt).unwrap();
        drift = drift.max(out.norm_drift);
        s = out.state;
    }
    let e_err = (props.kinetic_energy(&s).unwrap() - e0).abs() / e0;
    let l_err = (props.angular_momentum(&s).unwrap() - l0).norm() / l0.norm();

    let mut sq = start;
    let mut raw = q0.to_rotation().unwrap();
    for k in 0..10_000 {
        raw = evolve_rotation_matrix(&raw, sq.omega, dt);
        sq = step_detailed(&sq, &props, &none, &none, k as f64 * dt, dt).unwrap().state;
    }
    let quat_orth = sq.orientation.to_rotation().unwrap().orthogonality_error();
    let raw_orth = raw.orthogonality_error();
    check(
        e_err <= 1e-6 && l_err <= 1e-6 && drift < 1e-9 && quat_orth < raw_orth,
        format!(
            "energy {e_err:.1e}, momentum {l_err:.1e}, norm drift {drift:.1e}/step, orthogonality {quat_orth:.1e} vs raw {raw_orth:.1e}"
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_hullspace"))
            .args(["study", "--seed", "11", "--output-dir"])
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a");
    run("b");
    let csvs = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        v.sort();
        v
    };
    let a = csvs(&dir.path().join("a"));
    let mut differing = Vec::new();
    for p in &a {
        let q = dir.path().join("b").join(p.file_name().unwrap());
        if std::fs::read(p).unwrap() != std::fs::read(&q).unwrap() {
            differing.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    check(
        a.len() >= 7 && differing.is_empty() && csvs(&dir.path().join("b")).len() == a.len(),
        format!("{} CSV artifacts compared, differing: {differing:?}", a.len()),
    )
}

fn bootstrap_sanity() -> Outcome {
    let start = Instant::now();
    let (_, _, grads, _) = estimated_ridge(0);
    let b = bootstrap_eigenvalues(
        &grads,
        &BootstrapOptions {
            replicates: 1000,
            seed: 0,
            interval: IntervalKind::MinMax,
            subspace_distances: false,
        },
    )
    .unwrap();
    let contained = (0..8).filter(|&i| b.lower[i] <= b.point[i] && b.point[i] <= b.upper[i]).count();
    let separated = b.upper[1] < b.lower[0];
    let elapsed = start.elapsed();
    check(
        contained == 8 && separated && within(elapsed, 120.0),
        format!(
            "{contained}/8 intervals contain the estimate, λ1 in [{:.3e}, {:.3e}], λ2 in [{:.3e}, {:.3e}], {:.2} s",
            b.lower[0],
            b.upper[0],
            b.lower[1],
            b.upper[1],
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 exact ridge recovery", exact_ridge_recovery),
        ("2 estimated-gradient ridge recovery", estimated_ridge_recovery),
        ("3 two-dimensional structure", two_dimensional_structure),
        ("4 response-surface exactness", response_surface_exactness),
        ("5 extrapolation accuracy", extrapolation_accuracy),
        ("6 FFD identity and affine precision", ffd_identity_and_affine_precision),
        ("7 hydrostatics", hydrostatics),
        ("8 rigid body", rigid_body),
        ("9 determinism", determinism),
        ("10 bootstrap sanity", bootstrap_sanity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
