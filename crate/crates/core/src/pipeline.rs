//! End-to-end studies: design sampling, oracle evaluation, subspace and
//! response-surface analysis, and the files each stage produces.
//!
//! Every stage reads and writes plain files (dataset CSV with a bounds
//! sidecar, TOML for structured results), so an external solver can replace
//! the built-in oracles through the `external-table` oracle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::ffd::{hull_lattice, GeoParams, LatticeProfile};
use crate::geometry::primitives::{parabolic_hull, HullShape};
use crate::geometry::{froude, hydrostatic_equilibrium, ittc57_cf, read_stl, FlowConstants, TriMesh};
use crate::linalg::Matrix;
use crate::subspace::{
    bootstrap_eigenvalues, local_linear_gradients, normalize_coord, suggest_dim, ActiveSubspace, BootstrapOptions,
    BootstrapSummary, GradientSet, IntervalKind, SampleSet,
};
use crate::surface::{error_matrix, sufficient_summary_csv, train_test_split, ErrorMatrix, ErrorMatrixConfig, GradientSource, PolySurface};

/// Names, bounds and the geometric subset of the design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub names: Vec<String>,
    /// `[lower, upper]` per parameter.
    pub bounds: Vec<[f64; 2]>,
    /// Zero-based indices of the parameters that drive the lattice, in binding order.
    pub geometric: Vec<usize>,
}

impl Default for DesignSpace {
    /// Six lattice displacements, hull weight (kg) and speed (m/s).
    fn default() -> Self {
        let profile = LatticeProfile::default();
        let mut names = profile.names();
        let mut bounds: Vec<[f64; 2]> = profile.bounds().into_iter().map(|(l, u)| [l, u]).collect();
        let geometric = (0..names.len()).collect();
        names.push("weight".into());
        bounds.push([500.0, 800.0]);
        names.push("velocity".into());
        bounds.push([1.87, 2.70]);
        Self {
            names,
            bounds,
            geometric,
        }
    }
}

impl DesignSpace {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.bounds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bounds.len(),
                got: self.names.len(),
            });
        }
        if self.bounds.is_empty() {
            return Err(Error::invalid("design space has no parameters"));
        }
        for (name, [lo, hi]) in self.names.iter().zip(&self.bounds) {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(format!("parameter {name} has degenerate bounds [{lo}, {hi}]")));
            }
        }
        for (k, &i) in self.geometric.iter().enumerate() {
            if i >= self.dim() {
                return Err(Error::invalid(format!("geometric index {i} out of range")));
            }
            if self.geometric[..k].contains(&i) {
                return Err(Error::invalid(format!("geometric index {i} listed twice")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("design space serializes")
    }

    pub fn bounds_pairs(&self) -> Vec<(f64, f64)> {
        self.bounds.iter().map(|b| (b[0], b[1])).collect()
    }

    /// Geometric parameter values of a design row.
    pub fn geometric_values(&self, mu: &[f64]) -> GeoParams<f64> {
        GeoParams::new(self.geometric.iter().map(|&i| mu[i]).collect())
    }
}

/// `n` designs drawn independently and uniformly in the box.
pub fn sample_designs(space: &DesignSpace, n: usize, seed: u64) -> Result<SampleSet<f64>> {
    space.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = space.bounds_pairs();
    let x = Matrix::from_fn(n, space.dim(), |_, j| {
        let (lo, hi) = bounds[j];
        lo + (hi - lo) * rng.gen::<f64>()
    });
    SampleSet::new(x, None, bounds)
}

/// Declarative description of the quantity of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleSpec {
    /// `f = h(aᵀx)` with `h(t) = Σ cₖ tᵏ`, `x` the normalized design.
    AnalyticRidge {
        direction: Vec<f64>,
        #[serde(default = "default_ridge_profile")]
        coefficients: Vec<f64>,
    },
    /// `f = c + bᵀx + xᵀQx`, `x` the normalized design.
    AnalyticQuadratic {
        #[serde(default)]
        constant: f64,
        linear: Vec<f64>,
        /// Rows of `Q`.
        quadratic: Vec<Vec<f64>>,
    },
    /// Friction plus a smooth wave-like term on the morphed hull at
    /// hydrostatic equilibrium.
    HydroSurrogate(HydroSurrogateSpec),
    /// Outputs looked up in a dataset CSV produced elsewhere.
    ExternalTable { path: PathBuf },
}

fn default_ridge_profile() -> Vec<f64> {
    vec![0.0, 0.0, 1.0]
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec::HydroSurrogate(HydroSurrogateSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HydroSurrogateSpec {
    /// STL hull; the built-in parabolic hull when absent.
    pub mesh: Option<PathBuf>,
    /// Lattice profile TOML; the bundled six-parameter profile when absent.
    pub profile: Option<PathBuf>,
    pub constants: FlowConstants<f64>,
    /// `k_w` in the wave term `k_w·ρ·g·V_sub·Fr⁴`.
    pub wave_coefficient: f64,
    /// Index of the weight (kg) parameter.
    pub weight_param: usize,
    /// Index of the speed (m/s) parameter.
    pub speed_param: usize,
}

impl Default for HydroSurrogateSpec {
    fn default() -> Self {
        Self {
            mesh: None,
            profile: None,
            constants: FlowConstants::default(),
            wave_coefficient: 0.05,
            weight_param: 6,
            speed_param: 7,
        }
    }
}

impl OracleSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("oracle spec serializes")
    }
}

/// Prepared quantity of interest: files loaded and settings validated.
#[derive(Debug, Clone)]
pub struct Oracle {
    kind: Prepared,
    space: DesignSpace,
}

#[derive(Debug, Clone)]
enum Prepared {
    Ridge {
        a: Vec<f64>,
        h: Vec<f64>,
    },
    Quadratic {
        c: f64,
        b: Vec<f64>,
        q: Matrix<f64>,
    },
    Hydro {
        mesh: TriMesh<f64>,
        profile: LatticeProfile,
        spec: HydroSurrogateSpec,
    },
    Table {
        table: SampleSet<f64>,
    },
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck)
}

fn horner_derivative(c: &[f64], t: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &ck)| acc * t + k as f64 * ck)
}

impl Oracle {
    /// Prepares an oracle; relative paths are resolved against `base`.
    pub fn new(spec: &OracleSpec, space: &DesignSpace, base: Option<&Path>) -> Result<Self> {
        space.validate()?;
        let m = space.dim();
        let kind = match spec {
            OracleSpec::AnalyticRidge { direction, coefficients } => {
                if direction.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        got: direction.len(),
                    });
                }
                if !(direction.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                    return Err(Error::invalid("ridge direction must be nonzero"));
                }
                Prepared::Ridge {
                    a: direction.clone(),
                    h: coefficients.clone(),
                }
            }
            OracleSpec::AnalyticQuadratic {
                constant,
                linear,
                quadratic,
            } => {
                if linear.len() != m {
                    return Err(Error::DimensionMismatch { expected: m, got: linear.len() });
                }
                let q = Matrix::from_rows(quadratic)?;
                if q.nrows() != m || q.ncols() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m * m,
                        got: q.nrows() * q.ncols(),
                    });
                }
                Prepared::Quadratic {
                    c: *constant,
                    b: linear.clone(),
                    q,
                }
            }
            OracleSpec::HydroSurrogate(h) => {
                h.constants.validate()?;
                let mesh = match &h.mesh {
                    Some(p) => read_stl(resolve(base, p))?,
                    None => parabolic_hull(&HullShape::default()),
                };
                if !mesh.is_closed() {
                    return Err(Error::invalid("hull mesh must be closed"));
                }
                let profile = match &h.profile {
                    Some(p) => LatticeProfile::load(resolve(base, p))?,
                    None => LatticeProfile::default(),
                };
                if profile.bindings.len() != space.geometric.len() {
                    return Err(Error::DimensionMismatch {
                        expected: profile.bindings.len(),
                        got: space.geometric.len(),
                    });
                }
                for idx in [h.weight_param, h.speed_param] {
                    if idx >= m || space.geometric.contains(&idx) {
                        return Err(Error::invalid(format!("parameter index {idx} cannot be a weight or speed")));
                    }
                }
                if !(h.wave_coefficient >= 0.0) {
                    return Err(Error::invalid("wave coefficient must be non-negative"));
                }
                Prepared::Hydro {
                    mesh,
                    profile,
                    spec: h.clone(),
                }
            }
            OracleSpec::ExternalTable { path } => {
                let path = resolve(base, path);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let table = SampleSet::from_csv(&text, &space.bounds_pairs())?;
                table.outputs()?;
                Prepared::Table { table }
            }
        };
        Ok(Self {
            kind,
            space: space.clone(),
        })
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    fn normalized(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter().zip(&self.space.bounds).map(|(&x, b)| normalize_coord(x, (b[0], b[1]))).collect()
    }

    /// Whether [`gradient`](Self::gradient) is available.
    pub fn has_gradient(&self) -> bool {
        matches!(self.kind, Prepared::Ridge { .. } | Prepared::Quadratic { .. })
    }

    /// Exact gradient with respect to the normalized design (analytic oracles only).
    pub fn gradient(&self, mu: &[f64]) -> Option<Vec<f64>> {
        let x = self.normalized(mu);
        match &self.kind {
            Prepared::Ridge { a, h } => {
                let t: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
                let d = horner_derivative(h, t);
                Some(a.iter().map(|ai| d * ai).collect())
            }
            Prepared::Quadratic { b, q, .. } => {
                let m = x.len();
                Some((0..m).map(|i| b[i] + (0..m).map(|j| (q[(i, j)] + q[(j, i)]) * x[j]).sum::<f64>()).collect())
            }
            _ => None,
        }
    }

    /// Deformed hull for a design (hydro oracle only). Only the geometric
    /// parameters enter.
    pub fn deformed_mesh(&self, mu: &[f64]) -> Result<TriMesh<f64>> {
        match &self.kind {
            Prepared::Hydro { mesh, profile, .. } => {
                let lattice = hull_lattice(&self.space.geometric_values(mu), profile)?;
                Ok(lattice.deform_mesh(mesh))
            }
            _ => Err(Error::invalid("only the hydro surrogate deforms a hull")),
        }
    }

    /// Evaluates one design given in physical units.
    pub fn evaluate(&self, mu: &[f64]) -> Result<f64> {
        if mu.len() != self.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                got: mu.len(),
            });
        }
        match &self.kind {
            Prepared::Ridge { a, h } => {
                let x = self.normalized(mu);
                let t: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
                Ok(horner(h, t))
            }
            Prepared::Quadratic { c, b, q } => {
                let x = self.normalized(mu);
                let lin: f64 = b.iter().zip(&x).map(|(p, q)| p * q).sum();
                let qx = q.matvec(&x)?;
                let quad: f64 = x.iter().zip(&qx).map(|(p, q)| p * q).sum();
                Ok(c + lin + quad)
            }
            Prepared::Hydro { spec, .. } => {
                let hull = self.deformed_mesh(mu)?;
                let c = &spec.constants;
                let weight = mu[spec.weight_param];
                let speed = mu[spec.speed_param];
                let state = hydrostatic_equilibrium(&hull, weight, c)?;
                let cf = ittc57_cf(speed, c)?;
                let fr = froude(speed, c);
                let friction = 0.5 * c.rho * cf * state.wetted_area * speed * speed;
                let wave = spec.wave_coefficient * c.rho * c.g * state.submerged_volume * fr.powi(4);
                Ok(friction + wave)
            }
            Prepared::Table { table } => {
                let f = table.outputs()?;
                find_row(table.inputs(), mu)
                    .map(|i| f[i])
                    .ok_or_else(|| Error::invalid(format!("design {mu:?} not found in the external table")))
            }
        }
    }
}

fn find_row(inputs: &Matrix<f64>, mu: &[f64]) -> Option<usize> {
    inputs.rows_iter().position(|r| {
        r.iter()
            .zip(mu)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0))
    })
}

/// One design whose evaluation failed.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFailure {
    pub row: usize,
    pub message: String,
}

/// Oracle outputs for the designs that succeeded.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub samples: SampleSet<f64>,
    /// Original row index of each kept sample.
    pub kept: Vec<usize>,
    pub failures: Vec<RowFailure>,
}

impl Evaluation {
    /// CSV manifest `row,error` of the failed designs.
    pub fn failures_csv(&self) -> String {
        let mut s = String::from("row,error\n");
        for f in &self.failures {
            let _ = writeln!(s, "{},\"{}\"", f.row, f.message.replace('"', "'"));
        }
        s
    }
}

/// Evaluates every design in parallel. Failed rows are dropped and listed;
/// missing rows of an external table are an error.
pub fn evaluate_oracle(oracle: &Oracle, designs: &SampleSet<f64>) -> Result<Evaluation> {
    if designs.dim() != oracle.space.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.space.dim(),
            got: designs.dim(),
        });
    }
    if let Prepared::Table { table } = &oracle.kind {
        let missing: Vec<usize> = (0..designs.len())
            .filter(|&i| find_row(table.inputs(), designs.inputs().row(i)).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!("external table has no rows for designs {missing:?}")));
        }
    }
    let start = Instant::now();
    let results: Vec<Result<f64>> = (0..designs.len())
        .into_par_iter()
        .map(|i| oracle.evaluate(designs.inputs().row(i)))
        .collect();
    info!(
        "evaluated {} designs in {:.3} s",
        designs.len(),
        start.elapsed().as_secs_f64()
    );
    let mut kept = Vec::new();
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) if v.is_finite() => {
                kept.push(i);
                outputs.push(v);
            }
            Ok(v) => failures.push(RowFailure {
                row: i,
                message: format!("non-finite output {v}"),
            }),
            Err(e) => failures.push(RowFailure {
                row: i,
                message: e.to_string(),
            }),
        }
    }
    for f in &failures {
        warn!("design {} dropped: {}", f.row, f.message);
    }
    if kept.is_empty() {
        return Err(Error::Numerical("every design evaluation failed".into()));
    }
    let samples = designs.subset(&kept)?.with_outputs(outputs)?;
    Ok(Evaluation {
        samples,
        kept,
        failures,
    })
}

/// Study settings; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub seed: u64,
    pub sample_count: usize,
    /// Training fraction of the train/test split.
    pub split: f64,
    pub k_neighbors: usize,
    pub bootstrap_replicates: usize,
    pub bootstrap_interval: IntervalKind,
    pub dims: Vec<usize>,
    pub degrees: Vec<usize>,
    pub repetitions: usize,
    /// Use the oracle's exact gradients instead of local linear fits.
    pub exact_gradients: bool,
    /// Fixed active dimension; the largest eigenvalue gap when absent.
    pub active_dim: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_count: 130,
            split: 0.8,
            k_neighbors: 14,
            bootstrap_replicates: 1000,
            bootstrap_interval: IntervalKind::MinMax,
            dims: vec![1, 2, 3],
            degrees: vec![1, 2, 3, 4],
            repetitions: 20,
            exact_gradients: false,
            active_dim: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::invalid(format!("split must be in (0, 1), got {}", self.split)));
        }
        if self.sample_count == 0 || self.bootstrap_replicates == 0 || self.repetitions == 0 || self.k_neighbors == 0 {
            return Err(Error::invalid("counts in the study config must be positive"));
        }
        let n_train = (self.split * self.sample_count as f64).round() as usize;
        if !self.exact_gradients && n_train < self.k_neighbors + 1 {
            return Err(Error::invalid(format!(
                "{} training samples cannot support {} nearest neighbors; raise sample_count",
                n_train, self.k_neighbors
            )));
        }
        if self.dims.is_empty() || self.degrees.is_empty() {
            return Err(Error::invalid("dims and degrees must not be empty"));
        }
        if let Some(&d) = self.dims.iter().chain(&self.active_dim).find(|&&d| d == 0 || d >= m) {
            return Err(Error::invalid(format!("active dimension {d} outside [1, {}]", m - 1)));
        }
        Ok(())
    }
}

/// Study file: settings plus optional design space and oracle sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StudyFile {
    #[serde(flatten)]
    pub config: StudyConfig,
    #[serde(default)]
    pub design_space: Option<DesignSpace>,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
}

impl StudyFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Machine-readable study summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub seed: u64,
    pub samples: usize,
    pub failed_designs: usize,
    pub training_samples: usize,
    pub gradient_source: String,
    pub eigenvalues: Vec<f64>,
    /// `λᵢ / λᵢ₊₁`.
    pub gaps: Vec<f64>,
    pub suggested_dim: usize,
    pub active_dim: usize,
    pub first_eigenvector: Vec<f64>,
    pub bootstrap_lower: Vec<f64>,
    pub bootstrap_upper: Vec<f64>,
    /// `"dim_degree"` → mean relative test RMSE.
    pub error_matrix: BTreeMap<String, f64>,
    pub best_dim: usize,
    pub best_degree: usize,
    pub best_error: f64,
}

/// Everything a study computed.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub dataset: SampleSet<f64>,
    pub failures: Vec<RowFailure>,
    pub subspace: ActiveSubspace<f64>,
    pub suggested_dim: usize,
    pub bootstrap: BootstrapSummary<f64>,
    pub error_matrix: ErrorMatrix<f64>,
    pub summary: StudySummary,
}

/// Ratios of successive eigenvalues (infinite after an exact zero).
pub fn eigenvalue_gaps(eigenvalues: &[f64]) -> Vec<f64> {
    eigenvalues
        .windows(2)
        .map(|w| if w[1] > 0.0 { w[0] / w[1] } else { f64::INFINITY })
        .collect()
}

/// Gradients for a normalized dataset: exact from the oracle, or local
/// linear fits over `k` neighbors.
pub fn dataset_gradients(
    normalized: &SampleSet<f64>,
    physical: &SampleSet<f64>,
    oracle: Option<&Oracle>,
    k: usize,
) -> Result<GradientSet<f64>> {
    match oracle {
        Some(o) => {
            let m = physical.dim();
            let mut data = Vec::with_capacity(physical.len() * m);
            for row in physical.inputs().rows_iter() {
                data.extend(o.gradient(row).ok_or_else(|| Error::invalid("oracle has no exact gradient"))?);
            }
            GradientSet::from_rows(Matrix::from_vec(physical.len(), m, data)?)
        }
        None => local_linear_gradients(normalized, k),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Seeds of the study stages, derived from the master seed.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage)
}

/// Runs the whole chain and writes its artifacts into `out_dir`:
///
/// `dataset.csv` (+ `dataset.meta.toml`), `failures.csv`, `subspace.toml`,
/// `bootstrap.csv`, `ssp_1d.csv`, `ssp_2d.csv`, `error_matrix.csv`,
/// `error_matrix_long.csv`, `report.txt` and `summary.toml`.
pub fn run_study(config: &StudyConfig, space: &DesignSpace, oracle: &Oracle, out_dir: &Path) -> Result<StudyReport> {
    space.validate().stage("validate")?;
    config.validate(space.dim()).stage("validate")?;
    if config.exact_gradients && !oracle.has_gradient() {
        return Err(Error::invalid("exact gradients requested but the oracle has none")).stage("validate");
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let designs = sample_designs(space, config.sample_count, stage_seed(config.seed, 0)).stage("sample")?;
    let eval = evaluate_oracle(oracle, &designs).stage("evaluate")?;
    let dataset = eval.samples.clone();
    dataset.save(out_dir.join("dataset.csv")).stage("evaluate")?;
    write(&out_dir.join("failures.csv"), &eval.failures_csv())?;

    let normalized = dataset.normalize();
    let (train, _test) = train_test_split(dataset.len(), config.split, stage_seed(config.seed, 1), 0).stage("split")?;
    let exact = config.exact_gradients.then_some(oracle);
    let train_norm = normalized.subset(&train)?;
    let train_phys = dataset.subset(&train)?;
    let grads = dataset_gradients(&train_norm, &train_phys, exact, config.k_neighbors).stage("gradients")?;

    let full = ActiveSubspace::from_gradients(&grads).stage("subspace")?;
    let suggested = suggest_dim(&full.eigenvalues).stage("subspace")?;
    let active_dim = config.active_dim.unwrap_or(suggested);
    let subspace = full.partition(active_dim).stage("subspace")?;
    write(&out_dir.join("subspace.toml"), &subspace.to_toml())?;

    let bootstrap = bootstrap_eigenvalues(
        &grads,
        &BootstrapOptions {
            replicates: config.bootstrap_replicates,
            seed: stage_seed(config.seed, 2),
            interval: config.bootstrap_interval,
            subspace_distances: false,
        },
    )
    .stage("bootstrap")?;
    write(&out_dir.join("bootstrap.csv"), &bootstrap.to_csv())?;

    for (k, name) in [(1, "ssp_1d.csv"), (2, "ssp_2d.csv")] {
        if k < space.dim() {
            let text = sufficient_summary_csv(&full.partition(k)?, &normalized).stage("summary plots")?;
            write(&out_dir.join(name), &text)?;
        }
    }

    let gradients = if config.exact_gradients {
        GradientSource::Supplied(dataset_gradients(&normalized, &dataset, exact, config.k_neighbors)?.gradients)
    } else {
        GradientSource::LocalLinear { k: config.k_neighbors }
    };
    let em = error_matrix(
        &dataset,
        &ErrorMatrixConfig {
            dims: config.dims.clone(),
            degrees: config.degrees.clone(),
            repetitions: config.repetitions,
            split: config.split,
            seed: stage_seed(config.seed, 3),
            gradients,
        },
    )
    .stage("error matrix")?;
    write(&out_dir.join("error_matrix.csv"), &em.to_csv())?;
    write(&out_dir.join("error_matrix_long.csv"), &em.to_long_csv())?;

    let (best_dim, best_degree, best_error) = em.argmin();
    let mut cells = BTreeMap::new();
    for (i, d) in em.dims.iter().enumerate() {
        for (j, p) in em.degrees.iter().enumerate() {
            cells.insert(format!("{d}_{p}"), em.values[(i, j)]);
        }
    }
    let summary = StudySummary {
        seed: config.seed,
        samples: dataset.len(),
        failed_designs: eval.failures.len(),
        training_samples: train.len(),
        gradient_source: if config.exact_gradients {
            "exact".into()
        } else {
            format!("local-linear (k = {})", config.k_neighbors)
        },
        eigenvalues: full.eigenvalues.clone(),
        gaps: eigenvalue_gaps(&full.eigenvalues),
        suggested_dim: suggested,
        active_dim,
        first_eigenvector: full.eigenvectors.col(0),
        bootstrap_lower: bootstrap.lower.clone(),
        bootstrap_upper: bootstrap.upper.clone(),
        error_matrix: cells,
        best_dim,
        best_degree,
        best_error,
    };
    write(&out_dir.join("summary.toml"), &toml::to_string(&summary).map_err(|e| Error::invalid(e.to_string()))?)?;
    write(&out_dir.join("report.txt"), &render_report(&summary, space, &em))?;

    Ok(StudyReport {
        dataset,
        failures: eval.failures,
        subspace,
        suggested_dim: suggested,
        bootstrap,
        error_matrix: em,
        summary,
    })
}

fn render_report(s: &StudySummary, space: &DesignSpace, em: &ErrorMatrix<f64>) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "Active subspace study (seed {})", s.seed);
    let _ = writeln!(
        r,
        "samples: {} evaluated, {} failed, {} used for training",
        s.samples, s.failed_designs, s.training_samples
    );
    let _ = writeln!(r, "gradients: {}\n", s.gradient_source);
    let _ = writeln!(r, "{:>3}  {:>14}  {:>14}  {:>14}  {:>12}", "i", "eigenvalue", "boot lower", "boot upper", "gap");
    for i in 0..s.eigenvalues.len() {
        let gap = s.gaps.get(i).map_or(String::new(), |g| format!("{g:12.4e}"));
        let _ = writeln!(
            r,
            "{:>3}  {:14.6e}  {:14.6e}  {:14.6e}  {}",
            i + 1,
            s.eigenvalues[i],
            s.bootstrap_lower[i],
            s.bootstrap_upper[i],
            gap
        );
    }
    let _ = writeln!(r, "\nsuggested dimension: {}", s.suggested_dim);
    let _ = writeln!(r, "active dimension:    {}\n", s.active_dim);
    let _ = writeln!(r, "first eigenvector:");
    for (name, w) in space.names.iter().zip(&s.first_eigenvector) {
        let _ = writeln!(r, "  {name:>10}  {w:+.6}");
    }
    let _ = writeln!(r, "\nrelative test RMSE ({} repetitions):", em.repetitions);
    let _ = write!(r, "{:>6}", "dim");
    for d in &em.degrees {
        let _ = write!(r, "  {:>11}", format!("degree {d}"));
    }
    r.push('\n');
    for (i, dim) in em.dims.iter().enumerate() {
        let _ = write!(r, "{dim:>6}");
        for j in 0..em.degrees.len() {
            let _ = write!(r, "  {:11.4e}", em.values[(i, j)]);
        }
        r.push('\n');
    }
    let _ = writeln!(
        r,
        "\nlowest error {:.4e} at dimension {}, degree {}",
        s.best_error, s.best_dim, s.best_degree
    );
    r
}

/// Fitted response surface with its training error, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceExport {
    pub active_dim: usize,
    pub degree: usize,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    pub training_relative_rmse: f64,
}

impl SurfaceExport {
    pub fn new(surface: &PolySurface<f64>, training_relative_rmse: f64) -> Self {
        Self {
            active_dim: surface.active_dim,
            degree: surface.degree,
            exponents: surface.exponents.clone(),
            coefficients: surface.coefficients.clone(),
            training_relative_rmse,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("surface export serializes")
    }
}

/// Bootstrap with the study defaults, for the stand-alone `subspace` stage.
pub fn subspace_stage(
    dataset: &SampleSet<f64>,
    k: usize,
    replicates: usize,
    seed: u64,
    interval: IntervalKind,
) -> Result<(ActiveSubspace<f64>, BootstrapSummary<f64>)> {
    let grads = local_linear_gradients(&dataset.normalize(), k).stage("gradients")?;
    let full = ActiveSubspace::from_gradients(&grads).stage("subspace")?;
    let dim = suggest_dim(&full.eigenvalues).stage("subspace")?;
    let boot = bootstrap_eigenvalues(
        &grads,
        &BootstrapOptions {
            replicates,
            seed,
            interval,
            subspace_distances: false,
        },
    )
    .stage("bootstrap")?;
    Ok((full.partition(dim)?, boot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{signed_volume, to_binary_stl};

    fn ridge_space(m: usize) -> DesignSpace {
        DesignSpace {
            names: (1..=m).map(|i| format!("x{i}")).collect(),
            bounds: vec![[-1.0, 1.0]; m],
            geometric: vec![],
        }
    }

    #[test]
    fn default_space_matches_profile() {
        let s = DesignSpace::default();
        s.validate().unwrap();
        assert_eq!(s.dim(), 8);
        assert_eq!(s.bounds[7], [1.87, 2.70]);
        assert_eq!(s.bounds[6], [500.0, 800.0]);
        assert_eq!(s.geometric, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn space_toml_round_trip() {
        let s = DesignSpace::default();
        assert_eq!(DesignSpace::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn invalid_spaces() {
        let mut s = ridge_space(2);
        s.bounds[1] = [1.0, 1.0];
        assert!(s.validate().is_err());
        let mut s = ridge_space(2);
        s.geometric = vec![2];
        assert!(s.validate().is_err());
    }

    #[test]
    fn sampling_is_uniform_in_box_and_deterministic() {
        let s = DesignSpace::default();
        let a = sample_designs(&s, 10_000, 3).unwrap();
        for i in 0..a.len() {
            for (j, b) in s.bounds.iter().enumerate() {
                let x = a.inputs()[(i, j)];
                assert!(x >= b[0] && x <= b[1]);
            }
        }
        assert_eq!(a, sample_designs(&s, 10_000, 3).unwrap());
        assert_ne!(a, sample_designs(&s, 10_000, 4).unwrap());
        assert_eq!(sample_designs(&s, 1, 0).unwrap().len(), 1);
        assert!(sample_designs(&s, 0, 0).is_err());
    }

    #[test]
    fn ridge_oracle_depends_on_velocity_only() {
        let space = DesignSpace::default();
        let mut a = vec![0.0; 8];
        a[7] = 1.0;
        let o = Oracle::new(
            &OracleSpec::AnalyticRidge {
                direction: a,
                coefficients: default_ridge_profile(),
            },
            &space,
            None,
        )
        .unwrap();
        let d = sample_designs(&space, 20, 1).unwrap();
        let e = evaluate_oracle(&o, &d).unwrap();
        let f = e.samples.outputs().unwrap();
        for i in 0..d.len() {
            let v = normalize_coord(d.inputs()[(i, 7)], (1.87, 2.70));
            assert!((f[i] - v * v).abs() < 1e-15);
        }
        let g = o.gradient(d.inputs().row(0)).unwrap();
        assert!(g[..7].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn quadratic_oracle_gradient_matches_difference_quotient() {
        let space = ridge_space(3);
        let spec = OracleSpec::AnalyticQuadratic {
            constant: 1.0,
            linear: vec![0.5, -1.0, 2.0],
            quadratic: vec![vec![1.0, 0.5, 0.0], vec![0.0, -2.0, 0.3], vec![0.1, 0.0, 0.7]],
        };
        let o = Oracle::new(&spec, &space, None).unwrap();
        let x = [0.2, -0.4, 0.6];
        let g = o.gradient(&x).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let (mut p, mut q) = (x, x);
            p[j] += h;
            q[j] -= h;
            let fd = (o.evaluate(&p).unwrap() - o.evaluate(&q).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn oracle_spec_toml_round_trip() {
        for spec in [
            OracleSpec::default(),
            OracleSpec::AnalyticRidge {
                direction: vec![1.0, 2.0],
                coefficients: vec![0.0, 1.0, 0.0, 1.0],
            },
            OracleSpec::ExternalTable { path: "x.csv".into() },
        ] {
            assert_eq!(OracleSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        }
        let text = "kind = \"analytic-ridge\"\ndirection = [0.0, 1.0]\n";
        match OracleSpec::from_toml(text).unwrap() {
            OracleSpec::AnalyticRidge { coefficients, .. } => assert_eq!(coefficients, vec![0.0, 0.0, 1.0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oracle_rejects_bad_specs() {
        let space = ridge_space(2);
        let zero = OracleSpec::AnalyticRidge {
            direction: vec![0.0, 0.0],
            coefficients: vec![1.0],
        };
        assert!(Oracle::new(&zero, &space, None).is_err());
        let short = OracleSpec::AnalyticRidge {
            direction: vec![1.0],
            coefficients: vec![1.0],
        };
        assert!(Oracle::new(&short, &space, None).is_err());
        // hydro surrogate needs six geometric parameters
        assert!(Oracle::new(&OracleSpec::default(), &space, None).is_err());
    }

    #[test]
    fn hydro_resistance_grows_with_weight() {
        let space = DesignSpace::default();
        let o = Oracle::new(&OracleSpec::default(), &space, None).unwrap();
        let mut mu = vec![0.0; 8];
        mu[7] = 2.3;
        mu[6] = 550.0;
        let light = o.evaluate(&mu).unwrap();
        mu[6] = 750.0;
        let heavy = o.evaluate(&mu).unwrap();
        assert!(light > 0.0 && light < heavy, "{light} {heavy}");
    }

    #[test]
    fn geometry_ignores_physical_parameters() {
        let space = DesignSpace::default();
        let o = Oracle::new(&OracleSpec::default(), &space, None).unwrap();
        let d = sample_designs(&space, 1, 5).unwrap();
        let mut mu = d.inputs().row(0).to_vec();
        let a = o.deformed_mesh(&mu).unwrap();
        mu[6] = 777.0;
        mu[7] = 1.9;
        let b = o.deformed_mesh(&mu).unwrap();
        assert_eq!(to_binary_stl(&a), to_binary_stl(&b));
        assert!(signed_volume(&a).unwrap() > 0.0);
    }

    #[test]
    fn extreme_designs_stay_floatable() {
        let space = DesignSpace::default();
        let o = Oracle::new(&OracleSpec::default(), &space, None).unwrap();
        for corner in 0..64u32 {
            let mut mu: Vec<f64> = (0..6)
                .map(|j| if corner >> j & 1 == 1 { space.bounds[j][1] } else { space.bounds[j][0] })
                .collect();
            mu.extend([800.0, 2.7]);
            let r = o.evaluate(&mu).unwrap();
            assert!(r.is_finite() && r > 0.0);
        }
    }

    #[test]
    fn external_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let space = ridge_space(3);
        let ridge = Oracle::new(
            &OracleSpec::AnalyticRidge {
                direction: vec![1.0, -1.0, 0.5],
                coefficients: vec![0.0, 1.0, 1.0],
            },
            &space,
            None,
        )
        .unwrap();
        let d = sample_designs(&space, 15, 2).unwrap();
        let e = evaluate_oracle(&ridge, &d).unwrap();
        e.samples.save(dir.path().join("table.csv")).unwrap();
        let table = Oracle::new(&OracleSpec::ExternalTable { path: "table.csv".into() }, &space, Some(dir.path())).unwrap();
        let again = evaluate_oracle(&table, &d).unwrap();
        assert_eq!(again.samples.outputs().unwrap(), e.samples.outputs().unwrap());

        let other = sample_designs(&space, 3, 99).unwrap();
        let err = evaluate_oracle(&table, &other).unwrap_err().to_string();
        assert!(err.contains("[0, 1, 2]"), "{err}");
    }

    #[test]
    fn failed_rows_are_dropped_and_listed() {
        let space = DesignSpace::default();
        // heavier than the hull can float: no equilibrium
        let heavy = DesignSpace {
            bounds: {
                let mut b = space.bounds.clone();
                b[6] = [500.0, 1e6];
                b
            },
            ..space.clone()
        };
        let o = Oracle::new(&OracleSpec::default(), &heavy, None).unwrap();
        let x = Matrix::from_fn(2, 8, |i, j| match j {
            6 => [600.0, 9e5][i],
            7 => 2.0,
            _ => 0.0,
        });
        let designs = SampleSet::new(x, None, heavy.bounds_pairs()).unwrap();
        let e = evaluate_oracle(&o, &designs).unwrap();
        assert_eq!(e.kept, vec![0]);
        assert_eq!(e.failures.len(), 1);
        assert_eq!(e.failures[0].row, 1);
        assert!(e.failures_csv().starts_with("row,error\n1,"));
    }

    #[test]
    fn study_config_validation() {
        let c = StudyConfig {
            sample_count: 10,
            ..Default::default()
        };
        assert!(c.validate(8).is_err());
        assert!(StudyConfig::default().validate(8).is_ok());
        let c = StudyConfig {
            dims: vec![8],
            ..Default::default()
        };
        assert!(c.validate(8).is_err());
    }

    #[test]
    fn study_file_defaults_and_sections() {
        let f = StudyFile::from_toml("seed = 7\nrepetitions = 3\n[oracle]\nkind = \"analytic-ridge\"\ndirection = [1, 0]\n").unwrap();
        assert_eq!(f.config.seed, 7);
        assert_eq!(f.config.repetitions, 3);
        assert_eq!(f.config.sample_count, 130);
        assert!(matches!(f.oracle, Some(OracleSpec::AnalyticRidge { .. })));
        assert!(f.design_space.is_none());
    }

    #[test]
    fn small_ridge_study_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let space = ridge_space(4);
        let o = Oracle::new(
            &OracleSpec::AnalyticRidge {
                direction: vec![0.5, 0.5, -0.5, 0.5],
                coefficients: vec![0.0, 1.0, 0.0, 1.0],
            },
            &space,
            None,
        )
        .unwrap();
        let cfg = StudyConfig {
            sample_count: 60,
            bootstrap_replicates: 50,
            repetitions: 2,
            dims: vec![1, 2],
            degrees: vec![1, 3],
            exact_gradients: true,
            ..Default::default()
        };
        let r = run_study(&cfg, &space, &o, dir.path()).unwrap();
        assert_eq!(r.suggested_dim, 1);
        assert!(r.summary.eigenvalues[1] <= 1e-10 * r.summary.eigenvalues[0]);
        for f in [
            "dataset.csv",
            "dataset.meta.toml",
            "failures.csv",
            "subspace.toml",
            "bootstrap.csv",
            "ssp_1d.csv",
            "ssp_2d.csv",
            "error_matrix.csv",
            "error_matrix_long.csv",
            "report.txt",
            "summary.toml",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let summary: StudySummary = toml::from_str(&std::fs::read_to_string(dir.path().join("summary.toml")).unwrap()).unwrap();
        assert_eq!(summary.active_dim, 1);
        assert!(r.error_matrix.get(1, 3).unwrap() < 1e-8);
    }

    #[test]
    fn reloaded_dataset_gives_same_subspace() {
        let dir = tempfile::tempdir().unwrap();
        let space = ridge_space(3);
        let o = Oracle::new(
            &OracleSpec::AnalyticRidge {
                direction: vec![1.0, 0.2, -0.3],
                coefficients: vec![0.0, 1.0, 0.5],
            },
            &space,
            None,
        )
        .unwrap();
        let d = evaluate_oracle(&o, &sample_designs(&space, 40, 1).unwrap()).unwrap().samples;
        let path = dir.path().join("d.csv");
        d.save(&path).unwrap();
        let back = SampleSet::load(&path).unwrap();
        let (a, _) = subspace_stage(&d, 8, 10, 0, IntervalKind::MinMax).unwrap();
        let (b, _) = subspace_stage(&back, 8, 10, 0, IntervalKind::MinMax).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert!(a.eigenvectors.sub(&b.eigenvectors).max_abs() <= 1e-12);
    }
}
