//! Active subspaces from scattered input/output samples.
//!
//! All computations happen in normalized coordinates `[-1, 1]^m`: the design
//! parameters mix units (kilograms, meters per second, lattice displacements),
//! so gradients taken in physical units would weight directions arbitrarily.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, svd_tall, sym_eigen, Matrix};
use crate::scalar::{pairwise_sum, Real};

/// `N` paired samples `(μ⁽ⁱ⁾, f⁽ⁱ⁾)` inside a box.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T> {
    inputs: Matrix<T>,
    outputs: Option<Vec<T>>,
    bounds: Vec<(T, T)>,
}

/// Column names used in dataset files.
pub fn column_names(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("mu_{i}")).collect()
}

impl<T: Real> SampleSet<T> {
    /// Builds a sample set; outputs may be left unset (`None`) for design
    /// matrices that have not been evaluated yet.
    pub fn new(inputs: Matrix<T>, outputs: Option<Vec<T>>, bounds: Vec<(T, T)>) -> Result<Self> {
        let (n, m) = (inputs.nrows(), inputs.ncols());
        if bounds.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: bounds.len(),
            });
        }
        if n == 0 {
            return Err(Error::invalid("sample set has no rows"));
        }
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(format!("bounds of mu_{} are degenerate: [{lo}, {hi}]", j + 1)));
            }
        }
        for i in 0..n {
            for (j, &(lo, hi)) in bounds.iter().enumerate() {
                let x = inputs[(i, j)];
                if !(x >= lo && x <= hi) {
                    return Err(Error::OutOfBounds {
                        name: format!("row {i} mu_{}", j + 1),
                        value: x.as_f64(),
                        lower: lo.as_f64(),
                        upper: hi.as_f64(),
                    });
                }
            }
        }
        if let Some(f) = &outputs {
            if f.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: f.len() });
            }
            if let Some(i) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("output of row {i} is not finite")));
            }
        }
        Ok(Self { inputs, outputs, bounds })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn has_outputs(&self) -> bool {
        self.outputs.is_some()
    }

    pub fn outputs(&self) -> Result<&[T]> {
        self.outputs
            .as_deref()
            .ok_or_else(|| Error::invalid("sample set has no outputs yet"))
    }

    pub fn with_outputs(&self, outputs: Vec<T>) -> Result<Self> {
        Self::new(self.inputs.clone(), Some(outputs), self.bounds.clone())
    }

    /// Keeps the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let outputs = self.outputs.as_ref().map(|f| rows.iter().map(|&i| f[i]).collect());
        Self::new(self.inputs.select_rows(rows), outputs, self.bounds.clone())
    }

    /// Whether every box is `[-1, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.bounds.iter().all(|&(lo, hi)| lo == -T::one() && hi == T::one())
    }

    /// Maps the inputs affinely onto `[-1, 1]^m`; outputs are unchanged.
    pub fn normalize(&self) -> Self {
        let inputs = Matrix::from_fn(self.len(), self.dim(), |i, j| normalize_coord(self.inputs[(i, j)], self.bounds[j]));
        Self {
            inputs: clamp_unit(inputs),
            outputs: self.outputs.clone(),
            bounds: vec![(-T::one(), T::one()); self.dim()],
        }
    }

    /// Inverse of [`normalize`](Self::normalize) for a normalized set.
    pub fn denormalize(&self, bounds: &[(T, T)]) -> Result<Self> {
        if !self.is_normalized() {
            return Err(Error::invalid("denormalize expects a normalized sample set"));
        }
        if bounds.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: bounds.len(),
            });
        }
        let inputs = Matrix::from_fn(self.len(), self.dim(), |i, j| {
            let (lo, hi) = bounds[j];
            denormalize_coord(self.inputs[(i, j)], (lo, hi)).max(lo).min(hi)
        });
        Self::new(inputs, self.outputs.clone(), bounds.to_vec())
    }

    /// Converts gradients taken in physical units into normalized coordinates
    /// (chain rule: `∂f/∂x̂ⱼ = ∂f/∂xⱼ · (upperⱼ − lowerⱼ)/2`).
    pub fn gradients_to_normalized(&self, physical: &Matrix<T>) -> Result<Matrix<T>> {
        if physical.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: physical.ncols(),
            });
        }
        let half = T::lit(0.5);
        Ok(Matrix::from_fn(physical.nrows(), physical.ncols(), |i, j| {
            let (lo, hi) = self.bounds[j];
            physical[(i, j)] * (hi - lo) * half
        }))
    }

    /// Dataset CSV: header `mu_1,…,mu_m,f`; unset outputs are written as empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = column_names(self.dim()).join(",");
        s.push_str(",f\n");
        for i in 0..self.len() {
            for j in 0..self.dim() {
                let _ = write!(s, "{:.16e},", self.inputs[(i, j)].as_f64());
            }
            if let Some(f) = &self.outputs {
                let _ = write!(s, "{:.16e}", f[i].as_f64());
            }
            s.push('\n');
        }
        s
    }

    pub fn metadata(&self) -> DatasetMeta {
        DatasetMeta {
            names: column_names(self.dim()),
            lower: self.bounds.iter().map(|b| b.0.as_f64()).collect(),
            upper: self.bounds.iter().map(|b| b.1.as_f64()).collect(),
        }
    }

    /// Writes the CSV and its bounds sidecar (see [`meta_path`]).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let meta = meta_path(path);
        let text = toml::to_string(&self.metadata()).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))
    }

    /// Reads a dataset CSV and its bounds sidecar.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta_file = meta_path(path);
        let meta_text = std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
        let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: format!("{}: {}", meta_file.display(), e.message()),
        })?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &meta.bounds()?)
    }

    /// Parses a dataset CSV given the box. The output column is optional
    /// as a whole: either every row has a value or none does.
    pub fn from_csv(text: &str, bounds: &[(T, T)]) -> Result<Self> {
        let m = bounds.len();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(csv_error)?.clone();
        if headers.len() != m + 1 {
            return Err(Error::Parse {
                offset: 0,
                message: format!("expected {} columns (mu_1..mu_{m},f), found {}", m + 1, headers.len()),
            });
        }
        let mut data = Vec::new();
        let mut outputs = Vec::new();
        let mut missing = 0usize;
        let mut rows = 0usize;
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            let offset = record.position().map_or(0, |p| p.byte() as usize);
            let field = |j: usize| -> Result<Option<f64>> {
                let s = record.get(j).unwrap_or("");
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    offset,
                    message: format!("invalid number {s:?} in column {}", j + 1),
                })
            };
            for j in 0..m {
                let v = field(j)?.ok_or_else(|| Error::Parse {
                    offset,
                    message: format!("missing value in column {}", j + 1),
                })?;
                data.push(T::lit(v));
            }
            match field(m)? {
                Some(v) => outputs.push(T::lit(v)),
                None => missing += 1,
            }
            rows += 1;
        }
        let outputs = match (missing, outputs.len()) {
            (0, _) => Some(outputs),
            (_, 0) => None,
            _ => {
                return Err(Error::invalid(format!("{missing} of {rows} rows have no output value")));
            }
        };
        Self::new(Matrix::from_vec(rows, m, data)?, outputs, bounds.to_vec())
    }
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    Error::Parse {
        offset,
        message: e.to_string(),
    }
}

fn clamp_unit<T: Real>(m: Matrix<T>) -> Matrix<T> {
    m.map(|x| x.max(-T::one()).min(T::one()))
}

pub fn normalize_coord<T: Real>(x: T, (lo, hi): (T, T)) -> T {
    T::lit(2.0) * (x - lo) / (hi - lo) - T::one()
}

pub fn denormalize_coord<T: Real>(x: T, (lo, hi): (T, T)) -> T {
    lo + (x + T::one()) * (hi - lo) * T::lit(0.5)
}

/// Sidecar file holding the box of a dataset: `dataset.csv` → `dataset.meta.toml`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default)]
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DatasetMeta {
    pub fn bounds<T: Real>(&self) -> Result<Vec<(T, T)>> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::DimensionMismatch {
                expected: self.lower.len(),
                got: self.upper.len(),
            });
        }
        Ok(self.lower.iter().zip(&self.upper).map(|(&l, &u)| (T::lit(l), T::lit(u))).collect())
    }
}

/// Gradient rows `∇f(μ⁽ⁱ⁾)` in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub gradients: Matrix<T>,
    /// Sample index each row was evaluated at.
    pub source_indices: Vec<usize>,
}

impl<T: Real> GradientSet<T> {
    pub fn new(gradients: Matrix<T>, source_indices: Vec<usize>) -> Result<Self> {
        if source_indices.len() != gradients.nrows() {
            return Err(Error::DimensionMismatch {
                expected: gradients.nrows(),
                got: source_indices.len(),
            });
        }
        if !gradients.is_finite() {
            return Err(Error::Numerical("gradient set has non-finite entries".into()));
        }
        Ok(Self {
            gradients,
            source_indices,
        })
    }

    /// One row per sample, in sample order.
    pub fn from_rows(gradients: Matrix<T>) -> Result<Self> {
        let idx = (0..gradients.nrows()).collect();
        Self::new(gradients, idx)
    }

    pub fn len(&self) -> usize {
        self.gradients.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.gradients.ncols()
    }
}

/// Indices of the `k` samples nearest to `p` (Euclidean), ties broken by index.
fn nearest<T: Real>(inputs: &Matrix<T>, p: &[T], k: usize) -> Vec<usize> {
    let mut d: Vec<(T, usize)> = inputs
        .rows_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut s = T::zero();
            for (&a, &b) in row.iter().zip(p) {
                s += (a - b) * (a - b);
            }
            (s, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, i)| i).collect()
}

fn distinct_rows<T: Real>(inputs: &Matrix<T>, idx: &[usize]) -> usize {
    let mut seen: Vec<&[T]> = Vec::with_capacity(idx.len());
    for &i in idx {
        let r = inputs.row(i);
        if !seen.iter().any(|s| *s == r) {
            seen.push(r);
        }
    }
    seen.len()
}

/// Gradients at every sample from local linear fits over its `k` nearest
/// neighbors (the sample itself included).
pub fn local_linear_gradients<T: Real>(samples: &SampleSet<T>, k: usize) -> Result<GradientSet<T>> {
    let points = samples.inputs().clone();
    local_linear_gradients_at(samples, k, &points)
}

/// Gradients from local linear fits `f ≈ c + gᵀ(μ − p)` around each row `p`
/// of `points`. Rows whose neighborhood has fewer than `m + 1` distinct
/// positions are excluded with a warning.
pub fn local_linear_gradients_at<T: Real>(samples: &SampleSet<T>, k: usize, points: &Matrix<T>) -> Result<GradientSet<T>> {
    let (n, m) = (samples.len(), samples.dim());
    let f = samples.outputs()?;
    if points.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: points.ncols(),
        });
    }
    if k < 2 || n < k + 1 {
        return Err(Error::invalid(format!("need at least k+1 = {} samples and k >= 2, got N = {n}, k = {k}", k + 1)));
    }
    if k < m + 1 {
        warn!("k = {k} neighbors cannot determine a {m}-dimensional gradient; using minimum-norm fits");
    }
    let inputs = samples.inputs();
    let fits: Vec<Result<Option<Vec<T>>>> = (0..points.nrows())
        .into_par_iter()
        .map(|e| {
            let p = points.row(e);
            let nb = nearest(inputs, p, k);
            if distinct_rows(inputs, &nb) < m + 1 {
                return Ok(None);
            }
            let a = Matrix::from_fn(nb.len(), m + 1, |r, c| if c == 0 { T::one() } else { inputs[(nb[r], c - 1)] - p[c - 1] });
            let b: Vec<T> = nb.iter().map(|&i| f[i]).collect();
            let sol = lstsq(&a, &b)?;
            Ok(Some(sol.x[1..].to_vec()))
        })
        .collect();
    let mut data = Vec::with_capacity(points.nrows() * m);
    let mut idx = Vec::with_capacity(points.nrows());
    for (e, fit) in fits.into_iter().enumerate() {
        match fit? {
            Some(g) => {
                data.extend(g);
                idx.push(e);
            }
            None => warn!("evaluation point {e}: fewer than {} distinct neighbors, gradient excluded", m + 1),
        }
    }
    if idx.is_empty() {
        return Err(Error::Numerical("every local linear fit was degenerate".into()));
    }
    GradientSet::new(Matrix::from_vec(idx.len(), m, data)?, idx)
}

/// Uncentered covariance `(1/N) Σ ∇fᵢ ∇fᵢᵀ`, summed in a fixed order.
pub fn covariance<T: Real>(grads: &GradientSet<T>) -> Result<Matrix<T>> {
    covariance_of_rows(&grads.gradients, &(0..grads.len()).collect::<Vec<_>>())
}

fn covariance_of_rows<T: Real>(g: &Matrix<T>, rows: &[usize]) -> Result<Matrix<T>> {
    if rows.is_empty() {
        return Err(Error::invalid("covariance of an empty gradient set"));
    }
    let m = g.ncols();
    let inv_n = T::one() / T::from_count(rows.len());
    let mut c = Matrix::zeros(m, m);
    let mut buf = vec![T::zero(); rows.len()];
    for i in 0..m {
        for j in i..m {
            for (b, &r) in buf.iter_mut().zip(rows) {
                *b = g[(r, i)] * g[(r, j)];
            }
            let v = pairwise_sum(&buf) * inv_n;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Eigenpairs `Σ = W Λ Wᵀ` sorted descending, with an optional partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSubspace<T> {
    pub eigenvalues: Vec<T>,
    /// Orthonormal eigenvectors as columns.
    pub eigenvectors: Matrix<T>,
    pub active_dim: Option<usize>,
}

/// Flips `v` so its largest-magnitude component is positive. Components
/// within `1e-12` of the maximum count as tied; the first of them decides.
fn apply_sign_convention<T: Real>(w: &mut Matrix<T>, col: usize) {
    let n = w.nrows();
    let max = (0..n).fold(T::zero(), |m, i| m.max(w[(i, col)].abs()));
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(8.0)) * max;
    let lead = (0..n).find(|&i| w[(i, col)].abs() >= max - tol).unwrap_or(0);
    if w[(lead, col)] < T::zero() {
        for i in 0..n {
            w[(i, col)] = -w[(i, col)];
        }
    }
}

/// Full eigendecomposition of a symmetric positive-semidefinite matrix.
///
/// Slightly asymmetric input (within `1e-10`) is symmetrized; tiny negative
/// eigenvalues from roundoff are clipped to zero.
pub fn eigendecompose<T: Real>(sigma: &Matrix<T>) -> Result<ActiveSubspace<T>> {
    let m = sigma.nrows();
    if sigma.ncols() != m || m == 0 {
        return Err(Error::invalid(format!("expected a square matrix, got {}x{}", m, sigma.ncols())));
    }
    if !sigma.is_finite() {
        return Err(Error::Numerical("covariance has non-finite entries".into()));
    }
    let scale = sigma.max_abs().max(T::min_positive_value());
    let sym_tol = T::lit(1e-10).max(T::epsilon() * T::lit(64.0)) * scale.max(T::one());
    for i in 0..m {
        for j in i + 1..m {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > sym_tol {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let half = T::lit(0.5);
    let sym = Matrix::from_fn(m, m, |i, j| (sigma[(i, j)] + sigma[(j, i)]) * half);
    let eig = sym_eigen(&sym)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.values[b]
            .partial_cmp(&eig.values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let clip = T::lit(1e-12).max(T::epsilon() * T::lit(64.0)) * scale.max(T::one());
    let mut values = Vec::with_capacity(m);
    for &k in &order {
        let v = eig.values[k];
        if v < -clip {
            return Err(Error::Domain(format!("matrix is not positive semidefinite (eigenvalue {v:e})")));
        }
        values.push(v.max(T::zero()));
    }
    let mut w = Matrix::from_fn(m, m, |i, c| eig.vectors[(i, order[c])]);
    for c in 0..m {
        apply_sign_convention(&mut w, c);
    }
    Ok(ActiveSubspace {
        eigenvalues: values,
        eigenvectors: w,
        active_dim: None,
    })
}

/// Dimension `M ∈ [1, m−1]` maximizing the gap `λ_M / λ_{M+1}`; ties go to the
/// smaller `M`. Eigenvalues below `1e-13·λ₁` are raised to that floor so
/// roundoff-level tails do not produce spurious gaps.
pub fn suggest_dim<T: Real>(eigenvalues: &[T]) -> Result<usize> {
    let m = eigenvalues.len();
    if m < 2 {
        return Err(Error::invalid("need at least two eigenvalues to pick a dimension"));
    }
    let top = eigenvalues.iter().fold(T::zero(), |a, &b| a.max(b));
    if !(top > T::zero()) {
        return Err(Error::Numerical("all eigenvalues are zero".into()));
    }
    let floor = top * T::lit(1e-13).max(T::epsilon());
    let lam: Vec<T> = eigenvalues.iter().map(|&l| l.max(floor)).collect();
    let mut best = 1;
    let mut best_ratio = lam[0] / lam[1];
    for k in 2..m {
        let r = lam[k - 1] / lam[k];
        if r > best_ratio {
            best = k;
            best_ratio = r;
        }
    }
    Ok(best)
}

impl<T: Real> ActiveSubspace<T> {
    /// Eigendecomposition of the covariance of `grads`.
    pub fn from_gradients(grads: &GradientSet<T>) -> Result<Self> {
        eigendecompose(&covariance(grads)?)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Splits `W = [W₁ W₂]` after column `M`.
    pub fn partition(&self, active_dim: usize) -> Result<Self> {
        let m = self.dim();
        if active_dim == 0 || active_dim >= m {
            return Err(Error::invalid(format!("active dimension must be in [1, {}], got {active_dim}", m - 1)));
        }
        Ok(Self {
            active_dim: Some(active_dim),
            ..self.clone()
        })
    }

    fn require_dim(&self) -> Result<usize> {
        self.active_dim.ok_or_else(|| Error::invalid("active subspace has not been partitioned"))
    }

    pub fn w1(&self) -> Result<Matrix<T>> {
        Ok(self.eigenvectors.columns(0, self.require_dim()?))
    }

    pub fn w2(&self) -> Result<Matrix<T>> {
        Ok(self.eigenvectors.columns(self.require_dim()?, self.dim()))
    }

    /// `(W₁ᵀμ, W₂ᵀμ)` for a normalized point.
    pub fn project(&self, mu: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let k = self.require_dim()?;
        let all = self.eigenvectors.tr_matvec(mu)?;
        Ok((all[..k].to_vec(), all[k..].to_vec()))
    }

    /// `W₁ y + W₂ z`.
    pub fn reconstruct(&self, active: &[T], inactive: &[T]) -> Result<Vec<T>> {
        let k = self.require_dim()?;
        if active.len() != k || inactive.len() != self.dim() - k {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: active.len() + inactive.len(),
            });
        }
        let coords: Vec<T> = active.iter().chain(inactive).copied().collect();
        self.eigenvectors.matvec(&coords)
    }

    /// Active coordinates `W₁ᵀμ` of every row (`N × M`).
    pub fn active_coordinates(&self, normalized_inputs: &Matrix<T>) -> Result<Matrix<T>> {
        let w1 = self.w1()?;
        normalized_inputs.matmul(&w1)
    }

    pub fn to_toml(&self) -> String {
        let export = SubspaceExport {
            active_dim: self.active_dim,
            eigenvalues: self.eigenvalues.iter().map(|v| v.as_f64()).collect(),
            eigenvectors: (0..self.dim())
                .map(|c| self.eigenvectors.col(c).iter().map(|v| v.as_f64()).collect())
                .collect(),
        };
        toml::to_string(&export).expect("subspace export serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let e: SubspaceExport = toml::from_str(text).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        let m = e.eigenvalues.len();
        if e.eigenvectors.len() != m || e.eigenvectors.iter().any(|c| c.len() != m) {
            return Err(Error::invalid("eigenvector table must be m columns of length m"));
        }
        let w = Matrix::from_fn(m, m, |i, c| T::lit(e.eigenvectors[c][i]));
        let s = Self {
            eigenvalues: e.eigenvalues.iter().map(|&v| T::lit(v)).collect(),
            eigenvectors: w,
            active_dim: None,
        };
        match e.active_dim {
            Some(k) => s.partition(k),
            None => Ok(s),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SubspaceExport {
    #[serde(skip_serializing_if = "Option::is_none")]
    active_dim: Option<usize>,
    eigenvalues: Vec<f64>,
    /// Columns of `W`.
    eigenvectors: Vec<Vec<f64>>,
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns.
pub fn subspace_angle<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    // sin θ_max = ‖(I − A Aᵀ) B‖₂ when dim B ≤ dim A
    let (a, b) = if b.ncols() <= a.ncols() { (a, b) } else { (b, a) };
    let proj = a.matmul(&a.transpose().matmul(b)?)?;
    let resid = b.sub(&proj);
    let s = spectral_norm(&resid)?;
    Ok(s.min(T::one()).asin())
}

fn spectral_norm<T: Real>(m: &Matrix<T>) -> Result<T> {
    let tall = if m.nrows() >= m.ncols() { m.clone() } else { m.transpose() };
    Ok(svd_tall(&tall)?.sigma.into_iter().fold(T::zero(), |a, b| a.max(b)))
}

/// How bootstrap intervals are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    /// Smallest and largest replicate value.
    #[default]
    MinMax,
    /// 2.5th and 97.5th percentiles.
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub interval: IntervalKind,
    /// Also report the mean largest principal angle between the point
    /// estimate and each replicate for every `M ∈ [1, m−1]`.
    pub subspace_distances: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            interval: IntervalKind::MinMax,
            subspace_distances: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary<T> {
    pub replicates: usize,
    pub interval: IntervalKind,
    /// Eigenvalues of the full gradient set.
    pub point: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Entry `M − 1` is the mean subspace angle at dimension `M`.
    pub subspace_distances: Option<Vec<T>>,
}

impl<T: Real> BootstrapSummary<T> {
    /// Whether each point estimate lies in its interval.
    pub fn contains_point(&self) -> bool {
        self.point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&p, (&l, &u))| l <= p && p <= u)
    }

    /// CSV: `index,eigenvalue,lower,upper`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,eigenvalue,lower,upper\n");
        for i in 0..self.point.len() {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e}",
                i + 1,
                self.point[i].as_f64(),
                self.lower[i].as_f64(),
                self.upper[i].as_f64()
            );
        }
        s
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn percentile<T: Real>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = T::lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}

/// Bootstrap intervals of the covariance eigenvalues: every replicate
/// resamples the gradient rows with replacement. Replicate `r` draws from
/// its own ChaCha stream `(seed, r)`, so results do not depend on thread
/// scheduling.
pub fn bootstrap_eigenvalues<T: Real>(grads: &GradientSet<T>, opts: &BootstrapOptions) -> Result<BootstrapSummary<T>> {
    let n = grads.len();
    if n < 2 {
        return Err(Error::invalid(format!("bootstrap needs at least 2 gradient rows, got {n}")));
    }
    if opts.replicates == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    let point = ActiveSubspace::from_gradients(grads)?;
    let m = grads.dim();
    let reps: Vec<Result<(Vec<T>, Option<Vec<T>>)>> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(opts.seed, r);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let sub = eigendecompose(&covariance_of_rows(&grads.gradients, &rows)?)?;
            let dist = if opts.subspace_distances {
                let mut d = Vec::with_capacity(m.saturating_sub(1));
                for k in 1..m {
                    let a = point.eigenvectors.columns(0, k);
                    let b = sub.eigenvectors.columns(0, k);
                    d.push(subspace_angle(&a, &b)?);
                }
                Some(d)
            } else {
                None
            };
            Ok((sub.eigenvalues, dist))
        })
        .collect();
    let mut values: Vec<Vec<T>> = vec![Vec::with_capacity(opts.replicates); m];
    let mut dist_sum: Option<Vec<Vec<T>>> = opts.subspace_distances.then(|| vec![Vec::new(); m.saturating_sub(1)]);
    for r in reps {
        let (vals, dist) = r?;
        for (col, v) in values.iter_mut().zip(vals) {
            col.push(v);
        }
        if let (Some(acc), Some(d)) = (dist_sum.as_mut(), dist) {
            for (a, v) in acc.iter_mut().zip(d) {
                a.push(v);
            }
        }
    }
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for mut col in values {
        col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        match opts.interval {
            IntervalKind::MinMax => {
                lower.push(col[0]);
                upper.push(col[col.len() - 1]);
            }
            IntervalKind::Percentile => {
                lower.push(percentile(&col, 0.025));
                upper.push(percentile(&col, 0.975));
            }
        }
    }
    let reps_t = T::from_count(opts.replicates);
    Ok(BootstrapSummary {
        replicates: opts.replicates,
        interval: opts.interval,
        point: point.eigenvalues,
        lower,
        upper,
        subspace_distances: dist_sum.map(|acc| acc.iter().map(|d| pairwise_sum(d) / reps_t).collect()),
    })
}
