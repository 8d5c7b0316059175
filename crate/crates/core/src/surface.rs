//! Polynomial response surfaces over active variables and the
//! dimension × degree test-error matrix.

use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{lstsq, Matrix};
use crate::scalar::{pairwise_sum, Real};
use crate::subspace::{local_linear_gradients, ActiveSubspace, GradientSet, SampleSet};

/// Exponent tuples of all monomials in `dim` variables with total degree at
/// most `degree`, in graded lexicographic order (`1, x, y, x², xy, y², …`).
pub fn exponent_table(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == dim {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(dim, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        out.push(Vec::new());
        return out;
    }
    for total in 0..=degree as u32 {
        rec(dim, total, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// Number of monomials `C(M + d, d)`.
pub fn basis_size(dim: usize, degree: usize) -> usize {
    let mut c = 1usize;
    for i in 1..=degree {
        c = c * (dim + i) / i;
    }
    c
}

fn monomial<T: Real>(x: &[T], e: &[u32]) -> T {
    let mut p = T::one();
    for (&xi, &ei) in x.iter().zip(e) {
        p *= xi.powi(ei as i32);
    }
    p
}

/// Global polynomial `g(y) = Σ cₖ yᵉᵏ` of total degree `d` in `M` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySurface<T> {
    pub active_dim: usize,
    pub degree: usize,
    pub exponents: Vec<Vec<u32>>,
    pub coefficients: Vec<T>,
}

impl<T: Real> PolySurface<T> {
    pub fn from_coefficients(active_dim: usize, degree: usize, coefficients: Vec<T>) -> Result<Self> {
        let exponents = exponent_table(active_dim, degree);
        if coefficients.len() != exponents.len() {
            return Err(Error::DimensionMismatch {
                expected: exponents.len(),
                got: coefficients.len(),
            });
        }
        Ok(Self {
            active_dim,
            degree,
            exponents,
            coefficients,
        })
    }

    pub fn zero(active_dim: usize, degree: usize) -> Self {
        let exponents = exponent_table(active_dim, degree);
        let coefficients = vec![T::zero(); exponents.len()];
        Self {
            active_dim,
            degree,
            exponents,
            coefficients,
        }
    }

    /// Least-squares fit through the SVD of the design matrix. With fewer
    /// rows than monomials the minimum-norm solution is returned.
    pub fn fit(inputs: &Matrix<T>, outputs: &[T], degree: usize) -> Result<Self> {
        let (n, dim) = (inputs.nrows(), inputs.ncols());
        if outputs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: outputs.len() });
        }
        if !inputs.is_finite() || outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("response surface data has non-finite values"));
        }
        let exponents = exponent_table(dim, degree);
        if n < exponents.len() {
            warn!(
                "{n} samples for {} coefficients (dim {dim}, degree {degree}); using the minimum-norm fit",
                exponents.len()
            );
        }
        let a = design_matrix(inputs, &exponents);
        let sol = lstsq(&a, outputs)?;
        Ok(Self {
            active_dim: dim,
            degree,
            exponents,
            coefficients: sol.x,
        })
    }

    pub fn predict(&self, x: &[T]) -> Result<T> {
        if x.len() != self.active_dim {
            return Err(Error::DimensionMismatch {
                expected: self.active_dim,
                got: x.len(),
            });
        }
        let mut s = T::zero();
        for (c, e) in self.coefficients.iter().zip(&self.exponents) {
            s += *c * monomial(x, e);
        }
        Ok(s)
    }

    pub fn predict_many(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        x.rows_iter().map(|r| self.predict(r)).collect()
    }
}

fn design_matrix<T: Real>(inputs: &Matrix<T>, exponents: &[Vec<u32>]) -> Matrix<T> {
    Matrix::from_fn(inputs.nrows(), exponents.len(), |i, k| monomial(inputs.row(i), &exponents[k]))
}

/// Root-mean-square error over the test set divided by the range of the
/// test outputs.
pub fn relative_rmse<T: Real>(surface: &PolySurface<T>, inputs: &Matrix<T>, outputs: &[T]) -> Result<T> {
    let k = outputs.len();
    if inputs.nrows() != k {
        return Err(Error::DimensionMismatch {
            expected: inputs.nrows(),
            got: k,
        });
    }
    if k < 2 {
        return Err(Error::invalid("relative RMSE needs at least two test samples"));
    }
    let (lo, hi) = outputs
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if !(range > T::zero()) {
        return Err(Error::Domain("test outputs have zero range".into()));
    }
    let pred = surface.predict_many(inputs)?;
    let sq: Vec<T> = pred.iter().zip(outputs).map(|(&p, &y)| (p - y) * (p - y)).collect();
    Ok((pairwise_sum(&sq) / T::from_count(k)).sqrt() / range)
}

/// Where the gradients for each repetition's subspace come from.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientSource<T> {
    /// Local linear fits over the `k` nearest training samples.
    LocalLinear { k: usize },
    /// Exact gradients in normalized coordinates, one row per sample.
    Supplied(Matrix<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrixConfig<T> {
    pub dims: Vec<usize>,
    pub degrees: Vec<usize>,
    pub repetitions: usize,
    pub split: f64,
    pub seed: u64,
    pub gradients: GradientSource<T>,
}

impl<T> Default for ErrorMatrixConfig<T> {
    fn default() -> Self {
        Self {
            dims: vec![1, 2, 3],
            degrees: vec![1, 2, 3, 4],
            repetitions: 20,
            split: 0.8,
            seed: 0,
            gradients: GradientSource::LocalLinear { k: 14 },
        }
    }
}

/// Mean relative test RMSE for each (active dimension, degree) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix<T> {
    pub dims: Vec<usize>,
    pub degrees: Vec<usize>,
    /// `values[(i, j)]` belongs to `dims[i]`, `degrees[j]`.
    pub values: Matrix<T>,
    pub repetitions: usize,
}

impl<T: Real> ErrorMatrix<T> {
    pub fn get(&self, dim: usize, degree: usize) -> Option<T> {
        let i = self.dims.iter().position(|&d| d == dim)?;
        let j = self.degrees.iter().position(|&d| d == degree)?;
        Some(self.values[(i, j)])
    }

    /// Cell with the smallest error as `(dim, degree, value)`.
    pub fn argmin(&self) -> (usize, usize, T) {
        let mut best = (self.dims[0], self.degrees[0], self.values[(0, 0)]);
        for (i, &d) in self.dims.iter().enumerate() {
            for (j, &p) in self.degrees.iter().enumerate() {
                if self.values[(i, j)] < best.2 {
                    best = (d, p, self.values[(i, j)]);
                }
            }
        }
        best
    }

    /// Grid form: one row per dimension, one column per degree.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dim");
        for d in &self.degrees {
            let _ = write!(s, ",degree_{d}");
        }
        s.push('\n');
        for (i, dim) in self.dims.iter().enumerate() {
            let _ = write!(s, "{dim}");
            for j in 0..self.degrees.len() {
                let _ = write!(s, ",{:.16e}", self.values[(i, j)].as_f64());
            }
            s.push('\n');
        }
        s
    }

    /// Long form: `dim,degree,error`.
    pub fn to_long_csv(&self) -> String {
        let mut s = String::from("dim,degree,error\n");
        for (i, dim) in self.dims.iter().enumerate() {
            for (j, deg) in self.degrees.iter().enumerate() {
                let _ = writeln!(s, "{dim},{deg},{:.16e}", self.values[(i, j)].as_f64());
            }
        }
        s
    }
}

/// Seeded uniform random split; the training part has `round(split·n)` rows.
pub fn train_test_split(n: usize, split: f64, seed: u64, stream: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::invalid(format!("split must be in (0, 1), got {split}")));
    }
    let n_train = (split * n as f64).round() as usize;
    if n_train < 2 || n - n_train < 2 {
        return Err(Error::invalid(format!("split {split} of {n} samples leaves fewer than 2 rows on one side")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    idx.shuffle(&mut rng);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Repeats split → gradients → subspace → fit → score and averages each
/// cell over the repetitions. Repetition `r` uses stream `r` of the seed.
pub fn error_matrix<T: Real>(samples: &SampleSet<T>, cfg: &ErrorMatrixConfig<T>) -> Result<ErrorMatrix<T>> {
    let norm = samples.normalize();
    let f = norm.outputs()?;
    let (n, m) = (norm.len(), norm.dim());
    if cfg.repetitions == 0 || cfg.dims.is_empty() || cfg.degrees.is_empty() {
        return Err(Error::invalid("error matrix needs repetitions, dims and degrees"));
    }
    if let Some(&d) = cfg.dims.iter().find(|&&d| d == 0 || d >= m) {
        return Err(Error::invalid(format!("active dimension {d} outside [1, {}]", m - 1)));
    }
    if let GradientSource::Supplied(g) = &cfg.gradients {
        if g.nrows() != n || g.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: n * m,
                got: g.nrows() * g.ncols(),
            });
        }
    }
    let runs: Vec<Result<Matrix<T>>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            let (train, test) = train_test_split(n, cfg.split, cfg.seed, r as u64)?;
            let train_set = norm.subset(&train)?;
            let grads = match &cfg.gradients {
                GradientSource::LocalLinear { k } => local_linear_gradients(&train_set, *k)?,
                GradientSource::Supplied(g) => GradientSet::from_rows(g.select_rows(&train))?,
            };
            let full = ActiveSubspace::from_gradients(&grads)?;
            let x_test = norm.inputs().select_rows(&test);
            let y_test: Vec<T> = test.iter().map(|&i| f[i]).collect();
            let y_train: Vec<T> = train.iter().map(|&i| f[i]).collect();
            let mut cells = Matrix::zeros(cfg.dims.len(), cfg.degrees.len());
            for (i, &dim) in cfg.dims.iter().enumerate() {
                let sub = full.partition(dim)?;
                let a_train = sub.active_coordinates(train_set.inputs())?;
                let a_test = sub.active_coordinates(&x_test)?;
                for (j, &deg) in cfg.degrees.iter().enumerate() {
                    let g = PolySurface::fit(&a_train, &y_train, deg)?;
                    cells[(i, j)] = relative_rmse(&g, &a_test, &y_test)?;
                }
            }
            Ok(cells)
        })
        .collect();
    let runs: Vec<Matrix<T>> = runs.into_iter().collect::<Result<_>>()?;
    let reps = T::from_count(cfg.repetitions);
    let values = Matrix::from_fn(cfg.dims.len(), cfg.degrees.len(), |i, j| {
        let col: Vec<T> = runs.iter().map(|c| c[(i, j)]).collect();
        pairwise_sum(&col) / reps
    });
    if !values.is_finite() {
        return Err(Error::Numerical("error matrix has non-finite cells".into()));
    }
    Ok(ErrorMatrix {
        dims: cfg.dims.clone(),
        degrees: cfg.degrees.clone(),
        values,
        repetitions: cfg.repetitions,
    })
}

/// Sufficient-summary data: active coordinates `W₁ᵀμ` of every normalized
/// sample next to its output. Header `y_1,…,y_M,f`.
pub fn sufficient_summary_csv<T: Real>(subspace: &ActiveSubspace<T>, normalized: &SampleSet<T>) -> Result<String> {
    let y = subspace.active_coordinates(normalized.inputs())?;
    let f = normalized.outputs()?;
    let mut s = (1..=y.ncols()).map(|i| format!("y_{i}")).collect::<Vec<_>>().join(",");
    s.push_str(",f\n");
    for (row, fi) in y.rows_iter().zip(f) {
        for v in row {
            let _ = write!(s, "{:.16e},", v.as_f64());
        }
        let _ = writeln!(s, "{:.16e}", fi.as_f64());
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn points(n: usize, dim: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, dim, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn grlex_order() {
        assert_eq!(exponent_table(1, 3), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(
            exponent_table(2, 2),
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        for (m, d) in [(1, 4), (2, 4), (3, 4), (3, 1)] {
            let t = exponent_table(m, d);
            assert_eq!(t.len(), basis_size(m, d));
            let mut u = t.clone();
            u.dedup();
            assert_eq!(u.len(), t.len());
        }
        assert_eq!(basis_size(3, 4), 35);
    }

    #[test]
    fn recovers_quadratic() {
        let x = Matrix::from_fn(10, 1, |i, _| -1.0 + 0.2 * i as f64);
        let y: Vec<f64> = x.rows_iter().map(|r| 2.0 + 3.0 * r[0] - r[0] * r[0]).collect();
        let g = PolySurface::fit(&x, &y, 2).unwrap();
        for (c, e) in g.coefficients.iter().zip([2.0, 3.0, -1.0]) {
            assert!((c - e).abs() < 1e-10);
        }
        assert!((g.predict(&[2.0]).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn constant_data_fits_constant_term() {
        let x = points(12, 2, 1);
        let g = PolySurface::fit(&x, &[3.5; 12], 3).unwrap();
        assert!((g.coefficients[0] - 3.5).abs() < 1e-12);
        assert!(g.coefficients[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn bivariate_quartic_recovery() {
        let truth = PolySurface::from_coefficients(2, 4, (0..15).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let x = points(40, 2, 2);
        let y = truth.predict_many(&x).unwrap();
        let g = PolySurface::fit(&x, &y, 4).unwrap();
        for (a, b) in g.coefficients.iter().zip(&truth.coefficients) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn predict_examples() {
        let z = PolySurface::<f64>::zero(2, 3);
        assert_eq!(z.predict(&[0.3, -2.0]).unwrap(), 0.0);
        let mut c = PolySurface::<f64>::zero(3, 2);
        c.coefficients[0] = 1.25;
        assert_eq!(c.predict(&[5.0, 6.0, 7.0]).unwrap(), 1.25);
        assert!(c.predict(&[1.0]).is_err());
    }

    #[test]
    fn underdetermined_fit_still_interpolates() {
        let x = points(4, 2, 3);
        let y = vec![1.0, -1.0, 0.5, 2.0];
        let g = PolySurface::fit(&x, &y, 3).unwrap();
        for (p, t) in g.predict_many(&x).unwrap().iter().zip(&y) {
            assert!((p - t).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_rejects_non_finite() {
        let x = Matrix::from_rows(&[vec![0.0], vec![f64::NAN]]).unwrap();
        assert!(PolySurface::fit(&x, &[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn relative_rmse_examples() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let exact = PolySurface::from_coefficients(1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(relative_rmse(&exact, &x, &[0.0, 1.0]).unwrap(), 0.0);
        let mid = PolySurface::from_coefficients(1, 0, vec![0.5]).unwrap();
        assert_eq!(relative_rmse(&mid, &x, &[0.0, 1.0]).unwrap(), 0.5);
        assert!(relative_rmse(&mid, &x, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (tr, te) = train_test_split(130, 0.8, 4, 0).unwrap();
        assert_eq!((tr.len(), te.len()), (104, 26));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..130).collect::<Vec<_>>());
        assert_eq!(train_test_split(130, 0.8, 4, 0).unwrap().0, tr);
        assert_ne!(train_test_split(130, 0.8, 4, 1).unwrap().0, tr);
        assert!(train_test_split(3, 0.8, 0, 0).is_err());
    }

    fn ridge_samples(n: usize, seed: u64) -> (SampleSet<f64>, Matrix<f64>) {
        let m = 4;
        let a = [0.5, 0.5, 0.5, 0.5];
        let x = points(n, m, seed);
        let y: Vec<f64> = x
            .rows_iter()
            .map(|r| {
                let t: f64 = r.iter().zip(&a).map(|(p, q)| p * q).sum();
                1.0 + t + t * t
            })
            .collect();
        let g = Matrix::from_fn(n, m, |i, j| {
            let t: f64 = x.row(i).iter().zip(&a).map(|(p, q)| p * q).sum();
            (1.0 + 2.0 * t) * a[j]
        });
        (SampleSet::new(x, Some(y), vec![(-1.0, 1.0); m]).unwrap(), g)
    }

    #[test]
    fn quadratic_ridge_error_ordering() {
        let (s, g) = ridge_samples(60, 5);
        let cfg = ErrorMatrixConfig {
            dims: vec![1, 2],
            degrees: vec![1, 2, 3],
            repetitions: 3,
            gradients: GradientSource::Supplied(g),
            ..Default::default()
        };
        let em = error_matrix(&s, &cfg).unwrap();
        assert!(em.get(1, 2).unwrap() < 1e-10);
        assert!(em.get(1, 3).unwrap() < 1e-10);
        assert!(em.get(1, 1).unwrap() > em.get(1, 2).unwrap());
        assert!(em.to_csv().starts_with("dim,degree_1,degree_2,degree_3\n1,"));
        assert_eq!(em.to_long_csv().lines().count(), 1 + 6);
    }

    #[test]
    fn error_matrix_reproducible_with_local_gradients() {
        let (s, _) = ridge_samples(50, 6);
        let cfg = ErrorMatrixConfig {
            dims: vec![1],
            degrees: vec![1, 2],
            repetitions: 1,
            seed: 9,
            gradients: GradientSource::LocalLinear { k: 8 },
            ..Default::default()
        };
        let a = error_matrix(&s, &cfg).unwrap();
        assert_eq!(a, error_matrix(&s, &cfg).unwrap());
        assert!(a.values.is_finite());
    }

    #[test]
    fn error_matrix_validates_dims() {
        let (s, _) = ridge_samples(30, 7);
        let cfg = ErrorMatrixConfig::<f64> {
            dims: vec![4],
            ..Default::default()
        };
        assert!(error_matrix(&s, &cfg).is_err());
    }

    #[test]
    fn summary_csv_shape() {
        let (s, g) = ridge_samples(10, 8);
        let sub = ActiveSubspace::from_gradients(&GradientSet::from_rows(g).unwrap())
            .unwrap()
            .partition(2)
            .unwrap();
        let text = sufficient_summary_csv(&sub, &s.normalize()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "y_1,y_2,f");
        assert_eq!(lines.len(), 11);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn refit_reproduces_polynomials(seed in 0u64..10_000, dim in 1usize..4, degree in 0usize..5) {
            let p = basis_size(dim, degree);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let truth = PolySurface::from_coefficients(dim, degree, coeffs).unwrap();
            let x = points(p + 10, dim, seed + 1);
            let y = truth.predict_many(&x).unwrap();
            let g = PolySurface::fit(&x, &y, degree).unwrap();
            let probe = points(20, dim, seed + 2);
            for (a, b) in g.predict_many(&probe).unwrap().iter().zip(truth.predict_many(&probe).unwrap()) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }

        #[test]
        fn rmse_shift_invariant(seed in 0u64..10_000, shift in -100.0f64..100.0) {
            let x = points(15, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
            let y: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = PolySurface::fit(&x, &y, 1).unwrap();
            let mut g2 = g.clone();
            g2.coefficients[0] += shift;
            let y2: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let a = relative_rmse(&g, &x, &y).unwrap();
            let b = relative_rmse(&g2, &x, &y2).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + shift.abs()));
        }
    }
}
