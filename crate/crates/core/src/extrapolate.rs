//! Steady value of an oscillating, decaying signal.
//!
//! The series is smoothed with a centered moving average, its local maxima
//! and minima are located, an exponential envelope `±a·e^{−b t} + c` is fitted
//! through each family, and the steady value is the mean of the two
//! asymptotes `(c₊ + c₋)/2`.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::{pairwise_sum, Real};

pub const DEFAULT_WINDOW: usize = 5;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    times: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> TimeSeries<T> {
    pub fn new(times: Vec<T>, values: Vec<T>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::invalid("time series is empty"));
        }
        if let Some(i) = times.iter().zip(&values).position(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("times must be strictly increasing (sample {})", i + 1)));
        }
        Ok(Self { times, values })
    }

    /// Samples `f` at `t0, t0 + dt, …` up to and including `t1` (within half a step).
    pub fn sample(t0: T, t1: T, dt: T, f: impl Fn(T) -> T) -> Result<Self> {
        if !(dt > T::zero()) || t1 < t0 {
            return Err(Error::invalid("need dt > 0 and t1 >= t0"));
        }
        let n = ((t1 - t0) / dt + T::lit(0.5)).floor().to_usize().unwrap_or(0) + 1;
        let times: Vec<T> = (0..n).map(|i| t0 + dt * T::from_count(i)).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn shift_time(&self, dt: T) -> Result<Self> {
        Self::new(self.times.iter().map(|&t| t + dt).collect(), self.values.clone())
    }

    /// Two-column CSV `(t, value)`; a non-numeric first row is taken as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse {
                offset: e.position().map_or(0, |p| p.byte() as usize),
                message: e.to_string(),
            })?;
            let offset = record.position().map_or(0, |p| p.byte() as usize);
            if record.len() != 2 {
                return Err(Error::Parse {
                    offset,
                    message: format!("expected 2 columns, found {}", record.len()),
                });
            }
            let parsed = (record[0].parse::<f64>(), record[1].parse::<f64>());
            match parsed {
                (Ok(t), Ok(v)) => {
                    times.push(T::lit(t));
                    values.push(T::lit(v));
                }
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::Parse {
                        offset,
                        message: format!("invalid number in {:?}", record.iter().collect::<Vec<_>>()),
                    })
                }
            }
        }
        Self::new(times, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            s.push_str(&format!("{:.16e},{:.16e}\n", t.as_f64(), v.as_f64()));
        }
        s
    }
}

/// Centered moving average over `window` samples; near the ends the window
/// shrinks symmetrically so every average stays centered.
pub fn smooth<T: Real>(series: &TimeSeries<T>, window: usize) -> Result<TimeSeries<T>> {
    let n = series.len();
    if window % 2 == 0 {
        return Err(Error::invalid(format!("smoothing window must be odd, got {window}")));
    }
    if window > n {
        return Err(Error::invalid(format!("smoothing window {window} exceeds series length {n}")));
    }
    let half = window / 2;
    let y = &series.values;
    let values = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            // averaging deviations from the center keeps constant stretches exact
            let dev: Vec<T> = y[i - h..=i + h].iter().map(|&v| v - y[i]).collect();
            y[i] + pairwise_sum(&dev) / T::from_count(2 * h + 1)
        })
        .collect();
    Ok(TimeSeries {
        times: series.times.clone(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Extrema {
    pub maxima: Vec<usize>,
    pub minima: Vec<usize>,
}

/// Interior strict local extrema; a plateau counts once, at its middle index.
pub fn find_extrema<T: Real>(series: &TimeSeries<T>) -> Result<Extrema> {
    let y = &series.values;
    let n = y.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 samples to find extrema, got {n}")));
    }
    let mut out = Extrema::default();
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && y[end + 1] == y[start] {
            end += 1;
        }
        if start > 0 && end + 1 < n {
            let (before, v, after) = (y[start - 1], y[start], y[end + 1]);
            let mid = (start + end) / 2;
            if v > before && v > after {
                out.maxima.push(mid);
            } else if v < before && v < after {
                out.minima.push(mid);
            }
        }
        start = end + 1;
    }
    if out.maxima.len() < 3 || out.minima.len() < 3 {
        warn!(
            "only {} maxima and {} minima found; envelope fits need at least 3 of each",
            out.maxima.len(),
            out.minima.len()
        );
    }
    Ok(out)
}

/// `y = sign·a·e^{−b t} + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub sign: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl EnvelopeFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.sign * self.a * (-self.b * t).exp() + self.c
    }
}

/// Damped Gauss–Newton (Levenberg–Marquardt) fit of `sign·a·e^{−b t} + c`.
///
/// Time is measured from the first point internally; the reported `a`
/// refers to absolute time.
pub fn fit_envelope<T: Real>(times: &[T], values: &[T], sign: f64) -> Result<EnvelopeFit> {
    let n = times.len();
    if values.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: values.len() });
    }
    if n < 3 {
        return Err(Error::invalid(format!("envelope fit needs at least 3 points, got {n}")));
    }
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::invalid(format!("envelope sign must be +1 or -1, got {sign}")));
    }
    let t0 = times[0];
    let tau: Vec<T> = times.iter().map(|&t| t - t0).collect();
    let y = values;
    let s = T::lit(sign);
    if sign * (values[n - 1] - values[0]).as_f64() > 0.0 {
        warn!("envelope points trend away from a decay (sign {sign})");
    }

    let c0 = y[n - 1];
    let d0 = y[0] - c0;
    let d1 = y[1] - c0;
    let span = tau[n - 1];
    let mut b0 = T::one() / span;
    let ratio = d0 / d1;
    if ratio.is_finite() && ratio > T::one() && tau[1] > T::zero() {
        b0 = ratio.ln() / tau[1];
    }
    let mut p = Vec3::new(s * d0, b0, c0);

    let residuals = |p: Vec3<T>| -> Vec<T> {
        tau.iter()
            .zip(y)
            .map(|(&t, &yi)| s * p.x * (-p.y * t).exp() + p.z - yi)
            .collect()
    };
    let cost = |r: &[T]| pairwise_sum(&r.iter().map(|v| *v * *v).collect::<Vec<_>>());

    let mut r = residuals(p);
    let mut f = cost(&r);
    let mut lambda = T::lit(1e-3);
    let step_tol = T::lit(1e-12);
    let mut clamped = false;
    let mut converged = f == T::zero();
    let mut iterations = 0;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Mat3::zero();
        let mut jtr = Vec3::zero();
        for (&t, &ri) in tau.iter().zip(&r) {
            let e = (-p.y * t).exp();
            let j = Vec3::new(s * e, -s * p.x * t * e, T::one());
            for a in 0..3 {
                for b in 0..3 {
                    jtj.m[a][b] += j[a] * j[b];
                }
            }
            jtr += j * ri;
        }
        let dmax = (0..3).fold(T::zero(), |m, k| m.max(jtj.m[k][k]));
        let floor = dmax * T::lit(1e-12);
        let mut accepted = false;
        while lambda < T::lit(1e16) {
            let mut a = jtj;
            for k in 0..3 {
                a.m[k][k] += lambda * jtj.m[k][k].max(floor);
            }
            let Some(delta) = a.solve(-jtr, T::lit(1e-300).max(T::min_positive_value())) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let mut q = p + delta;
            if q.y < T::zero() {
                q.y = T::zero();
                if !clamped {
                    warn!("envelope decay rate went negative; clamped to 0");
                    clamped = true;
                }
            }
            let rq = residuals(q);
            let fq = cost(&rq);
            if fq.is_finite() && fq <= f {
                let step = (q - p).norm();
                p = q;
                r = rq;
                f = fq;
                lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                accepted = true;
                if step <= step_tol * (T::one() + p.norm()) || f == T::zero() {
                    converged = true;
                }
                break;
            }
            lambda *= T::lit(10.0);
        }
        if !accepted {
            // no damping level reduces the cost: p is a minimum to working precision
            converged = true;
        }
    }
    let rms = (f / T::from_count(n)).sqrt().as_f64();
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual: rms,
        });
    }
    let (a, b, c) = (p.x.as_f64(), p.y.as_f64(), p.z.as_f64());
    Ok(EnvelopeFit {
        sign,
        a: a * (b * t0.as_f64()).exp(),
        b,
        c,
        residual_rms: rms,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub value: f64,
    pub window: usize,
    pub maxima: usize,
    pub minima: usize,
    pub upper: EnvelopeFit,
    pub lower: EnvelopeFit,
}

impl SteadyState {
    /// Mean of the two envelopes at a finite time (for plotting).
    pub fn at(&self, t: f64) -> f64 {
        0.5 * (self.upper.eval(t) + self.lower.eval(t))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("steady state serializes")
    }
}

/// Smooths, locates extrema on the smoothed series, fits both envelopes
/// through the raw values at those samples and averages the asymptotes.
pub fn steady_value<T: Real>(series: &TimeSeries<T>, window: usize) -> Result<SteadyState> {
    let y = series.values();
    if y.iter().all(|&v| v == y[0]) {
        let flat = |sign| EnvelopeFit {
            sign,
            a: 0.0,
            b: 0.0,
            c: y[0].as_f64(),
            residual_rms: 0.0,
            iterations: 0,
        };
        return Ok(SteadyState {
            value: y[0].as_f64(),
            window,
            maxima: 0,
            minima: 0,
            upper: flat(1.0),
            lower: flat(-1.0),
        });
    }
    let smoothed = smooth(series, window)?;
    let ext = find_extrema(&smoothed)?;
    if ext.maxima.len() < 3 || ext.minima.len() < 3 {
        return Err(Error::invalid(format!(
            "found {} maxima and {} minima; at least 3 of each are needed, use a longer series",
            ext.maxima.len(),
            ext.minima.len()
        )));
    }
    let pick = |idx: &[usize]| -> (Vec<T>, Vec<T>) { (idx.iter().map(|&i| series.times[i]).collect(), idx.iter().map(|&i| y[i]).collect()) };
    let (tu, yu) = pick(&ext.maxima);
    let (tl, yl) = pick(&ext.minima);
    let upper = fit_envelope(&tu, &yu, 1.0)?;
    let lower = fit_envelope(&tl, &yl, -1.0)?;
    Ok(SteadyState {
        value: 0.5 * (upper.c + lower.c),
        window,
        maxima: ext.maxima.len(),
        minima: ext.minima.len(),
        upper,
        lower,
    })
}
