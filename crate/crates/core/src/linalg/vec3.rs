use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

/// Three-component vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
    }

    /// Unit vector along axis `i` (0, 1 or 2).
    pub fn unit(i: usize) -> Self {
        let mut v = Self::zero();
        v[i] = T::one();
        v
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    /// Componentwise product.
    #[inline]
    pub fn hadamard(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn max_abs(self) -> T {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn new(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn zero() -> Self {
        Self::new([[T::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        Self::diag(Vec3::new(T::one(), T::one(), T::one()))
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            r.m[i][i] = d[i];
        }
        r
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::new([
            [c0.x, c1.x, c2.x],
            [c0.y, c1.y, c2.y],
            [c0.z, c1.z, c2.z],
        ])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[j][i];
            }
        }
        r
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        r
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += o.m[i][j];
            }
        }
        r
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        for row in r.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.m
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    /// Frobenius norm of `selfᵀ·self − I`.
    pub fn orthogonality_error(&self) -> T {
        let g = self.transpose().mul_mat(self).add(&Self::identity().scale(-T::one()));
        g.m.iter().flat_map(|r| r.iter()).map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Rotation by `angle` radians about the (not necessarily unit) `axis`.
    pub fn axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = axis.norm();
        if n == T::zero() {
            return Self::identity();
        }
        let k = axis * (T::one() / n);
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        Self::new([
            [t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y],
            [t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x],
            [t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c],
        ])
    }

    /// Solves `self · x = b` by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot falls below `tol` times the largest entry.
    pub fn solve(&self, b: Vec3<T>, tol: T) -> Option<Vec3<T>> {
        let scale = self.max_abs();
        if scale == T::zero() || !scale.is_finite() {
            return None;
        }
        let mut a = self.m;
        let mut rhs = b.to_array();
        for k in 0..3 {
            let p = (k..3)
                .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
                .unwrap();
            if a[p][k].abs() <= tol * scale {
                return None;
            }
            a.swap(k, p);
            rhs.swap(k, p);
            for i in k + 1..3 {
                let f = a[i][k] / a[k][k];
                for j in k..3 {
                    let akj = a[k][j];
                    a[i][j] -= f * akj;
                }
                let rk = rhs[k];
                rhs[i] -= f * rk;
            }
        }
        let mut x = [T::zero(); 3];
        for i in (0..3).rev() {
            let mut s = rhs[i];
            for j in i + 1..3 {
                s -= a[i][j] * x[j];
            }
            x[i] = s / a[i][i];
        }
        Some(Vec3::new(x[0], x[1], x[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_product_is_right_handed() {
        let x = Vec3::<f64>::unit(0);
        let y = Vec3::<f64>::unit(1);
        assert_eq!(x.cross(y), Vec3::unit(2));
    }

    #[test]
    fn axis_angle_quarter_turn_about_z() {
        let r = Mat3::axis_angle(Vec3::<f64>::unit(2), std::f64::consts::FRAC_PI_2);
        let v = r.mul_vec(Vec3::unit(0));
        assert!((v - Vec3::unit(1)).norm() < 1e-15);
        assert!((r.det() - 1.0).abs() < 1e-15);
        assert!(r.orthogonality_error() < 1e-15);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = Mat3::new([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let x = Vec3::new(1.0, -2.0, 0.5);
        let b = a.mul_vec(x);
        let got = a.solve(b, 1e-14).unwrap();
        assert!((got - x).norm() < 1e-14);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Mat3::new([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]);
        assert!(a.solve(Vec3::new(1.0, 1.0, 1.0), 1e-12).is_none());
    }
}
