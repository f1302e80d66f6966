//! Small fixed-size vector and rotation-matrix algebra.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::scalar::{cast, Real};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Real> Vec3<S> {
    pub const fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    pub fn from_f64(x: f64, y: f64, z: f64) -> Self {
        Self::new(S::lit(x), S::lit(y), S::lit(z))
    }

    pub fn from_array(a: [S; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> S {
        self.dot(self)
    }

    pub fn norm(self) -> S {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: S) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    /// Elementwise product.
    pub fn hadamard(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn map(self, f: impl Fn(S) -> S) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<T: Real>(self) -> Vec3<T> {
        Vec3::new(cast(self.x), cast(self.y), cast(self.z))
    }
}

impl<S: Real> Index<usize> for Vec3<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<S: Real> Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Real> AddAssign for Vec3<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Real> Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Real> SubAssign for Vec3<S> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<S: Real> Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<S: Real> Mul<S> for Vec3<S> {
    type Output = Self;
    fn mul(self, s: S) -> Self {
        self.scale(s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3<S> {
    pub rows: [[S; 3]; 3],
}

impl<S: Real> Default for Mat3<S> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<S: Real> Mat3<S> {
    pub const fn from_rows(rows: [[S; 3]; 3]) -> Self {
        Self { rows }
    }

    pub fn identity() -> Self {
        let (o, z) = (S::one(), S::zero());
        Self::from_rows([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn zeros() -> Self {
        Self::from_rows([[S::zero(); 3]; 3])
    }

    pub fn diag(d: Vec3<S>) -> Self {
        let z = S::zero();
        Self::from_rows([[d.x, z, z], [z, d.y, z], [z, z, d.z]])
    }

    pub fn from_columns(c0: Vec3<S>, c1: Vec3<S>, c2: Vec3<S>) -> Self {
        Self::from_rows([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.rows[r][c]
    }

    pub fn column(&self, c: usize) -> Vec3<S> {
        Vec3::new(self.rows[0][c], self.rows[1][c], self.rows[2][c])
    }

    pub fn row(&self, r: usize) -> Vec3<S> {
        Vec3::from_array(self.rows[r])
    }

    pub fn transpose(&self) -> Self {
        let r = &self.rows;
        Self::from_rows([
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ])
    }

    pub fn det(&self) -> S {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn trace(&self) -> S {
        self.rows[0][0] + self.rows[1][1] + self.rows[2][2]
    }

    pub fn mul_vec(&self, v: Vec3<S>) -> Vec3<S> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mat_mul(&self, o: &Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.rows[i][j] = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.rows[i][j] -= o.rows[i][j];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> S {
        self.rows.iter().flatten().map(|&a| a * a).sum::<S>().sqrt()
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> [S; 9] {
        let r = &self.rows;
        [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        ]
    }

    pub fn from_row_major(a: &[S]) -> Self {
        Self::from_rows([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|a| a.is_finite())
    }

    /// Largest entry of `|RᵀR − I|`.
    pub fn orthogonality_error(&self) -> S {
        let g = self.transpose().mat_mul(self).sub(&Self::identity());
        g.rows
            .iter()
            .flatten()
            .fold(S::zero(), |acc, &a| acc.max(a.abs()))
    }

    /// `RᵀR = I` and `det R = +1`, entrywise within `tol`.
    pub fn is_rotation(&self, tol: S) -> bool {
        self.is_finite()
            && self.orthogonality_error() <= tol
            && (self.det() - S::one()).abs() <= tol
    }

    /// Gram-Schmidt on the columns, producing a right-handed frame.
    pub fn orthonormalized(&self) -> Self {
        let c0 = self.column(0);
        let c1 = self.column(1);
        let e0 = c0.scale(S::one() / c0.norm());
        let u1 = c1 - e0.scale(e0.dot(c1));
        let e1 = u1.scale(S::one() / u1.norm());
        let e2 = e0.cross(e1);
        Self::from_columns(e0, e1, e2)
    }

    pub fn cast<T: Real>(&self) -> Mat3<T> {
        let mut out = Mat3::<T>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.rows[i][j] = cast(self.rows[i][j]);
            }
        }
        out
    }

    pub fn rot_x(a: S) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (S::one(), S::zero());
        Self::from_rows([[o, z, z], [z, c, -s], [z, s, c]])
    }

    pub fn rot_y(a: S) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (S::one(), S::zero());
        Self::from_rows([[c, z, s], [z, o, z], [-s, z, c]])
    }

    pub fn rot_z(a: S) -> Self {
        let (s, c) = a.sin_cos();
        let (o, z) = (S::one(), S::zero());
        Self::from_rows([[c, -s, z], [s, c, z], [z, z, o]])
    }

    /// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_euler(roll: S, pitch: S, yaw: S) -> Self {
        Self::rot_z(yaw)
            .mat_mul(&Self::rot_y(pitch))
            .mat_mul(&Self::rot_x(roll))
    }

    /// Inverse of [`Mat3::from_euler`], returning `(roll, pitch, yaw)`.
    pub fn to_euler(&self) -> (S, S, S) {
        let r = &self.rows;
        let pitch = (-r[2][0]).max(-S::one()).min(S::one()).asin();
        let roll = r[2][1].atan2(r[2][2]);
        let yaw = r[1][0].atan2(r[0][0]);
        (roll, pitch, yaw)
    }

    pub fn hat(w: Vec3<S>) -> Self {
        let z = S::zero();
        Self::from_rows([[z, -w.z, w.y], [w.z, z, -w.x], [-w.y, w.x, z]])
    }

    /// Rotation by angle `|w|` about `w / |w|` (Rodrigues).
    pub fn exp_so3(w: Vec3<S>) -> Self {
        let theta = w.norm();
        let k = Self::hat(w);
        let k2 = k.mat_mul(&k);
        let (a, b) = if theta < S::lit(1e-6) {
            let t2 = theta * theta;
            (
                S::one() - t2 / S::lit(6.0),
                S::lit(0.5) - t2 / S::lit(24.0),
            )
        } else {
            (theta.sin() / theta, (S::one() - theta.cos()) / (theta * theta))
        };
        let mut out = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                out.rows[i][j] += a * k.rows[i][j] + b * k2.rows[i][j];
            }
        }
        out
    }

    /// Rotation vector of a rotation matrix; inverse of [`Mat3::exp_so3`] with angle in `[0, π]`.
    pub fn log_so3(&self) -> Vec3<S> {
        let r = &self.rows;
        let cos = ((self.trace() - S::one()) * S::lit(0.5)).max(-S::one()).min(S::one());
        let theta = cos.acos();
        let skew = Vec3::new(r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]);
        if theta < S::lit(1e-6) {
            return skew.scale(S::lit(0.5));
        }
        if S::PI() - theta > S::lit(1e-4) {
            return skew.scale(theta / (S::lit(2.0) * theta.sin()));
        }
        // Near π: axis from the symmetric part, sign from the skew part.
        let half = S::lit(0.5);
        let mut axis = Vec3::new(
            ((r[0][0] + S::one()) * half).max(S::zero()).sqrt(),
            ((r[1][1] + S::one()) * half).max(S::zero()).sqrt(),
            ((r[2][2] + S::one()) * half).max(S::zero()).sqrt(),
        );
        let big = if axis.x >= axis.y && axis.x >= axis.z {
            0
        } else if axis.y >= axis.z {
            1
        } else {
            2
        };
        match big {
            0 => {
                axis.y = axis.y.copysign(r[0][1] + r[1][0]);
                axis.z = axis.z.copysign(r[0][2] + r[2][0]);
            }
            1 => {
                axis.x = axis.x.copysign(r[0][1] + r[1][0]);
                axis.z = axis.z.copysign(r[1][2] + r[2][1]);
            }
            _ => {
                axis.x = axis.x.copysign(r[0][2] + r[2][0]);
                axis.y = axis.y.copysign(r[1][2] + r[2][1]);
            }
        }
        if axis.dot(skew) < S::zero() {
            axis = -axis;
        }
        axis.scale(theta / axis.norm())
    }
}

impl<S: Real> Mul for Mat3<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.mat_mul(&o)
    }
}

impl<S: Real> Mul<Vec3<S>> for Mat3<S> {
    type Output = Vec3<S>;
    fn mul(self, v: Vec3<S>) -> Vec3<S> {
        self.mul_vec(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Mat3<f64>, b: &Mat3<f64>, tol: f64) -> bool {
        a.sub(b).rows.iter().flatten().all(|x| x.abs() <= tol)
    }

    #[test]
    fn euler_round_trip() {
        let r = Mat3::<f64>::from_euler(0.3, -0.4, 1.2);
        let (roll, pitch, yaw) = r.to_euler();
        assert!((roll - 0.3).abs() < 1e-12);
        assert!((pitch + 0.4).abs() < 1e-12);
        assert!((yaw - 1.2).abs() < 1e-12);
        assert!(r.is_rotation(1e-12));
    }

    #[test]
    fn log_near_pi() {
        let w = Vec3::new(0.0, 1.0, 0.0).scale(std::f64::consts::PI - 1e-7);
        let r = Mat3::exp_so3(w);
        let back = Mat3::exp_so3(r.log_so3());
        assert!(close(&r, &back, 1e-6));
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut r = Mat3::from_euler(0.1, 0.2, 0.3);
        r.rows[0][1] += 1e-4;
        r.rows[2][2] -= 2e-4;
        assert!(!r.is_rotation(1e-6));
        assert!(r.orthonormalized().is_rotation(1e-12));
    }

    proptest! {
        #[test]
        fn exp_log_inverse(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let w = Vec3::new(x, y, z);
            prop_assume!(w.norm() < 3.1);
            let r = Mat3::exp_so3(w);
            prop_assert!(r.is_rotation(1e-12));
            let back = r.log_so3();
            prop_assert!((back - w).norm() < 1e-9);
        }
    }
}
