//! Rigid-motion primitives: vectors, quaternions, SE(3) poses and dual
//! quaternions.
//!
//! Rotations are kept as unit quaternions; matrices are derived on demand.
//! Normalized quaternions live in the `w >= 0` hemisphere, and when `w == 0`
//! the first nonzero component is made positive.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat3_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

pub fn mat3_apply(a: &Mat3, v: Vec3) -> Vec3 {
    Vec3::new(
        a[0][0] * v.x + a[0][1] * v.y + a[0][2] * v.z,
        a[1][0] * v.x + a[1][1] * v.y + a[1][2] * v.z,
        a[2][0] * v.x + a[2][1] * v.y + a[2][2] * v.z,
    )
}

/// Quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);
    pub const ZERO: Quat = Quat::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Pure quaternion `(0, v)`.
    pub fn pure(v: Vec3) -> Self {
        Quat::new(0.0, v.x, v.y, v.z)
    }

    pub fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis.scale(1.0 / n);
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s).normalized()
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn conj(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit-norm representative in the canonical hemisphere. A zero
    /// quaternion maps to the identity.
    pub fn normalized(self) -> Quat {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Quat::IDENTITY;
        }
        self.scale(1.0 / n).canonical()
    }

    /// Flips the sign so that `w > 0`, or for `w == 0` the first nonzero
    /// component is positive.
    pub fn canonical(self) -> Quat {
        let lead = [self.w, self.x, self.y, self.z]
            .into_iter()
            .find(|v| *v != 0.0)
            .unwrap_or(0.0);
        if lead < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Rotates `v`. Assumes a unit quaternion; the polynomial form is used as
    /// is so derivatives are taken through the same expression.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let u = self.vector();
        let t = u.cross(v).scale(2.0);
        v + t.scale(self.w) + u.cross(t)
    }

    pub fn to_matrix(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Rotation matrix to quaternion (Shepperd's method).
    pub fn from_matrix(m: &Mat3) -> Quat {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat::new(
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            )
        };
        q.normalized()
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

impl Add for Quat {
    type Output = Quat;
    fn add(self, o: Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Quat {
    fn add_assign(&mut self, o: Quat) {
        *self = *self + o;
    }
}

impl Sub for Quat {
    type Output = Quat;
    fn sub(self, o: Quat) -> Quat {
        Quat::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Se3 {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Se3 {
    pub const IDENTITY: Se3 = Se3 {
        rotation: Quat::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Se3 {
            rotation: rotation.normalized(),
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Se3::new(Quat::IDENTITY, t)
    }

    pub fn from_rotation(q: Quat) -> Self {
        Se3::new(q, Vec3::ZERO)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Se3) -> Se3 {
        Se3 {
            rotation: (self.rotation * other.rotation).normalized(),
            translation: self.rotation.rotate(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Se3 {
        let inv = self.rotation.conj();
        Se3 {
            rotation: inv.normalized(),
            translation: -inv.rotate(self.translation),
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// Row-major homogeneous 4x4 matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.to_matrix();
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix4(m: &[[f64; 4]; 4]) -> Se3 {
        let r = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        Se3 {
            rotation: Quat::from_matrix(&r),
            translation: Vec3::new(m[0][3], m[1][3], m[2][3]),
        }
    }

    pub fn to_dual_quat(&self) -> DualQuat {
        DualQuat::from_se3(self)
    }
}

pub fn se3_compose(a: &Se3, b: &Se3) -> Se3 {
    a.compose(b)
}

pub fn se3_apply(t: &Se3, p: Vec3) -> Vec3 {
    t.apply(p)
}

/// Dual quaternion `real + ε dual`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualQuat {
    pub real: Quat,
    pub dual: Quat,
}

impl DualQuat {
    pub const IDENTITY: DualQuat = DualQuat {
        real: Quat::IDENTITY,
        dual: Quat::ZERO,
    };

    pub fn from_se3(t: &Se3) -> DualQuat {
        let real = t.rotation;
        DualQuat {
            real,
            dual: (Quat::pure(t.translation) * real).scale(0.5),
        }
    }

    pub fn to_se3(&self) -> Result<Se3> {
        let n = self.real.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::Degenerate(
                "dual quaternion with zero real part".into(),
            ));
        }
        let inv = 1.0 / n;
        let r = self.real.scale(inv);
        let d = self.dual.scale(inv);
        let t = (d * r.conj()).vector().scale(2.0);
        Ok(Se3 {
            rotation: r.canonical(),
            translation: t,
        })
    }

    pub fn mul(&self, o: &DualQuat) -> DualQuat {
        DualQuat {
            real: self.real * o.real,
            dual: self.real * o.dual + self.dual * o.real,
        }
    }

    pub fn scale(&self, s: f64) -> DualQuat {
        DualQuat {
            real: self.real.scale(s),
            dual: self.dual.scale(s),
        }
    }

    pub fn neg(&self) -> DualQuat {
        self.scale(-1.0)
    }

    /// Unit real part and the dual part projected onto the Plücker
    /// constraint `real · dual = 0`.
    pub fn normalized(&self) -> Result<DualQuat> {
        let n = self.real.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::Degenerate(
                "dual quaternion with zero real part".into(),
            ));
        }
        let r = self.real.scale(1.0 / n);
        let d = self.dual.scale(1.0 / n);
        let d = d - r.scale(r.dot(d));
        Ok(DualQuat { real: r, dual: d })
    }
}

pub fn se3_to_dq(t: &Se3) -> DualQuat {
    DualQuat::from_se3(t)
}

pub fn dq_to_se3(d: &DualQuat) -> Result<Se3> {
    d.to_se3()
}
