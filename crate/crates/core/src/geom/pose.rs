use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conj(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Unit quaternion with `w >= 0`.
    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12) {
            return Err(Error::DegenerateQuaternion(n));
        }
        let q = Quat::new(self.w / n, self.x / n, self.y / n, self.z / n);
        Ok(if q.w < 0.0 { q.neg() } else { q })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm3(axis);
        if n == 0.0 || angle == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let q = Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n);
        if q.w < 0.0 {
            q.neg()
        } else {
            q
        }
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Quat::from_axis_angle([0.0, 0.0, 1.0], yaw)
    }

    /// Rotation angle in radians, `2 atan2(|v|, |w|)`, in `[0, pi]`.
    pub fn angle(self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2 r x (r x v + w v), r = vector part
        let r = [self.x, self.y, self.z];
        let c1 = cross(r, v);
        let t = [
            c1[0] + self.w * v[0],
            c1[1] + self.w * v[1],
            c1[2] + self.w * v[2],
        ];
        let c2 = cross(r, t);
        [v[0] + 2.0 * c2[0], v[1] + 2.0 * c2[1], v[2] + 2.0 * c2[2]]
    }

    pub fn to_matrix(self) -> [[f64; 3]; 3] {
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

    /// Quaternion of a rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Result<Self> {
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

    /// Heading about +z, for planar motion.
    pub fn yaw(self) -> f64 {
        (2.0 * (self.w * self.z + self.x * self.y))
            .atan2(1.0 - 2.0 * (self.y * self.y + self.z * self.z))
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

/// Unit-norm, `w >= 0` quaternion for `q`.
pub fn quat_normalize(q: [f64; 4]) -> Result<Quat> {
    Quat::from_array(q).normalized()
}

/// Rigid transform: rotation `q` followed by translation `t` (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub q: Quat,
    pub t: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        q: Quat::IDENTITY,
        t: [0.0; 3],
    };

    /// Builds a pose, normalizing `q` onto the `w >= 0` hemisphere.
    pub fn new(q: Quat, t: Vec3) -> Result<Self> {
        Ok(Pose {
            q: q.normalized()?,
            t,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose {
            q: Quat::IDENTITY,
            t,
        }
    }

    /// Planar pose: heading `yaw` about +z and translation `(x, y, 0)`.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Pose {
            q: Quat::from_yaw(yaw),
            t: [x, y, 0.0],
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = self.q.rotate(p);
        [r[0] + self.t[0], r[1] + self.t[1], r[2] + self.t[2]]
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.q * other.q;
        let n = q.norm();
        let mut q = Quat::new(q.w / n, q.x / n, q.y / n, q.z / n);
        if q.w < 0.0 {
            q = q.neg();
        }
        Pose {
            q,
            t: self.apply(other.t),
        }
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.q.conj();
        let r = qi.rotate(self.t);
        Pose {
            q: qi,
            t: [-r[0], -r[1], -r[2]],
        }
    }

    /// Pose of `b` expressed in the frame of `self`: `self^-1 * b`.
    pub fn relative_to(&self, b: &Pose) -> Pose {
        self.inverse().compose(b)
    }

    pub fn translation_norm(&self) -> f64 {
        norm3(self.t)
    }

    pub fn rotation_angle(&self) -> f64 {
        self.q.angle()
    }

    /// Row-major `[R | t]`.
    pub fn to_matrix34(&self) -> [f64; 12] {
        let r = self.q.to_matrix();
        [
            r[0][0], r[0][1], r[0][2], self.t[0], r[1][0], r[1][1], r[1][2], self.t[1], r[2][0],
            r[2][1], r[2][2], self.t[2],
        ]
    }

    pub fn from_matrix34(m: &[f64; 12]) -> Result<Pose> {
        let r = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
        Ok(Pose {
            q: Quat::from_matrix(&r)?,
            t: [m[3], m[7], m[11]],
        })
    }

    pub fn approx_eq(&self, o: &Pose, tol: f64) -> bool {
        let dq = (self.q.dot(o.q).abs() - 1.0).abs();
        let dt = (0..3).map(|i| (self.t[i] - o.t[i]).abs()).fold(0.0, f64::max);
        dq <= tol && dt <= tol
    }
}

/// `relative_pose(a, b) = a^-1 * b`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    a.relative_to(b)
}

pub fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dist3(a: Vec3, b: Vec3) -> f64 {
    norm3(sub3(a, b))
}

pub fn dist2_3(a: Vec3, b: Vec3) -> f64 {
    let d = sub3(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
