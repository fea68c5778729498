//! Camera model, rigid poses and the pinhole projection.
//!
//! Poses are world-to-camera: a world point `p` maps to camera space as
//! `R p + t`. Camera axes are x right, y down, z forward; the world is z-up.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Default near plane in scene units.
pub const DEFAULT_NEAR: f64 = 0.05;

/// Quaternion stored as (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
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

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
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

    pub fn normalized(self) -> Result<Quat> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput(format!(
                "quaternion with norm {n} cannot be normalized"
            )));
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation vector (axis times angle) to quaternion.
    pub fn exp(omega: Vec3) -> Quat {
        let theta = omega.norm();
        if theta < 1e-12 {
            let q = Quat::new(1.0, 0.5 * omega.x, 0.5 * omega.y, 0.5 * omega.z);
            let n = q.norm();
            return Quat::new(q.w / n, q.x / n, q.y / n, q.z / n);
        }
        Quat::from_axis_angle(omega, theta)
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(self, r: Quat) -> Quat {
        let l = self;
        Quat::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }

    /// Rotation matrix of an already normalized quaternion.
    pub fn to_rotation_unchecked(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a rotation matrix (Shepperd's method), with w >= 0.
    pub fn from_rotation(m: &Mat3) -> Quat {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = if q.w < 0.0 {
            Quat::new(-q.w, -q.x, -q.y, -q.z)
        } else {
            q
        };
        let n = q.norm();
        Quat::new(q.w / n, q.x / n, q.y / n, q.z / n)
    }
}

/// Converts a quaternion to a rotation matrix, normalizing it first.
pub fn quat_to_rotation(q: Quat) -> Result<Mat3> {
    Ok(q.normalized()?.to_rotation_unchecked())
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
    pub timestamp: Option<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Quat::IDENTITY,
            translation: Vec3::zeros(),
            timestamp: None,
        }
    }

    pub fn new(rotation: Quat, translation: Vec3) -> Result<Self> {
        Ok(Pose {
            rotation: rotation.normalized()?,
            translation,
            timestamp: None,
        })
    }

    pub fn from_rotation_matrix(r: &Mat3, translation: Vec3) -> Self {
        Pose {
            rotation: Quat::from_rotation(r),
            translation,
            timestamp: None,
        }
    }

    pub fn with_timestamp(mut self, t: Option<f64>) -> Self {
        self.timestamp = t;
        self
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_unchecked()
    }

    /// Maps a world point into this pose's frame.
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    /// `a.compose(b)` applies `b` first, then `a`.
    pub fn compose(&self, b: &Pose) -> Pose {
        let q = self.rotation.mul(b.rotation);
        let n = q.norm();
        let rotation = Quat::new(q.w / n, q.x / n, q.y / n, q.z / n);
        Pose {
            rotation,
            translation: self.rotation_matrix() * b.translation + self.translation,
            timestamp: b.timestamp.or(self.timestamp),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.conjugate();
        let m = r_inv.to_rotation_unchecked();
        Pose {
            rotation: r_inv,
            translation: -(m * self.translation),
            timestamp: self.timestamp,
        }
    }

    /// Builds a world-to-camera pose from a camera-to-world rotation and the
    /// camera center.
    pub fn from_camera_to_world(r_c2w: &Mat3, center: Vec3) -> Pose {
        let r = r_c2w.transpose();
        Pose::from_rotation_matrix(&r, -(r * center))
    }

    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    /// Camera looking horizontally along heading `yaw` (radians, 0 = +x,
    /// counter-clockwise about world z), then pitched down by `pitch`.
    pub fn looking(center: Vec3, yaw: f64, pitch: f64) -> Pose {
        Pose::from_camera_to_world(&heading_rotation(yaw, pitch), center)
    }

    /// Heading of the optical axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        let fwd = self.rotation_matrix().transpose() * Vec3::z();
        fwd.y.atan2(fwd.x)
    }

    /// Returns this camera moved by `(dx, dy)` on the ground plane and
    /// rotated by `dyaw` about the world vertical through its center.
    pub fn perturbed_xy_yaw(&self, dx: f64, dy: f64, dyaw: f64) -> Pose {
        let r_c2w = self.rotation_matrix().transpose();
        let rz = rot_z(dyaw);
        let c = self.camera_center() + Vec3::new(dx, dy, 0.0);
        Pose::from_camera_to_world(&(rz * r_c2w), c).with_timestamp(self.timestamp)
    }

    /// Geodesic rotation distance to `other`, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let d = self.rotation.conjugate().mul(other.rotation);
        let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        2.0 * v.atan2(d.w.abs())
    }
}

pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Camera-to-world rotation for a camera with the given heading and pitch.
pub fn heading_rotation(yaw: f64, pitch: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    let fwd = Vec3::new(c, s, 0.0);
    let right = Vec3::new(s, -c, 0.0);
    let down = Vec3::new(0.0, 0.0, -1.0);
    let base = Mat3::from_columns(&[right, down, fwd]);
    // positive pitch looks down: rotate about the camera x axis
    let (sp, cp) = pitch.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cp, sp, 0.0, -sp, cp);
    base * rx
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near: DEFAULT_NEAR,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_near(mut self, near: f64) -> Result<Self> {
        self.near = near;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image dimensions must be >= 1".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidInput("near plane must be positive".into()));
        }
        Ok(())
    }

    /// Intrinsics for the same camera resampled to `width x height`.
    pub fn scaled_to(&self, width: usize, height: usize) -> Intrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            // pixel centers sit at integer coordinates
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            near: self.near,
        }
    }

    /// Camera-space point at depth `z` through pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Projects a camera-space point.
    pub fn project_camera(&self, p: &Vec3) -> Result<(f64, f64)> {
        if !(p.z > self.near) {
            return Err(Error::BehindCamera {
                z: p.z,
                near: self.near,
            });
        }
        Ok((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

/// Projects a world point; returns pixel coordinates and camera depth.
pub fn project_point(p: &Vec3, pose: &Pose, k: &Intrinsics) -> Result<(f64, f64, f64)> {
    let pc = pose.transform(p);
    let (u, v) = k.project_camera(&pc)?;
    Ok((u, v, pc.z))
}

/// Jacobian of the pixel projection with respect to the camera-space point.
pub fn projection_jacobian(p_cam: &Vec3, k: &Intrinsics) -> Result<Matrix2x3<f64>> {
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    if !(z > k.near) {
        return Err(Error::BehindCamera { z, near: k.near });
    }
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    Ok(Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * y * iz2,
    ))
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn pose_inverse(p: &Pose) -> Pose {
    p.inverse()
}
