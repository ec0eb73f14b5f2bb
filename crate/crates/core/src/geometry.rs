//! Pose algebra, pinhole projection and alignment error metrics.
//!
//! Conventions used throughout the crate:
//! - quaternions are Hamilton, stored `(w, x, y, z)`, right-handed;
//! - a [`Pose9`] maps a canonical object point `x` to the camera frame as
//!   `R(q) * (s ⊙ x) + t` (scale first, in the object frame);
//! - camera frame is x right, y down, z forward; pixels are `(u, v)` with
//!   `u` along x and `v` along y.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalized(&self) -> Result<Quat> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conj(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Representative with `w >= 0` (q and -q are the same rotation).
    pub fn canonical(&self) -> Quat {
        if self.w < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    /// Raw Hamilton product without renormalization.
    pub fn hamilton(&self, b: &Quat) -> Quat {
        let a = self;
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotates a vector by this (unit) quaternion.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2 r x (r x v + w v), r = vector part
        let r = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * r.cross(v);
        v + self.w * t + r.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
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

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Matrix3<f64>) -> Quat {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s)
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new((m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s)
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new((m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s)
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new((m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s)
        };
        let n = q.norm();
        Quat::new(q.w / n, q.x / n, q.y / n, q.z / n)
    }
}

impl Mul for Quat {
    type Output = Quat;

    /// Hamilton product, renormalized. Panics on zero-norm operands; use
    /// [`quat_multiply`] for the fallible form.
    fn mul(self, rhs: Quat) -> Quat {
        quat_multiply(&self, &rhs).expect("zero-norm quaternion in product")
    }
}

/// Hamilton product of two near-unit quaternions, renormalized.
pub fn quat_multiply(a: &Quat, b: &Quat) -> Result<Quat> {
    let a = a.normalized()?;
    let b = b.normalized()?;
    a.hamilton(&b).normalized()
}

/// 9-DoF object pose in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose9 {
    pub t: Vec3,
    pub q: Quat,
    pub s: Vec3,
}

impl Pose9 {
    pub fn identity() -> Self {
        Pose9 { t: Vec3::zeros(), q: Quat::IDENTITY, s: Vec3::new(1.0, 1.0, 1.0) }
    }

    pub fn new(t: Vec3, q: Quat, s: Vec3) -> Self {
        Pose9 { t, q, s }
    }

    /// Canonical up axis (+y) of the object, expressed in the camera frame.
    pub fn up_axis(&self) -> Vec3 {
        self.q.rotate(&Vec3::y())
    }
}

impl Default for Pose9 {
    fn default() -> Self {
        Pose9::identity()
    }
}

/// `R(q) * (s ⊙ x) + t`.
pub fn apply_pose(p: &Pose9, x: &Vec3) -> Vec3 {
    p.q.rotate(&p.s.component_mul(x)) + p.t
}

/// Transforms a canonical surface normal into the camera frame using the
/// inverse-transpose of the pose's linear part.
pub fn transform_normal(p: &Pose9, n: &Vec3) -> Result<Vec3> {
    let scaled = n.component_div(&p.s);
    let r = p.q.rotate(&scaled);
    let len = r.norm();
    if !(len > 1e-300) || !len.is_finite() {
        return Err(Error::DegenerateNormal);
    }
    Ok(r / len)
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Centered intrinsics from a horizontal field of view in degrees.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Intrinsics { fx: f, fy: f, cx: 0.5 * width as f64, cy: 0.5 * height as f64, width, height }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// Projects a camera-frame point to `(u, v, depth)`.
pub fn project(k: &Intrinsics, x: &Vec3) -> Result<(f64, f64, f64)> {
    if !(x.z > 0.0) {
        return Err(Error::BehindCamera(x.z));
    }
    Ok((k.fx * x.x / x.z + k.cx, k.fy * x.y / x.z + k.cy, x.z))
}

/// Viewing ray through pixel `(u, v)`, scaled to unit depth.
pub fn bearing(k: &Intrinsics, u: f64, v: f64) -> Vec3 {
    Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
}

/// Geodesic rotation distance in degrees, in `[0, 180]`.
pub fn angular_error(q1: &Quat, q2: &Quat) -> f64 {
    let d = (q1.dot(q2) / (q1.norm() * q2.norm())).abs().min(1.0);
    2.0 * d.acos().to_degrees()
}

/// Which scale-error formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMetric {
    /// `Σ |s_i / s_gt_i − 1|`.
    #[default]
    Corrected,
    /// `|Σ (s_i / s_gt_i − 1)|`, which lets per-axis errors cancel.
    Legacy,
}

/// How the 20% scale threshold is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleRule {
    /// Threshold the summed error from [`scale_error`].
    #[default]
    Summed,
    /// Threshold the worst per-axis ratio deviation `max_i |s_i/s_gt_i − 1|`.
    PerAxis,
}

pub fn scale_error(s: &Vec3, s_gt: &Vec3, metric: ScaleMetric) -> f64 {
    let r = s.component_div(s_gt).add_scalar(-1.0);
    match metric {
        ScaleMetric::Corrected => r.iter().map(|e| e.abs()).sum(),
        ScaleMetric::Legacy => r.iter().sum::<f64>().abs(),
    }
}

pub fn scale_within(s: &Vec3, s_gt: &Vec3, metric: ScaleMetric, rule: ScaleRule, thr: f64) -> bool {
    match rule {
        ScaleRule::Summed => scale_error(s, s_gt, metric) < thr,
        ScaleRule::PerAxis => s.component_div(s_gt).iter().all(|r| (r - 1.0).abs() < thr),
    }
}

/// Signed azimuth (degrees) of `q_b` relative to `q_a` about `up`, measured on
/// the canonical forward axis (+z) projected into the plane orthogonal to
/// `up`. `None` when either projection is degenerate.
pub fn azimuth_difference(q_a: &Quat, q_b: &Quat, up: &Vec3) -> Option<f64> {
    let u = up.try_normalize(1e-12)?;
    let project = |q: &Quat| {
        let f = q.rotate(&Vec3::z());
        let p = f - u * f.dot(&u);
        p.try_normalize(1e-6)
    };
    let fa = project(q_a)?;
    let fb = project(q_b)?;
    let sin = fa.cross(&fb).dot(&u);
    let cos = fa.dot(&fb);
    Some(sin.atan2(cos).to_degrees())
}

/// True iff the azimuth of `q_init` about `up` lies within ±45° of `q_gt`'s.
pub fn azimuth_bin_match(q_init: &Quat, q_gt: &Quat, up: &Vec3) -> bool {
    match azimuth_difference(q_init, q_gt, up) {
        Some(d) => d.abs() <= 45.0,
        None => angular_error(q_init, q_gt) < 45.0,
    }
}

/// Smallest scale component kept after an update.
pub const MIN_SCALE: f64 = 1e-3;
/// Closest camera depth a pose update may move an object center to.
pub const MIN_DEPTH: f64 = 0.1;

/// A predicted or target pose correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseUpdate {
    pub dt: Vec3,
    pub dq: Quat,
    pub ds: Vec3,
    /// probability that the pose lies in the correct rotation bin
    pub c: f64,
}

impl PoseUpdate {
    /// Applies `(t + dt, q * dq, s + ds)`. Scale components are floored at
    /// [`MIN_SCALE`]; the flag reports whether that happened.
    pub fn apply(&self, pose: &Pose9) -> (Pose9, bool) {
        let s = pose.s + self.ds;
        let clamped = s.iter().any(|&v| !(v >= MIN_SCALE));
        let s = s.map(|v| if v >= MIN_SCALE { v } else { MIN_SCALE });
        let q = quat_multiply(&pose.q, &self.dq).unwrap_or(pose.q);
        (Pose9::new(pose.t + self.dt, q, s), clamped)
    }

    /// Like [`apply`](Self::apply), but returns `None` when the moved
    /// center would be closer than [`MIN_DEPTH`] (or behind the camera) or
    /// the result is not finite.
    pub fn apply_guarded(&self, pose: &Pose9) -> Option<(Pose9, bool)> {
        let (p, clamped) = self.apply(pose);
        let finite =
            p.t.iter().chain(p.s.iter()).all(|v| v.is_finite()) && p.q.to_array().iter().all(|v| v.is_finite());
        (finite && p.t.z >= MIN_DEPTH).then_some((p, clamped))
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub q: Quat,
    pub t: Vec3,
}

impl Rigid {
    pub fn identity() -> Self {
        Rigid { q: Quat::IDENTITY, t: Vec3::zeros() }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.q.rotate(x) + self.t
    }

    pub fn inverse(&self) -> Rigid {
        let qi = self.q.conj();
        Rigid { q: qi, t: -qi.rotate(&self.t) }
    }

    /// Transforms an object pose from this transform's source frame into its
    /// target frame. Scale is unchanged.
    pub fn transform_pose(&self, p: &Pose9) -> Pose9 {
        Pose9 { t: self.apply(&p.t), q: self.q * p.q, s: p.s }
    }
}

/// Object rotation (camera frame) for an upright object seen by a camera
/// pitched down by `elevation_deg`, turned by `azimuth_deg` about its own
/// up axis. Azimuth 0 faces the camera.
pub fn upright_rotation(azimuth_deg: f64, elevation_deg: f64) -> Quat {
    let level = Quat::from_axis_angle(&Vec3::x(), std::f64::consts::PI);
    let az = Quat::from_axis_angle(&Vec3::y(), azimuth_deg.to_radians());
    let el = Quat::from_axis_angle(&Vec3::x(), elevation_deg.to_radians());
    el * level * az
}
