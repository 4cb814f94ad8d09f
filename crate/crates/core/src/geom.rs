//! Rigid-body geometry shared by every other module.
//!
//! Attitude convention: `R = Rz(yaw) * Ry(-pitch) * Rx(-roll)`, applied to
//! body vectors expressed forward-left-up. With that sign choice the body
//! x-axis maps to `(cos(pitch)cos(yaw), cos(pitch)sin(yaw), sin(pitch))`, which
//! is exactly the velocity direction used by the dynamics model, and a
//! positive roll lowers the left wing (the bank of a left turn).
//!
//! Cameras look along the body x-axis. Image coordinates put `u` to the right
//! and `v` down, with pixel `(i, j)` centered at `(i, j)`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Gimbal guard on the rotation-matrix entry that carries `sin(pitch)`.
pub const GIMBAL_LIMIT: f64 = 1.0 - 1e-9;

/// Condition number above which the dual conic is treated as degenerate.
pub const CONIC_CONDITION_LIMIT: f64 = 1e12;

/// Surface samples used by the fallback ellipse fit.
pub const FALLBACK_SAMPLES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation is at gimbal lock (sin(pitch) entry = {0})")]
    GimbalDegenerate(f64),
    #[error("point is behind the camera")]
    Behind,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Maps an angle to `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let w = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Position plus intrinsic yaw-pitch-roll attitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl Pose {
    pub fn new(position: Vector3<f64>, pitch: f64, yaw: f64, roll: f64) -> Self {
        Self {
            position,
            pitch,
            yaw,
            roll,
        }
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), 0.0, 0.0, 0.0)
    }

    pub fn with_attitude(mut self, pitch: f64, yaw: f64, roll: f64) -> Self {
        self.pitch = pitch;
        self.yaw = yaw;
        self.roll = roll;
        self
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(self.pitch, self.yaw, self.roll)
    }

    /// Unit vector along the body x-axis (the optical axis for cameras).
    pub fn forward(&self) -> Vector3<f64> {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        Vector3::new(cp * cy, cp * sy, sp)
    }

    /// World point expressed in the body frame (forward, left, up).
    pub fn to_body(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (world - self.position)
    }

    /// Wraps yaw and roll into `[-pi, pi)` and clamps pitch inside `(-pi/2, pi/2)`.
    pub fn normalized(&self) -> Self {
        let limit = PI / 2.0 - 1e-9;
        Self {
            position: self.position,
            pitch: self.pitch.clamp(-limit, limit),
            yaw: wrap_angle(self.yaw),
            roll: wrap_angle(self.roll),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.pitch.abs() < PI / 2.0
            && (-PI..PI).contains(&self.yaw)
            && (-PI..PI).contains(&self.roll)
    }
}

/// Rotation taking body vectors to world vectors.
pub fn euler_to_rotation(pitch: f64, yaw: f64, roll: f64) -> Matrix3<f64> {
    let (st, ct) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let (sr, cr) = roll.sin_cos();
    Matrix3::new(
        cy * ct,
        cy * st * sr - sy * cr,
        -cy * st * cr - sy * sr,
        sy * ct,
        sy * st * sr + cy * cr,
        -sy * st * cr + cy * sr,
        st,
        -ct * sr,
        ct * cr,
    )
}

/// Inverse of [`euler_to_rotation`]; returns `(pitch, yaw, roll)`.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Result<(f64, f64, f64), GeomError> {
    let sin_pitch = r[(2, 0)];
    if !sin_pitch.is_finite() || sin_pitch.abs() > GIMBAL_LIMIT {
        return Err(GeomError::GimbalDegenerate(sin_pitch));
    }
    let pitch = sin_pitch.atan2(r[(2, 1)].hypot(r[(2, 2)]));
    let yaw = wrap_angle(r[(1, 0)].atan2(r[(0, 0)]));
    let roll = wrap_angle((-r[(2, 1)]).atan2(r[(2, 2)]));
    Ok((pitch, yaw, roll))
}

/// Pinhole intrinsics. `u` grows to the right, `v` grows down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeomError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// 160 x 120 desk-scale camera, roughly 77 degrees horizontal field of view.
    pub fn desk() -> Self {
        Self {
            fx: 100.0,
            fy: 100.0,
            cx: 80.0,
            cy: 60.0,
            width: 160,
            height: 120,
        }
    }

    /// 640 x 480 camera with the same field of view as [`CameraIntrinsics::desk`].
    pub fn vga() -> Self {
        Self::desk().scaled(4.0)
    }

    /// Same field of view at `factor` times the resolution.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (f64::from(self.width) * factor).round() as u32,
            height: (f64::from(self.height) * factor).round() as u32,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if !(self.cx >= 0.0 && self.cx < f64::from(self.width)) {
            return Err(GeomError::InvalidIntrinsics("cx outside the image".into()));
        }
        if !(self.cy >= 0.0 && self.cy < f64::from(self.height)) {
            return Err(GeomError::InvalidIntrinsics("cy outside the image".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < f64::from(self.width) && v < f64::from(self.height)
    }
}

/// Body (forward, left, up) to optical (right, down, forward).
fn body_to_optical() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// 3 x 4 projection matrix mapping homogeneous world points to pixels.
pub fn camera_matrix(intrinsics: &CameraIntrinsics, camera: &Pose) -> Matrix3x4<f64> {
    let rt = camera.rotation().transpose();
    let mut extrinsic = Matrix3x4::zeros();
    extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    extrinsic.set_column(3, &(-rt * camera.position));
    intrinsics.matrix() * body_to_optical() * extrinsic
}

/// Projects a world point; fails with [`GeomError::Behind`] when its depth is at most [`MIN_DEPTH`].
pub fn project_point(
    intrinsics: &CameraIntrinsics,
    camera: &Pose,
    world_point: &Vector3<f64>,
) -> Result<Vector2<f64>, GeomError> {
    let body = camera.to_body(world_point);
    let depth = body.x;
    if depth.is_nan() || depth <= MIN_DEPTH {
        return Err(GeomError::Behind);
    }
    Ok(Vector2::new(
        intrinsics.cx + intrinsics.fx * (-body.y / depth),
        intrinsics.cy + intrinsics.fy * (-body.z / depth),
    ))
}

/// Solid ellipsoid. `semi_axes = (a, b, c)`: half-wingspan along body y,
/// half-length along body x, half-thickness along body z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vector3<f64>,
    pub semi_axes: Vector3<f64>,
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl Ellipsoid {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Self {
            center,
            semi_axes: Vector3::repeat(radius),
            pitch: 0.0,
            yaw: 0.0,
            roll: 0.0,
        }
    }

    /// Ellipsoid centered on `pose` with the pose's attitude.
    pub fn at_pose(pose: &Pose, semi_axes: Vector3<f64>) -> Self {
        Self {
            center: pose.position,
            semi_axes,
            pitch: pose.pitch,
            yaw: pose.yaw,
            roll: pose.roll,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_to_rotation(self.pitch, self.yaw, self.roll)
    }

    /// Squared semi-axes along body x, y, z.
    fn body_diagonal(&self) -> Matrix3<f64> {
        let s = self.semi_axes;
        Matrix3::from_diagonal(&Vector3::new(s.y * s.y, s.x * s.x, s.z * s.z))
    }

    /// Dual quadric `Q*` (points on tangent planes satisfy `pi^T Q* pi = 0`).
    pub fn dual_quadric(&self) -> Matrix4<f64> {
        let r = self.rotation();
        let c = self.center;
        let mut q = Matrix4::zeros();
        let block = r * self.body_diagonal() * r.transpose() - c * c.transpose();
        q.fixed_view_mut::<3, 3>(0, 0).copy_from(&block);
        for i in 0..3 {
            q[(i, 3)] = -c[i];
            q[(3, i)] = -c[i];
        }
        q[(3, 3)] = -1.0;
        q
    }

    /// Point on the surface for unit direction `dir` in the body frame.
    fn surface_point(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        let s = self.semi_axes;
        let body = Vector3::new(dir.x * s.y, dir.y * s.x, dir.z * s.z);
        self.center + self.rotation() * body
    }

    fn bounding_radius(&self) -> f64 {
        self.semi_axes.max()
    }
}

/// Filled image ellipse `{x : (x - center)^T S^-1 (x - center) <= 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageEllipse {
    pub center: Vector2<f64>,
    /// Major and minor semi-axes in pixels.
    pub semi_axes: Vector2<f64>,
    /// Angle of the major axis from the +u direction toward +v.
    pub angle: f64,
    shape: Matrix2<f64>,
    inv_shape: Matrix2<f64>,
}

impl ImageEllipse {
    /// Builds an ellipse from its center and positive-definite shape matrix.
    pub fn from_shape(center: Vector2<f64>, shape: Matrix2<f64>) -> Option<Self> {
        let (a, b, d) = (
            shape[(0, 0)],
            0.5 * (shape[(0, 1)] + shape[(1, 0)]),
            shape[(1, 1)],
        );
        let det = a * d - b * b;
        if !(a > 0.0 && d > 0.0 && det > 0.0) || !center.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mean = 0.5 * (a + d);
        let spread = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let major = (mean + spread).sqrt();
        let minor = (mean - spread).max(0.0).sqrt();
        let angle = 0.5 * (2.0 * b).atan2(a - d);
        let sym = Matrix2::new(a, b, b, d);
        let inv = Matrix2::new(d, -b, -b, a) / det;
        Some(Self {
            center,
            semi_axes: Vector2::new(major, minor),
            angle,
            shape: sym,
            inv_shape: inv,
        })
    }

    pub fn shape(&self) -> &Matrix2<f64> {
        &self.shape
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_axes.x * self.semi_axes.y
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        let du = u - self.center.x;
        let dv = v - self.center.y;
        let m = &self.inv_shape;
        du * du * m[(0, 0)] + 2.0 * du * dv * m[(0, 1)] + dv * dv * m[(1, 1)] <= 1.0
    }

    /// Axis-aligned extent `(u_min, v_min, u_max, v_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let hu = self.shape[(0, 0)].sqrt();
        let hv = self.shape[(1, 1)].sqrt();
        (
            self.center.x - hu,
            self.center.y - hv,
            self.center.x + hu,
            self.center.y + hv,
        )
    }

    /// Row-major occupancy: a pixel is set iff its center lies inside.
    pub fn rasterize(&self, width: u32, height: u32) -> Vec<bool> {
        let (w, h) = (width as usize, height as usize);
        let mut bits = vec![false; w * h];
        let (u0, v0, u1, v1) = self.bounds();
        if u1 < 0.0 || v1 < 0.0 || u0 > (w as f64 - 1.0) || v0 > (h as f64 - 1.0) {
            return bits;
        }
        let i0 = u0.ceil().max(0.0) as usize;
        let j0 = v0.ceil().max(0.0) as usize;
        let i1 = (u1.floor().min(w as f64 - 1.0)) as usize;
        let j1 = (v1.floor().min(h as f64 - 1.0)) as usize;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if self.contains(i as f64, j as f64) {
                    bits[j * w + i] = true;
                }
            }
        }
        bits
    }
}

/// Projects a solid ellipsoid to its image outline.
///
/// Uses the dual-quadric to dual-conic map `C* = P Q* P^T`; when that conic is
/// numerically degenerate the outline is fitted to projected surface samples
/// instead. Returns `None` when any part of the ellipsoid reaches the camera's
/// principal plane, or when the outline misses the image entirely.
pub fn project_ellipsoid(
    intrinsics: &CameraIntrinsics,
    camera: &Pose,
    ellipsoid: &Ellipsoid,
) -> Option<ImageEllipse> {
    let center_depth = camera.to_body(&ellipsoid.center).x;
    if center_depth - ellipsoid.bounding_radius() <= MIN_DEPTH {
        // Possibly straddling; the exact test follows from the conic sign.
        if center_depth <= MIN_DEPTH {
            return None;
        }
    }
    let p = camera_matrix(intrinsics, camera);
    let dual = p * ellipsoid.dual_quadric() * p.transpose();
    let scale = -dual[(2, 2)];
    if scale.is_nan() || scale <= 0.0 {
        return None;
    }
    let c = dual / scale;
    let svd = c.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let exact = if smin > 0.0 && smax / smin <= CONIC_CONDITION_LIMIT {
        let x0 = Vector2::new(-c[(0, 2)], -c[(1, 2)]);
        let shape = c.fixed_view::<2, 2>(0, 0).into_owned() + x0 * x0.transpose();
        ImageEllipse::from_shape(x0, shape)
    } else {
        None
    };
    let ellipse = match exact {
        Some(e) => e,
        None => fit_sampled_outline(intrinsics, camera, ellipsoid)?,
    };
    let (u0, v0, u1, v1) = ellipse.bounds();
    let (w, h) = (f64::from(intrinsics.width), f64::from(intrinsics.height));
    if u1 < -0.5 || v1 < -0.5 || u0 > w - 0.5 || v0 > h - 0.5 {
        return None;
    }
    Some(ellipse)
}

fn fit_sampled_outline(
    intrinsics: &CameraIntrinsics,
    camera: &Pose,
    ellipsoid: &Ellipsoid,
) -> Option<ImageEllipse> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let n = FALLBACK_SAMPLES;
    let pixels: Vec<Vector2<f64>> = (0..n)
        .filter_map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let dir = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            project_point(intrinsics, camera, &ellipsoid.surface_point(&dir)).ok()
        })
        .collect();
    if pixels.len() < n {
        return None;
    }
    let mean = pixels.iter().sum::<Vector2<f64>>() / n as f64;
    let cov = pixels
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Matrix2<f64>>()
        / n as f64;
    let inv = cov.try_inverse()?;
    let reach = pixels
        .iter()
        .map(|p| ((p - mean).transpose() * inv * (p - mean))[(0, 0)])
        .fold(0.0, f64::max);
    ImageEllipse::from_shape(mean, cov * reach)
}

/// Similarity transform `target = scale * rotation * source + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Sum of squared alignment residuals over paired points.
    pub fn residual(&self, source: &[Vector3<f64>], target: &[Vector3<f64>]) -> f64 {
        source
            .iter()
            .zip(target)
            .map(|(s, t)| (self.apply(s) - t).norm_squared())
            .sum()
    }
}

/// Least-squares similarity alignment of paired point sets (Umeyama's closed
/// form with reflection correction).
pub fn kabsch_umeyama(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<SimilarityTransform, GeomError> {
    if source.len() != target.len() {
        return Err(GeomError::LengthMismatch(source.len(), target.len()));
    }
    let n = source.len();
    if n < 3 {
        return Err(GeomError::DegenerateConfiguration(format!(
            "need at least 3 point pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() / nf;
    let mu_t = target.iter().sum::<Vector3<f64>>() / nf;

    let mut source_scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        let dt = t - mu_t;
        source_scatter += ds * ds.transpose();
        cross += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    cross /= nf;
    var_s /= nf;

    let spread = source_scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0].is_nan() || ev[0] <= 0.0 || ev[1] <= ev[0] * 1e-12 {
        return Err(GeomError::DegenerateConfiguration(
            "source points are coincident or collinear".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * sign[(i, i)]).sum();
    let scale = trace / var_s;
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        rotation,
        translation,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
        (r.transpose() * r - Matrix3::identity()).norm()
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_relative_eq!(euler_to_rotation(0.0, 0.0, 0.0), Matrix3::identity());
        assert_eq!(
            rotation_to_euler(&Matrix3::identity()).unwrap(),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn quarter_yaw_maps_forward_to_left() {
        let r = euler_to_rotation(0.0, PI / 2.0, 0.0);
        assert_relative_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn sign_conventions() {
        // nose up
        let r = euler_to_rotation(0.2, 0.0, 0.0);
        assert!((r * Vector3::x()).z > 0.0);
        // positive roll lowers the left wing
        let r = euler_to_rotation(0.0, 0.0, 0.3);
        assert!((r * Vector3::y()).z < 0.0);
    }

    #[test]
    fn known_roundtrip() {
        let r = euler_to_rotation(0.3, -1.1, 0.2);
        let (p, y, ro) = rotation_to_euler(&r).unwrap();
        assert!((p - 0.3).abs() < 1e-12);
        assert!((y + 1.1).abs() < 1e-12);
        assert!((ro - 0.2).abs() < 1e-12);
    }

    #[test]
    fn gimbal_guard() {
        let r = euler_to_rotation(PI / 2.0 - 1e-12, 0.4, 0.1);
        assert!(matches!(
            rotation_to_euler(&r),
            Err(GeomError::GimbalDegenerate(_))
        ));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-1e-20)).abs() < 1e-15);
    }

    #[test]
    fn projection_on_axis_and_behind() {
        let k = CameraIntrinsics::desk();
        let cam = Pose::at(0.0, 0.0, 0.0);
        let px = project_point(&k, &cam, &Vector3::new(10.0, 0.0, 0.0)).unwrap();
        assert_eq!(px, Vector2::new(k.cx, k.cy));
        assert_eq!(
            project_point(&k, &cam, &Vector3::new(-1.0, 0.0, 0.0)),
            Err(GeomError::Behind)
        );
    }

    #[test]
    fn projection_matches_hand_computation() {
        // Camera at (1, 2, 3) yawed +90 deg looks along world +y, so world +x
        // is camera right. A point 4 m ahead, 1 m right and 0.5 m up.
        let k = CameraIntrinsics::desk();
        let cam = Pose::at(1.0, 2.0, 3.0).with_attitude(0.0, PI / 2.0, 0.0);
        let p = Vector3::new(2.0, 6.0, 3.5);
        let px = project_point(&k, &cam, &p).unwrap();
        assert_relative_eq!(px.x, 80.0 + 100.0 * (1.0 / 4.0), epsilon = 1e-12);
        assert_relative_eq!(px.y, 60.0 - 100.0 * (0.5 / 4.0), epsilon = 1e-12);
        // camera matrix agrees with the direct projection
        let h = camera_matrix(&k, &cam) * p.push(1.0);
        assert_relative_eq!(h.x / h.z, px.x, epsilon = 1e-12);
        assert_relative_eq!(h.y / h.z, px.y, epsilon = 1e-12);
    }

    #[test]
    fn sphere_projects_to_centered_circle() {
        let k = CameraIntrinsics::desk();
        let cam = Pose::at(0.0, 0.0, 0.0);
        let (r, d) = (0.1, 10.0);
        let e =
            project_ellipsoid(&k, &cam, &Ellipsoid::sphere(Vector3::new(d, 0.0, 0.0), r)).unwrap();
        assert_relative_eq!(e.center, Vector2::new(k.cx, k.cy), epsilon = 1e-9);
        // exact perspective radius is f r / sqrt(d^2 - r^2)
        let exact = k.fx * r / (d * d - r * r).sqrt();
        assert_relative_eq!(e.semi_axes.x, exact, epsilon = 1e-9);
        assert_relative_eq!(e.semi_axes.y, exact, epsilon = 1e-9);
        assert!((e.semi_axes.x - k.fx * r / d).abs() / (k.fx * r / d) < 1e-3);
    }

    #[test]
    fn ellipsoid_behind_or_outside_is_empty() {
        let k = CameraIntrinsics::desk();
        let cam = Pose::at(0.0, 0.0, 0.0);
        assert!(project_ellipsoid(
            &k,
            &cam,
            &Ellipsoid::sphere(Vector3::new(-5.0, 0.0, 0.0), 0.3)
        )
        .is_none());
        // straddling the camera plane
        assert!(project_ellipsoid(
            &k,
            &cam,
            &Ellipsoid::sphere(Vector3::new(0.1, 0.0, 0.0), 0.3)
        )
        .is_none());
        // in front but far outside the field of view
        assert!(project_ellipsoid(
            &k,
            &cam,
            &Ellipsoid::sphere(Vector3::new(2.0, 30.0, 0.0), 0.3)
        )
        .is_none());
    }

    #[test]
    fn ellipse_outline_touches_projected_silhouette() {
        // Oriented ellipsoid off-axis: every projected surface sample lies
        // inside (or on) the exact outline, and some touch it.
        let k = CameraIntrinsics::vga();
        let cam = Pose::at(0.0, 0.0, 1.0).with_attitude(0.05, 0.1, -0.2);
        let ell = Ellipsoid {
            center: Vector3::new(4.0, 0.8, 1.5),
            semi_axes: Vector3::new(0.35, 0.26, 0.08),
            pitch: 0.2,
            yaw: 0.7,
            roll: 0.4,
        };
        let outline = project_ellipsoid(&k, &cam, &ell).unwrap();
        let mut max_q: f64 = 0.0;
        for i in 0..2000 {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 2000.0;
            let r = (1.0 - z * z).sqrt();
            let phi = 2.399963 * i as f64;
            let px = project_point(
                &k,
                &cam,
                &ell.surface_point(&Vector3::new(r * phi.cos(), r * phi.sin(), z)),
            )
            .unwrap();
            let d = px - outline.center;
            let q = (d.transpose() * outline.inv_shape * d)[(0, 0)];
            max_q = max_q.max(q);
        }
        assert!(max_q <= 1.0 + 1e-9, "sample outside outline: {max_q}");
        assert!(max_q > 0.98, "outline too loose: {max_q}");
        // the sampling fallback agrees with the exact conic
        let fitted = fit_sampled_outline(&k, &cam, &ell).unwrap();
        let ratio = fitted.area() / outline.area();
        assert!((ratio - 1.0).abs() < 0.1, "fallback/exact area {ratio}");
    }

    #[test]
    fn projected_area_scales_with_inverse_depth_squared() {
        let k = CameraIntrinsics::vga();
        let cam = Pose::at(0.0, 0.0, 0.0);
        let near = project_ellipsoid(
            &k,
            &cam,
            &Ellipsoid::sphere(Vector3::new(10.0, 0.0, 0.0), 0.2),
        )
        .unwrap();
        let far = project_ellipsoid(
            &k,
            &cam,
            &Ellipsoid::sphere(Vector3::new(20.0, 0.0, 0.0), 0.2),
        )
        .unwrap();
        let ratio = far.area() / near.area();
        assert!((ratio - 0.25).abs() < 0.25 * 0.01, "ratio {ratio}");
    }

    #[test]
    fn sphere_mask_invariant_under_camera_roll() {
        let k = CameraIntrinsics::desk();
        let sphere = Ellipsoid::sphere(Vector3::new(3.0, 4.0, 2.0), 0.37);
        let dir = (sphere.center - Vector3::new(0.0, 0.0, 2.0)).normalize();
        let yaw = dir.y.atan2(dir.x);
        let base = Pose::at(0.0, 0.0, 2.0).with_attitude(0.0, yaw, 0.0);
        let reference = project_ellipsoid(&k, &base, &sphere)
            .unwrap()
            .rasterize(k.width, k.height);
        assert!(reference.iter().filter(|b| **b).count() > 50);
        for roll in [0.3, -1.0, 2.5] {
            let rolled = base.with_attitude(0.0, yaw, roll);
            let mask = project_ellipsoid(&k, &rolled, &sphere)
                .unwrap()
                .rasterize(k.width, k.height);
            assert_eq!(mask, reference, "roll {roll}");
        }
    }

    #[test]
    fn kabsch_identity_and_known_transform() {
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let t = kabsch_umeyama(&src, &src).unwrap();
        assert_relative_eq!(t.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(t.translation, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(t.scale, 1.0, epsilon = 1e-12);

        let truth = SimilarityTransform {
            rotation: euler_to_rotation(0.4, -2.0, 1.1),
            translation: Vector3::new(3.0, -1.0, 0.5),
            scale: 2.5,
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let est = kabsch_umeyama(&src, &dst).unwrap();
        assert_relative_eq!(est.rotation, truth.rotation, epsilon = 1e-9);
        assert_relative_eq!(est.translation, truth.translation, epsilon = 1e-9);
        assert_relative_eq!(est.scale, truth.scale, epsilon = 1e-9);
        assert!(est.residual(&src, &dst) < 1e-9);
    }

    #[test]
    fn kabsch_rejects_degenerate_inputs() {
        let two = [Vector3::zeros(), Vector3::x()];
        assert!(matches!(
            kabsch_umeyama(&two, &two),
            Err(GeomError::DegenerateConfiguration(_))
        ));
        let line: Vec<_> = (0..5)
            .map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        assert!(matches!(
            kabsch_umeyama(&line, &line),
            Err(GeomError::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            kabsch_umeyama(&line, &line[..4]),
            Err(GeomError::LengthMismatch(5, 4))
        ));
    }

    #[test]
    fn kabsch_handles_reflection_case() {
        // Planar source with a mirrored target must still give det(R) = +1.
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(p.x, -p.y, p.z)).collect();
        let est = kabsch_umeyama(&src, &dst).unwrap();
        assert_relative_eq!(est.rotation.determinant(), 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(p in -10.0f64..10.0, y in -10.0f64..10.0, r in -10.0f64..10.0) {
            let m = euler_to_rotation(p, y, r);
            prop_assert!(orthonormality_error(&m) < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn euler_roundtrip(p in (-PI / 2.0 + 1e-3)..(PI / 2.0 - 1e-3), y in -PI..PI, r in -PI..PI) {
            let (p2, y2, r2) = rotation_to_euler(&euler_to_rotation(p, y, r)).unwrap();
            prop_assert!((p2 - p).abs() < 1e-10);
            prop_assert!(wrap_angle(y2 - y).abs() < 1e-10);
            prop_assert!(wrap_angle(r2 - r).abs() < 1e-10);
        }

        #[test]
        fn kabsch_scale_unchanged_by_common_rigid_motion(
            seed in 0u64..1000,
            yaw in -PI..PI,
            shift in proptest::array::uniform3(-5.0f64..5.0),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let src: Vec<Vector3<f64>> = (0..8).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
            let dst: Vec<Vector3<f64>> = src.iter().map(|p| 1.7 * p + Vector3::new(rng.random(), 0.0, 0.0)).collect();
            let base = kabsch_umeyama(&src, &dst).unwrap();
            let rigid = euler_to_rotation(0.1, yaw, -0.2);
            let t = Vector3::from(shift);
            let src2: Vec<_> = src.iter().map(|p| rigid * p + t).collect();
            let dst2: Vec<_> = dst.iter().map(|p| rigid * p + t).collect();
            let moved = kabsch_umeyama(&src2, &dst2).unwrap();
            prop_assert!((moved.scale - base.scale).abs() < 1e-9);
        }
    }
}
