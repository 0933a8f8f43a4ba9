//! Poses, relative actions, point clouds, pinhole backprojection and the
//! gaze-centered cubic crop.
//!
//! Relative actions use world axes anchored at the end-effector: a position
//! delta is added in world coordinates while the orientation delta is a
//! rotation vector applied on the right of the base orientation. The gaze
//! frame is a pure translation of the world frame.

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

/// Upper mechanical limit of the gripper opening angle, radians.
pub const GRIPPER_MAX: f64 = 0.8;

/// Default edge length of the gaze-centered cube, meters.
pub const DEFAULT_CROP_SIDE: f64 = 0.20;

/// Point quantization step, 2^-20 m.
pub const QUANTUM: f64 = 1.0 / 1_048_576.0;
/// Magnitude below which quantized coordinates sit on the [`QUANTUM`] grid.
pub const QUANTUM_RANGE: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("antipodal rotation: relative rotation angle is pi")]
    AntipodalRotation,
    #[error("invalid depth {0}: must be positive")]
    InvalidDepth(f64),
    #[error("point {0} has a non-finite coordinate")]
    NonFinitePoint(usize),
    #[error("invalid crop side {0}: must be positive")]
    InvalidSide(f64),
    #[error("invalid camera intrinsics: focal lengths must be positive")]
    InvalidCamera,
    #[error("label count {labels} does not match point count {points}")]
    LabelMismatch { points: usize, labels: usize },
}

/// One end-effector configuration: position, orientation and gripper angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose7 {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub gripper: f64,
}

/// Relative end-effector motion in the 7-D chart (position, rotation vector, gripper).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDelta7 {
    pub dpos: Vector3<f64>,
    pub drot: Vector3<f64>,
    pub dgrip: f64,
}

impl Default for PoseDelta7 {
    fn default() -> Self {
        Self::zero()
    }
}

impl PoseDelta7 {
    pub fn zero() -> Self {
        Self { dpos: Vector3::zeros(), drot: Vector3::zeros(), dgrip: 0.0 }
    }

    pub fn new(dpos: Vector3<f64>, drot: Vector3<f64>, dgrip: f64) -> Self {
        Self { dpos, drot, dgrip }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.dpos.x, self.dpos.y, self.dpos.z, self.drot.x, self.drot.y, self.drot.z, self.dgrip]
    }

    /// Builds a delta from the first seven entries of `v`.
    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= 7, "PoseDelta7::from_slice needs 7 values");
        Self { dpos: Vector3::new(v[0], v[1], v[2]), drot: Vector3::new(v[3], v[4], v[5]), dgrip: v[6] }
    }

    pub fn norm_squared(&self) -> f64 {
        self.to_array().iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Rotation vector of a unit quaternion, angle in `[0, pi]`.
pub fn log_rotation(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let sin_half = v.norm();
    if sin_half < 1e-12 {
        // first-order expansion around identity
        return v * (2.0 / w.max(f64::MIN_POSITIVE));
    }
    let angle = 2.0 * sin_half.atan2(w);
    v * (angle / sin_half)
}

/// Rotation-vector exponential.
pub fn exp_rotation(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*v)
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

impl Pose7 {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>, gripper: f64) -> Self {
        Self { position, orientation, gripper }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity(), 0.0)
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity(), 0.0)
    }

    /// Applies `delta` without gripper clamping. Used for virtual poses such
    /// as Bézier control points.
    pub fn oplus(&self, delta: &PoseDelta7) -> Pose7 {
        Pose7 {
            position: self.position + delta.dpos,
            orientation: renormalize(self.orientation * exp_rotation(&delta.drot)),
            gripper: self.gripper + delta.dgrip,
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.orientation.coords.iter().all(|x| x.is_finite())
            && self.gripper.is_finite()
    }

    pub fn translated(&self, v: &Vector3<f64>) -> Pose7 {
        Pose7 { position: self.position + v, ..*self }
    }
}

/// Result of [`compose_logged`]: the new pose and whether the gripper was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composed {
    pub pose: Pose7,
    pub gripper_clamped: bool,
}

/// Applies a relative action to `base`, clamping the gripper to `[0, GRIPPER_MAX]`.
pub fn compose(base: &Pose7, delta: &PoseDelta7) -> Pose7 {
    compose_logged(base, delta).pose
}

pub fn compose_logged(base: &Pose7, delta: &PoseDelta7) -> Composed {
    let mut pose = base.oplus(delta);
    let clamped = pose.gripper.clamp(0.0, GRIPPER_MAX);
    let gripper_clamped = clamped != pose.gripper;
    pose.gripper = clamped;
    Composed { pose, gripper_clamped }
}

/// Relative action taking `from` to `to`; the inverse of [`compose`].
pub fn delta_between(from: &Pose7, to: &Pose7) -> Result<PoseDelta7, GeometryError> {
    let rel = from.orientation.inverse() * to.orientation;
    let w = rel.quaternion().w.abs();
    if w < 1e-12 {
        return Err(GeometryError::AntipodalRotation);
    }
    Ok(PoseDelta7 { dpos: to.position - from.position, drot: log_rotation(&rel), dgrip: to.gripper - from.gripper })
}

/// Geodesic angle between two orientations.
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    log_rotation(&(a.inverse() * b)).norm()
}

/// A full-scene point set in world coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinitePoint(i));
        }
        Ok(Self { points, labels: None })
    }

    /// Attaches per-point object ids. Labels are simulator metadata and are
    /// never read by the predictors.
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self, GeometryError> {
        if labels.len() != self.points.len() {
            return Err(GeometryError::LabelMismatch { points: self.points.len(), labels: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, v: &Vector3<f64>) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| p + v).collect(), labels: self.labels.clone() }
    }

    /// Rounds every coordinate to a value `f32` stores exactly, the precision
    /// used on disk. Within [`QUANTUM_RANGE`] the grid is a fixed multiple of
    /// [`QUANTUM`], so quantization commutes with translations by multiples
    /// of it; beyond that coordinates round to the nearest `f32`.
    pub fn quantized(&self) -> PointCloud {
        let q = |x: f64| {
            if x.abs() < QUANTUM_RANGE {
                (x / QUANTUM).round() * QUANTUM
            } else {
                x as f32 as f64
            }
        };
        PointCloud {
            points: self.points.iter().map(|p| Vector3::new(q(p.x), q(p.y), q(p.z))).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Points inside the gaze cube, expressed relative to the gaze point.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeCloud {
    pub points: Vec<Vector3<f64>>,
    pub source_gaze: Vector3<f64>,
    pub side: f64,
}

impl GazeCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keeps the points whose max-norm distance to `gaze` is at most `side / 2`
/// and re-expresses them in the gaze frame. Order is preserved.
pub fn crop_gaze_cube(cloud: &PointCloud, gaze: &Vector3<f64>, side: f64) -> Result<GazeCloud, GeometryError> {
    crop_points(cloud.points(), gaze, side)
}

pub(crate) fn crop_points(points: &[Vector3<f64>], gaze: &Vector3<f64>, side: f64) -> Result<GazeCloud, GeometryError> {
    if !(side > 0.0) {
        return Err(GeometryError::InvalidSide(side));
    }
    let half = side / 2.0;
    let points = points
        .iter()
        .map(|p| p - gaze)
        .filter(|d| d.x.abs() <= half && d.y.abs() <= half && d.z.abs() <= half)
        .collect();
    Ok(GazeCloud { points, source_gaze: *gaze, side })
}

/// Pinhole camera. The camera frame looks along +z with +x right and +y down;
/// `pose` maps camera coordinates to world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose: Isometry3<f64>,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        pose: Isometry3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidCamera);
        }
        Ok(Self { fx, fy, cx, cy, width, height, pose })
    }

    /// Camera at `eye` looking at `target`, with image "up" roughly along world +z.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        fx: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let world_up = Vector3::z();
        let right = forward.cross(&world_up).normalize();
        let down = forward.cross(&right);
        let rot = nalgebra::Rotation3::from_basis_unchecked(&[right, down, forward]);
        let pose = Isometry3::from_parts(Translation3::from(eye), UnitQuaternion::from_rotation_matrix(&rot));
        Self::new(fx, fx, width as f64 / 2.0, height as f64 / 2.0, width, height, pose)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    pub fn translated(&self, v: &Vector3<f64>) -> CameraModel {
        let mut cam = self.clone();
        cam.pose.translation.vector += v;
        cam
    }

    /// Pixel coordinates and depth of a world point, or `None` behind the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let pc = self.pose.inverse_transform_point(&Point3::from(*world));
        if pc.z <= 0.0 {
            return None;
        }
        Some((Vector2::new(self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy), pc.z))
    }

    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// Lifts a pixel with known depth to a world point.
pub fn backproject(pixel: &Vector2<f64>, depth: f64, cam: &CameraModel) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    let pc = Point3::new((pixel.x - cam.cx) * depth / cam.fx, (pixel.y - cam.cy) * depth / cam.fy, depth);
    Ok(cam.pose.transform_point(&pc).coords)
}

/// Builds a unit quaternion from raw `(w, x, y, z)` components without
/// renormalizing; used by the file loaders to keep values bit-exact.
pub fn quaternion_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))
}
