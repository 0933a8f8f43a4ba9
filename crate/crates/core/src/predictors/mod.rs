//! Learned heads: feature extraction, regressors, gaze prediction and the
//! bottleneck-offset and progress logic built on them.

pub mod features;
pub mod gaze;
pub mod model_io;
pub mod regress;

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::geometry::{delta_between, GeometryError, Pose7, PoseDelta7, GRIPPER_MAX};

pub use features::{featurize, planar_feature, pose_features, scene_summary, PlanarCrop, SceneGrid, VoxelFeature};
pub use gaze::{extract_blobs, Blob, BlobParams, GazePredictor, GazeSample};
pub use regress::{Head, HeadSpec, KnnRegressor, Regressor, RidgeRegressor};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("predict called before fit")]
    NotFitted,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("k = {k} is invalid for a training set of {n} rows")]
    InvalidK { k: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite training value")]
    NonFinite,
    #[error("singular normal equations; use lambda > 0")]
    Singular,
    #[error("invalid ridge lambda {0}")]
    InvalidLambda(f64),
    #[error("voxel resolution must be at least 1")]
    InvalidResolution,
    #[error("sub-task index {0} out of range")]
    SubtaskOutOfRange(usize),
    #[error("no candidate object in the scene")]
    NoCandidates,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] DatasetError),
}

/// World-aligned frame at the gaze point; bottleneck offsets are expressed in it.
pub fn canonical_frame(gaze: &Vector3<f64>) -> Pose7 {
    Pose7::new(*gaze, UnitQuaternion::identity(), 0.0)
}

/// Training target for the offset head: the bottleneck relative to the gaze frame.
pub fn offset_target(gaze: &Vector3<f64>, bottleneck: &Pose7) -> Result<PoseDelta7, GeometryError> {
    delta_between(&canonical_frame(gaze), bottleneck)
}

/// `p_b = p_gaze + p_b^relative`, extended to orientation and gripper.
pub fn bottleneck_pose(gaze: &Vector3<f64>, offset: &PoseDelta7) -> Pose7 {
    let mut p = canonical_frame(gaze).oplus(offset);
    p.position = gaze + offset.dpos;
    p.gripper = p.gripper.clamp(0.0, GRIPPER_MAX);
    p
}

/// Runs a fitted offset head on a feature vector.
pub fn predict_offset<R: Regressor>(head: &R, feature: &[f64]) -> Result<PoseDelta7, PredictorError> {
    let out = head.predict(feature)?;
    if out.len() != 7 {
        return Err(PredictorError::DimensionMismatch { expected: 7, found: out.len() });
    }
    Ok(PoseDelta7::from_slice(&out))
}

/// Progress label of step `t` inside `[s, e]`.
pub fn progress_label(t: usize, s: usize, e: usize) -> f64 {
    if e == s {
        1.0
    } else {
        (t - s) as f64 / (e - s) as f64
    }
}

/// Sub-task index that advances after the progress estimate stays above a
/// threshold for a number of consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressTracker {
    pub threshold: f64,
    pub window: usize,
    pub n_seg: usize,
    pub i_seg: usize,
    streak: usize,
    /// Set once the last sub-task has met the criterion.
    pub finished: bool,
}

impl ProgressTracker {
    pub fn new(n_seg: usize, threshold: f64, window: usize) -> Self {
        Self { threshold, window: window.max(1), n_seg, i_seg: 0, streak: 0, finished: false }
    }

    /// Feeds one progress estimate; returns true when the index advanced.
    pub fn update(&mut self, c: f64) -> bool {
        if c >= self.threshold {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        if self.streak < self.window {
            return false;
        }
        self.streak = 0;
        if self.i_seg + 1 < self.n_seg {
            self.i_seg += 1;
            true
        } else {
            self.finished = true;
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_offset_is_gaze_with_canonical_orientation() {
        let g = Vector3::new(0.1, -0.2, 0.03);
        let p = bottleneck_pose(&g, &PoseDelta7::zero());
        assert_eq!(p.position, g);
        assert_eq!(p.orientation, UnitQuaternion::identity());
        assert_eq!(p.gripper, 0.0);
    }

    #[test]
    fn offset_round_trip() {
        let g = Vector3::new(0.1, -0.2, 0.03);
        let b = Pose7::new(Vector3::new(0.12, -0.2, 0.09), UnitQuaternion::from_euler_angles(0.0, 0.0, 0.3), 0.8);
        let off = offset_target(&g, &b).unwrap();
        let back = bottleneck_pose(&g, &off);
        assert!((back.position - b.position).norm() < 1e-12);
        assert!(back.orientation.angle_to(&b.orientation) < 1e-12);
        assert!((back.gripper - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tracker_rules() {
        let mut t = ProgressTracker::new(2, 0.9, 3);
        for _ in 0..10 {
            assert!(!t.update(0.5));
        }
        assert_eq!(t.i_seg, 0);
        assert!(!t.update(1.0));
        assert!(!t.update(1.0));
        assert!(t.update(1.0));
        assert_eq!(t.i_seg, 1);
        // interrupted streak
        t.update(1.0);
        t.update(0.2);
        t.update(1.0);
        t.update(1.0);
        assert!(!t.finished);
        t.update(1.0);
        assert!(t.finished);
        assert_eq!(t.i_seg, 1);
    }

    #[test]
    fn progress_labels() {
        assert_eq!(progress_label(5, 5, 15), 0.0);
        assert_eq!(progress_label(10, 5, 15), 0.5);
        assert_eq!(progress_label(15, 5, 15), 1.0);
    }
}
