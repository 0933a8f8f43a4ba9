//! Online executor: gaze prediction, gaze-centered crop, Bézier reach to a
//! predicted bottleneck, then gaze-centered relative actions until the
//! progress head advances the sub-task. Ablation presets rewire the features
//! and heads.

mod executor;
mod io;
mod rollout;
mod train;

use std::fmt;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::bezier::BezierError;
use crate::dataset::{Arm, DatasetError};
use crate::geometry::{crop_gaze_cube, CameraModel, GeometryError, PointCloud, Pose7, PoseDelta7};
use crate::predictors::{
    featurize, planar_feature, pose_features, scene_summary, GazePredictor, Head, PlanarCrop, PredictorError, SceneGrid,
};
use crate::segmentation::SegmentationError;
use crate::simenv::SimError;

pub use executor::{ExecutorState, Phase, StepInfo};
pub use rollout::{rollout, RolloutParams, Trial};
pub use train::{train, TrainingData};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy has no fitted heads for sub-task {0}")]
    Unfitted(usize),
    #[error("no usable training demonstrations: {0}")]
    NoTrainingData(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bezier(#[from] BezierError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Feature and head wiring. All flags off is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicyVariant {
    /// Off: image-space crop around the gaze pixel instead of the gaze cube.
    pub use_3d_crop: bool,
    /// On: both arm poses are appended to every head input.
    pub state_in_features: bool,
    /// On: the bottleneck pose is regressed in world coordinates.
    pub direct_bottleneck: bool,
    /// On: reach actions come from a head on absolute scene features.
    pub parametric_reach: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Gazebot,
    Ablation1,
    Ablation3,
    Ablation4,
    Daa,
}

impl Preset {
    pub const ALL: [Preset; 5] =
        [Preset::Gazebot, Preset::Ablation1, Preset::Ablation3, Preset::Ablation4, Preset::Daa];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Gazebot => "gazebot",
            Preset::Ablation1 => "ablation1",
            Preset::Ablation3 => "ablation3",
            Preset::Ablation4 => "ablation4",
            Preset::Daa => "daa",
        }
    }

    pub fn parse(s: &str) -> Result<Preset, PolicyError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PolicyError::UnknownPreset(s.to_string()))
    }

    pub fn variant(self) -> PolicyVariant {
        let base = PolicyVariant {
            use_3d_crop: true,
            state_in_features: false,
            direct_bottleneck: false,
            parametric_reach: false,
        };
        match self {
            Preset::Gazebot => base,
            Preset::Ablation1 => PolicyVariant { use_3d_crop: false, ..base },
            Preset::Ablation3 => PolicyVariant { state_in_features: true, ..base },
            Preset::Ablation4 => PolicyVariant { direct_bottleneck: true, ..base },
            Preset::Daa => PolicyVariant { parametric_reach: true, ..base },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters shared by training and execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    pub crop_side: f64,
    pub resolution: usize,
    /// k for the action, progress, phase and gaze heads.
    pub k: usize,
    /// Ridge penalty of the bottleneck-offset head.
    pub lambda: f64,
    /// Ridge penalty of the bezier-vector head.
    pub bezier_lambda: f64,
    /// Reach speed, meters per step.
    pub reach_speed: f64,
    pub eps_position: f64,
    pub eps_rotation: f64,
    pub progress_threshold: f64,
    pub progress_window: usize,
    /// Action chunk length of the gaze-centered head.
    pub horizon: usize,
    pub planar: PlanarCrop,
    pub scene_grid: SceneGrid,
    /// Predicted gaze is clamped into this box.
    pub gaze_min: Vector3<f64>,
    pub gaze_max: Vector3<f64>,
    /// Every n-th frame of a sub-task trains the gaze predictor.
    pub gaze_stride: usize,
    /// Weight of the gaze coordinates in the direct-bottleneck k-NN input.
    pub direct_gaze_weight: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            crop_side: crate::geometry::DEFAULT_CROP_SIDE,
            resolution: 8,
            k: 5,
            lambda: 1.0,
            bezier_lambda: 1e-3,
            reach_speed: 0.03,
            eps_position: 0.01,
            eps_rotation: 0.1,
            progress_threshold: 0.8,
            progress_window: 3,
            horizon: 1,
            planar: PlanarCrop { half_window: 56.0, bins: 8 },
            scene_grid: SceneGrid {
                min: Vector3::new(-0.35, -0.6, 0.0),
                max: Vector3::new(0.35, 0.6, 0.4),
                dims: [16, 16, 4],
            },
            gaze_min: Vector3::new(-0.35, -0.6, 0.0),
            gaze_max: Vector3::new(0.35, 0.6, 0.5),
            gaze_stride: 3,
            direct_gaze_weight: 1.0,
        }
    }
}

/// What the executor observes at one step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub cloud: &'a PointCloud,
    pub arms: [Pose7; 2],
    pub camera: &'a CameraModel,
}

/// Fitted heads of one sub-task.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskHeads {
    pub arm: Arm,
    /// Bottleneck offset from the gaze frame, or the absolute bottleneck
    /// chart for the direct-bottleneck variant.
    pub bottleneck: Head,
    pub bezier: Head,
    /// Gaze-centered action chunk, `14 * horizon` outputs.
    pub action: Head,
    pub progress: Head,
    /// Parametric-reach variant only: reach action from absolute features.
    pub reach: Option<Head>,
    /// Parametric-reach variant only: probability that the bottleneck is passed.
    pub phase: Option<Head>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub preset: Preset,
    pub variant: PolicyVariant,
    pub params: PolicyParams,
    pub gaze: GazePredictor,
    pub subtasks: Vec<SubtaskHeads>,
}

impl Policy {
    pub fn n_subtasks(&self) -> usize {
        self.subtasks.len()
    }

    /// Input of the gaze-anchored heads: crop features plus arm poses when the
    /// variant leaks state.
    pub fn local_features(&self, obs: &Observation<'_>, gaze: &Vector3<f64>) -> Result<Vec<f64>, PolicyError> {
        local_features(&self.variant, &self.params, obs, gaze)
    }
}

pub(crate) fn local_features(
    variant: &PolicyVariant,
    params: &PolicyParams,
    obs: &Observation<'_>,
    gaze: &Vector3<f64>,
) -> Result<Vec<f64>, PolicyError> {
    let mut f = if variant.use_3d_crop {
        let g = crop_gaze_cube(obs.cloud, gaze, params.crop_side)?;
        featurize(&g, params.resolution)?.grid
    } else {
        let px = obs.camera.project(gaze).map(|(p, _)| p).unwrap_or_else(|| Vector2::new(obs.camera.cx, obs.camera.cy));
        planar_feature(obs.cloud, obs.camera, &px, &params.planar)
    };
    if variant.state_in_features {
        for a in &obs.arms {
            f.extend_from_slice(&pose_features(a, 1.0));
        }
    }
    Ok(f)
}

/// Input of the bezier head: local features plus the acting arm pose
/// relative to the gaze point.
pub(crate) fn bezier_features(local: &[f64], pose: &Pose7, gaze: &Vector3<f64>) -> Vec<f64> {
    let mut rel = *pose;
    rel.position -= gaze;
    let mut f = local.to_vec();
    f.extend_from_slice(&pose_features(&rel, 1.0));
    f
}

/// Largest bend of an executed reach, as a fraction of its chord.
pub const MAX_BEND: f64 = 1.0;

/// Bezier-head target: the positional part of the bezier vector is divided
/// by the chord so the head learns a scale-free bend.
pub(crate) fn bezier_target(v: &PoseDelta7, chord: f64) -> Vec<f64> {
    let mut out = v.to_array().to_vec();
    let c = chord.max(1e-9);
    for x in &mut out[..3] {
        *x /= c;
    }
    out
}

/// Inverse of [`bezier_target`] with the bend capped at [`MAX_BEND`].
pub(crate) fn bezier_vector(out: &[f64], chord: f64) -> PoseDelta7 {
    let mut v = PoseDelta7::from_slice(out);
    let n = v.dpos.norm();
    if n > MAX_BEND {
        v.dpos *= MAX_BEND / n;
    }
    v.dpos *= chord;
    v
}

/// Input of the direct-bottleneck head: local features plus weighted gaze coordinates.
pub(crate) fn direct_features(local: &[f64], gaze: &Vector3<f64>, weight: f64) -> Vec<f64> {
    let mut f = local.to_vec();
    f.extend(gaze.iter().map(|v| v * weight));
    f
}

/// Input of the parametric reach head: whole-scene occupancy plus the acting arm pose.
pub(crate) fn global_features(params: &PolicyParams, cloud: &PointCloud, pose: &Pose7) -> Vec<f64> {
    let mut f = scene_summary(cloud, &params.scene_grid);
    f.extend_from_slice(&pose_features(pose, 1.0));
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_and_differ() {
        for p in Preset::ALL {
            assert_eq!(Preset::parse(p.as_str()).unwrap(), p);
        }
        assert!(Preset::parse("ablation2").is_err());
        let v = Preset::Gazebot.variant();
        assert!(v.use_3d_crop && !v.state_in_features && !v.direct_bottleneck && !v.parametric_reach);
        let all: std::collections::HashSet<_> = Preset::ALL.iter().map(|p| p.variant()).collect();
        assert_eq!(all.len(), 5);
    }
}
