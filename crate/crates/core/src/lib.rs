//! Gaze-centered imitation pipeline: geometry, Bézier reaching, demonstration
//! storage, bottleneck segmentation, regressors, a kinematic tabletop
//! simulator and the phase-switching executor.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bezier;
pub mod dataset;
pub mod geometry;
pub mod policy;
pub mod predictors;
pub mod segmentation;
pub mod simenv;

pub use geometry::{compose, crop_gaze_cube, delta_between, CameraModel, GazeCloud, PointCloud, Pose7, PoseDelta7};
