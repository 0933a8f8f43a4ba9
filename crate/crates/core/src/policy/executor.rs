use std::collections::VecDeque;

use nalgebra::Vector3;

use crate::bezier::BezierReach;
use crate::geometry::{delta_between, exp_rotation, rotation_distance, Pose7, PoseDelta7, GRIPPER_MAX};
use crate::predictors::{bottleneck_pose, predict_offset, ProgressTracker, Regressor};

use super::{bezier_features, bezier_vector, direct_features, global_features, Observation, Policy, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Reaching,
    GazeCentered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutorState {
    pub i_seg: usize,
    pub phase: Phase,
    /// Curve planned at the latest reaching step.
    pub plan: Option<BezierReach>,
    pub tracker: ProgressTracker,
    /// Gaze held fixed while the gaze-centered action runs.
    pub gaze_lock: Option<Vector3<f64>>,
    pub queue: VecDeque<[PoseDelta7; 2]>,
    pub finished: bool,
}

impl ExecutorState {
    pub fn new(policy: &Policy) -> Self {
        Self {
            i_seg: 0,
            phase: Phase::Reaching,
            plan: None,
            tracker: ProgressTracker::new(
                policy.n_subtasks(),
                policy.params.progress_threshold,
                policy.params.progress_window,
            ),
            gaze_lock: None,
            queue: VecDeque::new(),
            finished: false,
        }
    }
}

/// Everything the executor decided at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub action: [PoseDelta7; 2],
    /// Sub-task and phase the action was produced in.
    pub i_seg: usize,
    pub phase: Phase,
    pub gaze: Vector3<f64>,
    pub gaze_clamped: bool,
    pub bottleneck: Option<Pose7>,
    pub progress: Option<f64>,
    pub switched: bool,
    pub advanced: bool,
}

fn pose_from_chart(v: &[f64]) -> Pose7 {
    Pose7::new(
        Vector3::new(v[0], v[1], v[2]),
        exp_rotation(&Vector3::new(v[3], v[4], v[5])),
        v[6].clamp(0.0, GRIPPER_MAX),
    )
}

/// Position arc length of a curve, from a fixed polyline.
fn curve_length(curve: &BezierReach) -> Result<f64, PolicyError> {
    let mut len = 0.0;
    let mut prev = curve.start.position;
    for i in 1..=16 {
        let p = curve.eval(i as f64 / 16.0)?.position;
        len += (p - prev).norm();
        prev = p;
    }
    Ok(len)
}

impl Policy {
    /// Predicted gaze for sub-task `i_seg`, clamped into the workspace.
    pub fn predict_gaze(
        &self,
        cloud: &crate::geometry::PointCloud,
        i_seg: usize,
    ) -> Result<(Vector3<f64>, bool), PolicyError> {
        let g = self.gaze.predict(cloud, i_seg)?;
        let c = Vector3::from_fn(|i, _| g[i].clamp(self.params.gaze_min[i], self.params.gaze_max[i]));
        let clamped = c != g;
        if clamped {
            log::warn!("predicted gaze {g:?} outside the workspace; clamped to {c:?}");
        }
        Ok((c, clamped))
    }

    /// Bottleneck pose for sub-task `i_seg` from the gaze and its crop
    /// features. Arm poses enter only through the features of presets that
    /// append them.
    pub fn predict_bottleneck(&self, i_seg: usize, local: &[f64], gaze: &Vector3<f64>) -> Result<Pose7, PolicyError> {
        let heads = self.subtasks.get(i_seg).ok_or(PolicyError::Unfitted(i_seg))?;
        if self.variant.direct_bottleneck {
            let out = heads.bottleneck.predict(&direct_features(local, gaze, self.params.direct_gaze_weight))?;
            Ok(pose_from_chart(&out))
        } else {
            let off = predict_offset(&heads.bottleneck, local)?;
            Ok(bottleneck_pose(gaze, &off))
        }
    }

    fn at_bottleneck(&self, pose: &Pose7, b: &Pose7) -> bool {
        (pose.position - b.position).norm() <= self.params.eps_position
            && rotation_distance(&pose.orientation, &b.orientation) <= self.params.eps_rotation
    }

    /// One executor step. The non-acting arm always receives a zero delta.
    pub fn act(&self, state: &mut ExecutorState, obs: &Observation<'_>) -> Result<StepInfo, PolicyError> {
        let i_seg = state.i_seg;
        let heads = self.subtasks.get(i_seg).ok_or(PolicyError::Unfitted(i_seg))?;
        let arm = heads.arm.index();
        let pose = obs.arms[arm];
        let mut info = StepInfo {
            action: [PoseDelta7::zero(); 2],
            i_seg,
            phase: state.phase,
            gaze: Vector3::zeros(),
            gaze_clamped: false,
            bottleneck: None,
            progress: None,
            switched: false,
            advanced: false,
        };
        if state.finished {
            return Ok(info);
        }
        let (gaze, clamped) = match (state.phase, state.gaze_lock) {
            (Phase::GazeCentered, Some(g)) => (g, false),
            _ => self.predict_gaze(obs.cloud, i_seg)?,
        };
        info.gaze = gaze;
        info.gaze_clamped = clamped;
        let local = self.local_features(obs, &gaze)?;

        if state.phase == Phase::Reaching {
            let mut delta = None;
            if self.variant.parametric_reach {
                let passed = heads.phase.as_ref().ok_or(PolicyError::Unfitted(i_seg))?.predict(&local)?[0];
                if passed < 0.5 {
                    let out = heads.reach.as_ref().ok_or(PolicyError::Unfitted(i_seg))?.predict(&global_features(
                        &self.params,
                        obs.cloud,
                        &pose,
                    ))?;
                    delta = Some(PoseDelta7::from_slice(&out[7 * arm..7 * arm + 7]));
                }
            } else {
                let b = self.predict_bottleneck(i_seg, &local, &gaze)?;
                info.bottleneck = Some(b);
                if !self.at_bottleneck(&pose, &b) {
                    let out = heads.bezier.predict(&bezier_features(&local, &pose, &gaze))?;
                    let v = bezier_vector(&out, (b.position - pose.position).norm());
                    let curve = BezierReach::new(pose, b, v);
                    let len = curve_length(&curve)?;
                    let s = if len > self.params.reach_speed { self.params.reach_speed / len } else { 1.0 };
                    let target = curve.eval(s)?;
                    delta = Some(delta_between(&pose, &target)?);
                    state.plan = Some(curve);
                }
            }
            match delta {
                Some(d) => {
                    info.action[arm] = d;
                    return Ok(info);
                }
                None => {
                    state.phase = Phase::GazeCentered;
                    state.gaze_lock = Some(gaze);
                    state.queue.clear();
                    info.switched = true;
                    info.phase = Phase::GazeCentered;
                }
            }
        }

        if state.queue.is_empty() {
            let out = heads.action.predict(&local)?;
            for chunk in out.chunks_exact(14) {
                let mut a = [PoseDelta7::zero(); 2];
                a[arm] = PoseDelta7::from_slice(&chunk[7 * arm..7 * arm + 7]);
                state.queue.push_back(a);
            }
        }
        info.action = state.queue.pop_front().unwrap_or([PoseDelta7::zero(); 2]);
        let c = heads.progress.predict(&local)?[0];
        info.progress = Some(c);
        if state.tracker.update(c) {
            state.i_seg = state.tracker.i_seg;
            state.phase = Phase::Reaching;
            state.gaze_lock = None;
            state.plan = None;
            state.queue.clear();
            info.advanced = true;
        }
        state.finished = state.tracker.finished;
        Ok(info)
    }
}
