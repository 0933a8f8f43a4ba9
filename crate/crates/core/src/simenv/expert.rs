//! Scripted gaze-aware demonstrator for the box-stacking task.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{render, ObjectKind, ScenarioSpec, SimError, World};
use crate::bezier::BezierReach;
use crate::dataset::{Arm, DemoMeta, Demonstration, Frame, GroundTruth, SubtaskBounds};
use crate::geometry::{delta_between, Pose7, PoseDelta7, GRIPPER_MAX};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertParams {
    /// Per-axis gaze noise, meters.
    pub gaze_noise: f64,
    /// Relative jitter of the planted bezier vector and of the reach speed.
    pub waypoint_jitter: f64,
    /// Mean reach speed, meters per step.
    pub speed: f64,
    /// Amplitude of the alternating sideways deviation from the reach curve.
    pub tremor: f64,
    /// Each reach step runs at `1 +- surge` times the mean speed, sign drawn per step.
    pub surge: f64,
    /// Height of the bezier vector as a fraction of the chord.
    pub arc_height: f64,
    /// Pre-grasp height above the red box top.
    pub pick_clearance: f64,
    /// Pre-release height of the gripper above the green box top.
    pub place_clearance: f64,
    pub release_gap: f64,
    pub lift: f64,
    pub descend_steps: usize,
    pub grip_steps: usize,
    pub lift_steps: usize,
    pub hold_steps: usize,
    pub retreat: f64,
    pub retreat_steps: usize,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            gaze_noise: 0.002,
            waypoint_jitter: 0.5,
            speed: 0.03,
            tremor: 0.005,
            surge: 0.5,
            arc_height: 0.25,
            pick_clearance: 0.05,
            place_clearance: 0.07,
            release_gap: 0.001,
            lift: 0.055,
            descend_steps: 4,
            grip_steps: 3,
            lift_steps: 4,
            hold_steps: 6,
            retreat: 0.02,
            retreat_steps: 2,
        }
    }
}

struct Recorder<'a> {
    spec: &'a ScenarioSpec,
    world: World,
    frames: Vec<Frame>,
    rng: ChaCha8Rng,
    gaze_noise: Normal<f64>,
}

impl Recorder<'_> {
    fn record(&mut self, action: PoseDelta7, gaze_target: &Vector3<f64>) -> Result<(), SimError> {
        let cloud = render(&self.world, &self.spec.camera, &self.spec.render, &mut self.rng)?;
        let n = &self.gaze_noise;
        let gaze =
            gaze_target + Vector3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
        let (pixel, _) = self
            .spec
            .camera
            .project(&gaze)
            .ok_or_else(|| SimError::Unreachable("gaze point behind the camera".into()))?;
        let actions = [action, PoseDelta7::zero()];
        self.frames.push(Frame {
            t: self.frames.len(),
            cloud,
            left: self.world.arms[0],
            right: self.world.arms[1],
            gaze_pixel: pixel,
            gaze_3d: gaze,
            expert_action: actions,
        });
        let report = self.world.step(&actions);
        if report.workspace_clamped[0] {
            return Err(SimError::Unreachable(format!("expert left the workspace at step {}", self.frames.len() - 1)));
        }
        Ok(())
    }

    fn move_to(&mut self, target: &Pose7, gaze: &Vector3<f64>) -> Result<(), SimError> {
        let a = delta_between(&self.world.arms[0], target)?;
        self.record(a, gaze)
    }

    /// Straight-line motion split into `steps` equal deltas.
    fn linear(&mut self, dpos: Vector3<f64>, dgrip: f64, steps: usize, gaze: &Vector3<f64>) -> Result<(), SimError> {
        let a = PoseDelta7::new(dpos / steps as f64, Vector3::zeros(), dgrip / steps as f64);
        for _ in 0..steps {
            self.record(a, gaze)?;
        }
        Ok(())
    }

    fn hold(&mut self, steps: usize, gaze: &Vector3<f64>) -> Result<(), SimError> {
        for _ in 0..steps {
            self.record(PoseDelta7::zero(), gaze)?;
        }
        Ok(())
    }

    /// Follows a planted Bézier curve; returns the step at which the arm arrives.
    fn reach(
        &mut self,
        end: Pose7,
        gaze: &Vector3<f64>,
        params: &ExpertParams,
    ) -> Result<(usize, PoseDelta7), SimError> {
        let start = self.world.arms[0];
        let chord = (end.position - start.position).norm();
        if chord < 2.0 * params.speed {
            return Err(SimError::Unreachable(format!("reach chord {chord:.3} m too short")));
        }
        let j = params.waypoint_jitter;
        let mut jitter = || j * (2.0 * self.rng.random::<f64>() - 1.0);
        let up = params.arc_height * chord * (1.0 + jitter());
        let lateral = 0.3 * chord * jitter();
        let speed = params.speed * (1.0 + 0.6 * jitter());
        let dir = (end.position - start.position) / chord;
        let side = dir.cross(&Vector3::z());
        let side = if side.norm() > 1e-9 { side.normalize() } else { Vector3::x() };
        let vector = PoseDelta7::new(Vector3::z() * up + side * lateral, Vector3::zeros(), 0.0);
        let phi = std::f64::consts::TAU * self.rng.random::<f64>();
        let wobble = (side * phi.cos() + dir.cross(&side) * phi.sin()) * params.tremor;
        let curve = BezierReach::new(start, end, vector);
        let mut length = 0.0;
        let mut prev = start.position;
        for i in 1..=64 {
            let p = curve.eval(i as f64 / 64.0).map_err(|e| SimError::Unreachable(e.to_string()))?;
            length += (p.position - prev).norm();
            prev = p.position;
        }
        let n = ((length / speed).ceil() as usize).max(3);
        let mut progress = vec![0.0];
        for _ in 0..n {
            let f = if self.rng.random::<bool>() { 1.0 + params.surge } else { 1.0 - params.surge };
            progress.push(progress.last().copied().unwrap_or(0.0) + f.max(0.05));
        }
        let total = progress[n];
        for i in 1..=n {
            let target = if i == n {
                end
            } else {
                let mut p = curve.eval(progress[i] / total).map_err(|e| SimError::Unreachable(e.to_string()))?;
                p.position += if i % 2 == 0 { wobble } else { -wobble };
                p
            };
            self.move_to(&target, gaze)?;
        }
        Ok((self.frames.len(), vector))
    }
}

/// Positions of the expert's pick and place bottlenecks in `world`.
pub fn expert_bottlenecks(world: &World, params: &ExpertParams) -> Option<[Vector3<f64>; 2]> {
    let red = world.object(ObjectKind::Red)?.1;
    let green = world.object(ObjectKind::Green)?.1;
    let (r, g) = (red.center(), green.center());
    Some([
        Vector3::new(r.x, r.y, red.top() + params.pick_clearance),
        Vector3::new(g.x, g.y, green.top() + params.place_clearance),
    ])
}

/// Runs the two-stage demonstration on `world` and returns it with the final world.
pub fn scripted_expert(
    spec: &ScenarioSpec,
    world: World,
    params: &ExpertParams,
    seed: u64,
) -> Result<(Demonstration, World), SimError> {
    let gaze_noise = Normal::new(0.0, params.gaze_noise.max(0.0))
        .map_err(|e| SimError::Unreachable(format!("bad gaze noise: {e}")))?;
    let red = world.object(ObjectKind::Red).ok_or_else(|| SimError::Unreachable("no red box".into()))?.1.clone();
    let green = world.object(ObjectKind::Green).ok_or_else(|| SimError::Unreachable("no green box".into()))?.1.clone();
    let yaw_of = |q: &UnitQuaternion<f64>| {
        let m = q.to_rotation_matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    };
    let mut rec = Recorder { spec, world, frames: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed), gaze_noise };

    // pick
    let gaze0 = red.center();
    let pre_grasp = Pose7::new(
        Vector3::new(gaze0.x, gaze0.y, red.top() + params.pick_clearance),
        UnitQuaternion::from_euler_angles(0.0, 0.0, yaw_of(&red.pose.rotation)),
        GRIPPER_MAX,
    );
    let (b0, v0) = rec.reach(pre_grasp, &gaze0, params)?;
    let descend = gaze0 - pre_grasp.position;
    rec.linear(descend, 0.0, params.descend_steps, &gaze0)?;
    rec.linear(Vector3::zeros(), -GRIPPER_MAX, params.grip_steps, &gaze0)?;
    rec.linear(Vector3::z() * params.lift, 0.0, params.lift_steps, &gaze0)?;
    rec.hold(params.hold_steps, &gaze0)?;
    if !rec.world.lifted {
        return Err(SimError::Unreachable("pick did not lift the red box".into()));
    }
    let e0 = rec.frames.len() - 1;

    // place
    let gaze1 = green.center();
    let held = rec.world.arms[0];
    let grip_offset = held.position.z - rec.world.objects[0].bottom();
    let pre_release = Pose7::new(
        Vector3::new(gaze1.x, gaze1.y, green.top() + params.place_clearance),
        UnitQuaternion::from_euler_angles(0.0, 0.0, yaw_of(&green.pose.rotation)),
        held.gripper,
    );
    let (b1, v1) = rec.reach(pre_release, &gaze1, params)?;
    let release_z = green.top() + params.release_gap + grip_offset;
    let drop = Vector3::new(0.0, 0.0, release_z - pre_release.position.z);
    rec.linear(drop, 0.0, params.descend_steps, &gaze1)?;
    rec.linear(Vector3::zeros(), GRIPPER_MAX, params.grip_steps, &gaze1)?;
    rec.linear(Vector3::z() * params.retreat, 0.0, params.retreat_steps, &gaze1)?;
    rec.hold(params.hold_steps, &gaze1)?;
    // final observation carries no action
    let last_action = rec.frames.last_mut().expect("non-empty");
    last_action.expert_action = [PoseDelta7::zero(); 2];
    let t_end = rec.frames.len() - 1;

    let meta = DemoMeta {
        task: "pick_and_place".into(),
        seed,
        scenario: spec.name.clone(),
        acting_arms: vec![Arm::Left, Arm::Left],
        ground_truth: Some(GroundTruth {
            subtasks: vec![
                SubtaskBounds { start: 0, end: e0, bottleneck: b0 },
                SubtaskBounds { start: e0 + 1, end: t_end, bottleneck: b1 },
            ],
            bezier_vectors: vec![v0, v1],
        }),
    };
    let demo = Demonstration::new(rec.frames, meta)?;
    Ok((demo, rec.world))
}
