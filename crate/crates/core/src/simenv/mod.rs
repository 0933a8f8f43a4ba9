//! Kinematic tabletop world with two free-flying grippers and rigid boxes.

mod expert;
mod render;
mod scenario;

pub use expert::{expert_bottlenecks, scripted_expert, ExpertParams};
pub use render::{gripper_boxes, render, render_seeded, OrientedBox, RenderParams};
pub use scenario::{spawn, Condition, Rect, ScenarioSpec};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::dataset::{Arm, DatasetError};
use crate::geometry::{compose_logged, GeometryError, Pose7, PoseDelta7};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("spawn failed: {0}")]
    Spawn(String),
    #[error("unreachable configuration: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Point labels written by the renderer.
pub mod label {
    pub const TABLE: u8 = 0;
    pub const RED: u8 = 1;
    pub const GREEN: u8 = 2;
    pub const LEFT_GRIPPER: u8 = 3;
    pub const RIGHT_GRIPPER: u8 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Red,
    Green,
}

impl ObjectKind {
    pub fn label(self) -> u8 {
        match self {
            ObjectKind::Red => label::RED,
            ObjectKind::Green => label::GREEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxObject {
    pub kind: ObjectKind,
    pub half: Vector3<f64>,
    /// Center and orientation.
    pub pose: Isometry3<f64>,
    /// Index of the supporting object; `None` means the table (or held).
    pub supported_by: Option<usize>,
}

impl BoxObject {
    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    pub fn bottom(&self) -> f64 {
        self.center().z - self.half.z
    }

    pub fn top(&self) -> f64 {
        self.center().z + self.half.z
    }

    /// Axis-aligned footprint `(min, max)` of the (possibly yawed) box.
    pub fn footprint(&self) -> (Vector2<f64>, Vector2<f64>) {
        let r = self.pose.rotation.to_rotation_matrix();
        let m = r.matrix();
        let ex = m[(0, 0)].abs() * self.half.x + m[(0, 1)].abs() * self.half.y + m[(0, 2)].abs() * self.half.z;
        let ey = m[(1, 0)].abs() * self.half.x + m[(1, 1)].abs() * self.half.y + m[(1, 2)].abs() * self.half.z;
        let c = self.center();
        (Vector2::new(c.x - ex, c.y - ey), Vector2::new(c.x + ex, c.y + ey))
    }
}

fn overlap_area(a: &(Vector2<f64>, Vector2<f64>), b: &(Vector2<f64>, Vector2<f64>)) -> f64 {
    let w = (a.1.x.min(b.1.x) - a.0.x.max(b.0.x)).max(0.0);
    let h = (a.1.y.min(b.1.y) - a.0.y.max(b.0.y)).max(0.0);
    w * h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    /// Closing below this angle grasps.
    pub g_close: f64,
    /// Opening above this angle releases.
    pub g_open: f64,
    /// Maximum gripper-to-center distance for a grasp.
    pub grasp_radius: f64,
    /// Bottom height above the table that counts as lifted.
    pub lift_height: f64,
    /// Minimum footprint overlap fraction for resting on another box.
    pub support_overlap: f64,
    pub workspace_min: Vector3<f64>,
    pub workspace_max: Vector3<f64>,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            g_close: 0.3,
            g_open: 0.5,
            grasp_radius: 0.03,
            lift_height: 0.05,
            support_overlap: 0.5,
            workspace_min: Vector3::new(-0.7, -1.0, 0.005),
            workspace_max: Vector3::new(0.7, 1.0, 0.7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table {
    pub z: f64,
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

/// What happened during one [`World::step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub gripper_clamped: [bool; 2],
    pub workspace_clamped: [bool; 2],
    pub grasped: [Option<usize>; 2],
    pub released: [Option<usize>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub table: Table,
    pub objects: Vec<BoxObject>,
    /// `[left, right]`.
    pub arms: [Pose7; 2],
    pub attached: [Option<usize>; 2],
    attach_offset: [Isometry3<f64>; 2],
    /// Latched once the red box has been held above the lift height.
    pub lifted: bool,
    pub params: SimParams,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Success {
    pub lifted: bool,
    pub pile: bool,
}

impl World {
    pub fn new(table: Table, objects: Vec<BoxObject>, arms: [Pose7; 2], params: SimParams) -> Self {
        Self {
            table,
            objects,
            arms,
            attached: [None, None],
            attach_offset: [Isometry3::identity(); 2],
            lifted: false,
            params,
            steps: 0,
        }
    }

    pub fn object(&self, kind: ObjectKind) -> Option<(usize, &BoxObject)> {
        self.objects.iter().enumerate().find(|(_, o)| o.kind == kind)
    }

    pub fn arm(&self, arm: Arm) -> &Pose7 {
        &self.arms[arm.index()]
    }

    pub fn is_attached(&self, idx: usize) -> bool {
        self.attached.contains(&Some(idx))
    }

    /// Every object and arm shifted by `v`.
    pub fn translated(&self, v: &Vector3<f64>) -> World {
        let mut w = self.clone();
        w.table.z += v.z;
        w.table.min += v.xy();
        w.table.max += v.xy();
        for o in &mut w.objects {
            o.pose.translation.vector += v;
        }
        for a in &mut w.arms {
            a.position += v;
        }
        w.params.workspace_min += v;
        w.params.workspace_max += v;
        w
    }

    /// Applies one relative action per arm and the grasp/release rules.
    pub fn step(&mut self, actions: &[PoseDelta7; 2]) -> StepReport {
        let mut report = StepReport::default();
        for i in 0..2 {
            let before = self.arms[i].gripper;
            let c = compose_logged(&self.arms[i], &actions[i]);
            let mut pose = c.pose;
            report.gripper_clamped[i] = c.gripper_clamped;
            let clamped = pose.position.sup(&self.params.workspace_min).inf(&self.params.workspace_max);
            if clamped != pose.position {
                report.workspace_clamped[i] = true;
                log::debug!("arm {i} clamped to the workspace at step {}", self.steps);
                pose.position = clamped;
            }
            self.arms[i] = pose;
            let after = pose.gripper;

            if let Some(idx) = self.attached[i] {
                if before <= self.params.g_open && after > self.params.g_open {
                    self.attached[i] = None;
                    self.settle(idx);
                    report.released[i] = Some(idx);
                } else {
                    self.objects[idx].pose = pose.isometry() * self.attach_offset[i];
                }
            } else if before >= self.params.g_close && after < self.params.g_close {
                if let Some(idx) = self.graspable(&pose.position) {
                    self.attached[i] = Some(idx);
                    self.attach_offset[i] = pose.isometry().inverse() * self.objects[idx].pose;
                    self.objects[idx].supported_by = None;
                    report.grasped[i] = Some(idx);
                }
            }
        }
        // objects resting on a box that moved follow it
        for idx in 0..self.objects.len() {
            if let Some(s) = self.objects[idx].supported_by {
                if self.is_attached(s) && !self.is_attached(idx) {
                    self.objects[idx].supported_by = None;
                    self.settle(idx);
                }
            }
        }
        if let Some((idx, red)) = self.object(ObjectKind::Red) {
            if self.is_attached(idx) && red.bottom() >= self.table.z + self.params.lift_height - 1e-12 {
                self.lifted = true;
            }
        }
        self.steps += 1;
        report
    }

    fn graspable(&self, p: &Vector3<f64>) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, o) in self.objects.iter().enumerate() {
            if self.is_attached(i) {
                continue;
            }
            let d = (o.center() - p).norm();
            if d <= self.params.grasp_radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }

    /// Drops a released object onto the highest support under it, keeping only its yaw.
    fn settle(&mut self, idx: usize) {
        let obj = &self.objects[idx];
        let yaw = {
            let m = obj.pose.rotation.to_rotation_matrix();
            m[(1, 0)].atan2(m[(0, 0)])
        };
        let rotation = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        let upright = BoxObject { pose: Isometry3::from_parts(obj.pose.translation, rotation), ..obj.clone() };
        let fp = upright.footprint();
        let area = (fp.1.x - fp.0.x) * (fp.1.y - fp.0.y);
        let bottom = upright.bottom();
        let mut support_top = self.table.z;
        let mut support = None;
        for (j, other) in self.objects.iter().enumerate() {
            if j == idx || self.is_attached(j) {
                continue;
            }
            let top = other.top();
            // allow slight interpenetration from a low release
            if top > bottom + 0.01 || top <= support_top {
                continue;
            }
            if overlap_area(&fp, &other.footprint()) >= self.params.support_overlap * area {
                support_top = top;
                support = Some(j);
            }
        }
        let mut c = upright.center();
        c.z = support_top + upright.half.z;
        self.objects[idx].pose = Isometry3::from_parts(Translation3::from(c), rotation);
        self.objects[idx].supported_by = support;
    }

    /// Sub-goal flags; `Pile` also requires the episode to be over.
    pub fn success(&self, episode_ended: bool) -> Success {
        let mut s = Success { lifted: self.lifted, pile: false };
        if let (Some((ri, red)), Some((gi, green))) = (self.object(ObjectKind::Red), self.object(ObjectKind::Green)) {
            let resting = !self.is_attached(ri) && red.supported_by == Some(gi);
            let offset = (red.center().xy() - green.center().xy()).norm();
            s.pile = episode_ended && resting && offset <= 0.25 * 2.0 * green.half.x;
        }
        s
    }

    /// All occluding/rendered boxes with their labels: objects then gripper parts.
    pub fn render_boxes(&self) -> Vec<OrientedBox> {
        let mut out: Vec<OrientedBox> = self
            .objects
            .iter()
            .map(|o| OrientedBox { center: o.center(), rotation: o.pose.rotation, half: o.half, label: o.kind.label() })
            .collect();
        out.extend(gripper_boxes(&self.arms[0], label::LEFT_GRIPPER));
        out.extend(gripper_boxes(&self.arms[1], label::RIGHT_GRIPPER));
        out
    }
}
