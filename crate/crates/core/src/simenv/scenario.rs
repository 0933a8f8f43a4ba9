//! Spawn regions and initial-condition sampling for the box-stacking task.

use std::fmt;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoxObject, ObjectKind, RenderParams, SimError, SimParams, Table, World};
use crate::geometry::{CameraModel, Pose7, GRIPPER_MAX};

/// Which parts of the initial condition come from outside the demonstration ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Id,
    OodObject,
    OodArm,
    OodBoth,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Id, Condition::OodObject, Condition::OodArm, Condition::OodBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Id => "ID",
            Condition::OodObject => "OOD-object",
            Condition::OodArm => "OOD-arm",
            Condition::OodBoth => "OOD-both",
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        Condition::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s))
    }

    pub fn objects_ood(self) -> bool {
        matches!(self, Condition::OodObject | Condition::OodBoth)
    }

    pub fn arms_ood(self) -> bool {
        matches!(self, Condition::OodArm | Condition::OodBoth)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned rectangle on the table plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { min: Vector2::new(x0, y0), max: Vector2::new(x1, y1) }
    }

    pub fn is_valid(&self) -> bool {
        self.min.x <= self.max.x && self.min.y <= self.max.y
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Max-norm distance from `p` to the rectangle, zero inside.
    pub fn outside_distance(&self, p: &Vector2<f64>) -> f64 {
        let dx = (self.min.x - p.x).max(p.x - self.max.x).max(0.0);
        let dy = (self.min.y - p.y).max(p.y - self.max.y).max(0.0);
        dx.max(dy)
    }

    pub fn expanded(&self, d: f64) -> Rect {
        Rect { min: self.min.add_scalar(-d), max: self.max.add_scalar(d) }
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        Rect { min: self.min.sup(&other.min), max: self.max.inf(&other.max) }
    }

    pub fn translated(&self, v: &Vector2<f64>) -> Rect {
        Rect { min: self.min + v, max: self.max + v }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vector2<f64> {
        Vector2::new(
            self.min.x + (self.max.x - self.min.x) * rng.random::<f64>(),
            self.min.y + (self.max.y - self.min.y) * rng.random::<f64>(),
        )
    }

    /// Uniform over the points whose distance from `self` lies in `band`, clipped to `bounds`.
    fn sample_band<R: Rng>(&self, band: (f64, f64), bounds: &Rect, rng: &mut R) -> Result<Vector2<f64>, SimError> {
        let outer = self.expanded(band.1).intersect(bounds);
        if !outer.is_valid() {
            return Err(SimError::Spawn("OOD band lies off the table".into()));
        }
        for _ in 0..10_000 {
            let p = outer.sample(rng);
            let d = self.outside_distance(&p);
            if d >= band.0 && d <= band.1 {
                return Ok(p);
            }
        }
        Err(SimError::Spawn("OOD band is empty".into()))
    }
}

/// Initial-condition ranges and fixed scene constants for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub table: Table,
    pub red_half: Vector3<f64>,
    pub green_half: Vector3<f64>,
    pub red_region: Rect,
    pub green_region: Rect,
    /// Object yaw is uniform in `[-yaw, yaw]`.
    pub object_yaw: f64,
    /// Max-norm distance band outside the ID region used for OOD objects.
    pub object_band: (f64, f64),
    /// Minimum gap between the two object footprints.
    pub object_gap: f64,
    /// ID end-effector xy ranges, `[left, right]`.
    pub arm_regions: [Rect; 2],
    pub arm_z: (f64, f64),
    pub arm_yaw: f64,
    pub arm_band: (f64, f64),
    pub camera: CameraModel,
    pub render: RenderParams,
    pub sim: SimParams,
}

impl ScenarioSpec {
    /// Red box onto green box.
    pub fn pile_box() -> Self {
        let camera = CameraModel::look_at(Vector3::new(-0.6, 0.0, 0.7), Vector3::zeros(), 500.0, 640, 480)
            .expect("valid intrinsics");
        Self {
            name: "pilebox".into(),
            table: Table { z: 0.0, min: Vector2::new(-0.35, -0.6), max: Vector2::new(0.35, 0.6) },
            red_half: Vector3::new(0.02, 0.02, 0.0125),
            green_half: Vector3::new(0.04, 0.04, 0.0375),
            red_region: Rect::new(-0.05, 0.05, 0.15, 0.35),
            green_region: Rect::new(-0.05, 0.05, -0.25, -0.15),
            object_yaw: 0.0,
            object_band: (0.05, 0.15),
            object_gap: 0.04,
            arm_regions: [Rect::new(-0.05, 0.05, 0.40, 0.50), Rect::new(-0.05, 0.05, -0.50, -0.40)],
            arm_z: (0.25, 0.30),
            arm_yaw: 0.1,
            arm_band: (0.10, 0.20),
            camera,
            render: RenderParams::default(),
            sim: SimParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let rects = [self.red_region, self.green_region, self.arm_regions[0], self.arm_regions[1]];
        if rects.iter().any(|r| !r.is_valid()) {
            return Err(SimError::Spawn("spawn rectangle with min > max".into()));
        }
        for band in [self.object_band, self.arm_band] {
            if !(band.0 > 0.0 && band.0 < band.1) {
                return Err(SimError::Spawn(format!("invalid OOD band {band:?}")));
            }
        }
        if !(self.arm_z.0 <= self.arm_z.1) || self.object_yaw < 0.0 || self.arm_yaw < 0.0 {
            return Err(SimError::Spawn("invalid arm or yaw range".into()));
        }
        Ok(())
    }

    /// The whole scene, regions and camera shifted by `v`.
    pub fn translated(&self, v: &Vector3<f64>) -> ScenarioSpec {
        let v2 = v.xy();
        let mut s = self.clone();
        s.table.z += v.z;
        s.table.min += v2;
        s.table.max += v2;
        s.red_region = s.red_region.translated(&v2);
        s.green_region = s.green_region.translated(&v2);
        s.arm_regions = s.arm_regions.map(|r| r.translated(&v2));
        s.arm_z = (s.arm_z.0 + v.z, s.arm_z.1 + v.z);
        s.camera = s.camera.translated(v);
        s.sim.workspace_min += v;
        s.sim.workspace_max += v;
        s
    }

    fn table_rect(&self, margin: f64) -> Rect {
        Rect { min: self.table.min, max: self.table.max }.expanded(-margin)
    }
}

fn place_box(kind: ObjectKind, half: Vector3<f64>, xy: Vector2<f64>, yaw: f64, table_z: f64) -> BoxObject {
    BoxObject {
        kind,
        half,
        pose: Isometry3::from_parts(
            Translation3::new(xy.x, xy.y, table_z + half.z),
            UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        ),
        supported_by: None,
    }
}

fn footprints_clear(a: &BoxObject, b: &BoxObject, gap: f64) -> bool {
    let (amin, amax) = a.footprint();
    let (bmin, bmax) = b.footprint();
    amin.x > bmax.x + gap || bmin.x > amax.x + gap || amin.y > bmax.y + gap || bmin.y > amax.y + gap
}

/// Samples a world for `condition`; identical `(spec, condition, seed)` give identical worlds.
pub fn spawn(spec: &ScenarioSpec, condition: Condition, seed: u64) -> Result<World, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arms = [Pose7::identity(); 2];
    for (i, arm) in arms.iter_mut().enumerate() {
        let xy = if condition.arms_ood() {
            spec.arm_regions[i].sample_band(spec.arm_band, &spec.table_rect(0.0).expanded(0.3), &mut rng)?
        } else {
            spec.arm_regions[i].sample(&mut rng)
        };
        let z = spec.arm_z.0 + (spec.arm_z.1 - spec.arm_z.0) * rng.random::<f64>();
        let yaw = spec.arm_yaw * (2.0 * rng.random::<f64>() - 1.0);
        *arm = Pose7::new(Vector3::new(xy.x, xy.y, z), UnitQuaternion::from_euler_angles(0.0, 0.0, yaw), GRIPPER_MAX);
    }

    let bounds_red = spec.table_rect(spec.red_half.x.max(spec.red_half.y) * 1.5 + 0.01);
    let bounds_green = spec.table_rect(spec.green_half.x.max(spec.green_half.y) * 1.5 + 0.01);
    let sample = |rect: &Rect, bounds: &Rect, rng: &mut ChaCha8Rng| -> Result<Vector2<f64>, SimError> {
        if condition.objects_ood() {
            rect.sample_band(spec.object_band, bounds, rng)
        } else {
            Ok(rect.sample(rng))
        }
    };
    for _ in 0..100 {
        let red_xy = sample(&spec.red_region, &bounds_red, &mut rng)?;
        let red_yaw = spec.object_yaw * (2.0 * rng.random::<f64>() - 1.0);
        let green_xy = sample(&spec.green_region, &bounds_green, &mut rng)?;
        let green_yaw = spec.object_yaw * (2.0 * rng.random::<f64>() - 1.0);
        let red = place_box(ObjectKind::Red, spec.red_half, red_xy, red_yaw, spec.table.z);
        let green = place_box(ObjectKind::Green, spec.green_half, green_xy, green_yaw, spec.table.z);
        if footprints_clear(&red, &green, spec.object_gap) {
            return Ok(World::new(spec.table, vec![red, green], arms, spec.sim));
        }
    }
    Err(SimError::Spawn(format!("objects overlap after 100 samples (seed {seed}, {condition})")))
}
