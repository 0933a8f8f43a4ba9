//! Depth-camera point sampling with analytic occlusion.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{label, SimError, World};
use crate::geometry::{CameraModel, PointCloud, Pose7, GRIPPER_MAX};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    /// Sample budget for the table plane; other surfaces use the same density.
    pub n_points: usize,
    /// Per-axis Gaussian noise, meters.
    pub noise: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self { n_points: 30_000, noise: 0.001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub half: Vector3<f64>,
    pub label: u8,
}

impl OrientedBox {
    /// Whether the segment `origin + t * dir`, `t in (0, 1)`, passes through the box.
    pub fn blocks(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> bool {
        let o = self.rotation.inverse_transform_vector(&(origin - self.center));
        let d = self.rotation.inverse_transform_vector(dir);
        let (mut t0, mut t1) = (1e-9, 1.0);
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a].abs() > self.half[a] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((-self.half[a] - o[a]) * inv, (self.half[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = f64::max(t0, ta);
            t1 = f64::min(t1, tb);
            if t0 > t1 {
                return false;
            }
        }
        true
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.rotation.inverse_transform_vector(&(p - self.center));
        (0..3).all(|a| l[a].abs() <= self.half[a])
    }
}

/// Two fingers and a palm. The pose position is the point between the fingertips.
pub fn gripper_boxes(pose: &Pose7, label: u8) -> [OrientedBox; 3] {
    let open = (pose.gripper / GRIPPER_MAX).clamp(0.0, 1.0);
    let sep = 0.006 + 0.034 * open;
    let finger_half = Vector3::new(0.006, 0.006, 0.012);
    let at = |local: Vector3<f64>, half: Vector3<f64>| OrientedBox {
        center: pose.position + pose.orientation * local,
        rotation: pose.orientation,
        half,
        label,
    };
    [
        at(Vector3::new(0.0, sep, 0.001), finger_half),
        at(Vector3::new(0.0, -sep, 0.001), finger_half),
        at(Vector3::new(0.0, 0.0, 0.019), Vector3::new(0.01, sep + 0.006, 0.006)),
    ]
}

struct Face {
    center: Vector3<f64>,
    normal: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    hu: f64,
    hv: f64,
    owner: Option<usize>,
    label: u8,
}

fn box_faces(b: &OrientedBox, owner: usize, out: &mut Vec<Face>) {
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    for a in 0..3 {
        let (iu, iv) = ((a + 1) % 3, (a + 2) % 3);
        for s in [-1.0, 1.0] {
            out.push(Face {
                center: b.center + b.rotation * (axes[a] * (s * b.half[a])),
                normal: b.rotation * (axes[a] * s),
                u: b.rotation * axes[iu],
                v: b.rotation * axes[iv],
                hu: b.half[iu],
                hv: b.half[iv],
                owner: Some(owner),
                label: b.label,
            });
        }
    }
}

/// Samples visible surfaces on a jittered grid, removes occluded and
/// off-image points, adds noise and rounds to `f32`.
pub fn render<R: Rng>(
    world: &World,
    cam: &CameraModel,
    params: &RenderParams,
    rng: &mut R,
) -> Result<PointCloud, SimError> {
    if params.n_points == 0 {
        return Err(SimError::Spawn("n_points must be positive".into()));
    }
    let noise = Normal::new(0.0, params.noise.max(0.0)).map_err(|e| SimError::Spawn(format!("bad noise: {e}")))?;
    let t = &world.table;
    let table_area = (t.max.x - t.min.x) * (t.max.y - t.min.y);
    let spacing = (table_area / params.n_points as f64).sqrt();

    let boxes = world.render_boxes();
    let mut faces = vec![Face {
        center: Vector3::new((t.min.x + t.max.x) / 2.0, (t.min.y + t.max.y) / 2.0, t.z),
        normal: Vector3::z(),
        u: Vector3::x(),
        v: Vector3::y(),
        hu: (t.max.x - t.min.x) / 2.0,
        hv: (t.max.y - t.min.y) / 2.0,
        owner: None,
        label: label::TABLE,
    }];
    for (i, b) in boxes.iter().enumerate() {
        box_faces(b, i, &mut faces);
    }

    let eye = cam.center();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for f in &faces {
        if (eye - f.center).dot(&f.normal) <= 0.0 {
            continue;
        }
        let nu = ((2.0 * f.hu / spacing).round() as usize).max(1);
        let nv = ((2.0 * f.hv / spacing).round() as usize).max(1);
        let (du, dv) = (2.0 * f.hu / nu as f64, 2.0 * f.hv / nv as f64);
        for i in 0..nu {
            for j in 0..nv {
                let su = -f.hu + (i as f64 + rng.random::<f64>()) * du;
                let sv = -f.hv + (j as f64 + rng.random::<f64>()) * dv;
                let p = f.center + f.u * su + f.v * sv;
                if p.z < t.z - 1e-9 {
                    continue;
                }
                let Some((px, _)) = cam.project(&p) else {
                    continue;
                };
                if !cam.in_image(&px) {
                    continue;
                }
                let dir = eye - p;
                let hidden = boxes.iter().enumerate().any(|(k, b)| Some(k) != f.owner && b.blocks(&p, &dir));
                if hidden {
                    continue;
                }
                let n = Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
                points.push(p + n);
                labels.push(f.label);
            }
        }
    }
    Ok(PointCloud::new(points)?.with_labels(labels)?.quantized())
}

/// [`render`] with a fresh generator seeded from `seed`.
pub fn render_seeded(
    world: &World,
    cam: &CameraModel,
    params: &RenderParams,
    seed: u64,
) -> Result<PointCloud, SimError> {
    render(world, cam, params, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::tests::simple_world;

    fn camera() -> CameraModel {
        CameraModel::look_at(Vector3::new(-0.6, 0.0, 0.7), Vector3::zeros(), 500.0, 640, 480).unwrap()
    }

    #[test]
    fn segment_box_intersection() {
        let b = OrientedBox {
            center: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
            half: Vector3::new(1.0, 1.0, 1.0),
            label: 0,
        };
        let o = Vector3::new(-3.0, 0.0, 0.0);
        assert!(b.blocks(&o, &Vector3::new(6.0, 0.0, 0.0)));
        assert!(!b.blocks(&o, &Vector3::new(1.5, 0.0, 0.0)));
        assert!(!b.blocks(&o, &Vector3::new(6.0, 6.0, 0.0)));
        assert!(b.contains(&Vector3::new(0.5, -0.5, 1.0)));
    }

    #[test]
    fn render_is_deterministic_and_labeled() {
        let w = simple_world();
        let p = RenderParams::default();
        let a = render_seeded(&w, &camera(), &p, 9).unwrap();
        let b = render_seeded(&w, &camera(), &p, 9).unwrap();
        assert_eq!(a, b);
        let labels = a.labels().unwrap();
        for l in [label::TABLE, label::RED, label::GREEN] {
            assert!(labels.contains(&l), "label {l} missing");
        }
        let c = render_seeded(&w, &camera(), &p, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn points_lie_on_visible_surfaces() {
        let w = simple_world();
        let p = RenderParams { n_points: 5000, noise: 0.0 };
        let cam = camera();
        let cloud = render_seeded(&w, &cam, &p, 1).unwrap();
        let boxes = w.render_boxes();
        for (pt, l) in cloud.points().iter().zip(cloud.labels().unwrap()) {
            let (px, _) = cam.project(pt).unwrap();
            assert!(cam.in_image(&px) || px.x > 639.0 || px.y > 479.0);
            if *l == label::TABLE {
                assert!(pt.z.abs() < 1e-6);
                // nothing is rendered under a box footprint
                assert!(!boxes[..2].iter().any(|b| {
                    let q = pt + Vector3::new(0.0, 0.0, 1e-4);
                    b.contains(&q)
                }));
            }
        }
        let n_table = cloud.labels().unwrap().iter().filter(|l| **l == label::TABLE).count();
        assert!(n_table > 3000 && n_table < 5000, "{n_table}");
    }

    #[test]
    fn gripper_fingers_close() {
        let mut pose = Pose7::identity();
        pose.gripper = GRIPPER_MAX;
        let open = gripper_boxes(&pose, 3);
        pose.gripper = 0.0;
        let closed = gripper_boxes(&pose, 3);
        assert!((open[0].center.y - 0.04).abs() < 1e-12);
        assert!((closed[0].center.y - 0.006).abs() < 1e-12);
    }
}
