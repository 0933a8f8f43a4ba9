//! Per-sub-task 3D gaze prediction from the full scene.
//!
//! Points above the table are grouped into blobs by single linkage. Each blob
//! is described by its extent and height above the table only, so the
//! description does not change when the blob moves across the table. A k-NN
//! scorer per sub-task picks the blob the demonstrator looked at and a second
//! k-NN head regresses the gaze point relative to the blob's anchor.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::regress::{KnnRegressor, Regressor};
use super::PredictorError;
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub table_z: f64,
    /// Points at most this far above the table are treated as table.
    pub min_height: f64,
    /// Single-linkage distance.
    pub link: f64,
    /// Smaller groups are discarded as spurs.
    pub min_points: usize,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self { table_z: 0.0, min_height: 0.008, link: 0.015, min_points: 3 }
    }
}

pub const DESCRIPTOR_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub size: usize,
}

impl Blob {
    /// `[dx, dy, dz, min height, max height]`.
    pub fn descriptor(&self, table_z: f64) -> [f64; DESCRIPTOR_LEN] {
        let e = self.max - self.min;
        [e.x, e.y, e.z, self.min.z - table_z, self.max.z - table_z]
    }

    /// Center of the bounding box footprint at the blob's top.
    pub fn anchor(&self) -> Vector3<f64> {
        Vector3::new(0.5 * (self.min.x + self.max.x), 0.5 * (self.min.y + self.max.y), self.max.z)
    }

    /// Euclidean distance from `p` to the bounding box (0 inside).
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let d = Vector3::from_fn(|i, _| (self.min[i] - p[i]).max(0.0).max(p[i] - self.max[i]));
        d.norm()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups the above-table points into connected blobs, ordered by their
/// lowest point index.
pub fn extract_blobs(cloud: &PointCloud, params: &BlobParams) -> Vec<Blob> {
    let pts: Vec<Vector3<f64>> =
        cloud.points().iter().filter(|p| p.z > params.table_z + params.min_height).copied().collect();
    let n = pts.len();
    let cell = |p: &Vector3<f64>| -> (i64, i64, i64) {
        ((p.x / params.link).floor() as i64, (p.y / params.link).floor() as i64, (p.z / params.link).floor() as i64)
    };
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let l2 = params.link * params.link;
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(b) = buckets.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in b {
                        if j > i && (pts[j] - p).norm_squared() <= l2 {
                            let (a, c) = (find(&mut parent, i), find(&mut parent, j));
                            if a != c {
                                parent[a.max(c)] = a.min(c);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut blobs: Vec<Blob> = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        let root = find(&mut parent, i);
        let k = *slot.entry(root).or_insert_with(|| {
            blobs.push(Blob { min: *p, max: *p, size: 0 });
            blobs.len() - 1
        });
        let b = &mut blobs[k];
        b.min = b.min.inf(p);
        b.max = b.max.sup(p);
        b.size += 1;
    }
    blobs.retain(|b| b.size >= params.min_points);
    blobs
}

/// One training observation: the blobs seen in a frame and the recorded gaze.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub blobs: Vec<Blob>,
    pub gaze: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazeModel {
    pub scorer: KnnRegressor,
    pub offset: KnnRegressor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazePredictor {
    pub params: BlobParams,
    pub models: Vec<GazeModel>,
}

impl GazePredictor {
    /// Fits one model per sub-task from the samples recorded during it.
    pub fn fit(params: BlobParams, per_subtask: &[Vec<GazeSample>], k: usize) -> Result<Self, PredictorError> {
        let mut models = Vec::with_capacity(per_subtask.len());
        for samples in per_subtask {
            let mut sx = Vec::new();
            let mut sy = Vec::new();
            let mut ox = Vec::new();
            let mut oy = Vec::new();
            for s in samples {
                let Some(best) = (0..s.blobs.len()).min_by(|&a, &b| {
                    s.blobs[a].distance_to(&s.gaze).total_cmp(&s.blobs[b].distance_to(&s.gaze)).then(a.cmp(&b))
                }) else {
                    continue;
                };
                for (i, b) in s.blobs.iter().enumerate() {
                    sx.push(b.descriptor(params.table_z).to_vec());
                    sy.push(vec![if i == best { 1.0 } else { 0.0 }]);
                }
                let b = &s.blobs[best];
                ox.push(b.descriptor(params.table_z).to_vec());
                oy.push((s.gaze - b.anchor()).as_slice().to_vec());
            }
            if ox.is_empty() {
                return Err(PredictorError::EmptyTrainingSet);
            }
            let mut scorer = KnnRegressor::new(k.min(sx.len()));
            scorer.fit(&sx, &sy)?;
            let mut offset = KnnRegressor::new(k.min(ox.len()));
            offset.fit(&ox, &oy)?;
            models.push(GazeModel { scorer, offset });
        }
        Ok(Self { params, models })
    }

    pub fn n_subtasks(&self) -> usize {
        self.models.len()
    }

    pub fn predict(&self, cloud: &PointCloud, i_seg: usize) -> Result<Vector3<f64>, PredictorError> {
        self.predict_from_blobs(&extract_blobs(cloud, &self.params), i_seg)
    }

    /// Scores every blob, keeps the best (first on ties) and adds the learned offset.
    pub fn predict_from_blobs(&self, blobs: &[Blob], i_seg: usize) -> Result<Vector3<f64>, PredictorError> {
        let model = self.models.get(i_seg).ok_or(PredictorError::SubtaskOutOfRange(i_seg))?;
        let mut best: Option<(f64, usize)> = None;
        for (i, b) in blobs.iter().enumerate() {
            let score = model.scorer.predict(&b.descriptor(self.params.table_z))?[0];
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, i));
            }
        }
        let (_, i) = best.ok_or(PredictorError::NoCandidates)?;
        let b = &blobs[i];
        let off = model.offset.predict(&b.descriptor(self.params.table_z))?;
        Ok(b.anchor() + Vector3::new(off[0], off[1], off[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense grid of points on the five visible faces of an axis-aligned box.
    fn box_points(center: Vector3<f64>, half: Vector3<f64>) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        let step = 0.005;
        let n = |h: f64| (2.0 * h / step).round() as i32;
        for i in 0..=n(half.x) {
            for j in 0..=n(half.y) {
                let x = -half.x + i as f64 * step;
                let y = -half.y + j as f64 * step;
                out.push(center + Vector3::new(x, y, half.z));
            }
        }
        for i in 0..=n(half.y) {
            for k in 0..=n(half.z) {
                let y = -half.y + i as f64 * step;
                let z = -half.z + k as f64 * step;
                out.push(center + Vector3::new(-half.x, y, z));
            }
        }
        out
    }

    fn scene(red: Vector3<f64>, green: Vector3<f64>) -> PointCloud {
        let mut pts = vec![Vector3::new(0.3, 0.3, 0.0), Vector3::new(-0.3, 0.2, 0.001)];
        pts.extend(box_points(red, Vector3::new(0.02, 0.02, 0.0125)));
        pts.extend(box_points(green, Vector3::new(0.04, 0.04, 0.0375)));
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn blobs_are_separated_and_described() {
        let red = Vector3::new(0.0, 0.25, 0.0125);
        let green = Vector3::new(0.0, -0.2, 0.0375);
        let blobs = extract_blobs(&scene(red, green), &BlobParams::default());
        assert_eq!(blobs.len(), 2);
        let d = blobs[0].descriptor(0.0);
        assert!((d[0] - 0.04).abs() < 1e-9 && (d[1] - 0.04).abs() < 1e-9);
        assert!((d[4] - 0.025).abs() < 1e-9);
        assert!((blobs[0].anchor() - Vector3::new(0.0, 0.25, 0.025)).norm() < 1e-9);
        assert!(blobs[1].max.z > 0.07);
    }

    #[test]
    fn predictor_picks_the_right_object_per_subtask() {
        let mut train: Vec<Vec<GazeSample>> = vec![Vec::new(), Vec::new()];
        let params = BlobParams::default();
        for i in 0..6 {
            let red = Vector3::new(0.01 * i as f64, 0.2 + 0.02 * i as f64, 0.0125);
            let green = Vector3::new(-0.01 * i as f64, -0.2, 0.0375);
            let blobs = extract_blobs(&scene(red, green), &params);
            train[0].push(GazeSample { blobs: blobs.clone(), gaze: red });
            train[1].push(GazeSample { blobs, gaze: green });
        }
        let gp = GazePredictor::fit(params, &train, 1).unwrap();
        // training scene reproduces the training gaze
        let g = gp.predict(&scene(train[0][2].gaze, Vector3::new(-0.02, -0.2, 0.0375)), 0).unwrap();
        assert!((g - train[0][2].gaze).norm() < 1e-12);
        // translated far outside the training positions
        let red = Vector3::new(0.17, 0.45, 0.0125);
        let green = Vector3::new(-0.18, -0.35, 0.0375);
        let s = scene(red, green);
        assert!((gp.predict(&s, 0).unwrap() - red).norm() < 1e-9);
        assert!((gp.predict(&s, 1).unwrap() - green).norm() < 1e-9);
        assert!(matches!(gp.predict(&s, 2), Err(PredictorError::SubtaskOutOfRange(2))));
    }
}
