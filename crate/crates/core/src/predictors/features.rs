//! Fixed-length feature vectors computed from point clouds.

use nalgebra::{Vector2, Vector3};

use crate::geometry::{CameraModel, GazeCloud, PointCloud, Pose7};
use crate::predictors::PredictorError;

/// Normalized occupancy counts over the gaze cube.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeature {
    pub resolution: usize,
    /// `R^3` entries, index `(ix * R + iy) * R + iz`.
    pub grid: Vec<f64>,
    /// Number of points binned.
    pub count: usize,
}

impl VoxelFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.grid
    }
}

/// Cell index along one axis: closed lower bound, open upper bound, last cell closed.
pub fn cell_index(coord: f64, side: f64, resolution: usize) -> usize {
    let u = (coord + side / 2.0) / side * resolution as f64;
    if u <= 0.0 {
        0
    } else {
        (u.floor() as usize).min(resolution - 1)
    }
}

/// Bins a gaze cloud into an `R^3` grid spanning its cube.
pub fn featurize(g: &GazeCloud, resolution: usize) -> Result<VoxelFeature, PredictorError> {
    if resolution == 0 {
        return Err(PredictorError::InvalidResolution);
    }
    let r = resolution;
    let mut grid = vec![0.0; r * r * r];
    for p in &g.points {
        let ix = cell_index(p.x, g.side, r);
        let iy = cell_index(p.y, g.side, r);
        let iz = cell_index(p.z, g.side, r);
        grid[(ix * r + iy) * r + iz] += 1.0;
    }
    let count = g.points.len();
    if count > 0 {
        let inv = 1.0 / count as f64;
        grid.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(VoxelFeature { resolution, grid, count })
}

/// World-frame occupancy grid over the workspace volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneGrid {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub dims: [usize; 3],
}

impl SceneGrid {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized counts of the points falling inside the grid volume.
pub fn scene_summary(cloud: &PointCloud, grid: &SceneGrid) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims;
    let mut out = vec![0.0; grid.len()];
    let ext = grid.max - grid.min;
    let mut n = 0usize;
    for p in cloud.points() {
        let u = (p - grid.min).component_div(&ext);
        if u.iter().any(|c| !(0.0..1.0).contains(c)) {
            continue;
        }
        let ix = ((u.x * nx as f64) as usize).min(nx - 1);
        let iy = ((u.y * ny as f64) as usize).min(ny - 1);
        let iz = ((u.z * nz as f64) as usize).min(nz - 1);
        out[(ix * ny + iy) * nz + iz] += 1.0;
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Image-space crop around the gaze pixel, the analog of a conventional 2D crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarCrop {
    /// Half-width of the square pixel window.
    pub half_window: f64,
    pub bins: usize,
}

/// Per-bin point fraction and mean camera depth inside the pixel window.
///
/// Depth is absolute, so the feature changes when an object moves even if its
/// appearance in the window does not.
pub fn planar_feature(cloud: &PointCloud, cam: &CameraModel, gaze_pixel: &Vector2<f64>, crop: &PlanarCrop) -> Vec<f64> {
    let b = crop.bins;
    let mut counts = vec![0.0; b * b];
    let mut depth = vec![0.0; b * b];
    let w = 2.0 * crop.half_window;
    let mut n = 0usize;
    for p in cloud.points() {
        let Some((px, d)) = cam.project(p) else {
            continue;
        };
        let u = (px.x - gaze_pixel.x + crop.half_window) / w;
        let v = (px.y - gaze_pixel.y + crop.half_window) / w;
        if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
            continue;
        }
        let i = ((u * b as f64) as usize).min(b - 1) * b + ((v * b as f64) as usize).min(b - 1);
        counts[i] += 1.0;
        depth[i] += d;
        n += 1;
    }
    for i in 0..b * b {
        if counts[i] > 0.0 {
            depth[i] /= counts[i];
            counts[i] /= n as f64;
        }
    }
    counts.extend(depth);
    counts
}

/// Position, rotation vector and gripper of a pose scaled into feature units.
pub fn pose_features(pose: &Pose7, scale: f64) -> [f64; 7] {
    let r = crate::geometry::log_rotation(&pose.orientation);
    [
        pose.position.x * scale,
        pose.position.y * scale,
        pose.position.z * scale,
        r.x * scale,
        r.y * scale,
        r.z * scale,
        pose.gripper * scale,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::crop_gaze_cube;
    use proptest::prelude::*;

    fn cloud(points: Vec<Vector3<f64>>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn empty_cloud_gives_zero_grid() {
        let g = crop_gaze_cube(&PointCloud::empty(), &Vector3::zeros(), 0.2).unwrap();
        let f = featurize(&g, 8).unwrap();
        assert_eq!(f.count, 0);
        assert!(f.grid.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn origin_lands_in_cell_four() {
        let g = crop_gaze_cube(&cloud(vec![Vector3::zeros()]), &Vector3::zeros(), 0.2).unwrap();
        let f = featurize(&g, 8).unwrap();
        let idx = (4 * 8 + 4) * 8 + 4;
        assert_eq!(f.grid[idx], 1.0);
        assert_eq!(f.grid.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn boundary_rule() {
        assert_eq!(cell_index(-0.1, 0.2, 8), 0);
        assert_eq!(cell_index(0.1, 0.2, 8), 7);
        assert_eq!(cell_index(0.08, 0.2, 8), 7);
        assert_eq!(cell_index(0.07, 0.2, 8), 6);
        assert_eq!(cell_index(-0.0999, 0.2, 8), 0);
    }

    proptest! {
        #[test]
        fn grid_sums_to_one(pts in proptest::collection::vec((-0.1f64..0.1, -0.1f64..0.1, -0.1f64..0.1), 1..200)) {
            let c = cloud(pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect());
            let g = crop_gaze_cube(&c, &Vector3::zeros(), 0.2).unwrap();
            let f = featurize(&g, 8).unwrap();
            prop_assert!((f.grid.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(f.grid.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn joint_translation_leaves_feature_unchanged(
            pts in proptest::collection::vec((-0.12f64..0.12, -0.12f64..0.12, -0.12f64..0.12), 1..100),
            vx in -4i32..4, vy in -4i32..4,
        ) {
            // dyadic shifts keep the arithmetic exact
            let v = Vector3::new(vx as f64 * 0.125, vy as f64 * 0.25, 0.0);
            let c = cloud(pts.into_iter().map(|(x, y, z)| Vector3::new(x, y, z)).collect()).quantized();
            let g = Vector3::new(0.0078125, -0.015625, 0.0);
            let a = featurize(&crop_gaze_cube(&c, &g, 0.2).unwrap(), 8).unwrap();
            let b = featurize(&crop_gaze_cube(&c.translated(&v), &(g + v), 0.2).unwrap(), 8).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn scene_summary_counts_inside_only() {
        let grid = SceneGrid { min: Vector3::new(0.0, 0.0, 0.0), max: Vector3::new(1.0, 1.0, 1.0), dims: [2, 2, 2] };
        let s = scene_summary(
            &cloud(vec![Vector3::new(0.1, 0.1, 0.1), Vector3::new(0.9, 0.1, 0.1), Vector3::new(2.0, 0.1, 0.1)]),
            &grid,
        );
        assert_eq!(s[0], 0.5);
        assert_eq!(s[4], 0.5);
        assert_eq!(s.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn planar_feature_reports_depth() {
        let cam = CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, nalgebra::Isometry3::identity()).unwrap();
        let c = cloud(vec![Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 3.0)]);
        let f = planar_feature(&c, &cam, &Vector2::new(50.0, 50.0), &PlanarCrop { half_window: 10.0, bins: 2 });
        assert_eq!(f.len(), 8);
        assert_eq!(f[3], 1.0);
        assert_eq!(f[4 + 3], 2.5);
    }
}
