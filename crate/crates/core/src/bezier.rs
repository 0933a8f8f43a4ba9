//! Three-point Bézier reaching curves in the 7-D pose chart.
//!
//! A reach is described by its start pose, its end (bottleneck) pose and a
//! bezier vector: the displacement from the start/end mean pose to the
//! control pose. Curves are evaluated in a chart anchored at the start pose:
//! position in world coordinates, orientation as the rotation vector relative
//! to the start orientation, gripper as a scalar.

use nalgebra::{SVector, Vector3};
use thiserror::Error;

use crate::geometry::{delta_between, exp_rotation, log_rotation, GeometryError, Pose7, PoseDelta7};

type Chart = SVector<f64, 7>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BezierError {
    #[error("parameter out of range: {0} not in [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("underdetermined fit: no interior samples")]
    Underdetermined,
    #[error("fit needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("fit parameters must start at 0 and end at 1")]
    BadEndpoints,
    #[error("timestamps must be strictly increasing (index {0})")]
    NonIncreasingTimestamps(usize),
    #[error("at least two timestamps are required")]
    TooFewTimestamps,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierReach {
    pub start: Pose7,
    pub end: Pose7,
    pub bezier_vector: PoseDelta7,
}

/// Output of [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierFit {
    pub bezier_vector: PoseDelta7,
    pub rms: f64,
}

fn to_chart(anchor: &Pose7, pose: &Pose7) -> Result<Chart, GeometryError> {
    let rel = anchor.orientation.inverse() * pose.orientation;
    if rel.quaternion().w.abs() < 1e-12 {
        return Err(GeometryError::AntipodalRotation);
    }
    let r = log_rotation(&rel);
    Ok(Chart::from_column_slice(&[pose.position.x, pose.position.y, pose.position.z, r.x, r.y, r.z, pose.gripper]))
}

fn from_chart(anchor: &Pose7, x: &Chart) -> Pose7 {
    let r = Vector3::new(x[3], x[4], x[5]);
    let q = anchor.orientation * exp_rotation(&r);
    Pose7::new(Vector3::new(x[0], x[1], x[2]), nalgebra::UnitQuaternion::new_normalize(q.into_inner()), x[6])
}

/// Componentwise mean of two poses: arithmetic mean of positions and grippers,
/// geodesic midpoint of orientations.
pub fn mean_pose(a: &Pose7, b: &Pose7) -> Result<Pose7, GeometryError> {
    let d = delta_between(a, b)?;
    Ok(Pose7::new(
        (a.position + b.position) * 0.5,
        nalgebra::UnitQuaternion::new_normalize((a.orientation * exp_rotation(&(d.drot * 0.5))).into_inner()),
        0.5 * (a.gripper + b.gripper),
    ))
}

impl BezierReach {
    pub fn new(start: Pose7, end: Pose7, bezier_vector: PoseDelta7) -> Self {
        Self { start, end, bezier_vector }
    }

    pub fn mean_pose(&self) -> Result<Pose7, BezierError> {
        Ok(mean_pose(&self.start, &self.end)?)
    }

    /// Control pose: mean pose offset by the bezier vector. Control poses are
    /// virtual, so the gripper is not clamped.
    pub fn control_pose(&self) -> Result<Pose7, BezierError> {
        Ok(self.mean_pose()?.oplus(&self.bezier_vector))
    }

    /// Pose at curve parameter `s`.
    pub fn eval(&self, s: f64) -> Result<Pose7, BezierError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(BezierError::ParameterOutOfRange(s));
        }
        if s == 0.0 {
            return Ok(self.start);
        }
        let p0 = to_chart(&self.start, &self.start)?;
        let p1 = to_chart(&self.start, &self.end)?;
        let c = to_chart(&self.start, &self.control_pose()?)?;
        let u = 1.0 - s;
        let x = p0 * (u * u) + c * (2.0 * s * u) + p1 * (s * s);
        Ok(from_chart(&self.start, &x))
    }

    /// Straight-line distance between the endpoints.
    pub fn chord(&self) -> f64 {
        (self.end.position - self.start.position).norm()
    }

    /// Parameter of the sample closest in position to `pose`, searched on a
    /// uniform grid of `resolution + 1` samples and refined by ternary search.
    pub fn project(&self, pose: &Pose7, resolution: usize) -> Result<f64, BezierError> {
        let resolution = resolution.max(2);
        let dist = |s: f64| -> Result<f64, BezierError> { Ok((self.eval(s)?.position - pose.position).norm_squared()) };
        let mut best = (0.0, dist(0.0)?);
        for i in 1..=resolution {
            let s = i as f64 / resolution as f64;
            let d = dist(s)?;
            if d < best.1 {
                best = (s, d);
            }
        }
        let step = 1.0 / resolution as f64;
        let (mut lo, mut hi) = ((best.0 - step).max(0.0), (best.0 + step).min(1.0));
        for _ in 0..30 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if dist(m1)? < dist(m2)? {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Least-squares bezier vector for samples `(s_i, pose_i)`.
///
/// Endpoints are the first and last poses. Because the curve is linear in the
/// control point, the minimizer is available in closed form per chart
/// coordinate.
pub fn fit(samples: &[(f64, Pose7)]) -> Result<BezierFit, BezierError> {
    if samples.len() < 3 {
        return Err(BezierError::TooFewSamples(samples.len()));
    }
    let (s_first, start) = samples[0];
    let (s_last, end) = samples[samples.len() - 1];
    if s_first != 0.0 || s_last != 1.0 {
        return Err(BezierError::BadEndpoints);
    }
    let p0 = to_chart(&start, &start)?;
    let p1 = to_chart(&start, &end)?;

    let mut num = Chart::zeros();
    let mut den = 0.0;
    let mut xs = Vec::with_capacity(samples.len());
    for (s, pose) in samples {
        if !(0.0..=1.0).contains(s) {
            return Err(BezierError::ParameterOutOfRange(*s));
        }
        let x = to_chart(&start, pose)?;
        let u = 1.0 - s;
        let w = 2.0 * s * u;
        num += (x - p0 * (u * u) - p1 * (s * s)) * w;
        den += w * w;
        xs.push((*s, x));
    }
    if den <= 0.0 {
        return Err(BezierError::Underdetermined);
    }
    let c = num / den;

    let sse: f64 = xs
        .iter()
        .map(|(s, x)| {
            let u = 1.0 - s;
            (p0 * (u * u) + c * (2.0 * s * u) + p1 * (s * s) - x).norm_squared()
        })
        .sum();
    let control = from_chart(&start, &c);
    let mean = mean_pose(&start, &end)?;
    Ok(BezierFit { bezier_vector: delta_between(&mean, &control)?, rms: (sse / xs.len() as f64).sqrt() })
}

/// Uniform-in-time curve parameters for strictly increasing timestamps.
pub fn parameterize(timestamps: &[f64]) -> Result<Vec<f64>, BezierError> {
    if timestamps.len() < 2 {
        return Err(BezierError::TooFewTimestamps);
    }
    for i in 1..timestamps.len() {
        if !(timestamps[i] > timestamps[i - 1]) {
            return Err(BezierError::NonIncreasingTimestamps(i));
        }
    }
    let t0 = timestamps[0];
    let span = timestamps[timestamps.len() - 1] - t0;
    let mut s: Vec<f64> = timestamps.iter().map(|t| (t - t0) / span).collect();
    let n = s.len();
    s[0] = 0.0;
    s[n - 1] = 1.0;
    Ok(s)
}
