//! Gaze-based sub-task segmentation and predictivity-based bottleneck detection.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dataset::{Demonstration, SegmentAnnotation, SubtaskBounds};
use crate::geometry::{crop_gaze_cube, GeometryError, DEFAULT_CROP_SIDE};
use crate::predictors::{featurize, Head, HeadSpec, PredictorError, Regressor};

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("no stable gaze")]
    NoStableGaze,
    #[error("segment below minimum length: {len} steps, need {min}")]
    SegmentTooShort { len: usize, min: usize },
    #[error("invalid fixation parameters: {0}")]
    InvalidParams(String),
    #[error("losses and segment bounds disagree: {0}")]
    BadTrace(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixationParams {
    /// Maximum distance from the running centroid, meters.
    pub radius: f64,
    /// Minimum run length, steps.
    pub min_dwell: usize,
}

impl Default for FixationParams {
    fn default() -> Self {
        Self { radius: 0.05, min_dwell: 5 }
    }
}

impl FixationParams {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.radius > 0.0) {
            return Err(SegmentationError::InvalidParams(format!("radius must be positive, got {}", self.radius)));
        }
        if self.min_dwell == 0 {
            return Err(SegmentationError::InvalidParams("min_dwell must be at least 1".into()));
        }
        Ok(())
    }
}

/// A group of gaze samples around one fixation point.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationCluster {
    pub first: usize,
    pub last: usize,
    pub centroid: Vector3<f64>,
    /// Number of samples inside the member runs.
    pub members: usize,
}

/// Maximal runs whose samples stay within `radius` of the running centroid,
/// keeping only runs of at least `min_dwell` samples.
pub fn fixation_runs(gaze: &[Vector3<f64>], params: &FixationParams) -> Vec<FixationCluster> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < gaze.len() {
        let mut sum = gaze[i];
        let mut j = i + 1;
        while j < gaze.len() {
            let centroid = sum / (j - i) as f64;
            if (gaze[j] - centroid).norm() > params.radius {
                break;
            }
            sum += gaze[j];
            j += 1;
        }
        let len = j - i;
        if len >= params.min_dwell {
            runs.push(FixationCluster { first: i, last: j - 1, centroid: sum / len as f64, members: len });
            i = j;
        } else {
            i += 1;
        }
    }
    runs
}

/// Fixation runs with consecutive runs around the same point merged, so short
/// excursions between them are absorbed.
pub fn fixation_clusters(gaze: &[Vector3<f64>], params: &FixationParams) -> Vec<FixationCluster> {
    let mut out: Vec<FixationCluster> = Vec::new();
    for run in fixation_runs(gaze, params) {
        if let Some(prev) = out.last_mut() {
            if (prev.centroid - run.centroid).norm() <= params.radius {
                let n = (prev.members + run.members) as f64;
                prev.centroid = (prev.centroid * prev.members as f64 + run.centroid * run.members as f64) / n;
                prev.members += run.members;
                prev.last = run.last;
                continue;
            }
        }
        out.push(run);
    }
    out
}

/// Splits `[0, T]` into one segment per fixation cluster.
///
/// A new segment starts at the step after which the gaze never returns within
/// `radius` of the previous cluster, i.e. at the onset of the saccade.
pub fn segment_subtasks(
    gaze: &[Vector3<f64>],
    params: &FixationParams,
) -> Result<Vec<(usize, usize)>, SegmentationError> {
    params.validate()?;
    let clusters = fixation_clusters(gaze, params);
    if clusters.is_empty() {
        return Err(SegmentationError::NoStableGaze);
    }
    let mut starts = vec![0usize];
    for pair in clusters.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let mut b = next.first;
        while b > prev.last + 1 && (gaze[b - 1] - prev.centroid).norm() > params.radius {
            b -= 1;
        }
        starts.push(b);
    }
    let last = gaze.len() - 1;
    Ok(starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let e = starts.get(k + 1).map_or(last, |n| n - 1);
            (s, e)
        })
        .collect())
}

/// Fits the gaze-cloud action probe on every frame of every demonstration.
pub fn train_bottleneck_probe(
    features: &[Vec<f64>],
    actions: &[Vec<f64>],
    spec: HeadSpec,
) -> Result<Head, SegmentationError> {
    Ok(Head::fitted(spec, features, actions)?)
}

/// Per-step squared prediction error `|a_t - h(g_t)|^2`.
pub fn predictivity<R: Regressor>(
    features: &[Vec<f64>],
    actions: &[Vec<f64>],
    h: &R,
) -> Result<Vec<f64>, SegmentationError> {
    features
        .iter()
        .zip(actions)
        .map(|(x, a)| {
            let p = h.predict(x)?;
            Ok(p.iter().zip(a).map(|(p, a)| (a - p) * (a - p)).sum())
        })
        .collect()
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Centered moving average of width `w`, truncated at the ends.
pub fn smooth(values: &[f64], w: usize) -> Vec<f64> {
    let n = values.len();
    let before = w / 2;
    let after = w.saturating_sub(1) - before;
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(before);
            let hi = (t + after).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bottleneck {
    /// Offset into the segment.
    pub index: usize,
    pub median: f64,
    /// True when no sustained sub-median run existed.
    pub fallback: bool,
}

/// Earliest step starting `w` consecutive smoothed losses below the segment
/// median; the first minimum of the smoothed losses if there is none.
pub fn detect_bottleneck(losses: &[f64], w: usize) -> Result<Bottleneck, SegmentationError> {
    let w = w.max(1);
    if losses.len() < 2 * w {
        return Err(SegmentationError::SegmentTooShort { len: losses.len(), min: 2 * w });
    }
    let m = median(losses);
    let sm = smooth(losses, w);
    for t in 0..=sm.len() - w {
        if sm[t..t + w].iter().all(|v| *v < m) {
            return Ok(Bottleneck { index: t, median: m, fallback: false });
        }
    }
    let mut best = 0;
    for (t, v) in sm.iter().enumerate() {
        if *v < sm[best] {
            best = t;
        }
    }
    log::info!("no sustained sub-median run; falling back to the smoothed minimum at {best}");
    Ok(Bottleneck { index: best, median: m, fallback: true })
}

/// Segments a demonstration and places one bottleneck per segment.
pub fn annotate(
    gaze: &[Vector3<f64>],
    losses: &[f64],
    params: &FixationParams,
    window: usize,
) -> Result<(SegmentAnnotation, Vec<Bottleneck>), SegmentationError> {
    if gaze.len() != losses.len() {
        return Err(SegmentationError::BadTrace(format!("{} gaze samples but {} losses", gaze.len(), losses.len())));
    }
    let mut subtasks = Vec::new();
    let mut found = Vec::new();
    for (s, e) in segment_subtasks(gaze, params)? {
        let b = detect_bottleneck(&losses[s..=e], window)?;
        subtasks.push(SubtaskBounds { start: s, end: e, bottleneck: s + b.index });
        found.push(b);
    }
    Ok((SegmentAnnotation::new(subtasks), found))
}

/// Settings of the dataset-level segmentation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationConfig {
    pub fixation: FixationParams,
    /// Smoothing and run length of the median rule.
    pub window: usize,
    pub probe: HeadSpec,
    pub resolution: usize,
    pub crop_side: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            fixation: FixationParams::default(),
            window: 3,
            probe: HeadSpec::Knn { k: 5 },
            resolution: 8,
            crop_side: DEFAULT_CROP_SIDE,
        }
    }
}

/// Segmentation of one demonstration with the trace that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSegmentation {
    pub annotation: SegmentAnnotation,
    pub bottlenecks: Vec<Bottleneck>,
    pub losses: Vec<f64>,
}

/// Trains one probe on every frame of every demonstration (crops at the
/// recorded gaze, targets the 14-D action) and annotates each demonstration.
pub fn segment_dataset(
    demos: &[Demonstration],
    cfg: &SegmentationConfig,
) -> Result<Vec<DemoSegmentation>, SegmentationError> {
    cfg.fixation.validate()?;
    if demos.is_empty() {
        return Ok(Vec::new());
    }
    let mut features = Vec::new();
    let mut actions = Vec::new();
    for d in demos {
        for f in &d.frames {
            let g = crop_gaze_cube(&f.cloud, &f.gaze_3d, cfg.crop_side)?;
            features.push(featurize(&g, cfg.resolution)?.grid);
            actions.push(f.action_vector().to_vec());
        }
    }
    let h = train_bottleneck_probe(&features, &actions, cfg.probe)?;
    let losses = predictivity(&features, &actions, &h)?;
    let mut out = Vec::with_capacity(demos.len());
    let mut offset = 0;
    for d in demos {
        let l = losses[offset..offset + d.len()].to_vec();
        offset += d.len();
        let (annotation, bottlenecks) = annotate(&d.gaze_trace(), &l, &cfg.fixation, cfg.window)?;
        out.push(DemoSegmentation { annotation, bottlenecks, losses: l });
    }
    Ok(out)
}
