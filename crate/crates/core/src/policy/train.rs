use crate::bezier;
use crate::dataset::{Arm, Demonstration, SegmentAnnotation};
use crate::geometry::{log_rotation, CameraModel};
use crate::predictors::{
    extract_blobs, offset_target, progress_label, BlobParams, GazePredictor, GazeSample, Head, HeadSpec,
};

use super::{
    bezier_features, bezier_target, direct_features, global_features, local_features, Observation, Policy, PolicyError,
    PolicyParams, Preset, SubtaskHeads,
};

/// Demonstrations with their segmentations and the camera they were recorded with.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub demos: &'a [Demonstration],
    pub annotations: &'a [SegmentAnnotation],
    pub camera: &'a CameraModel,
}

#[derive(Default)]
struct Rows {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl Rows {
    fn push(&mut self, x: Vec<f64>, y: Vec<f64>) {
        self.x.push(x);
        self.y.push(y);
    }

    fn knn(&self, k: usize) -> Result<Head, PolicyError> {
        let k = k.min(self.x.len()).max(1);
        Ok(Head::fitted(HeadSpec::Knn { k }, &self.x, &self.y)?)
    }

    fn ridge(&self, lambda: f64) -> Result<Head, PolicyError> {
        Ok(Head::fitted(HeadSpec::Ridge { lambda }, &self.x, &self.y)?)
    }
}

#[derive(Default)]
struct SubtaskRows {
    arms: Vec<Arm>,
    bottleneck: Rows,
    bezier: Rows,
    action: Rows,
    progress: Rows,
    reach: Rows,
    phase: Rows,
    gaze: Vec<GazeSample>,
}

/// Number of sub-tasks shared by most annotations; ties go to the smaller count.
fn modal_count(annotations: &[SegmentAnnotation]) -> Option<usize> {
    let mut counts = std::collections::BTreeMap::new();
    for a in annotations.iter().filter(|a| !a.is_empty()) {
        *counts.entry(a.len()).or_insert(0usize) += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(n, _)| n)
}

/// Fits every head the preset needs.
///
/// Demonstrations whose segmentation has a different number of sub-tasks
/// than the majority are skipped. Crops are taken at the recorded gaze.
pub fn train(preset: Preset, params: &PolicyParams, data: &TrainingData<'_>) -> Result<Policy, PolicyError> {
    let variant = preset.variant();
    if data.demos.len() != data.annotations.len() {
        return Err(PolicyError::NoTrainingData(format!(
            "{} demonstrations but {} annotations",
            data.demos.len(),
            data.annotations.len()
        )));
    }
    let n_seg = modal_count(data.annotations)
        .ok_or_else(|| PolicyError::NoTrainingData("no segmented demonstrations".into()))?;
    let blob_params = BlobParams::default();
    let mut rows: Vec<SubtaskRows> = (0..n_seg).map(|_| SubtaskRows::default()).collect();
    let h = params.horizon.max(1);

    for (demo, ann) in data.demos.iter().zip(data.annotations) {
        if ann.len() != n_seg {
            log::warn!("skipping demo seed {}: {} sub-tasks instead of {n_seg}", demo.meta.seed, ann.len());
            continue;
        }
        ann.validate(demo.last_step())?;
        let local: Vec<Vec<f64>> = demo
            .frames
            .iter()
            .map(|f| {
                let obs = Observation { cloud: &f.cloud, arms: f.arms(), camera: data.camera };
                local_features(&variant, params, &obs, &f.gaze_3d)
            })
            .collect::<Result<_, _>>()?;
        for (k, b) in ann.subtasks.iter().enumerate() {
            let r = &mut rows[k];
            let arm = demo.acting_arm(k);
            r.arms.push(arm);
            let target = *demo.frames[b.bottleneck].arm(arm);
            for t in b.start..b.bottleneck.max(b.start + 1) {
                let f = &demo.frames[t];
                if variant.direct_bottleneck {
                    let rv = log_rotation(&target.orientation);
                    r.bottleneck.push(
                        direct_features(&local[t], &f.gaze_3d, params.direct_gaze_weight),
                        vec![target.position.x, target.position.y, target.position.z, rv.x, rv.y, rv.z, target.gripper],
                    );
                } else {
                    r.bottleneck.push(local[t].clone(), offset_target(&f.gaze_3d, &target)?.to_array().to_vec());
                }
                if b.bottleneck >= t + 2 {
                    let steps: Vec<f64> = (t..=b.bottleneck).map(|i| i as f64).collect();
                    let s = bezier::parameterize(&steps)?;
                    let samples: Vec<_> =
                        s.into_iter().zip(t..=b.bottleneck).map(|(s, i)| (s, *demo.frames[i].arm(arm))).collect();
                    let fit = bezier::fit(&samples)?;
                    r.bezier.push(
                        bezier_features(&local[t], f.arm(arm), &f.gaze_3d),
                        bezier_target(
                            &fit.bezier_vector,
                            (demo.frames[b.bottleneck].arm(arm).position - f.arm(arm).position).norm(),
                        ),
                    );
                }
                if variant.parametric_reach && t < b.bottleneck {
                    r.reach.push(global_features(params, &f.cloud, f.arm(arm)), f.action_vector().to_vec());
                }
            }
            for t in b.bottleneck..=b.end {
                let mut y = Vec::with_capacity(14 * h);
                for j in 0..h {
                    match demo.frames.get(t + j).filter(|_| t + j <= b.end) {
                        Some(f) => y.extend_from_slice(&f.action_vector()),
                        None => y.extend_from_slice(&[0.0; 14]),
                    }
                }
                r.action.push(local[t].clone(), y);
            }
            for t in b.start..=b.end {
                r.progress.push(local[t].clone(), vec![progress_label(t, b.start, b.end)]);
                if variant.parametric_reach {
                    r.phase.push(local[t].clone(), vec![if t >= b.bottleneck { 1.0 } else { 0.0 }]);
                }
                if (t - b.start) % params.gaze_stride.max(1) == 0 {
                    let f = &demo.frames[t];
                    r.gaze.push(GazeSample { blobs: extract_blobs(&f.cloud, &blob_params), gaze: f.gaze_3d });
                }
            }
        }
    }

    let gaze_sets: Vec<Vec<GazeSample>> = rows.iter_mut().map(|r| std::mem::take(&mut r.gaze)).collect();
    if gaze_sets.iter().any(|g| g.is_empty()) {
        return Err(PolicyError::NoTrainingData("a sub-task has no frames".into()));
    }
    let gaze = GazePredictor::fit(blob_params, &gaze_sets, params.k)?;

    let mut subtasks = Vec::with_capacity(n_seg);
    for (k, r) in rows.iter().enumerate() {
        if r.bottleneck.x.is_empty() || r.action.x.is_empty() {
            return Err(PolicyError::NoTrainingData(format!("sub-task {k} has no samples")));
        }
        if r.bezier.x.is_empty() {
            return Err(PolicyError::NoTrainingData(format!("sub-task {k} has no reach long enough to fit a curve")));
        }
        let left = r.arms.iter().filter(|a| **a == Arm::Left).count();
        let arm = if 2 * left >= r.arms.len() { Arm::Left } else { Arm::Right };
        subtasks.push(SubtaskHeads {
            arm,
            bottleneck: if variant.direct_bottleneck {
                r.bottleneck.knn(params.k)?
            } else {
                r.bottleneck.ridge(params.lambda)?
            },
            bezier: r.bezier.ridge(params.bezier_lambda)?,
            action: r.action.knn(params.k)?,
            progress: r.progress.knn(params.k)?,
            reach: if variant.parametric_reach { Some(r.reach.knn(params.k)?) } else { None },
            phase: if variant.parametric_reach { Some(r.phase.knn(params.k)?) } else { None },
        });
    }
    Ok(Policy { preset, variant, params: *params, gaze, subtasks })
}
