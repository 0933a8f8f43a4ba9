//! Demonstration records, segmentation annotations and their on-disk format.

pub(crate) mod format;

use std::fmt;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::bezier::{self, BezierError};
use crate::geometry::{delta_between, PointCloud, Pose7, PoseDelta7};

pub use format::{
    decode_bytes, encode_bytes, load, load_annotation, save, save_annotation, ANNOTATION_MAGIC, DEMO_MAGIC,
    FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("malformed field `{field}` at line {line}: {reason}")]
    Malformed { field: String, line: usize, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("invalid demonstration: {0}")]
    InvalidDemo(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("degenerate reaching phase in sub-task {0}")]
    DegenerateReach(usize),
    #[error("sub-task index {0} out of range")]
    SubtaskOutOfRange(usize),
    #[error("point {0} is not representable as f32; quantize the cloud before saving")]
    NotF32Representable(usize),
    #[error(transparent)]
    Bezier(#[from] BezierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub fn index(self) -> usize {
        match self {
            Arm::Left => 0,
            Arm::Right => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Left => "left",
            Arm::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        match s {
            "left" => Some(Arm::Left),
            "right" => Some(Arm::Right),
            _ => None,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One 10 Hz record.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: usize,
    pub cloud: PointCloud,
    pub left: Pose7,
    pub right: Pose7,
    pub gaze_pixel: Vector2<f64>,
    pub gaze_3d: Vector3<f64>,
    /// Expert relative actions, `[left, right]`.
    pub expert_action: [PoseDelta7; 2],
}

impl Frame {
    pub fn arm(&self, arm: Arm) -> &Pose7 {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }

    pub fn arms(&self) -> [Pose7; 2] {
        [self.left, self.right]
    }

    /// Both arm actions concatenated into a 14-vector.
    pub fn action_vector(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[..7].copy_from_slice(&self.expert_action[0].to_array());
        out[7..].copy_from_slice(&self.expert_action[1].to_array());
        out
    }
}

/// `[start, end]` step range of one sub-task with its bottleneck step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubtaskBounds {
    pub start: usize,
    pub end: usize,
    pub bottleneck: usize,
}

/// Generator ground truth stored alongside synthetic demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub subtasks: Vec<SubtaskBounds>,
    pub bezier_vectors: Vec<PoseDelta7>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoMeta {
    pub task: String,
    pub seed: u64,
    pub scenario: String,
    /// Acting arm per sub-task.
    pub acting_arms: Vec<Arm>,
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub frames: Vec<Frame>,
    pub meta: DemoMeta,
}

impl Demonstration {
    pub fn new(frames: Vec<Frame>, meta: DemoMeta) -> Result<Self, DatasetError> {
        let demo = Self { frames, meta };
        demo.validate()?;
        Ok(demo)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.frames.len() < 2 {
            return Err(DatasetError::InvalidDemo(format!("needs at least 2 frames, got {}", self.frames.len())));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.t != i {
                return Err(DatasetError::InvalidDemo(format!("frame {i} has step index {}", f.t)));
            }
        }
        if let Some(gt) = &self.meta.ground_truth {
            SegmentAnnotation::new(gt.subtasks.clone())
                .validate(self.last_step())
                .map_err(|e| DatasetError::InvalidDemo(format!("ground truth: {e}")))?;
        }
        Ok(())
    }

    /// Final step index `T`.
    pub fn last_step(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn acting_arm(&self, k: usize) -> Arm {
        self.meta.acting_arms.get(k).copied().unwrap_or(Arm::Left)
    }

    pub fn gaze_trace(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f.gaze_3d).collect()
    }
}

/// Per-sub-task `(s_k, e_k, b_k)` triples partitioning `[0, T]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentAnnotation {
    pub subtasks: Vec<SubtaskBounds>,
}

impl SegmentAnnotation {
    pub fn new(subtasks: Vec<SubtaskBounds>) -> Self {
        Self { subtasks }
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    /// Checks the partition invariants against a demonstration ending at step `last`.
    pub fn validate(&self, last: usize) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidAnnotation(m));
        let Some(first) = self.subtasks.first() else {
            return bad("no sub-tasks".into());
        };
        if first.start != 0 {
            return bad(format!("first sub-task starts at {}", first.start));
        }
        let tail = self.subtasks[self.subtasks.len() - 1];
        if tail.end != last {
            return bad(format!("last sub-task ends at {} but T = {last}", tail.end));
        }
        for (k, b) in self.subtasks.iter().enumerate() {
            if !(b.start <= b.bottleneck && b.bottleneck <= b.end) {
                return bad(format!(
                    "sub-task {k}: need s <= b <= e, got s={} b={} e={}",
                    b.start, b.bottleneck, b.end
                ));
            }
            if k + 1 < self.subtasks.len() && self.subtasks[k + 1].start != b.end + 1 {
                return bad(format!(
                    "sub-task {} starts at {} but previous ends at {}",
                    k + 1,
                    self.subtasks[k + 1].start,
                    b.end
                ));
            }
        }
        Ok(())
    }

    /// Index of the sub-task containing step `t`.
    pub fn subtask_of(&self, t: usize) -> Option<usize> {
        self.subtasks.iter().position(|b| b.start <= t && t <= b.end)
    }
}

/// Acting-arm poses over frames `[s_k, b_k - 1]` with uniform-in-time parameters.
pub fn extract_reaching_segment(
    demo: &Demonstration,
    ann: &SegmentAnnotation,
    k: usize,
) -> Result<Vec<(f64, Pose7)>, DatasetError> {
    let b = ann.subtasks.get(k).ok_or(DatasetError::SubtaskOutOfRange(k))?;
    if b.bottleneck <= b.start {
        return Err(DatasetError::DegenerateReach(k));
    }
    let arm = demo.acting_arm(k);
    let steps: Vec<f64> = (b.start..b.bottleneck).map(|t| t as f64).collect();
    if steps.len() < 2 {
        return Ok(vec![(0.0, *demo.frames[b.start].arm(arm))]);
    }
    let s = bezier::parameterize(&steps)?;
    Ok(s.into_iter().zip(b.start..b.bottleneck).map(|(s, t)| (s, *demo.frames[t].arm(arm))).collect())
}

/// One invariant violation found by [`lint`].
#[derive(Debug, Clone, PartialEq)]
pub struct LintIssue {
    pub step: Option<usize>,
    pub message: String,
}

impl fmt::Display for LintIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(t) => write!(f, "step {t}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks the structural and action-consistency invariants of a demonstration.
pub fn lint(demo: &Demonstration) -> Vec<LintIssue> {
    let mut issues = Vec::new();
    if let Err(e) = demo.validate() {
        issues.push(LintIssue { step: None, message: e.to_string() });
        return issues;
    }
    let tol = 1e-9;
    for t in 0..demo.frames.len() {
        let f = &demo.frames[t];
        for arm in [Arm::Left, Arm::Right] {
            let action = f.expert_action[arm.index()];
            let expected = if t + 1 < demo.frames.len() {
                match delta_between(f.arm(arm), demo.frames[t + 1].arm(arm)) {
                    Ok(d) => d,
                    Err(e) => {
                        issues.push(LintIssue { step: Some(t), message: format!("{arm} arm: {e}") });
                        continue;
                    }
                }
            } else {
                PoseDelta7::zero()
            };
            let err = action.to_array().iter().zip(expected.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > tol {
                issues.push(LintIssue {
                    step: Some(t),
                    message: format!("{arm} arm expert action deviates from pose difference by {err:.3e}"),
                });
            }
        }
    }
    issues
}

/// Lints an annotation against its demonstration.
pub fn lint_annotation(demo: &Demonstration, ann: &SegmentAnnotation) -> Vec<LintIssue> {
    match ann.validate(demo.last_step()) {
        Ok(()) => Vec::new(),
        Err(e) => vec![LintIssue { step: None, message: e.to_string() }],
    }
}

/// Loads every `*.demo` file in a directory, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Demonstration)>, DatasetError> {
    let mut out = Vec::new();
    for name in demo_names(dir)? {
        let demo = load(&dir.join(format!("{name}.demo")))?;
        out.push((name, demo));
    }
    Ok(out)
}

/// Stems of the `*.demo` files in `dir`, sorted.
pub fn demo_names(dir: &Path) -> Result<Vec<String>, DatasetError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "demo"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    Ok(names)
}
