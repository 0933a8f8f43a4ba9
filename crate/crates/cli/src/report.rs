//! Segmentation reports against generator ground truth.

use anyhow::Result;
use gazebot_core::dataset::{Demonstration, SegmentAnnotation};
use gazebot_core::segmentation::DemoSegmentation;

/// One detected sub-task compared with the ground truth at the same index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRow {
    pub demo: String,
    pub k: usize,
    pub start: usize,
    pub end: usize,
    pub bottleneck: usize,
    pub truth: Option<usize>,
    pub abs_delta: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub rows: Vec<SegmentRow>,
    /// Demos whose detected sub-task count equals the ground-truth count.
    pub count_matches: usize,
    /// Demos that carry ground truth.
    pub with_truth: usize,
    pub demos: usize,
}

pub const SEGMENT_HEADER: [&str; 7] = ["demo", "k", "s", "e", "b", "b_true", "abs_delta_b"];

/// Nearest-rank quantile of sorted data.
pub fn quantile(sorted: &[usize], q: f64) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn report_segments(items: &[(&str, &Demonstration, &SegmentAnnotation)]) -> SegmentReport {
    let mut rows = Vec::new();
    let mut count_matches = 0;
    let mut with_truth = 0;
    for (name, demo, ann) in items {
        let truth = demo.meta.ground_truth.as_ref();
        if let Some(gt) = truth {
            with_truth += 1;
            count_matches += usize::from(gt.subtasks.len() == ann.subtasks.len());
        }
        for (k, b) in ann.subtasks.iter().enumerate() {
            let t = truth.and_then(|gt| gt.subtasks.get(k)).map(|g| g.bottleneck);
            rows.push(SegmentRow {
                demo: name.to_string(),
                k,
                start: b.start,
                end: b.end,
                bottleneck: b.bottleneck,
                truth: t,
                abs_delta: t.map(|t| t.abs_diff(b.bottleneck)),
            });
        }
    }
    SegmentReport { rows, count_matches, with_truth, demos: items.len() }
}

impl SegmentReport {
    pub fn sorted_deltas(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.rows.iter().filter_map(|r| r.abs_delta).collect();
        d.sort_unstable();
        d
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SEGMENT_HEADER)?;
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.demo.clone(),
                r.k.to_string(),
                r.start.to_string(),
                r.end.to_string(),
                r.bottleneck.to_string(),
                opt(r.truth),
                opt(r.abs_delta),
            ])?;
        }
        Ok(w.into_inner()?)
    }

    /// Human-readable summary lines.
    pub fn summary(&self) -> String {
        let d = self.sorted_deltas();
        let q = |p: f64| quantile(&d, p).map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        format!(
            "demos {}\nsub-task count matches ground truth: {}/{}\n|db| P50 {} P90 {} max {}\n",
            self.demos,
            self.count_matches,
            self.with_truth,
            q(0.5),
            q(0.9),
            q(1.0)
        )
    }
}

/// Per-step predictivity trace of one demo: step, loss, segment median and
/// detected bottleneck step. Median and bottleneck are blank outside sub-tasks.
pub fn trace_csv(seg: &DemoSegmentation) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss", "median", "b_k"])?;
    for (t, loss) in seg.losses.iter().enumerate() {
        let k = seg.annotation.subtask_of(t);
        let median = k.and_then(|k| seg.bottlenecks.get(k)).map(|b| format!("{:?}", b.median));
        let b = k.map(|k| seg.annotation.subtasks[k].bottleneck.to_string());
        w.write_record([t.to_string(), format!("{loss:?}"), median.unwrap_or_default(), b.unwrap_or_default()])?;
    }
    Ok(w.into_inner()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_quantiles() {
        let d = [0, 0, 1, 1, 1, 2, 2, 2, 3, 9];
        assert_eq!(quantile(&d, 0.9), Some(3));
        assert_eq!(quantile(&d, 0.5), Some(1));
        assert_eq!(quantile(&d, 1.0), Some(9));
        assert_eq!(quantile(&[], 0.9), None);
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = report_segments(&[]);
        assert_eq!(r.to_csv().unwrap(), b"demo,k,s,e,b,b_true,abs_delta_b\n");
    }
}
