use gazebot_core::dataset::Demonstration;
use gazebot_core::segmentation::{segment_dataset, SegmentationConfig};
use gazebot_core::simenv::{scripted_expert, spawn, Condition, ExpertParams, ScenarioSpec};

fn demos(n: u64) -> Vec<Demonstration> {
    let spec = ScenarioSpec::pile_box();
    (0..n)
        .map(|s| {
            scripted_expert(&spec, spawn(&spec, Condition::Id, s).unwrap(), &ExpertParams::default(), s).unwrap().0
        })
        .collect()
}

#[test]
fn detected_bottlenecks_track_ground_truth() {
    let demos = demos(30);
    let segs = segment_dataset(&demos, &SegmentationConfig::default()).unwrap();
    assert_eq!(segs.len(), demos.len());
    let mut deltas = Vec::new();
    for (d, s) in demos.iter().zip(&segs) {
        let gt = &d.meta.ground_truth.as_ref().unwrap().subtasks;
        assert_eq!(s.annotation.len(), gt.len(), "seed {}", d.meta.seed);
        s.annotation.validate(d.last_step()).unwrap();
        assert_eq!(s.losses.len(), d.len());
        for (a, g) in s.annotation.subtasks.iter().zip(gt) {
            assert!(a.start <= a.bottleneck && a.bottleneck <= a.end);
            deltas.push(a.bottleneck.abs_diff(g.bottleneck));
        }
    }
    deltas.sort_unstable();
    let p90 = deltas[(0.9 * deltas.len() as f64).ceil() as usize - 1];
    assert!(p90 <= 2, "P90 |db| = {p90}, {deltas:?}");
}

#[test]
fn empty_dataset_segments_to_nothing() {
    assert!(segment_dataset(&[], &SegmentationConfig::default()).unwrap().is_empty());
}
