use gazebot_core::dataset::{lint, load, save};
use gazebot_core::simenv::{scripted_expert, spawn, Condition, ExpertParams, ScenarioSpec};

#[test]
fn long_generated_demo_round_trips() {
    let spec = ScenarioSpec::pile_box();
    // a slow expert with long holds stretches the demo past 300 frames
    let params = ExpertParams { speed: 0.004, hold_steps: 40, grip_steps: 20, ..ExpertParams::default() };
    let world = spawn(&spec, Condition::Id, 11).unwrap();
    let (demo, end) = scripted_expert(&spec, world, &params, 11).unwrap();
    assert!(end.success(true).pile);
    assert!(demo.frames.len() >= 300, "{} frames", demo.frames.len());
    assert!(lint(&demo).is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("long.demo");
    save(&demo, &path).unwrap();
    assert_eq!(load(&path).unwrap(), demo);
}
