use std::collections::BTreeMap;
use std::sync::OnceLock;

use gazebot_core::dataset::{Demonstration, SegmentAnnotation};
use gazebot_core::geometry::{PointCloud, QUANTUM};
use gazebot_core::policy::{
    rollout, train, ExecutorState, Observation, Phase, Policy, PolicyParams, PolicyVariant, Preset, RolloutParams,
    TrainingData,
};
use gazebot_core::predictors::predict_offset;
use gazebot_core::simenv::{
    expert_bottlenecks, render_seeded, scripted_expert, spawn, Condition, ExpertParams, ScenarioSpec, World,
};
use nalgebra::Vector3;

struct Fixture {
    spec: ScenarioSpec,
    policies: BTreeMap<Preset, Policy>,
}

fn truth(demo: &Demonstration) -> SegmentAnnotation {
    SegmentAnnotation::new(demo.meta.ground_truth.as_ref().unwrap().subtasks.clone())
}

fn demos(spec: &ScenarioSpec, seeds: std::ops::Range<u64>) -> Vec<Demonstration> {
    seeds
        .map(|s| scripted_expert(spec, spawn(spec, Condition::Id, s).unwrap(), &ExpertParams::default(), s).unwrap().0)
        .collect()
}

/// Policies trained on ground-truth annotations of 16 demos.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = ScenarioSpec::pile_box();
        let demos = demos(&spec, 0..16);
        let anns: Vec<_> = demos.iter().map(truth).collect();
        let data = TrainingData { demos: &demos, annotations: &anns, camera: &spec.camera };
        let policies = [Preset::Gazebot, Preset::Ablation3, Preset::Ablation4]
            .into_iter()
            .map(|p| (p, train(p, &PolicyParams::default(), &data).unwrap()))
            .collect();
        Fixture { spec, policies }
    })
}

fn noiseless(spec: &ScenarioSpec) -> ScenarioSpec {
    let mut s = spec.clone();
    s.render.noise = 0.0;
    s
}

fn observe<'a>(cloud: &'a PointCloud, world: &World, spec: &'a ScenarioSpec) -> Observation<'a> {
    Observation { cloud, arms: world.arms, camera: &spec.camera }
}

fn on_grid(v: &Vector3<f64>) -> Vector3<f64> {
    v.map(|x| (x / QUANTUM).round() * QUANTUM)
}

#[test]
fn bottleneck_ignores_arm_poses() {
    let f = fixture();
    let p = &f.policies[&Preset::Gazebot];
    let world = spawn(&f.spec, Condition::OodArm, 500).unwrap();
    let cloud = render_seeded(&world, &f.spec.camera, &f.spec.render, 500).unwrap();
    let other = spawn(&f.spec, Condition::Id, 501).unwrap().arms;
    for i_seg in 0..p.n_subtasks() {
        let (gaze, _) = p.predict_gaze(&cloud, i_seg).unwrap();
        let mut out = Vec::new();
        for arms in [world.arms, [world.arms[1], world.arms[0]], other] {
            let obs = Observation { cloud: &cloud, arms, camera: &f.spec.camera };
            let local = p.local_features(&obs, &gaze).unwrap();
            out.push(p.predict_bottleneck(i_seg, &local, &gaze).unwrap());
        }
        assert!(out.iter().all(|b| *b == out[0]), "sub-task {i_seg}: {out:?}");
    }
}

#[test]
fn bottleneck_shifts_with_scene_and_gaze() {
    let f = fixture();
    let p = &f.policies[&Preset::Gazebot];
    let spec = noiseless(&f.spec);
    let v = Vector3::new(0.09375, -0.078125, 0.015625);
    for seed in [510, 511, 512] {
        let world = spawn(&spec, Condition::Id, seed).unwrap();
        let cloud = render_seeded(&world, &spec.camera, &spec.render, seed).unwrap();
        let moved = cloud.translated(&v);
        let obs = observe(&cloud, &world, &spec);
        let obs_moved = Observation { cloud: &moved, ..obs };
        for i_seg in 0..p.n_subtasks() {
            let gaze = on_grid(&p.predict_gaze(&cloud, i_seg).unwrap().0);
            let local = p.local_features(&obs, &gaze).unwrap();
            let local_moved = p.local_features(&obs_moved, &(gaze + v)).unwrap();
            assert_eq!(local, local_moved);
            let head = &p.subtasks[i_seg].bottleneck;
            assert_eq!(predict_offset(head, &local).unwrap(), predict_offset(head, &local_moved).unwrap());
            let b = p.predict_bottleneck(i_seg, &local, &gaze).unwrap();
            let b2 = p.predict_bottleneck(i_seg, &local_moved, &(gaze + v)).unwrap();
            assert!((b2.position - b.position - v).norm() < 1e-15);
            assert_eq!(b2.orientation, b.orientation);
            assert_eq!(b2.gripper, b.gripper);
        }
    }
}

#[test]
fn translated_rollout_is_translated() {
    let f = fixture();
    let p = &f.policies[&Preset::Gazebot];
    let spec = noiseless(&f.spec);
    let v = Vector3::new(0.0625, -0.046875, 0.0);
    let moved_spec = spec.translated(&v);
    let params = RolloutParams::default();
    for seed in [520, 521] {
        let world = spawn(&spec, Condition::Id, seed).unwrap();
        let a = rollout(p, &spec, world.clone(), &params, seed).unwrap();
        let b = rollout(p, &moved_spec, world.translated(&v), &params, seed).unwrap();
        assert_eq!(a.pile, b.pile);
        assert_eq!(a.trajectory.len(), b.trajectory.len());
        for (t, (x, y)) in a.trajectory.iter().zip(&b.trajectory).enumerate().skip(1) {
            for arm in 0..2 {
                let d = (y[arm].position - x[arm].position - v).norm();
                assert!(d <= 1e-6, "seed {seed} step {t} arm {arm}: {d:e}");
            }
        }
    }
}

#[test]
fn reach_terminates_within_chord_bound() {
    let f = fixture();
    let p = &f.policies[&Preset::Gazebot];
    let spec = noiseless(&f.spec);
    for seed in 530..536 {
        let mut world = spawn(&spec, Condition::Id, seed).unwrap();
        let mut state = ExecutorState::new(p);
        let mut chord = None;
        let mut steps = 0;
        loop {
            let cloud = render_seeded(&world, &spec.camera, &spec.render, seed + steps as u64).unwrap();
            let arm = p.subtasks[0].arm.index();
            let start = world.arms[arm].position;
            let info = p.act(&mut state, &observe(&cloud, &world, &spec)).unwrap();
            if info.switched {
                break;
            }
            if chord.is_none() {
                chord = Some((info.bottleneck.unwrap().position - start).norm());
            }
            world.step(&info.action);
            steps += 1;
            assert!(steps < 100, "seed {seed}: reach never terminated");
        }
        let bound = (chord.unwrap() / p.params.reach_speed).ceil() as usize + 5;
        assert!(steps <= bound, "seed {seed}: {steps} steps, bound {bound}");
    }
}

#[test]
fn arm_at_bottleneck_switches_on_first_step() {
    let f = fixture();
    let p = &f.policies[&Preset::Gazebot];
    let world = spawn(&f.spec, Condition::Id, 540).unwrap();
    let cloud = render_seeded(&world, &f.spec.camera, &f.spec.render, 540).unwrap();
    let (gaze, _) = p.predict_gaze(&cloud, 0).unwrap();
    let mut obs = observe(&cloud, &world, &f.spec);
    let local = p.local_features(&obs, &gaze).unwrap();
    let b = p.predict_bottleneck(0, &local, &gaze).unwrap();
    obs.arms[p.subtasks[0].arm.index()] = b;
    let mut state = ExecutorState::new(p);
    let info = p.act(&mut state, &obs).unwrap();
    assert!(info.switched);
    assert_eq!(info.phase, Phase::GazeCentered);
    assert_eq!(state.phase, Phase::GazeCentered);
}

#[test]
fn state_tokens_leak_arm_pose() {
    let f = fixture();
    let g = &f.policies[&Preset::Gazebot];
    let a3 = &f.policies[&Preset::Ablation3];
    let world = spawn(&f.spec, Condition::OodArm, 550).unwrap();
    let cloud = render_seeded(&world, &f.spec.camera, &f.spec.render, 550).unwrap();
    let obs = observe(&cloud, &world, &f.spec);
    let first = |p: &Policy, obs: &Observation<'_>| p.act(&mut ExecutorState::new(p), obs).unwrap();
    let (ig, i3) = (first(g, &obs), first(a3, &obs));
    assert_ne!(ig.action, i3.action);
    let mut shifted = obs;
    shifted.arms[0] = shifted.arms[0].translated(&Vector3::new(0.05, 0.0, 0.0));
    assert_eq!(first(g, &shifted).bottleneck, ig.bottleneck);
    assert_ne!(first(a3, &shifted).bottleneck, i3.bottleneck);
}

#[test]
fn offset_head_recovers_held_out_bottlenecks() {
    let f = fixture();
    let p = &f.policies[&Preset::Gazebot];
    let held_out = demos(&f.spec, 1000..1006);
    let mut sq = Vec::new();
    for d in &held_out {
        for (k, b) in truth(d).subtasks.iter().enumerate() {
            let target = d.frames[b.bottleneck].arm(p.subtasks[k].arm).position;
            for fr in &d.frames[b.start..b.bottleneck] {
                let obs = Observation { cloud: &fr.cloud, arms: fr.arms(), camera: &f.spec.camera };
                let local = p.local_features(&obs, &fr.gaze_3d).unwrap();
                let pred = p.predict_bottleneck(k, &local, &fr.gaze_3d).unwrap();
                sq.push((pred.position - target).norm_squared());
            }
        }
    }
    let rms = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
    assert!(rms <= 0.01, "offset RMS {rms}");
}

#[test]
fn direct_bottleneck_fails_out_of_distribution() {
    let f = fixture();
    let (mut eg, mut e4) = (Vec::new(), Vec::new());
    for seed in 560..570 {
        let world = spawn(&f.spec, Condition::OodObject, seed).unwrap();
        let reference = expert_bottlenecks(&world, &ExpertParams::default()).unwrap();
        let cloud = render_seeded(&world, &f.spec.camera, &f.spec.render, seed).unwrap();
        let obs = observe(&cloud, &world, &f.spec);
        for (p, errs) in [(&f.policies[&Preset::Gazebot], &mut eg), (&f.policies[&Preset::Ablation4], &mut e4)] {
            for (k, r) in reference.iter().enumerate() {
                let (gaze, _) = p.predict_gaze(&cloud, k).unwrap();
                let local = p.local_features(&obs, &gaze).unwrap();
                errs.push((p.predict_bottleneck(k, &local, &gaze).unwrap().position - r).norm());
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&eg) <= 0.01, "gazebot {}", mean(&eg));
    assert!(mean(&e4) >= 0.03, "ablation4 {}", mean(&e4));
}

#[test]
fn single_demo_policy_reproduces_its_demo() {
    let spec = ScenarioSpec::pile_box();
    let seed = 3;
    let demo = demos(&spec, seed..seed + 1);
    let params = PolicyParams { k: 1, ..PolicyParams::default() };
    let p = train(
        Preset::Gazebot,
        &params,
        &TrainingData { demos: &demo, annotations: &[truth(&demo[0])], camera: &spec.camera },
    )
    .unwrap();
    let world = spawn(&spec, Condition::Id, seed).unwrap();
    let t = rollout(&p, &spec, world, &RolloutParams::default(), 77).unwrap();
    assert!(t.lifted && t.pile);
    let expert: Vec<Vector3<f64>> = demo[0].frames.iter().map(|f| f.arms()[0].position).collect();
    let sq: Vec<f64> = t
        .trajectory
        .iter()
        .map(|a| expert.iter().map(|e| (a[0].position - e).norm_squared()).fold(f64::MAX, f64::min))
        .collect();
    let rms = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
    assert!(rms <= 0.02, "path RMS {rms}");
}

#[test]
fn preset_matches_explicit_variant() {
    let f = fixture();
    let p = &f.policies[&Preset::Gazebot];
    let mut q = p.clone();
    q.variant = PolicyVariant {
        use_3d_crop: true,
        state_in_features: false,
        direct_bottleneck: false,
        parametric_reach: false,
    };
    let mut world = spawn(&f.spec, Condition::Id, 580).unwrap();
    let (mut sp, mut sq) = (ExecutorState::new(p), ExecutorState::new(&q));
    for t in 0..20 {
        let cloud = render_seeded(&world, &f.spec.camera, &f.spec.render, t).unwrap();
        let obs = observe(&cloud, &world, &f.spec);
        let a = p.act(&mut sp, &obs).unwrap();
        assert_eq!(a, q.act(&mut sq, &obs).unwrap());
        world.step(&a.action);
    }
}

#[test]
fn model_file_round_trip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    for p in f.policies.values() {
        let path = dir.path().join(format!("{}.model", p.preset));
        p.save(&path).unwrap();
        assert_eq!(&Policy::load(&path).unwrap(), p);
        let buf = p.encode();
        assert!(Policy::decode(&buf[..buf.len() / 2]).is_err());
        let mut extra = buf.clone();
        extra.extend_from_slice(b"junk\n");
        assert!(Policy::decode(&extra).is_err());
    }
}

#[test]
fn unfitted_sub_task_is_an_error() {
    let f = fixture();
    let mut p = f.policies[&Preset::Gazebot].clone();
    p.subtasks.clear();
    let world = spawn(&f.spec, Condition::Id, 590).unwrap();
    let cloud = render_seeded(&world, &f.spec.camera, &f.spec.render, 590).unwrap();
    let mut state = ExecutorState::new(&p);
    assert!(p.act(&mut state, &observe(&cloud, &world, &f.spec)).is_err());
}
