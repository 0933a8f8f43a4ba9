use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Pose7, PoseDelta7};
use crate::simenv::{expert_bottlenecks, render, ExpertParams, ScenarioSpec, World};

use super::{ExecutorState, Observation, Policy, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutParams {
    pub max_steps: usize,
    /// Reference for the logged bottleneck error.
    pub expert: ExpertParams,
}

impl Default for RolloutParams {
    fn default() -> Self {
        Self { max_steps: 150, expert: ExpertParams::default() }
    }
}

/// Outcome and trace of one closed-loop episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub seed: u64,
    pub steps: usize,
    pub lifted: bool,
    pub pile: bool,
    /// The progress head completed the last sub-task before the step limit.
    pub finished: bool,
    /// Last bottleneck predicted while reaching, per sub-task.
    pub bottlenecks: Vec<Option<Pose7>>,
    /// Mean position error of those predictions against the scripted expert's bottlenecks.
    pub bottleneck_error: Option<f64>,
    /// Arm poses before every step, then the final poses.
    pub trajectory: Vec<[Pose7; 2]>,
    pub actions: Vec<[PoseDelta7; 2]>,
    pub gaze_clamps: usize,
}

/// Runs `policy` on `world` until it reports completion or `max_steps` pass.
/// Observations are rendered with a generator derived from `seed`.
pub fn rollout(
    policy: &Policy,
    spec: &ScenarioSpec,
    mut world: World,
    params: &RolloutParams,
    seed: u64,
) -> Result<Trial, PolicyError> {
    let reference = expert_bottlenecks(&world, &params.expert);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut state = ExecutorState::new(policy);
    let mut bottlenecks = vec![None; policy.n_subtasks()];
    let mut trajectory = Vec::new();
    let mut actions = Vec::new();
    let mut gaze_clamps = 0;
    let mut steps = 0;
    while steps < params.max_steps && !state.finished {
        let cloud = render(&world, &spec.camera, &spec.render, &mut rng)?;
        let obs = Observation { cloud: &cloud, arms: world.arms, camera: &spec.camera };
        let info = policy.act(&mut state, &obs)?;
        if let Some(b) = info.bottleneck {
            bottlenecks[info.i_seg] = Some(b);
        }
        gaze_clamps += usize::from(info.gaze_clamped);
        trajectory.push(world.arms);
        actions.push(info.action);
        world.step(&info.action);
        steps += 1;
    }
    trajectory.push(world.arms);
    let s = world.success(true);
    let bottleneck_error = reference.and_then(|r| {
        let errs: Vec<f64> =
            bottlenecks.iter().zip(r.iter()).filter_map(|(b, r)| b.map(|b| (b.position - r).norm())).collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    });
    Ok(Trial {
        seed,
        steps,
        lifted: s.lifted,
        pile: s.pile,
        finished: state.finished,
        bottlenecks,
        bottleneck_error,
        trajectory,
        actions,
        gaze_clamps,
    })
}
