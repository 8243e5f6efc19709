//! The step-wise planning loop: perceive, sample around the blended mean,
//! predict, score, execute the first action of the best candidate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::costs::{combine, pixel_cost, select_best, vlm_cost};
use crate::episode::{finite, EpisodeConfig, EpisodeTrace, Outcome, Pipeline, StepRecord, Tally, Variant};
use crate::error::{Error, Result};
use crate::perception::{phase_update, PerceptionReport, Perceiver, PhaseMemory, SwitchWeight};
use crate::predictor::{KinematicSurrogate, Predictor, RolloutRequest};
use crate::sampling::{blend_means, hint_to_mean, mean_from_tail, sample_sequences, SamplingMean, SamplingParams};
use crate::sim::{self, check_success, Action};

/// Planner RNG for an episode: the episode seed selects the key, the
/// sampling seed the stream.
pub fn planner_rng(cfg: &EpisodeConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.sampling.seed);
    rng
}

/// Runs one episode with the configured perceiver and the kinematic surrogate.
pub fn run_episode(cfg: &EpisodeConfig, world: &sim::WorldState) -> Result<EpisodeTrace> {
    cfg.validate(world)?;
    let perceiver = cfg.perceiver.build()?;
    let predictor = KinematicSurrogate::new(cfg.sim.clone());
    run_episode_with(cfg, world, perceiver.as_ref(), &predictor)
}

/// Effective switch weight after ablation overrides. Without a goal image the
/// pixel cost is undefined and the knowledge cost is used alone.
fn effective_weight(cfg: &EpisodeConfig, perceived: SwitchWeight, has_goal: bool) -> SwitchWeight {
    if !has_goal {
        return SwitchWeight::Knowledge;
    }
    if let Some(w) = cfg.cost.force_w_d {
        return w;
    }
    match cfg.variant {
        Variant::Pd => SwitchWeight::Pixel,
        Variant::Vs => SwitchWeight::Knowledge,
        Variant::Full | Variant::Rs => perceived,
    }
}

/// Runs one episode. Configuration problems are returned as errors; failures
/// during the episode end it with [`Outcome::Error`].
pub fn run_episode_with(
    cfg: &EpisodeConfig,
    world: &sim::WorldState,
    perceiver: &dyn Perceiver,
    predictor: &dyn Predictor,
) -> Result<EpisodeTrace> {
    cfg.validate(world)?;
    let task = &cfg.task;
    let goal = cfg.goal_image(world)?;
    let mut rng = planner_rng(cfg);
    let params = &cfg.sampling;
    let history_only = SamplingParams {
        w_vlm: 0.0,
        ..params.clone()
    };

    let mut state = world.clone();
    let mut memory = phase_update(&state, task, PhaseMemory::default());
    let mut tally = Tally::new(&state, task, &memory);
    let mut obs = sim::render(&state, &cfg.sim.render);
    let mut prev_obs = obs.clone();
    let mut history_actions = [Action::zero(); 2];

    let mut mu_sub: Option<SamplingMean> = None;
    let mut last_report: Option<PerceptionReport> = None;
    let mut prev_w = if goal.is_some() { SwitchWeight::Both } else { SwitchWeight::Knowledge };
    let mut consecutive_failures = 0;
    let mut steps = Vec::new();
    let mut calls = 0;
    let mut outcome = None;
    let mut error = None;

    let mut t = 0;
    while !check_success(&state, task) && t < task.t_max {
        calls += 1;
        let (mu, perceived_w, failed) = match perceiver.perceive(&obs, task, &memory) {
            Ok(report) => {
                consecutive_failures = 0;
                let mu_vlm = hint_to_mean(&report.hint, params);
                let w = report.switch_weight;
                last_report = Some(report);
                (blend_means(&mu_vlm, mu_sub.as_ref(), params), w, false)
            }
            Err(Error::Perception(e)) => {
                consecutive_failures += 1;
                if consecutive_failures > cfg.fail_max {
                    outcome = Some(Outcome::Error);
                    error = Some(format!("perceiver failed {consecutive_failures} times in a row: {e}"));
                    break;
                }
                (blend_means(&SamplingMean::zero(), mu_sub.as_ref(), &history_only), prev_w, true)
            }
            Err(e) => {
                outcome = Some(Outcome::Error);
                error = Some(e.to_string());
                break;
            }
        };
        let mu = if cfg.variant == Variant::Rs { SamplingMean::zero() } else { mu };
        let w = effective_weight(cfg, perceived_w, goal.is_some());
        prev_w = perceived_w;

        let candidates = sample_sequences(&mu, params, &cfg.sim.limits, &mut rng);
        let request = RolloutRequest {
            history: [&prev_obs, &obs],
            history_actions,
            candidates: &candidates,
        };
        let scored = predictor.rollout(&request).and_then(|videos| {
            let pixel = match &goal {
                Some(g) => pixel_cost(&videos, g)?,
                None => vec![0.0; videos.len()],
            };
            let knowledge = match &last_report {
                Some(r) => vlm_cost(&videos, r, &cfg.cost)?,
                None => vec![0.0; videos.len()],
            };
            let breakdown = combine(&pixel, &knowledge, w.value())?;
            let best = select_best(&breakdown)?;
            Ok((breakdown, best))
        });
        let (breakdown, best) = match scored {
            Ok(v) => v,
            Err(e) => {
                outcome = Some(Outcome::Error);
                error = Some(e.to_string());
                break;
            }
        };

        let action = *candidates[best].first();
        let next = sim::step(&state, &action, &cfg.sim);
        mu_sub = Some(mean_from_tail(&candidates[best]));
        memory = phase_update(&next, task, memory);
        let clearance = tally.observe(&state, &next, task, &memory);

        steps.push(StepRecord {
            step: t,
            observation_digest: obs.image.digest(),
            chosen_index: Some(best),
            action,
            costs: Some(breakdown),
            w_d: Some(w),
            stage: memory.stage,
            phase: memory.phase,
            perceived: true,
            perception_failed: failed,
            ee_position: next.ee_position,
            clearance: finite(clearance),
        });

        state = next;
        prev_obs = std::mem::replace(&mut obs, sim::render(&state, &cfg.sim.render));
        history_actions = [history_actions[1], action];
        t += 1;
    }

    let outcome = outcome.unwrap_or(if check_success(&state, task) {
        Outcome::Success
    } else {
        Outcome::Timeout
    });
    Ok(EpisodeTrace {
        pipeline: Pipeline::Vlmpc,
        variant: cfg.variant,
        task_kind: task.kind,
        seed: cfg.seed,
        steps_used: steps.len(),
        steps,
        replans: Vec::new(),
        outcome,
        error,
        min_clearance_overall: finite(tally.min_clearance),
        perception_calls: calls,
        grasp_events: tally.grasp_events,
        phase_log: tally.phase_log,
        final_state: state,
    })
}
