//! Closed-loop trajectory execution: replan on a fixed schedule, follow the
//! selected waypoint polyline in between.

use rand::Rng;

use crate::episode::{finite, EpisodeConfig, EpisodeTrace, Outcome, Pipeline, ReplanRecord, StepRecord, Tally};
use crate::error::{Error, Result};
use crate::perception::{directive, phase_update, PerceptionReport, Perceiver, PhaseMemory};
use crate::sim::{self, check_success, Action, ActionLimits, Observation, Vec3, WorldState};
use crate::traj::{
    build_gmm, lift, obstacle_list, path_length, polyline_clearance, resample_uniform, sample_batch,
    CameraTransform, HeightField,
};
use crate::value_map::{build_map, score_all, select_trajectory, ValueMap};
use crate::vlmpc::planner_rng;

/// Everything produced by one replan.
pub struct Plan {
    pub points: Vec<Vec3>,
    pub record: ReplanRecord,
    pub map: ValueMap,
}

/// Lifts the perceived boxes, samples `J` candidates and keeps the one with
/// the lowest value-map cost.
///
/// The end-effector height comes from proprioception: the height raster
/// masks the robot, so only its image position is perceived.
pub fn plan_trajectory<R: Rng + ?Sized>(
    cfg: &EpisodeConfig,
    obs: &Observation,
    report: &PerceptionReport,
    rng: &mut R,
) -> Result<Plan> {
    let state = &obs.state_snapshot;
    let tc = &cfg.trajectory;
    let camera = CameraTransform::from_observation(obs, &cfg.sim.render);
    let p_init = lift(
        &report.end_effector,
        &camera.with_height_map(HeightField::Flat(state.ee_position.z)),
    );
    let p_end = lift(&report.sub_goal.bbox, &camera);
    let interference: Vec<Vec3> = report.interference.iter().map(|e| lift(&e.bbox, &camera)).collect();

    let gmm = build_gmm(p_init, p_end, tc.m, tc.sigma_r, rng)?;
    let candidates = sample_batch(&gmm, tc.j, tc.n_sub, tc.n_t, rng)?;
    let map = build_map(&p_end, &interference, &cfg.value_map.grid_for(&state.workspace), &cfg.value_map.spread)?;
    let scores = score_all(&map, &candidates);
    let best = select_trajectory(&scores)?;
    let points = candidates[best].points.clone();

    let obstacles = obstacle_list(state, &cfg.task.all_interference());
    let straight = resample_uniform(&[p_init, p_end], tc.n_t);
    let record = ReplanRecord {
        step: state.step_index as usize,
        p_init,
        p_end,
        sub_goal: report.sub_goal.id.clone(),
        chosen_index: best,
        chosen_cost: scores[best].cost,
        costs: scores.iter().map(|s| s.cost).collect(),
        selected_clearance: finite(polyline_clearance(&points, &obstacles)),
        straight_clearance: finite(polyline_clearance(&straight, &obstacles)),
        selected_length: path_length(&points),
    };
    Ok(Plan { points, record, map })
}

fn within(d: &Vec3, limits: &ActionLimits) -> bool {
    d.iter().all(|c| c.abs() <= limits.d_max)
}

/// Translation toward the farthest upcoming waypoint reachable in one step
/// without skipping any waypoint outside the step limits.
fn advance(points: &[Vec3], cursor: usize, ee: &Vec3, limits: &ActionLimits) -> (Vec3, usize) {
    let mut m = cursor;
    while m + 1 < points.len() && within(&(points[m + 1] - ee), limits) {
        m += 1;
    }
    let target = if m > cursor { points[m] } else { points[(cursor + 1).min(points.len() - 1)] };
    ((target - ee).map(|c| c.clamp(-limits.d_max, limits.d_max)), m)
}

pub fn run_traj_episode(cfg: &EpisodeConfig, world: &WorldState) -> Result<EpisodeTrace> {
    cfg.validate(world)?;
    let perceiver = cfg.perceiver.build()?;
    run_traj_episode_with(cfg, world, perceiver.as_ref())
}

pub fn run_traj_episode_with(cfg: &EpisodeConfig, world: &WorldState, perceiver: &dyn Perceiver) -> Result<EpisodeTrace> {
    cfg.validate(world)?;
    let task = &cfg.task;
    let interval = cfg.trajectory.replan_interval();
    let mut rng = planner_rng(cfg);

    let mut state = world.clone();
    let mut memory = phase_update(&state, task, PhaseMemory::default());
    let mut tally = Tally::new(&state, task, &memory);
    let mut plan: Vec<Vec3> = Vec::new();
    let mut cursor = 0;
    let mut consecutive_failures = 0;
    let mut steps = Vec::new();
    let mut replans = Vec::new();
    let mut calls = 0;
    let mut outcome = None;
    let mut error = None;

    let mut t = 0;
    while !check_success(&state, task) && t < task.t_max {
        let obs = sim::render(&state, &cfg.sim.render);
        let mut perceived = false;
        let mut failed = false;
        let mut chosen = None;
        if t % interval == 0 {
            calls += 1;
            perceived = true;
            let planned = perceiver
                .perceive(&obs, task, &memory)
                .and_then(|report| plan_trajectory(cfg, &obs, &report, &mut rng));
            match planned {
                Ok(p) => {
                    consecutive_failures = 0;
                    chosen = Some(p.record.chosen_index);
                    plan = p.points;
                    cursor = 0;
                    replans.push(p.record);
                }
                Err(Error::Perception(e)) => {
                    consecutive_failures += 1;
                    failed = true;
                    if consecutive_failures > cfg.fail_max {
                        outcome = Some(Outcome::Error);
                        error = Some(format!("perceiver failed {consecutive_failures} times in a row: {e}"));
                        break;
                    }
                }
                Err(e) => {
                    outcome = Some(Outcome::Error);
                    error = Some(e.to_string());
                    break;
                }
            }
        }

        let d = if plan.is_empty() {
            Vec3::zeros()
        } else {
            let (d, c) = advance(&plan, cursor, &state.ee_position, &cfg.sim.limits);
            cursor = c;
            d
        };
        let g = directive(&state, task, &memory, cfg.perceiver.grasp_range)
            .map_or(u8::from(state.gripper_closed), |dir| dir.gripper);
        let action = Action::translate(d, g);
        let next = sim::step(&state, &action, &cfg.sim);
        memory = phase_update(&next, task, memory);
        let clearance = tally.observe(&state, &next, task, &memory);

        steps.push(StepRecord {
            step: t,
            observation_digest: obs.image.digest(),
            chosen_index: chosen,
            action,
            costs: None,
            w_d: None,
            stage: memory.stage,
            phase: memory.phase,
            perceived,
            perception_failed: failed,
            ee_position: next.ee_position,
            clearance: finite(clearance),
        });
        state = next;
        t += 1;
    }

    let outcome = outcome.unwrap_or(if check_success(&state, task) {
        Outcome::Success
    } else {
        Outcome::Timeout
    });
    Ok(EpisodeTrace {
        pipeline: Pipeline::Traj,
        variant: cfg.variant,
        task_kind: task.kind,
        seed: cfg.seed,
        steps_used: steps.len(),
        steps,
        replans,
        outcome,
        error,
        min_clearance_overall: finite(tally.min_clearance),
        perception_calls: calls,
        grasp_events: tally.grasp_events,
        phase_log: tally.phase_log,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{OraclePerceiver, Phase};
    use crate::sim::{Bounds3, ObjectKind, ObjectState, TaskKind, TaskSpec};

    fn reach_world() -> WorldState {
        WorldState::new(
            Vec3::new(-0.2, -0.1, 0.15),
            vec![ObjectState::new("cup", Vec3::new(0.15, 0.1, 0.03), 0.02, ObjectKind::Graspable, 3)],
            Bounds3::default(),
        )
        .unwrap()
    }

    fn cfg_for(task: TaskSpec, seed: u64) -> EpisodeConfig {
        let mut cfg = EpisodeConfig::new(task);
        cfg.seed = seed;
        cfg
    }

    #[test]
    fn advance_takes_the_farthest_reachable_waypoint() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(0.01 * i as f64, 0.0, 0.0)).collect();
        let (d, c) = advance(&pts, 0, &Vec3::zeros(), &ActionLimits::default());
        assert_eq!(c, 5);
        assert!((d.x - 0.05).abs() < 1e-15);
        let (d, c) = advance(&pts, 9, &pts[9], &ActionLimits::default());
        assert_eq!(c, 9);
        assert_eq!(d, Vec3::zeros());
    }

    #[test]
    fn reach_succeeds_and_replans_on_schedule() {
        let cfg = cfg_for(TaskSpec::new(TaskKind::Reach, "cup", 0.02, 50), 1);
        let trace = run_traj_episode(&cfg, &reach_world()).unwrap();
        assert_eq!(trace.outcome, Outcome::Success, "{:?}", trace.error);
        assert_eq!(trace.perception_calls, trace.steps_used.div_ceil(10));
        assert!(trace.replans.iter().all(|r| r.step % 10 == 0));
    }

    #[test]
    fn traj_episodes_are_deterministic() {
        let cfg = cfg_for(TaskSpec::new(TaskKind::Reach, "cup", 0.02, 50), 5);
        let a = run_traj_episode(&cfg, &reach_world()).unwrap();
        let b = run_traj_episode(&cfg, &reach_world()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn first_plan_starts_at_the_end_effector() {
        let cfg = cfg_for(TaskSpec::new(TaskKind::Reach, "cup", 0.02, 50), 2);
        let w = reach_world();
        let obs = sim::render(&w, &cfg.sim.render);
        let report = OraclePerceiver::default().perceive(&obs, &cfg.task, &PhaseMemory::default()).unwrap();
        let plan = plan_trajectory(&cfg, &obs, &report, &mut planner_rng(&cfg)).unwrap();
        assert!((plan.points[0] - w.ee_position).norm() < 0.005);
        assert!((plan.points[49] - w.objects[0].position).norm() < 0.005);
    }

    #[test]
    fn long_task_phases_complete_in_order() {
        let w = WorldState::new(
            Vec3::new(0.0, 0.0, 0.12),
            vec![
                ObjectState::new("apple", Vec3::new(-0.15, -0.1, 0.03), 0.02, ObjectKind::Graspable, 3),
                ObjectState::new("bowl", Vec3::new(0.15, -0.12, 0.01), 0.05, ObjectKind::Container, 4),
                ObjectState::new("towel", Vec3::new(-0.1, 0.15, 0.01), 0.03, ObjectKind::Towel, 5),
                ObjectState::new("stain", Vec3::new(0.15, 0.15, 0.0), 0.03, ObjectKind::SurfaceMark, 6),
            ],
            Bounds3::default(),
        )
        .unwrap();
        let task = TaskSpec::new(TaskKind::PickPlace, "apple", 0.02, 200)
            .with_place("bowl")
            .then(TaskSpec::new(TaskKind::Wipe, "towel", 0.02, 200));
        let trace = run_traj_episode(&cfg_for(task, 3), &w).unwrap();
        assert_eq!(trace.outcome, Outcome::Success, "{:?}", trace.phase_log);
        let expected = vec![
            (0, Phase::Approach),
            (0, Phase::Transport),
            (0, Phase::Release),
            (1, Phase::Approach),
            (1, Phase::Wipe),
            (2, Phase::Done),
        ];
        assert_eq!(trace.phase_log, expected);
    }
}
