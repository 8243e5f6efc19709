//! Task phase tracking: which sub-goal is next.
//!
//! [`PhaseMemory`] records milestones and only ever moves forward. What the
//! robot should do *right now* ([`directive`]) is recomputed from the state
//! each step, so a dropped object is simply re-targeted without the recorded
//! phase regressing.

use serde::{Deserialize, Serialize};

use crate::sim::{horizontal_distance, link_success, ObjectState, TaskKind, TaskSpec, Vec3, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Approach,
    Transport,
    Release,
    Wipe,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Approach => "approach",
            Phase::Transport => "transport",
            Phase::Release => "release",
            Phase::Wipe => "wipe",
            Phase::Done => "done",
        }
    }
}

/// Index of the current task link plus the furthest phase reached in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhaseMemory {
    pub stage: usize,
    pub phase: Phase,
}

impl Default for PhaseMemory {
    fn default() -> Self {
        Self {
            stage: 0,
            phase: Phase::Approach,
        }
    }
}

impl PhaseMemory {
    pub fn is_done(&self, task: &TaskSpec) -> bool {
        self.stage >= task.links().count()
    }
}

fn observed_phase(state: &WorldState, link: &TaskSpec) -> Phase {
    if link_success(state, link) {
        return Phase::Done;
    }
    match link.kind {
        TaskKind::Reach | TaskKind::Grasp => Phase::Approach,
        TaskKind::PickPlace => {
            if !state.is_held(&link.goal_entity) {
                return Phase::Approach;
            }
            let place = link.place_entity.as_deref().and_then(|p| state.object(p));
            match place {
                Some(p) if horizontal_distance(&state.ee_position, &p.position) <= link.success_radius => Phase::Release,
                _ => Phase::Transport,
            }
        }
        TaskKind::Wipe => {
            if state.is_held(&link.goal_entity) {
                Phase::Wipe
            } else {
                Phase::Approach
            }
        }
    }
}

/// Advances the memory from held-object and proximity predicates. Monotone:
/// the returned memory is never behind the input.
pub fn phase_update(state: &WorldState, task: &TaskSpec, memory: PhaseMemory) -> PhaseMemory {
    let links: Vec<&TaskSpec> = task.links().collect();
    let mut mem = memory;
    while mem.stage < links.len() {
        let seen = observed_phase(state, links[mem.stage]);
        let phase = mem.phase.max(seen);
        if phase == Phase::Done {
            mem = PhaseMemory {
                stage: mem.stage + 1,
                phase: Phase::Approach,
            };
        } else {
            mem.phase = phase;
            break;
        }
    }
    if mem.stage >= links.len() {
        mem.phase = Phase::Done;
    }
    mem
}

/// What the robot should be doing now.
#[derive(Clone, Debug, PartialEq)]
pub struct Directive {
    pub sub_goal: String,
    /// World position the end-effector should move to.
    pub target: Vec3,
    /// Desired gripper state.
    pub gripper: u8,
    /// Sub-goals left before the whole task is done, this one included.
    pub remaining_sub_goals: usize,
}

fn link_sub_goal_count(state: &WorldState, link: &TaskSpec) -> usize {
    match link.kind {
        TaskKind::Reach | TaskKind::Grasp => 1,
        TaskKind::PickPlace => 2,
        TaskKind::Wipe => 1 + state.surface_marks().count(),
    }
}

fn unwiped_marks<'a>(state: &'a WorldState, link: &TaskSpec) -> Vec<&'a ObjectState> {
    state
        .surface_marks()
        .filter(|m| !state.wipe_contact.get(&m.id).is_some_and(|d| *d <= link.success_radius))
        .collect()
}

/// Gripper command for approaching a graspable object: close once inside grasp
/// range, but open first if the gripper is already shut on nothing.
fn grasp_command(state: &WorldState, object: &Vec3, grasp_range: f64) -> u8 {
    let in_range = (state.ee_position - object).norm() <= grasp_range;
    if !in_range {
        return 0;
    }
    if state.gripper_closed && state.held_object.is_none() {
        0
    } else {
        1
    }
}

fn approach(state: &WorldState, id: &str, grasp_range: f64) -> (Vec3, u8) {
    let obj = state.object(id).expect("task entities validated");
    let g = if obj.kind.is_graspable() && state.held_object.is_none() {
        grasp_command(state, &obj.position, grasp_range)
    } else {
        0
    };
    (obj.position, g)
}

/// Current sub-goal, target and gripper command; `None` once every link is done.
pub fn directive(state: &WorldState, task: &TaskSpec, memory: &PhaseMemory, grasp_range: f64) -> Option<Directive> {
    let links: Vec<&TaskSpec> = task.links().collect();
    let link = *links.get(memory.stage)?;
    let later: usize = links[memory.stage + 1..].iter().map(|l| link_sub_goal_count(state, l)).sum();

    let (sub_goal, target, gripper, remaining) = match link.kind {
        TaskKind::Reach => {
            let obj = state.object(&link.goal_entity)?;
            (obj.id.clone(), obj.position, 0, 1)
        }
        TaskKind::Grasp => {
            let (target, g) = approach(state, &link.goal_entity, grasp_range);
            let g = if state.is_held(&link.goal_entity) { 1 } else { g };
            (link.goal_entity.clone(), target, g, 1)
        }
        TaskKind::PickPlace => {
            let place_id = link.place_entity.as_deref()?;
            if state.is_held(&link.goal_entity) {
                let place = state.object(place_id)?;
                let at_place = horizontal_distance(&state.ee_position, &place.position) <= link.success_radius;
                (place_id.to_string(), place.position, u8::from(!at_place), 1)
            } else {
                let (target, g) = approach(state, &link.goal_entity, grasp_range);
                (link.goal_entity.clone(), target, g, 2)
            }
        }
        TaskKind::Wipe => {
            let marks = unwiped_marks(state, link);
            if state.is_held(&link.goal_entity) && !marks.is_empty() {
                let ee = state.ee_position;
                let next = marks
                    .iter()
                    .min_by(|a, b| {
                        horizontal_distance(&ee, &a.position).total_cmp(&horizontal_distance(&ee, &b.position))
                    })
                    .expect("non-empty");
                (next.id.clone(), next.position, 1, marks.len())
            } else {
                let (target, g) = approach(state, &link.goal_entity, grasp_range);
                (link.goal_entity.clone(), target, g, 1 + marks.len())
            }
        }
    };
    Some(Directive {
        sub_goal,
        target,
        gripper,
        remaining_sub_goals: remaining + later,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{step, Action, Bounds3, ObjectKind, SimConfig};

    fn pick_place_world() -> (WorldState, TaskSpec) {
        let w = WorldState::new(
            Vec3::new(0.0, 0.0, 0.03),
            vec![
                ObjectState::new("banana", Vec3::new(0.1, 0.0, 0.03), 0.02, ObjectKind::Graspable, 3),
                ObjectState::new("plate", Vec3::new(0.1, 0.15, 0.01), 0.05, ObjectKind::Container, 4),
            ],
            Bounds3::default(),
        )
        .unwrap();
        let t = TaskSpec::new(TaskKind::PickPlace, "banana", 0.02, 50).with_place("plate");
        (w, t)
    }

    #[test]
    fn grasp_event_advances_to_transport() {
        let (mut w, t) = pick_place_world();
        w.ee_position = Vec3::new(0.1, 0.0, 0.03);
        let mem = phase_update(&w, &t, PhaseMemory::default());
        assert_eq!(mem.phase, Phase::Approach);
        let held = step(&w, &Action::translate(Vec3::zeros(), 1), &SimConfig::default());
        let mem = phase_update(&held, &t, mem);
        assert_eq!(mem.phase, Phase::Transport);
    }

    #[test]
    fn no_event_keeps_phase() {
        let (w, t) = pick_place_world();
        let mem = PhaseMemory::default();
        assert_eq!(phase_update(&w, &t, mem), mem);
    }

    #[test]
    fn scripted_pick_place_phase_sequence() {
        let (w, t) = pick_place_world();
        let cfg = SimConfig::default();
        let script = [
            Action::translate(Vec3::new(0.05, 0.0, 0.0), 0),
            Action::translate(Vec3::new(0.05, 0.0, 0.0), 0),
            Action::translate(Vec3::zeros(), 1),
            Action::translate(Vec3::new(0.0, 0.05, 0.0), 1),
            Action::translate(Vec3::new(0.0, 0.05, 0.0), 1),
            Action::translate(Vec3::new(0.0, 0.05, 0.0), 1),
            Action::translate(Vec3::zeros(), 0),
        ];
        let mut state = w;
        let mut mem = phase_update(&state, &t, PhaseMemory::default());
        let mut seq = vec![mem.phase];
        for a in &script {
            state = step(&state, a, &cfg);
            mem = phase_update(&state, &t, mem);
            if *seq.last().unwrap() != mem.phase {
                seq.push(mem.phase);
            }
        }
        assert_eq!(seq, vec![Phase::Approach, Phase::Transport, Phase::Release, Phase::Done]);
        assert!(mem.is_done(&t));
    }

    #[test]
    fn phases_do_not_regress_after_a_drop() {
        let (mut w, t) = pick_place_world();
        let cfg = SimConfig::default();
        w.ee_position = Vec3::new(0.1, 0.0, 0.03);
        let held = step(&w, &Action::translate(Vec3::zeros(), 1), &cfg);
        let mem = phase_update(&held, &t, PhaseMemory::default());
        assert_eq!(mem.phase, Phase::Transport);
        let dropped = step(&held, &Action::translate(Vec3::new(0.0, 0.05, 0.0), 0), &cfg);
        let after = phase_update(&dropped, &t, mem);
        assert_eq!(after.phase, Phase::Transport);
        // but the directive re-targets the dropped banana
        let d = directive(&dropped, &t, &after, 0.03).unwrap();
        assert_eq!(d.sub_goal, "banana");
    }

    #[test]
    fn directive_tracks_the_current_sub_goal() {
        let (w, t) = pick_place_world();
        let mem = PhaseMemory::default();
        let d = directive(&w, &t, &mem, 0.03).unwrap();
        assert_eq!(d.sub_goal, "banana");
        assert_eq!(d.remaining_sub_goals, 2);
        assert_eq!(d.gripper, 0);

        let mut near = w.clone();
        near.ee_position = Vec3::new(0.1, 0.0, 0.03);
        assert_eq!(directive(&near, &t, &mem, 0.03).unwrap().gripper, 1);

        let held = step(&near, &Action::translate(Vec3::zeros(), 1), &SimConfig::default());
        let d = directive(&held, &t, &phase_update(&held, &t, mem), 0.03).unwrap();
        assert_eq!(d.sub_goal, "plate");
        assert_eq!(d.gripper, 1);
        assert_eq!(d.remaining_sub_goals, 1);
    }

    #[test]
    fn closed_on_nothing_requests_open() {
        let (mut w, t) = pick_place_world();
        w.ee_position = Vec3::new(0.1, 0.0, 0.03);
        w.gripper_closed = true;
        assert_eq!(directive(&w, &t, &PhaseMemory::default(), 0.03).unwrap().gripper, 0);
    }

    #[test]
    fn chained_stages_advance_in_order() {
        let (w, _) = pick_place_world();
        let t = TaskSpec::new(TaskKind::Reach, "banana", 0.02, 50).then(TaskSpec::new(TaskKind::Reach, "plate", 0.02, 50));
        let mut s = w.clone();
        s.ee_position = Vec3::new(0.1, 0.0, 0.03);
        let mem = phase_update(&s, &t, PhaseMemory::default());
        assert_eq!(mem.stage, 1);
        assert_eq!(directive(&s, &t, &mem, 0.03).unwrap().sub_goal, "plate");
        s.ee_position = Vec3::new(0.1, 0.15, 0.01);
        let mem = phase_update(&s, &t, mem);
        assert!(mem.is_done(&t));
        assert!(directive(&s, &t, &mem, 0.03).is_none());
    }
}
