use serde::{Deserialize, Serialize};

use super::{render::Image, ObjectKind, WorldState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Reach,
    Grasp,
    PickPlace,
    Wipe,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::Grasp => "grasp",
            TaskKind::PickPlace => "pick-place",
            TaskKind::Wipe => "wipe",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the robot has to do. For wipe tasks `goal_entity` names the towel and
/// every surface mark in the scene must be wiped. Long-horizon tasks chain
/// further specs through `then`; success means every link succeeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub goal_entity: String,
    #[serde(default)]
    pub place_entity: Option<String>,
    #[serde(default)]
    pub interference_ids: Vec<String>,
    /// Explicit goal image. When absent and `staged_goal` is set, the loops
    /// render one from a staged success state at episode start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_image: Option<Image>,
    #[serde(default)]
    pub staged_goal: bool,
    #[serde(default)]
    pub instruction: String,
    pub success_radius: f64,
    pub t_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub then: Option<Box<TaskSpec>>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, goal_entity: impl Into<String>, success_radius: f64, t_max: usize) -> Self {
        Self {
            kind,
            goal_entity: goal_entity.into(),
            place_entity: None,
            interference_ids: Vec::new(),
            goal_image: None,
            staged_goal: false,
            instruction: String::new(),
            success_radius,
            t_max,
            then: None,
        }
    }

    pub fn with_place(mut self, place: impl Into<String>) -> Self {
        self.place_entity = Some(place.into());
        self
    }

    pub fn with_interference(mut self, ids: &[&str]) -> Self {
        self.interference_ids = ids.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_instruction(mut self, text: impl Into<String>) -> Self {
        self.instruction = text.into();
        self
    }

    pub fn staged(mut self) -> Self {
        self.staged_goal = true;
        self
    }

    pub fn then(mut self, next: TaskSpec) -> Self {
        let mut tail = &mut self;
        while tail.then.is_some() {
            tail = tail.then.as_mut().unwrap();
        }
        tail.then = Some(Box::new(next));
        self
    }

    /// This spec followed by every chained spec.
    pub fn links(&self) -> impl Iterator<Item = &TaskSpec> {
        std::iter::successors(Some(self), |t| t.then.as_deref())
    }

    pub fn all_interference(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for id in self.links().flat_map(|t| t.interference_ids.iter()) {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
        out
    }

    pub fn has_goal_input_image(&self) -> bool {
        self.goal_image.is_some() || self.staged_goal
    }

    /// Checks the spec against the entities of a world.
    pub fn validate(&self, world: &WorldState) -> Result<()> {
        for (i, link) in self.links().enumerate() {
            let field = |name: &str| {
                if i == 0 {
                    format!("task.{name}")
                } else {
                    format!("task.then[{i}].{name}")
                }
            };
            if !(link.success_radius > 0.0) {
                return Err(Error::config(field("success_radius"), "must be > 0"));
            }
            let goal = world
                .object(&link.goal_entity)
                .ok_or_else(|| Error::config(field("goal_entity"), format!("unknown entity `{}`", link.goal_entity)))?;
            match link.kind {
                TaskKind::PickPlace => {
                    let place = link
                        .place_entity
                        .as_deref()
                        .ok_or_else(|| Error::config(field("place_entity"), "pick-place requires a place entity"))?;
                    if world.object(place).is_none() {
                        return Err(Error::config(field("place_entity"), format!("unknown entity `{place}`")));
                    }
                    if !goal.kind.is_graspable() {
                        return Err(Error::config(field("goal_entity"), "pick-place goal must be graspable"));
                    }
                }
                TaskKind::Grasp if !goal.kind.is_graspable() => {
                    return Err(Error::config(field("goal_entity"), "grasp goal must be graspable"));
                }
                TaskKind::Wipe => {
                    if goal.kind != ObjectKind::Towel {
                        return Err(Error::config(field("goal_entity"), "wipe goal must be a towel"));
                    }
                    if world.surface_marks().next().is_none() {
                        return Err(Error::config(field("kind"), "wipe task needs at least one surface mark"));
                    }
                }
                _ => {}
            }
            for id in &link.interference_ids {
                if world.object(id).is_none() {
                    return Err(Error::config(field("interference_ids"), format!("unknown entity `{id}`")));
                }
            }
        }
        Ok(())
    }
}

/// The world as it would look once `task` is done, used to render goal images.
pub fn staged_success_state(world: &WorldState, task: &TaskSpec) -> Result<WorldState> {
    task.validate(world)?;
    let mut s = world.clone();
    for link in task.links() {
        let goal = s.object(&link.goal_entity).expect("validated").clone();
        match link.kind {
            TaskKind::Reach => {
                s.ee_position = goal.position;
                s.gripper_closed = false;
                s.held_object = None;
            }
            TaskKind::Grasp => {
                s.ee_position = goal.position;
                s.gripper_closed = true;
                s.held_object = Some(goal.id.clone());
            }
            TaskKind::PickPlace => {
                let place = s.object(link.place_entity.as_deref().expect("validated")).expect("validated").clone();
                let target = super::Vec3::new(place.position.x, place.position.y, goal.position.z);
                s.object_mut(&goal.id).expect("validated").position = target;
                s.ee_position = target;
                s.gripper_closed = false;
                s.held_object = None;
            }
            TaskKind::Wipe => {
                let last_mark = s.surface_marks().last().map(|m| m.position);
                let ids: Vec<String> = s.surface_marks().map(|m| m.id.clone()).collect();
                if let Some(p) = last_mark {
                    s.ee_position = super::Vec3::new(p.x, p.y, goal.position.z);
                }
                s.object_mut(&goal.id).expect("validated").position = s.ee_position;
                s.gripper_closed = true;
                s.held_object = Some(goal.id.clone());
                for id in ids {
                    s.wipe_contact.insert(id, 0.0);
                }
            }
        }
        s.ee_position = s.workspace.clamp(s.ee_position);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{check_success, Bounds3, ObjectState, Vec3};

    fn world() -> WorldState {
        WorldState::new(
            Vec3::new(0.2, 0.2, 0.1),
            vec![
                ObjectState::new("peach", Vec3::new(-0.1, 0.0, 0.03), 0.02, ObjectKind::Graspable, 3),
                ObjectState::new("plate", Vec3::new(0.1, -0.1, 0.01), 0.05, ObjectKind::Container, 4),
                ObjectState::new("towel", Vec3::new(0.0, 0.2, 0.02), 0.03, ObjectKind::Towel, 5),
                ObjectState::new("spill", Vec3::new(-0.2, -0.2, 0.0), 0.02, ObjectKind::SurfaceMark, 6),
            ],
            Bounds3::default(),
        )
        .unwrap()
    }

    #[test]
    fn pick_place_requires_place_entity() {
        let t = TaskSpec::new(TaskKind::PickPlace, "peach", 0.02, 50);
        let err = t.validate(&world()).unwrap_err().to_string();
        assert!(err.contains("task.place_entity"), "{err}");
    }

    #[test]
    fn radius_must_be_positive() {
        let t = TaskSpec::new(TaskKind::Reach, "peach", 0.0, 50);
        assert!(t.validate(&world()).unwrap_err().to_string().contains("success_radius"));
    }

    #[test]
    fn staged_state_satisfies_every_kind() {
        let w = world();
        let tasks = [
            TaskSpec::new(TaskKind::Reach, "peach", 0.02, 50),
            TaskSpec::new(TaskKind::Grasp, "peach", 0.02, 50),
            TaskSpec::new(TaskKind::PickPlace, "peach", 0.02, 50).with_place("plate"),
            TaskSpec::new(TaskKind::Wipe, "towel", 0.02, 50),
            TaskSpec::new(TaskKind::PickPlace, "peach", 0.02, 50)
                .with_place("plate")
                .then(TaskSpec::new(TaskKind::Wipe, "towel", 0.02, 50)),
        ];
        for t in tasks {
            let staged = staged_success_state(&w, &t).unwrap();
            assert!(check_success(&staged, &t), "{:?}", t.kind);
        }
    }

    #[test]
    fn chain_links_in_order() {
        let t = TaskSpec::new(TaskKind::Grasp, "peach", 0.02, 50)
            .then(TaskSpec::new(TaskKind::Reach, "plate", 0.02, 50))
            .then(TaskSpec::new(TaskKind::Wipe, "towel", 0.02, 50));
        let kinds: Vec<TaskKind> = t.links().map(|l| l.kind).collect();
        assert_eq!(kinds, vec![TaskKind::Grasp, TaskKind::Reach, TaskKind::Wipe]);
    }
}
