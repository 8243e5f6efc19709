//! Deterministic kinematic tabletop world.
//!
//! The world is a plain value: [`step`] consumes a state and an [`Action`] and
//! returns the successor, so any number of hypothetical rollouts can share one
//! read-only starting state. Grasping is snap-attach on the gripper-close edge;
//! there is no contact physics.

mod render;
mod task;

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[cfg(test)]
pub(crate) use render::ee_half_px;
pub use render::{render, BoundingBox, Image, Observation, RenderConfig, END_EFFECTOR_ID};
pub use task::{staged_success_state, TaskKind, TaskSpec};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned workspace bounds in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds3 {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

impl Default for Bounds3 {
    /// 0.64 x 0.64 x 0.32 m table volume centered on the origin in x/y.
    fn default() -> Self {
        Self {
            min: Vec3::new(-0.32, -0.32, 0.0),
            max: Vec3::new(0.32, 0.32, 0.32),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectKind {
    Graspable,
    /// Graspable cloth used by wipe tasks.
    Towel,
    Container,
    Obstacle,
    SurfaceMark,
}

impl ObjectKind {
    pub fn is_graspable(self) -> bool {
        matches!(self, ObjectKind::Graspable | ObjectKind::Towel)
    }

    /// Painter's-order layer: lower layers are drawn first.
    pub(crate) fn layer(self) -> u8 {
        match self {
            ObjectKind::SurfaceMark => 0,
            ObjectKind::Container => 1,
            ObjectKind::Obstacle => 2,
            ObjectKind::Graspable | ObjectKind::Towel => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: String,
    pub position: Vec3,
    pub radius: f64,
    pub kind: ObjectKind,
    pub color_index: u8,
}

impl ObjectState {
    pub fn new(id: impl Into<String>, position: Vec3, radius: f64, kind: ObjectKind, color_index: u8) -> Self {
        Self {
            id: id.into(),
            position,
            radius,
            kind,
            color_index,
        }
    }
}

/// Per-step translation and rotation limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionLimits {
    pub d_max: f64,
    pub r_max: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        Self { d_max: 0.05, r_max: 0.2 }
    }
}

/// One control step: translation, rotation delta and binary gripper command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub d: Vec3,
    pub r: Vec3,
    /// 1 = closed, 0 = open.
    pub g: u8,
}

impl Action {
    pub fn new(d: Vec3, r: Vec3, g: u8) -> Self {
        Self { d, r, g: g.min(1) }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros(), 0)
    }

    pub fn translate(d: Vec3, g: u8) -> Self {
        Self::new(d, Vec3::zeros(), g)
    }

    pub fn clamped(&self, limits: &ActionLimits) -> Self {
        Self {
            d: self.d.map(|v| v.clamp(-limits.d_max, limits.d_max)),
            r: self.r.map(|v| v.clamp(-limits.r_max, limits.r_max)),
            g: self.g.min(1),
        }
    }

    /// The seven scalar components `(d, r, g)`.
    pub fn components(&self) -> [f64; 7] {
        [
            self.d.x,
            self.d.y,
            self.d.z,
            self.r.x,
            self.r.y,
            self.r.z,
            f64::from(self.g),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub grasp_radius: f64,
    pub limits: ActionLimits,
    pub render: RenderConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grasp_radius: 0.03,
            limits: ActionLimits::default(),
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee_position: Vec3,
    pub ee_rotation: Vec3,
    pub gripper_closed: bool,
    pub objects: Vec<ObjectState>,
    pub held_object: Option<String>,
    pub step_index: u64,
    pub workspace: Bounds3,
    /// Closest horizontal approach of a held towel to each surface mark.
    #[serde(default)]
    pub wipe_contact: BTreeMap<String, f64>,
}

impl WorldState {
    /// Builds a validated world with an open, empty gripper.
    pub fn new(ee_position: Vec3, objects: Vec<ObjectState>, workspace: Bounds3) -> Result<Self> {
        let state = Self {
            ee_position: workspace.clamp(ee_position),
            ee_rotation: Vec3::zeros(),
            gripper_closed: false,
            objects,
            held_object: None,
            step_index: 0,
            workspace,
            wipe_contact: BTreeMap::new(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for obj in &self.objects {
            if obj.id == END_EFFECTOR_ID {
                return Err(Error::invalid(format!("object id `{END_EFFECTOR_ID}` is reserved")));
            }
            if !seen.insert(obj.id.as_str()) {
                return Err(Error::invalid(format!("duplicate object id `{}`", obj.id)));
            }
            if !(obj.radius > 0.0) {
                return Err(Error::invalid(format!("object `{}` radius must be > 0", obj.id)));
            }
        }
        if let Some(held) = &self.held_object {
            if self.object(held).is_none() {
                return Err(Error::invalid(format!("held object `{held}` does not exist")));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: &str) -> Option<&mut ObjectState> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn is_held(&self, id: &str) -> bool {
        self.held_object.as_deref() == Some(id)
    }

    pub fn surface_marks(&self) -> impl Iterator<Item = &ObjectState> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::SurfaceMark)
    }
}

pub fn horizontal_distance(a: &Vec3, b: &Vec3) -> f64 {
    Vector2::new(a.x - b.x, a.y - b.y).norm()
}

/// Advances the world by one action. Total: out-of-range commands are clamped.
pub fn step(state: &WorldState, action: &Action, cfg: &SimConfig) -> WorldState {
    let action = action.clamped(&cfg.limits);
    let mut next = state.clone();
    next.ee_position = state.workspace.clamp(state.ee_position + action.d);
    next.ee_rotation = state.ee_rotation + action.r;
    // a held object rides along this step's motion even if it is released below
    if let Some(held) = state.held_object.as_deref() {
        let ee = next.ee_position;
        if let Some(obj) = next.object_mut(held) {
            obj.position = ee;
        }
    }

    let close = action.g == 1;
    if close && !state.gripper_closed && state.held_object.is_none() {
        let ee = next.ee_position;
        next.held_object = next
            .objects
            .iter()
            .filter(|o| o.kind.is_graspable())
            .map(|o| (o, (o.position - ee).norm()))
            .filter(|(_, dist)| *dist <= cfg.grasp_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(o, _)| o.id.clone());
    } else if !close && state.gripper_closed {
        next.held_object = None;
    }
    next.gripper_closed = close;

    if let Some(held) = next.held_object.clone() {
        let ee = next.ee_position;
        if let Some(obj) = next.object_mut(&held) {
            obj.position = ee;
        }
        let holding_towel = next.object(&held).is_some_and(|o| o.kind == ObjectKind::Towel);
        if holding_towel {
            let updates: Vec<(String, f64)> = next
                .surface_marks()
                .map(|m| (m.id.clone(), horizontal_distance(&ee, &m.position)))
                .collect();
            for (id, dist) in updates {
                let entry = next.wipe_contact.entry(id).or_insert(f64::INFINITY);
                *entry = entry.min(dist);
            }
        }
    }

    let workspace = next.workspace;
    for obj in &mut next.objects {
        obj.position = workspace.clamp(obj.position);
    }
    next.step_index += 1;
    next
}

/// Task predicate evaluated on a single state. Chained tasks succeed when
/// every link succeeds.
pub fn check_success(state: &WorldState, task: &TaskSpec) -> bool {
    task.links().all(|t| link_success(state, t))
}

pub(crate) fn link_success(state: &WorldState, task: &TaskSpec) -> bool {
    let Some(goal) = state.object(&task.goal_entity) else {
        return false;
    };
    match task.kind {
        TaskKind::Reach => (state.ee_position - goal.position).norm() <= task.success_radius,
        TaskKind::Grasp => state.is_held(&goal.id),
        TaskKind::PickPlace => {
            let Some(place) = task.place_entity.as_deref().and_then(|p| state.object(p)) else {
                return false;
            };
            !state.is_held(&goal.id) && horizontal_distance(&goal.position, &place.position) <= task.success_radius
        }
        TaskKind::Wipe => state.surface_marks().all(|m| {
            state
                .wipe_contact
                .get(&m.id)
                .is_some_and(|d| *d <= task.success_radius)
        }),
    }
}

/// Minimum over interference objects of `distance(ee, obstacle) - radius`;
/// `+inf` when the task names none.
pub fn min_clearance(state: &WorldState, task: &TaskSpec) -> f64 {
    task.links()
        .flat_map(|t| t.interference_ids.iter())
        .filter_map(|id| state.object(id))
        .map(|o| (state.ee_position - o.position).norm() - o.radius)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world_with(objects: Vec<ObjectState>) -> WorldState {
        WorldState::new(Vec3::zeros(), objects, Bounds3::default()).unwrap()
    }

    fn banana(at: Vec3) -> ObjectState {
        ObjectState::new("banana", at, 0.02, ObjectKind::Graspable, 3)
    }

    #[test]
    fn zero_action_only_advances_step_index() {
        let s = world_with(vec![banana(Vec3::new(0.1, 0.1, 0.02))]);
        let n = step(&s, &Action::zero(), &SimConfig::default());
        assert_eq!(n.step_index, 1);
        let mut expected = s.clone();
        expected.step_index = 1;
        assert_eq!(n, expected);
    }

    #[test]
    fn pure_translation() {
        let s = world_with(vec![]);
        let n = step(&s, &Action::translate(Vec3::new(0.05, 0.0, 0.0), 0), &SimConfig::default());
        assert_eq!(n.ee_position, Vec3::new(0.05, 0.0, 0.0));
    }

    #[test]
    fn grasp_on_close_edge_then_carry() {
        let cfg = SimConfig::default();
        let s = world_with(vec![banana(Vec3::new(0.01, 0.0, 0.0))]);
        let grabbed = step(&s, &Action::translate(Vec3::zeros(), 1), &cfg);
        assert_eq!(grabbed.held_object.as_deref(), Some("banana"));
        assert_eq!(grabbed.object("banana").unwrap().position, grabbed.ee_position);

        let moved = step(&grabbed, &Action::translate(Vec3::new(0.0, 0.05, 0.0), 1), &cfg);
        assert_eq!(moved.ee_position, Vec3::new(0.0, 0.05, 0.0));
        assert_eq!(moved.object("banana").unwrap().position, moved.ee_position);

        let released = step(&moved, &Action::translate(Vec3::new(0.05, 0.0, 0.0), 0), &cfg);
        assert!(released.held_object.is_none());
        // released after the translation, at the current end-effector position
        assert_eq!(released.object("banana").unwrap().position, released.ee_position);
    }

    #[test]
    fn close_without_edge_does_not_grasp() {
        let cfg = SimConfig::default();
        let mut s = world_with(vec![banana(Vec3::new(0.2, 0.0, 0.0))]);
        s = step(&s, &Action::translate(Vec3::zeros(), 1), &cfg);
        assert!(s.held_object.is_none());
        s.ee_position = Vec3::new(0.2, 0.0, 0.0);
        let n = step(&s, &Action::translate(Vec3::zeros(), 1), &cfg);
        assert!(n.held_object.is_none(), "gripper already closed, no edge");
    }

    #[test]
    fn out_of_range_grasp_misses() {
        let s = world_with(vec![banana(Vec3::new(0.04, 0.0, 0.0))]);
        let n = step(&s, &Action::translate(Vec3::zeros(), 1), &SimConfig::default());
        assert!(n.held_object.is_none());
        assert!(n.gripper_closed);
    }

    #[test]
    fn actions_are_clamped_to_limits_and_workspace() {
        let cfg = SimConfig::default();
        let mut s = world_with(vec![]);
        s.ee_position = Vec3::new(0.3, -0.3, 0.01);
        let n = step(&s, &Action::new(Vec3::new(1.0, -1.0, -1.0), Vec3::new(3.0, 0.0, 0.0), 1), &cfg);
        assert_eq!(n.ee_position, Vec3::new(0.32, -0.32, 0.0));
        assert_eq!(n.ee_rotation.x, 0.2);
    }

    #[test]
    fn duplicate_ids_and_bad_radius_rejected() {
        let dup = vec![banana(Vec3::zeros()), banana(Vec3::zeros())];
        assert!(WorldState::new(Vec3::zeros(), dup, Bounds3::default()).is_err());
        let bad = vec![ObjectState::new("x", Vec3::zeros(), 0.0, ObjectKind::Obstacle, 2)];
        assert!(WorldState::new(Vec3::zeros(), bad, Bounds3::default()).is_err());
        let reserved = vec![ObjectState::new(END_EFFECTOR_ID, Vec3::zeros(), 0.1, ObjectKind::Obstacle, 2)];
        assert!(WorldState::new(Vec3::zeros(), reserved, Bounds3::default()).is_err());
    }

    fn task(kind: TaskKind, goal: &str) -> TaskSpec {
        TaskSpec::new(kind, goal, 0.01, 50)
    }

    #[test]
    fn reach_threshold() {
        let mut s = world_with(vec![banana(Vec3::new(0.009, 0.0, 0.0))]);
        assert!(check_success(&s, &task(TaskKind::Reach, "banana")));
        s.ee_position.x = -0.002;
        assert!(!check_success(&s, &task(TaskKind::Reach, "banana")));
    }

    #[test]
    fn pick_place_requires_release() {
        let cfg = SimConfig::default();
        let plate = ObjectState::new("plate", Vec3::new(0.0, 0.05, 0.0), 0.05, ObjectKind::Container, 4);
        let s = world_with(vec![banana(Vec3::zeros()), plate]);
        let t = task(TaskKind::PickPlace, "banana").with_place("plate");
        let held = step(&s, &Action::translate(Vec3::zeros(), 1), &cfg);
        let over = step(&held, &Action::translate(Vec3::new(0.0, 0.05, 0.0), 1), &cfg);
        assert!(over.is_held("banana"));
        assert!(!check_success(&over, &t));
        let dropped = step(&over, &Action::translate(Vec3::zeros(), 0), &cfg);
        assert!(check_success(&dropped, &t));
    }

    #[test]
    fn wipe_replay_visits_all_marks_with_towel() {
        let cfg = SimConfig::default();
        let marks = [(0.1, 0.0), (0.1, 0.1), (0.0, 0.1)];
        let mut objects = vec![ObjectState::new("towel", Vec3::zeros(), 0.02, ObjectKind::Towel, 5)];
        for (i, (x, y)) in marks.iter().enumerate() {
            objects.push(ObjectState::new(format!("mark{i}"), Vec3::new(*x, *y, 0.0), 0.015, ObjectKind::SurfaceMark, 6));
        }
        let t = TaskSpec::new(TaskKind::Wipe, "towel", 0.01, 50);
        let mut s = world_with(objects);
        s = step(&s, &Action::translate(Vec3::zeros(), 1), &cfg);
        assert!(s.is_held("towel"));
        let path = [(0.05, 0.0), (0.05, 0.0), (0.0, 0.05), (0.0, 0.05), (-0.05, 0.0), (-0.05, 0.0)];
        for (i, (dx, dy)) in path.iter().enumerate() {
            assert!(!check_success(&s, &t), "succeeded early at step {i}");
            s = step(&s, &Action::translate(Vec3::new(*dx, *dy, 0.0), 1), &cfg);
        }
        assert!(check_success(&s, &t));
    }

    #[test]
    fn wipe_without_towel_does_not_count() {
        let cfg = SimConfig::default();
        let objects = vec![
            banana(Vec3::zeros()),
            ObjectState::new("mark", Vec3::new(0.05, 0.0, 0.0), 0.01, ObjectKind::SurfaceMark, 6),
        ];
        let mut s = world_with(objects);
        s = step(&s, &Action::translate(Vec3::zeros(), 1), &cfg);
        s = step(&s, &Action::translate(Vec3::new(0.05, 0.0, 0.0), 1), &cfg);
        assert!(s.wipe_contact.is_empty());
    }

    #[test]
    fn clearance_values() {
        let mut s = world_with(vec![
            ObjectState::new("a", Vec3::new(0.1, 0.0, 0.0), 0.01, ObjectKind::Obstacle, 2),
            ObjectState::new("b", Vec3::new(0.0, 0.05, 0.0), 0.01, ObjectKind::Obstacle, 2),
            banana(Vec3::new(0.2, 0.2, 0.0)),
        ]);
        let mut t = task(TaskKind::Reach, "banana");
        assert_eq!(min_clearance(&s, &t), f64::INFINITY);
        t.interference_ids = vec!["a".into(), "b".into()];
        assert!((min_clearance(&s, &t) - 0.04).abs() < 1e-12);

        s.objects[0].radius = 0.03;
        t.interference_ids = vec!["a".into()];
        assert!((min_clearance(&s, &t) - 0.07).abs() < 1e-12);
    }
}
