//! Scene files and seeded object placement.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use vlmpc_core::sim::{Bounds3, ObjectState, TaskSpec, Vec3, WorldState};
use vlmpc_core::EpisodeConfig;

use crate::error::{Error, Result};

pub const SCENE_FORMAT: u32 = 1;

/// Stream id of the placement RNG. Planner RNGs use the sampling seed as
/// stream (0 by default), so the two never share a keystream.
pub const PLACEMENT_STREAM: u64 = 0x706c_6163_656d_656e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub format: u32,
    pub name: String,
    #[serde(default)]
    pub workspace: Bounds3,
    pub end_effector: Vec3,
    pub objects: Vec<ObjectState>,
    pub task: TaskSpec,
    /// Absent: objects stay where the file puts them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomize: Option<Placement>,
    /// Partial episode config (sampling, cost, perceiver, ...) layered over
    /// the defaults.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub planner: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    /// Minimum horizontal distance between object centers.
    #[serde(default = "default_separation")]
    pub min_separation: f64,
    /// Inset from the workspace walls for object and end-effector xy.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_ee_height")]
    pub ee_height: [f64; 2],
    /// Minimum distance from the end-effector to the task's goal entity.
    #[serde(default)]
    pub min_goal_distance: f64,
    /// Objects left at their configured position.
    #[serde(default)]
    pub fixed: Vec<String>,
    /// Object placed at the midpoint of the end-effector and the goal entity
    /// after everything else is drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bisect: Option<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_separation() -> f64 {
    0.08
}

fn default_margin() -> f64 {
    0.05
}

fn default_ee_height() -> [f64; 2] {
    [0.08, 0.2]
}

fn default_attempts() -> usize {
    10_000
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            min_separation: default_separation(),
            margin: default_margin(),
            ee_height: default_ee_height(),
            min_goal_distance: 0.0,
            fixed: Vec::new(),
            bisect: None,
            max_attempts: default_attempts(),
        }
    }
}

impl SceneConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scene: Self = serde_path_to_error::deserialize(de).map_err(Error::from_path)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != SCENE_FORMAT {
            return Err(Error::config("format", format!("unsupported format {} (expected {SCENE_FORMAT})", self.format)));
        }
        if !self.planner.is_null() && !self.planner.is_object() {
            return Err(Error::config("planner", "must be an object"));
        }
        let world = self.base_world()?;
        self.episode_config(&Value::Null)?.validate(&world).map_err(Error::from)?;
        if let Some(p) = &self.randomize {
            p.validate(self)?;
        }
        Ok(())
    }

    /// The world exactly as written in the file.
    pub fn base_world(&self) -> Result<WorldState> {
        Ok(WorldState::new(self.end_effector, self.objects.clone(), self.workspace)?)
    }

    /// Episode config: defaults, then `planner`, then `overrides`.
    pub fn episode_config(&self, overrides: &Value) -> Result<EpisodeConfig> {
        let mut doc = serde_json::to_value(EpisodeConfig::new(self.task.clone())).expect("config serializes");
        merge(&mut doc, &self.planner);
        merge(&mut doc, overrides);
        serde_path_to_error::deserialize(doc).map_err(Error::from_path)
    }

    /// World for one episode. Deterministic in `seed`; the draw uses its own
    /// RNG so planner randomness is untouched.
    pub fn world_for_seed(&self, seed: u64) -> Result<WorldState> {
        let Some(p) = &self.randomize else {
            return self.base_world();
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PLACEMENT_STREAM);
        p.place(self, &mut rng)
    }
}

impl Placement {
    fn validate(&self, scene: &SceneConfig) -> Result<()> {
        if !(self.min_separation >= 0.0) {
            return Err(Error::config("randomize.min_separation", "must be >= 0"));
        }
        let ws = &scene.workspace;
        let span = (ws.extent().x).min(ws.extent().y);
        if !(self.margin >= 0.0 && 2.0 * self.margin < span) {
            return Err(Error::config("randomize.margin", "must be >= 0 and leave a non-empty area"));
        }
        let [lo, hi] = self.ee_height;
        if !(lo <= hi && lo >= ws.min.z && hi <= ws.max.z) {
            return Err(Error::config("randomize.ee_height", "must be an ordered range inside the workspace"));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("randomize.max_attempts", "must be >= 1"));
        }
        for id in self.fixed.iter().chain(&self.bisect) {
            if !scene.objects.iter().any(|o| &o.id == id) {
                return Err(Error::config("randomize", format!("unknown object `{id}`")));
            }
        }
        if self.bisect.as_ref() == Some(&scene.task.goal_entity) {
            return Err(Error::config("randomize.bisect", "cannot be the goal entity"));
        }
        Ok(())
    }

    fn draw_xy<R: Rng>(&self, ws: &Bounds3, rng: &mut R) -> (f64, f64) {
        (
            rng.random_range(ws.min.x + self.margin..=ws.max.x - self.margin),
            rng.random_range(ws.min.y + self.margin..=ws.max.y - self.margin),
        )
    }

    /// Rejection sampling: redraw the whole layout until every pairwise
    /// constraint holds.
    fn place<R: Rng>(&self, scene: &SceneConfig, rng: &mut R) -> Result<WorldState> {
        let ws = &scene.workspace;
        for _ in 0..self.max_attempts {
            let (x, y) = self.draw_xy(ws, rng);
            let z = rng.random_range(self.ee_height[0]..=self.ee_height[1]);
            let ee = Vec3::new(x, y, z);

            let mut objects = scene.objects.clone();
            let mut ok = true;
            for i in 0..objects.len() {
                let id = &objects[i].id;
                if self.fixed.contains(id) || self.bisect.as_ref() == Some(id) {
                    continue;
                }
                let (x, y) = self.draw_xy(ws, rng);
                objects[i].position.x = x;
                objects[i].position.y = y;
            }
            let placed: Vec<&ObjectState> = objects.iter().filter(|o| self.bisect.as_ref() != Some(&o.id)).collect();
            'pairs: for (i, a) in placed.iter().enumerate() {
                for b in &placed[i + 1..] {
                    let d = (a.position.xy() - b.position.xy()).norm();
                    if d < self.min_separation {
                        ok = false;
                        break 'pairs;
                    }
                }
            }
            let goal = objects
                .iter()
                .find(|o| o.id == scene.task.goal_entity)
                .map(|o| o.position)
                .expect("validated");
            if (ee - goal).norm() < self.min_goal_distance {
                ok = false;
            }
            if !ok {
                continue;
            }
            if let Some(id) = &self.bisect {
                let mid = 0.5 * (ee + goal);
                objects.iter_mut().find(|o| &o.id == id).expect("validated").position = mid;
            }
            return Ok(WorldState::new(ee, objects, *ws)?);
        }
        Err(Error::config(
            "randomize",
            format!("no valid placement after {} attempts", self.max_attempts),
        ))
    }
}

/// Recursive object merge; non-object values replace.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}
