//! Episode configuration and traces shared by both pipelines.

use serde::{Deserialize, Serialize};

use crate::costs::{CostBreakdown, CostConfig};
use crate::error::{Error, Result};
use crate::perception::{Phase, PerceiverConfig, SwitchWeight};
use crate::sampling::SamplingParams;
use crate::sim::{self, staged_success_state, Action, Image, SimConfig, TaskKind, TaskSpec, Vec3, WorldState};
use crate::traj::TrajConfig;
use crate::value_map::MapConfig;

/// Ablations of the step-wise planner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "full")]
    Full,
    /// Zero sampling mean.
    #[serde(rename = "RS")]
    Rs,
    /// Pixel cost only.
    #[serde(rename = "PD")]
    Pd,
    /// Knowledge cost only.
    #[serde(rename = "VS")]
    Vs,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Rs, Variant::Pd, Variant::Vs];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Rs => "RS",
            Variant::Pd => "PD",
            Variant::Vs => "VS",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected full, RS, PD or VS)")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    #[default]
    Vlmpc,
    Traj,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Vlmpc => "vlmpc",
            Pipeline::Traj => "traj",
        }
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vlmpc" => Ok(Pipeline::Vlmpc),
            "traj" => Ok(Pipeline::Traj),
            _ => Err(Error::invalid(format!("unknown pipeline `{s}` (expected vlmpc or traj)"))),
        }
    }
}

pub const DEFAULT_FAIL_MAX: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub perceiver: PerceiverConfig,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub trajectory: TrajConfig,
    #[serde(default)]
    pub value_map: MapConfig,
    /// Consecutive perceiver failures tolerated before the episode aborts.
    #[serde(default = "default_fail_max")]
    pub fail_max: usize,
}

fn default_fail_max() -> usize {
    DEFAULT_FAIL_MAX
}

impl EpisodeConfig {
    pub fn new(task: TaskSpec) -> Self {
        Self {
            task,
            sampling: SamplingParams::default(),
            cost: CostConfig::default(),
            perceiver: PerceiverConfig::default(),
            variant: Variant::Full,
            seed: 0,
            sim: SimConfig::default(),
            trajectory: TrajConfig::default(),
            value_map: MapConfig::default(),
            fail_max: DEFAULT_FAIL_MAX,
        }
    }

    pub fn validate(&self, world: &WorldState) -> Result<()> {
        world.validate()?;
        self.task.validate(world)?;
        self.sampling.validate()?;
        self.cost.validate()?;
        self.perceiver.validate()?;
        self.trajectory.validate()?;
        self.value_map.validate()?;
        if !(self.sim.grasp_radius > 0.0) {
            return Err(Error::config("sim.grasp_radius", "must be > 0"));
        }
        Ok(())
    }

    /// Goal image: the configured one, or a render of the staged success
    /// state, or none for language-only tasks.
    pub fn goal_image(&self, world: &WorldState) -> Result<Option<Image>> {
        if let Some(img) = &self.task.goal_image {
            let r = &self.sim.render;
            if img.width != r.width || img.height != r.height {
                return Err(Error::config("task.goal_image", "size differs from the render size"));
            }
            return Ok(Some(img.clone()));
        }
        if self.task.staged_goal {
            let staged = staged_success_state(world, &self.task)?;
            return Ok(Some(sim::render(&staged, &self.sim.render).image));
        }
        Ok(None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Timeout,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Digest of the observation the step was planned from.
    pub observation_digest: String,
    /// Selected candidate, when a selection happened this step.
    pub chosen_index: Option<usize>,
    pub action: Action,
    pub costs: Option<CostBreakdown>,
    pub w_d: Option<SwitchWeight>,
    pub stage: usize,
    pub phase: Phase,
    /// Whether the perceiver was consulted, and whether it answered.
    pub perceived: bool,
    pub perception_failed: bool,
    pub ee_position: Vec3,
    /// `None` when the task names no interference objects.
    pub clearance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplanRecord {
    pub step: usize,
    pub p_init: Vec3,
    pub p_end: Vec3,
    pub sub_goal: String,
    pub chosen_index: usize,
    pub chosen_cost: f64,
    pub costs: Vec<f64>,
    /// Clearance of the selected polyline against interference objects.
    pub selected_clearance: Option<f64>,
    /// Clearance of the straight segment `p_init -> p_end`, same sampling.
    pub straight_clearance: Option<f64>,
    pub selected_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub pipeline: Pipeline,
    pub variant: Variant,
    pub task_kind: TaskKind,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replans: Vec<ReplanRecord>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub steps_used: usize,
    /// `None` stands for +inf (no interference objects).
    pub min_clearance_overall: Option<f64>,
    pub perception_calls: usize,
    pub grasp_events: usize,
    /// `(stage, phase)` each time the phase memory moved.
    pub phase_log: Vec<(usize, Phase)>,
    pub final_state: WorldState,
}

impl EpisodeTrace {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// Executed end-effector path length including the start position.
    pub fn path_length(&self, start: &Vec3) -> f64 {
        let mut prev = *start;
        let mut total = 0.0;
        for s in &self.steps {
            total += (s.ee_position - prev).norm();
            prev = s.ee_position;
        }
        total
    }
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Running bookkeeping shared by both loops.
pub(crate) struct Tally {
    pub min_clearance: f64,
    pub grasp_events: usize,
    pub phase_log: Vec<(usize, Phase)>,
}

impl Tally {
    pub fn new(state: &WorldState, task: &TaskSpec, memory: &crate::perception::PhaseMemory) -> Self {
        Self {
            min_clearance: sim::min_clearance(state, task),
            grasp_events: 0,
            phase_log: vec![(memory.stage, memory.phase)],
        }
    }

    pub fn observe(
        &mut self,
        before: &WorldState,
        after: &WorldState,
        task: &TaskSpec,
        memory: &crate::perception::PhaseMemory,
    ) -> f64 {
        if before.held_object.is_none() && after.held_object.is_some() {
            self.grasp_events += 1;
        }
        let last = *self.phase_log.last().expect("seeded at start");
        if last != (memory.stage, memory.phase) {
            self.phase_log.push((memory.stage, memory.phase));
        }
        let c = sim::min_clearance(after, task);
        self.min_clearance = self.min_clearance.min(c);
        c
    }
}
