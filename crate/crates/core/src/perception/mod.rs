//! Perceivers: sub-goal localization, direction hints and the cost switch.
//!
//! All variants implement [`Perceiver`]. The oracle reads the ground-truth
//! snapshot carried by the observation; the noisy variant wraps it with
//! seeded corruption; the remote variant forwards the image over HTTP.

mod phase;
mod remote;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{BoundingBox, Observation, TaskSpec, Vec3, WorldState, END_EFFECTOR_ID};

pub use phase::{directive, phase_update, Directive, Phase, PhaseMemory};
pub use remote::{wire, RemotePerceiver};

/// Default dead band (m) under which a direction component reads as 0.
pub const DEFAULT_DIRECTION_DEADBAND: f64 = 0.01;
/// Rotation dead band (rad) for the rotation hint.
pub const ROTATION_DEADBAND: f64 = 0.05;

/// Discrete movement hint: each component of `d_hat` and `r_hat` is -1, 0 or +1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DirectionHint {
    pub d_hat: [i8; 3],
    pub r_hat: [i8; 3],
    pub g: u8,
}

impl DirectionHint {
    /// Checks the discrete alphabet.
    pub fn new(d_hat: [i8; 3], r_hat: [i8; 3], g: u8) -> Result<Self> {
        if d_hat.iter().chain(r_hat.iter()).any(|c| !(-1..=1).contains(c)) || g > 1 {
            return Err(Error::invalid(format!("hint outside alphabet: d={d_hat:?} r={r_hat:?} g={g}")));
        }
        Ok(Self { d_hat, r_hat, g })
    }

    pub fn negated(&self) -> Self {
        Self {
            d_hat: self.d_hat.map(|c| -c),
            r_hat: self.r_hat.map(|c| -c),
            g: self.g,
        }
    }
}

/// Switch weight `w_D`: share of the pixel cost in the final cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum SwitchWeight {
    Knowledge,
    Both,
    Pixel,
}

impl SwitchWeight {
    pub fn value(self) -> f64 {
        match self {
            SwitchWeight::Knowledge => 0.0,
            SwitchWeight::Both => 0.5,
            SwitchWeight::Pixel => 1.0,
        }
    }
}

impl TryFrom<f64> for SwitchWeight {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        match v {
            x if x == 0.0 => Ok(SwitchWeight::Knowledge),
            x if x == 0.5 => Ok(SwitchWeight::Both),
            x if x == 1.0 => Ok(SwitchWeight::Pixel),
            _ => Err(Error::invalid(format!("switch weight {v} not in {{0, 0.5, 1}}"))),
        }
    }
}

impl From<SwitchWeight> for f64 {
    fn from(w: SwitchWeight) -> f64 {
        w.value()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocatedEntity {
    pub id: String,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionReport {
    pub end_effector: BoundingBox,
    pub sub_goal: LocatedEntity,
    pub interference: Vec<LocatedEntity>,
    pub hint: DirectionHint,
    pub switch_weight: SwitchWeight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerceiverVariant {
    Oracle,
    Noisy,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceiverConfig {
    pub variant: PerceiverVariant,
    pub hallucination_rate: f64,
    pub direction_flip_rate: f64,
    pub endpoint: Option<String>,
    pub seed: u64,
    pub direction_deadband: f64,
    /// Range within which the oracle asks the gripper to close.
    pub grasp_range: f64,
    pub timeout_ms: u64,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        Self {
            variant: PerceiverVariant::Oracle,
            hallucination_rate: 0.0,
            direction_flip_rate: 0.0,
            endpoint: None,
            seed: 0,
            direction_deadband: DEFAULT_DIRECTION_DEADBAND,
            grasp_range: 0.03,
            timeout_ms: 2000,
        }
    }
}

impl PerceiverConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("perceiver.hallucination_rate", self.hallucination_rate),
            ("perceiver.direction_flip_rate", self.direction_flip_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, "must be a probability in [0, 1]"));
            }
        }
        if !(self.direction_deadband >= 0.0) {
            return Err(Error::config("perceiver.direction_deadband", "must be >= 0"));
        }
        if !(self.grasp_range > 0.0) {
            return Err(Error::config("perceiver.grasp_range", "must be > 0"));
        }
        if self.variant == PerceiverVariant::Remote && self.endpoint.is_none() {
            return Err(Error::config("perceiver.endpoint", "remote perceiver requires an endpoint"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Perceiver>> {
        self.validate()?;
        let oracle = OraclePerceiver {
            deadband: self.direction_deadband,
            grasp_range: self.grasp_range,
        };
        Ok(match self.variant {
            PerceiverVariant::Oracle => Box::new(oracle),
            PerceiverVariant::Noisy => Box::new(NoisyPerceiver {
                inner: oracle,
                hallucination_rate: self.hallucination_rate,
                direction_flip_rate: self.direction_flip_rate,
                seed: self.seed,
            }),
            PerceiverVariant::Remote => Box::new(RemotePerceiver::new(
                self.endpoint.clone().expect("validated"),
                std::time::Duration::from_millis(self.timeout_ms),
            )),
        })
    }
}

/// Source of perception reports. Implementations hold no per-episode state,
/// so one instance may serve concurrent episodes.
///
/// Transport problems surface as [`Error::Perception`]; callers treat those as
/// recoverable. Any other error is fatal for the episode.
pub trait Perceiver: Send + Sync {
    fn perceive(&self, obs: &Observation, task: &TaskSpec, memory: &PhaseMemory) -> Result<PerceptionReport>;
}

fn sign_with_deadband(v: f64, deadband: f64) -> i8 {
    if v > deadband {
        1
    } else if v < -deadband {
        -1
    } else {
        0
    }
}

/// Ground-truth perceiver.
#[derive(Clone, Debug, PartialEq)]
pub struct OraclePerceiver {
    pub deadband: f64,
    pub grasp_range: f64,
}

impl Default for OraclePerceiver {
    fn default() -> Self {
        Self {
            deadband: DEFAULT_DIRECTION_DEADBAND,
            grasp_range: 0.03,
        }
    }
}

impl OraclePerceiver {
    fn current_directive(&self, state: &WorldState, task: &TaskSpec, memory: &PhaseMemory) -> Directive {
        if let Some(d) = directive(state, task, memory, self.grasp_range) {
            return d;
        }
        // task already done: hold position
        let last = task.links().last().expect("at least one link");
        Directive {
            sub_goal: last.goal_entity.clone(),
            target: state.ee_position,
            gripper: u8::from(state.gripper_closed),
            remaining_sub_goals: 0,
        }
    }
}

fn locate(obs: &Observation, id: &str) -> Result<LocatedEntity> {
    let frame = obs.state_snapshot.step_index as usize;
    let bbox = *obs.boxes.get(id).ok_or_else(|| Error::MissingEntity {
        id: id.to_string(),
        frame,
    })?;
    Ok(LocatedEntity { id: id.to_string(), bbox })
}

impl Perceiver for OraclePerceiver {
    fn perceive(&self, obs: &Observation, task: &TaskSpec, memory: &PhaseMemory) -> Result<PerceptionReport> {
        let state = &obs.state_snapshot;
        let dir = self.current_directive(state, task, memory);
        let delta: Vec3 = dir.target - state.ee_position;
        let d_hat = [0, 1, 2].map(|i| sign_with_deadband(delta[i], self.deadband));
        let r_hat = [0, 1, 2].map(|i| sign_with_deadband(-state.ee_rotation[i], ROTATION_DEADBAND));

        let interference = task
            .all_interference()
            .iter()
            .map(|id| locate(obs, id))
            .collect::<Result<Vec<_>>>()?;
        let switch_weight = if dir.remaining_sub_goals > 1 {
            SwitchWeight::Knowledge
        } else if !interference.is_empty() {
            SwitchWeight::Both
        } else {
            SwitchWeight::Pixel
        };
        Ok(PerceptionReport {
            end_effector: locate(obs, END_EFFECTOR_ID)?.bbox,
            sub_goal: locate(obs, &dir.sub_goal)?,
            interference,
            hint: DirectionHint {
                d_hat,
                r_hat,
                g: dir.gripper,
            },
            switch_weight,
        })
    }
}

/// Oracle with seeded hallucinations: sub-goal substitution and hint sign flips.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyPerceiver {
    pub inner: OraclePerceiver,
    pub hallucination_rate: f64,
    pub direction_flip_rate: f64,
    pub seed: u64,
}

impl NoisyPerceiver {
    fn rng_for(&self, step_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step_index);
        rng
    }
}

impl Perceiver for NoisyPerceiver {
    fn perceive(&self, obs: &Observation, task: &TaskSpec, memory: &PhaseMemory) -> Result<PerceptionReport> {
        let mut report = self.inner.perceive(obs, task, memory)?;
        let mut rng = self.rng_for(obs.state_snapshot.step_index);

        if rng.random_bool(self.hallucination_rate) {
            let others: Vec<&String> = obs
                .boxes
                .keys()
                .filter(|id| *id != END_EFFECTOR_ID && **id != report.sub_goal.id)
                .collect();
            if !others.is_empty() {
                let pick = others[rng.random_range(0..others.len())];
                report.sub_goal = locate(obs, pick)?;
            }
        }
        for c in report.hint.d_hat.iter_mut().chain(report.hint.r_hat.iter_mut()) {
            if rng.random_bool(self.direction_flip_rate) {
                *c = -*c;
            }
        }
        Ok(report)
    }
}
