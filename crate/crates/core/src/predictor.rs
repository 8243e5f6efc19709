//! Action-conditioned frame prediction.
//!
//! [`Predictor`] is the contract a learned video model would implement: two
//! history frames with their executed actions in, one predicted video per
//! candidate out. [`KinematicSurrogate`] satisfies it by threading the
//! simulator state carried in the latest observation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::ActionSequence;
use crate::sim::{self, Action, BoundingBox, Image, Observation, SimConfig, WorldState};

#[derive(Clone, Debug)]
pub struct RolloutRequest<'a> {
    /// `[O_{t-1}, O_t]`. At the first step both are the initial observation.
    pub history: [&'a Observation; 2],
    /// Actions that produced the history frames; zero before the first step.
    pub history_actions: [Action; 2],
    pub candidates: &'a [ActionSequence],
}

impl RolloutRequest<'_> {
    /// Common horizon of the candidates.
    pub fn horizon(&self) -> Result<usize> {
        let first = self
            .candidates
            .first()
            .ok_or_else(|| Error::invalid("rollout needs at least one candidate"))?
            .horizon();
        if let Some((i, c)) = self.candidates.iter().enumerate().find(|(_, c)| c.horizon() != first) {
            return Err(Error::invalid(format!(
                "candidate {i} has horizon {}, expected {first}",
                c.horizon()
            )));
        }
        Ok(first)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedVideo {
    pub frames: Vec<Image>,
    pub boxes_per_frame: Vec<BTreeMap<String, BoundingBox>>,
    /// World state after the last action. Only simulator-backed predictors
    /// can fill this in.
    pub final_state: Option<WorldState>,
}

impl PredictedVideo {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Writes frames as `{prefix}_{index:03}.pgm` into `dir`.
    pub fn dump_pgm(&self, dir: &Path, prefix: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, frame) in self.frames.iter().enumerate() {
            std::fs::write(dir.join(format!("{prefix}_{i:03}.pgm")), frame.to_pgm())?;
        }
        Ok(())
    }
}

pub trait Predictor: Send + Sync {
    /// One video per candidate, in candidate order.
    fn rollout(&self, request: &RolloutRequest<'_>) -> Result<Vec<PredictedVideo>>;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KinematicSurrogate {
    pub sim: SimConfig,
}

impl KinematicSurrogate {
    pub fn new(sim: SimConfig) -> Self {
        Self { sim }
    }

    fn predict(&self, start: &WorldState, candidate: &ActionSequence) -> PredictedVideo {
        let mut state = start.clone();
        let mut frames = Vec::with_capacity(candidate.horizon());
        let mut boxes_per_frame = Vec::with_capacity(candidate.horizon());
        for action in &candidate.actions {
            state = sim::step(&state, action, &self.sim);
            let obs = sim::render(&state, &self.sim.render);
            frames.push(obs.image);
            boxes_per_frame.push(obs.boxes);
        }
        PredictedVideo {
            frames,
            boxes_per_frame,
            final_state: Some(state),
        }
    }
}

impl Predictor for KinematicSurrogate {
    fn rollout(&self, request: &RolloutRequest<'_>) -> Result<Vec<PredictedVideo>> {
        request.horizon()?;
        let start = &request.history[1].state_snapshot;
        Ok(request.candidates.par_iter().map(|c| self.predict(start, c)).collect())
    }
}

/// Box centers (pixels) of `ids` in every frame.
pub fn predicted_track(video: &PredictedVideo, ids: &[&str]) -> Result<Vec<BTreeMap<String, Vector2<f64>>>> {
    video
        .boxes_per_frame
        .iter()
        .enumerate()
        .map(|(frame, boxes)| {
            ids.iter()
                .map(|id| {
                    boxes
                        .get(*id)
                        .map(|b| (id.to_string(), b.center()))
                        .ok_or_else(|| Error::MissingEntity {
                            id: id.to_string(),
                            frame,
                        })
                })
                .collect()
        })
        .collect()
}
