//! Candidate scoring: pixel distance to a goal image, perceived-entity
//! distances, and their switch-weighted blend.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{PerceptionReport, SwitchWeight};
use crate::predictor::{predicted_track, PredictedVideo};
use crate::sim::{Image, END_EFFECTOR_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    /// Cap each interference distance at `interference_cap_px` so fleeing an
    /// obstacle stops paying once it is far enough away.
    pub clamp_interference: bool,
    pub interference_cap_px: f64,
    /// Overrides the perceived switch weight.
    #[serde(rename = "force_w_D")]
    pub force_w_d: Option<SwitchWeight>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            clamp_interference: false,
            interference_cap_px: 20.0,
            force_w_d: None,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clamp_interference && !(self.interference_cap_px > 0.0) {
            return Err(Error::config("cost.interference_cap_px", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub pixel: Vec<f64>,
    pub knowledge: Vec<f64>,
    pub combined: Vec<f64>,
    pub w_d: SwitchWeight,
}

impl CostBreakdown {
    pub fn len(&self) -> usize {
        self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }
}

/// Euclidean distance between two index rasters treated as real vectors.
pub fn image_distance(a: &Image, b: &Image) -> f64 {
    a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per candidate, the sum over frames of the distance to `goal`.
pub fn pixel_cost(videos: &[PredictedVideo], goal: &Image) -> Result<Vec<f64>> {
    for (n, v) in videos.iter().enumerate() {
        if let Some(f) = v.frames.iter().find(|f| f.width != goal.width || f.height != goal.height) {
            return Err(Error::invalid(format!(
                "candidate {n}: frame {}x{} does not match goal {}x{}",
                f.width, f.height, goal.width, goal.height
            )));
        }
    }
    Ok(videos
        .par_iter()
        .map(|v| v.frames.iter().map(|f| image_distance(f, goal)).sum())
        .collect())
}

/// Per candidate, the sum over frames of the end-effector to sub-goal pixel
/// distance minus the summed end-effector to interference distances.
pub fn vlm_cost(videos: &[PredictedVideo], report: &PerceptionReport, cfg: &CostConfig) -> Result<Vec<f64>> {
    let mut ids: Vec<&str> = vec![END_EFFECTOR_ID, report.sub_goal.id.as_str()];
    ids.extend(report.interference.iter().map(|e| e.id.as_str()));
    let cap = if cfg.clamp_interference {
        cfg.interference_cap_px
    } else {
        f64::INFINITY
    };
    videos
        .par_iter()
        .map(|v| {
            let track = predicted_track(v, &ids)?;
            Ok(track
                .iter()
                .map(|centers| {
                    let e = centers[END_EFFECTOR_ID];
                    let goal = (e - centers[&report.sub_goal.id]).norm();
                    let away: f64 = report
                        .interference
                        .iter()
                        .map(|i| (e - centers[&i.id]).norm().min(cap))
                        .sum();
                    goal - away
                })
                .sum())
        })
        .collect()
}

/// Blends the two cost lists. `w_d` must be 0, 0.5 or 1.
pub fn combine(pixel: &[f64], knowledge: &[f64], w_d: f64) -> Result<CostBreakdown> {
    let w = SwitchWeight::try_from(w_d)?;
    if pixel.len() != knowledge.len() {
        return Err(Error::invalid(format!(
            "cost lists differ in length: {} vs {}",
            pixel.len(),
            knowledge.len()
        )));
    }
    let combined = match w {
        SwitchWeight::Pixel => pixel.to_vec(),
        SwitchWeight::Knowledge => knowledge.to_vec(),
        SwitchWeight::Both => pixel.iter().zip(knowledge).map(|(p, k)| 0.5 * p + 0.5 * k).collect(),
    };
    Ok(CostBreakdown {
        pixel: pixel.to_vec(),
        knowledge: knowledge.to_vec(),
        combined,
        w_d: w,
    })
}

/// Index of the smallest value; the first one on ties.
pub fn argmin(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::invalid("cannot select from an empty candidate list"));
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_best(breakdown: &CostBreakdown) -> Result<usize> {
    argmin(&breakdown.combined)
}
