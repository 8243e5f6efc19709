//! Candidate action sequences drawn around a hint-derived mean.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::DirectionHint;
use crate::sim::{Action, ActionLimits, Vec3};

/// Gripper samples at or above this value close the gripper.
pub const GRIPPER_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    /// Candidate count.
    pub n: usize,
    /// Horizon in steps.
    pub t: usize,
    /// Meters per unit of translation hint.
    pub w_m: f64,
    /// Radians per unit of rotation hint.
    pub w_r: f64,
    pub w_vlm: f64,
    pub w_sub: f64,
    /// Per-component standard deviation: translation (3), rotation (3), gripper.
    pub sigma: [f64; 7],
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            n: 64,
            t: 5,
            w_m: 0.04,
            w_r: 0.1,
            w_vlm: 0.7,
            w_sub: 0.3,
            sigma: [0.02, 0.02, 0.02, 0.05, 0.05, 0.05, 0.3],
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("sampling.n", "must be >= 1"));
        }
        if self.t == 0 {
            return Err(Error::config("sampling.t", "must be >= 1"));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::config("sampling.sigma", "components must be finite and >= 0"));
        }
        for (field, v) in [
            ("sampling.w_m", self.w_m),
            ("sampling.w_r", self.w_r),
            ("sampling.w_vlm", self.w_vlm),
            ("sampling.w_sub", self.w_sub),
        ] {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Sampling mean in action units: translation (3), rotation (3), gripper.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingMean {
    pub mu: [f64; 7],
}

impl SamplingMean {
    pub fn zero() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub actions: Vec<Action>,
}

impl ActionSequence {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn first(&self) -> &Action {
        &self.actions[0]
    }
}

pub fn hint_to_mean(hint: &DirectionHint, params: &SamplingParams) -> SamplingMean {
    let mut mu = [0.0; 7];
    for i in 0..3 {
        mu[i] = params.w_m * f64::from(hint.d_hat[i]);
        mu[i + 3] = params.w_r * f64::from(hint.r_hat[i]);
    }
    mu[6] = f64::from(hint.g);
    SamplingMean { mu }
}

/// Weighted sum of the hint mean and the history mean. A missing history mean
/// counts as zero. Only the gripper component is clamped.
pub fn blend_means(mu_vlm: &SamplingMean, mu_sub: Option<&SamplingMean>, params: &SamplingParams) -> SamplingMean {
    let sub = mu_sub.copied().unwrap_or_default();
    let mut mu = [0.0; 7];
    for i in 0..7 {
        mu[i] = params.w_vlm * mu_vlm.mu[i] + params.w_sub * sub.mu[i];
    }
    mu[6] = mu[6].clamp(0.0, 1.0);
    SamplingMean { mu }
}

fn action_from_components(c: &[f64; 7], limits: &ActionLimits) -> Action {
    let g = u8::from(c[6] >= GRIPPER_THRESHOLD);
    Action::new(Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5]), g).clamped(limits)
}

/// Draws `params.n` sequences of `params.t` actions, every component
/// independent with mean `mu` and deviation `params.sigma`.
pub fn sample_sequences<R: Rng + ?Sized>(
    mu: &SamplingMean,
    params: &SamplingParams,
    limits: &ActionLimits,
    rng: &mut R,
) -> Vec<ActionSequence> {
    (0..params.n)
        .map(|_| ActionSequence {
            actions: (0..params.t)
                .map(|_| {
                    let mut c = [0.0; 7];
                    for i in 0..7 {
                        let z: f64 = rng.sample(StandardNormal);
                        c[i] = mu.mu[i] + params.sigma[i] * z;
                    }
                    action_from_components(&c, limits)
                })
                .collect(),
        })
        .collect()
}

/// Mean of every action after the first; zero when there is no tail.
pub fn mean_from_tail(chosen: &ActionSequence) -> SamplingMean {
    let tail = chosen.actions.get(1..).unwrap_or(&[]);
    if tail.is_empty() {
        return SamplingMean::zero();
    }
    let mut mu = [0.0; 7];
    for a in tail {
        for (m, c) in mu.iter_mut().zip(a.components()) {
            *m += c;
        }
    }
    let n = tail.len() as f64;
    SamplingMean { mu: mu.map(|m| m / n) }
}
