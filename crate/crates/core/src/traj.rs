//! Whole-trajectory candidates: a uniform Gaussian mixture laid along the
//! segment from the end-effector to the sub-goal, sampled into waypoint
//! subsets and resampled to evenly spaced polylines.

use nalgebra::Vector2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{BoundingBox, Observation, RenderConfig, Vec3, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajConfig {
    /// Mixture kernel count.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N_sub")]
    pub n_sub: usize,
    #[serde(rename = "N_T")]
    pub n_t: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub sigma_r: f64,
    /// Replans per executed step.
    pub f: f64,
}

impl Default for TrajConfig {
    fn default() -> Self {
        Self {
            m: 8,
            n_sub: 6,
            n_t: 50,
            j: 64,
            sigma_r: 0.03,
            f: 0.1,
        }
    }
}

impl TrajConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("trajectory.M", "must be >= 1"));
        }
        if self.n_sub == 0 {
            return Err(Error::config("trajectory.N_sub", "must be >= 1"));
        }
        if self.n_t < self.n_sub + 2 {
            return Err(Error::config("trajectory.N_T", "must be >= N_sub + 2"));
        }
        if self.j == 0 {
            return Err(Error::config("trajectory.J", "must be >= 1"));
        }
        if !(self.sigma_r >= 0.0) {
            return Err(Error::config("trajectory.sigma_r", "must be >= 0"));
        }
        if !(self.f > 0.0 && self.f <= 1.0) {
            return Err(Error::config("trajectory.f", "must be in (0, 1]"));
        }
        Ok(())
    }

    /// Executed steps between replans.
    pub fn replan_interval(&self) -> usize {
        ((1.0 / self.f).round() as usize).max(1)
    }
}

/// Pixel-to-height lookup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum HeightField {
    Flat(f64),
    /// Row-major heights, `width * height` entries.
    Table { width: usize, height: usize, values: Vec<f64> },
}

impl HeightField {
    /// Height at the pixel containing `(px, py)`; coordinates clamp to the table.
    pub fn at(&self, px: f64, py: f64) -> f64 {
        match self {
            HeightField::Flat(z) => *z,
            HeightField::Table { width, height, values } => {
                let c = (px.floor().max(0.0) as usize).min(width - 1);
                let r = (py.floor().max(0.0) as usize).min(height - 1);
                values[r * width + c]
            }
        }
    }
}

/// Image to world map: `x = offset.x + px * scale.x`, likewise for y, and
/// `z = offset.z + height(px, py)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraTransform {
    pub scale: Vector2<f64>,
    pub offset: Vec3,
    pub height_map: HeightField,
}

impl CameraTransform {
    pub fn new(scale: Vector2<f64>, offset: Vec3, height_map: HeightField) -> Result<Self> {
        if !(scale.x > 0.0 && scale.y > 0.0) {
            return Err(Error::invalid("camera scale components must be > 0"));
        }
        Ok(Self {
            scale,
            offset,
            height_map,
        })
    }

    /// Transform for the top-down renderer, heights from the observation.
    pub fn from_observation(obs: &Observation, render: &RenderConfig) -> Self {
        let ws = &obs.state_snapshot.workspace;
        Self {
            scale: Vector2::new(render.meters_per_pixel, render.meters_per_pixel),
            offset: Vec3::new(ws.min.x, ws.min.y, 0.0),
            height_map: HeightField::Table {
                width: obs.image.width,
                height: obs.image.height,
                values: obs.heights.clone(),
            },
        }
    }

    pub fn with_height_map(&self, height_map: HeightField) -> Self {
        Self {
            height_map,
            ..self.clone()
        }
    }
}

/// World point under the box center.
pub fn lift(bbox: &BoundingBox, transform: &CameraTransform) -> Vec3 {
    let c = bbox.center();
    Vec3::new(
        transform.offset.x + c.x * transform.scale.x,
        transform.offset.y + c.y * transform.scale.y,
        transform.offset.z + transform.height_map.at(c.x, c.y),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub p_init: Vec3,
    pub p_end: Vec3,
    pub lambdas: Vec<f64>,
    pub kernel_centers: Vec<Vec3>,
    pub sigma_r: f64,
}

impl GmmSpec {
    pub fn m(&self) -> usize {
        self.kernel_centers.len()
    }
}

/// Kernel centers at `p_init + lambda (p_end - p_init)` with `lambda ~ U(0, 1)`.
pub fn build_gmm<R: Rng + ?Sized>(p_init: Vec3, p_end: Vec3, m: usize, sigma_r: f64, rng: &mut R) -> Result<GmmSpec> {
    if m == 0 {
        return Err(Error::invalid("mixture needs at least one kernel"));
    }
    if !(sigma_r >= 0.0) {
        return Err(Error::invalid("sigma_r must be >= 0"));
    }
    let lambdas: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let axis = p_end - p_init;
    let kernel_centers = lambdas.iter().map(|l| p_init + *l * axis).collect();
    Ok(GmmSpec {
        p_init,
        p_end,
        lambdas,
        kernel_centers,
        sigma_r,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCandidate {
    pub points: Vec<Vec3>,
    /// Raw mixture draws, in draw order.
    pub subset: Vec<Vec3>,
    pub candidate_index: usize,
}

pub fn path_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// `n` points evenly spaced by arc length along `polyline`, endpoints exact.
pub fn resample_uniform(polyline: &[Vec3], n: usize) -> Vec<Vec3> {
    let first = polyline[0];
    let last = *polyline.last().expect("non-empty polyline");
    let total = path_length(polyline);
    if n == 1 {
        return vec![first];
    }
    if total == 0.0 {
        let mut out = vec![first; n];
        out[n - 1] = last;
        return out;
    }
    let step = total / (n - 1) as f64;
    let mut out = Vec::with_capacity(n);
    out.push(first);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 1..n - 1 {
        let s = k as f64 * step;
        loop {
            let len = (polyline[seg + 1] - polyline[seg]).norm();
            if s <= seg_start + len || seg + 2 == polyline.len() {
                let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
                out.push(polyline[seg] + t * (polyline[seg + 1] - polyline[seg]));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out.push(last);
    out
}

/// One candidate: `n_sub` mixture draws ordered along the init-to-end axis,
/// anchored at both ends and resampled to `n_t` points.
pub fn sample_candidate<R: Rng + ?Sized>(
    gmm: &GmmSpec,
    n_sub: usize,
    n_t: usize,
    rng: &mut R,
    index: usize,
) -> Result<TrajectoryCandidate> {
    if n_sub == 0 {
        return Err(Error::invalid("N_sub must be >= 1"));
    }
    if n_t < n_sub + 2 {
        return Err(Error::invalid(format!("N_T = {n_t} must be >= N_sub + 2 = {}", n_sub + 2)));
    }
    if gmm.kernel_centers.is_empty() {
        return Err(Error::invalid("mixture has no kernels"));
    }
    let subset: Vec<Vec3> = (0..n_sub)
        .map(|_| {
            let k = rng.random_range(0..gmm.m());
            let z = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            gmm.kernel_centers[k] + gmm.sigma_r * z
        })
        .collect();

    let axis = gmm.p_end - gmm.p_init;
    let mut ordered = subset.clone();
    if axis.norm() > 0.0 {
        ordered.sort_by(|a, b| (a - gmm.p_init).dot(&axis).total_cmp(&(b - gmm.p_init).dot(&axis)));
    }
    let mut polyline = Vec::with_capacity(n_sub + 2);
    polyline.push(gmm.p_init);
    polyline.extend(ordered);
    polyline.push(gmm.p_end);

    Ok(TrajectoryCandidate {
        points: resample_uniform(&polyline, n_t),
        subset,
        candidate_index: index,
    })
}

/// RNG for candidate `index` of a batch whose base seed is `base`.
pub fn candidate_rng(base: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng
}

/// `j` candidates generated in parallel, each from its own derived stream.
pub fn sample_batch<R: RngCore + ?Sized>(
    gmm: &GmmSpec,
    j: usize,
    n_sub: usize,
    n_t: usize,
    rng: &mut R,
) -> Result<Vec<TrajectoryCandidate>> {
    if j == 0 {
        return Err(Error::invalid("J must be >= 1"));
    }
    let base = rng.next_u64();
    (0..j)
        .into_par_iter()
        .map(|i| sample_candidate(gmm, n_sub, n_t, &mut candidate_rng(base, i), i))
        .collect()
}

/// Smallest `distance - radius` from any point to any obstacle; `+inf` when
/// there are no obstacles.
pub fn polyline_clearance(points: &[Vec3], obstacles: &[(Vec3, f64)]) -> f64 {
    points
        .iter()
        .flat_map(|p| obstacles.iter().map(move |(c, r)| (p - c).norm() - r))
        .fold(f64::INFINITY, f64::min)
}

/// Lifted positions of the interference objects with their true radii.
pub fn obstacle_list(state: &WorldState, ids: &[String]) -> Vec<(Vec3, f64)> {
    ids.iter()
        .filter_map(|id| state.object(id))
        .map(|o| (o.position, o.radius))
        .collect()
}
