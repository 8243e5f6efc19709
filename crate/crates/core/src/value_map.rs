//! Voxel value map: a negative Gaussian well at the sub-goal plus a positive
//! Gaussian bump per interference object, evaluated at voxel centers.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::argmin;
use crate::error::{Error, Result};
use crate::sim::{Bounds3, Vec3};
use crate::traj::TrajectoryCandidate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Voxel counts along x, y, z.
    pub dims: [usize; 3],
    pub voxel_size: f64,
    /// Corner of voxel (0, 0, 0).
    pub origin: Vec3,
}

impl Default for GridSpec {
    /// 1 cm voxels over the default workspace.
    fn default() -> Self {
        Self::covering(&Bounds3::default(), 0.01)
    }
}

impl GridSpec {
    pub fn covering(bounds: &Bounds3, voxel_size: f64) -> Self {
        let e = bounds.extent();
        let n = |v: f64| ((v / voxel_size).round() as usize).max(1);
        Self {
            dims: [n(e.x), n(e.y), n(e.z)],
            voxel_size,
            origin: bounds.min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return Err(Error::invalid("voxel_size must be > 0"));
        }
        if self.dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims {:?} must all be >= 1", self.dims)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, x fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + self.voxel_size * Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadParams {
    pub sigma_s: f64,
    #[serde(rename = "sigma_I")]
    pub sigma_i: f64,
}

impl Default for SpreadParams {
    fn default() -> Self {
        Self {
            sigma_s: 0.08,
            sigma_i: 0.05,
        }
    }
}

impl SpreadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0) || !(self.sigma_i > 0.0) {
            return Err(Error::invalid("sigma_s and sigma_I must be > 0"));
        }
        Ok(())
    }
}

/// Grid and spread settings for the trajectory pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    /// Defaults to 1 cm voxels covering the workspace when absent.
    pub grid: Option<GridSpec>,
    pub spread: SpreadParams,
}

impl MapConfig {
    pub fn grid_for(&self, workspace: &Bounds3) -> GridSpec {
        self.grid.unwrap_or_else(|| GridSpec::covering(workspace, 0.01))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| Error::config("value_map.grid", e.to_string()))?;
        }
        self.spread
            .validate()
            .map_err(|e| Error::config("value_map.spread", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueMap {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

/// The map value at an arbitrary point, evaluated in closed form.
pub fn spread_value(x: &Vec3, sub_goal: &Vec3, interference: &[Vec3], params: &SpreadParams) -> f64 {
    let well = (-(x - sub_goal).norm_squared() / (2.0 * params.sigma_s * params.sigma_s)).exp();
    let bumps: f64 = interference
        .iter()
        .map(|c| (-(x - c).norm_squared() / (2.0 * params.sigma_i * params.sigma_i)).exp())
        .sum();
    bumps - well
}

pub fn build_map(sub_goal: &Vec3, interference: &[Vec3], grid: &GridSpec, params: &SpreadParams) -> Result<ValueMap> {
    grid.validate()?;
    params.validate()?;
    let [w, h, _] = grid.dims;
    let mut values = vec![0.0; grid.len()];
    values.par_chunks_mut(w * h).enumerate().for_each(|(k, slab)| {
        for j in 0..h {
            for i in 0..w {
                slab[i + w * j] = spread_value(&grid.voxel_center(i, j, k), sub_goal, interference, params);
            }
        }
    });
    Ok(ValueMap { grid: *grid, values })
}

impl ValueMap {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    /// Trilinear interpolation between voxel centers; outside the grid the
    /// point clamps to the nearest boundary.
    pub fn value_at(&self, p: &Vec3) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = g.dims[a];
            let u = ((p[a] - g.origin[a]) / g.voxel_size - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n.saturating_sub(2));
            base[a] = i0;
            frac[a] = if n == 1 { 0.0 } else { u - i0 as f64 };
        }
        let idx = |a: usize, o: usize| (base[a] + o).min(g.dims[a] - 1);
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            if wz == 0.0 {
                continue;
            }
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                if wy == 0.0 {
                    continue;
                }
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    if wx == 0.0 {
                        continue;
                    }
                    acc += wx * wy * wz * self.get(idx(0, dx), idx(1, dy), idx(2, dz));
                }
            }
        }
        acc
    }

    /// Voxel indices of the smallest value, first in x-fastest order on ties.
    pub fn argmin_voxel(&self) -> [usize; 3] {
        let flat = argmin(&self.values).expect("grid is non-empty");
        let [w, h, _] = self.grid.dims;
        [flat % w, (flat / w) % h, flat / (w * h)]
    }

    /// Writes little-endian f32 values, x fastest, to `path` and a text header
    /// next to it at `<path>.hdr`.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let g = &self.grid;
        let mut hdr = std::fs::File::create(header_path(path))?;
        writeln!(hdr, "dims {} {} {}", g.dims[0], g.dims[1], g.dims[2])?;
        writeln!(hdr, "origin {} {} {}", g.origin.x, g.origin.y, g.origin.z)?;
        writeln!(hdr, "voxel_size {}", g.voxel_size)?;
        writeln!(hdr, "dtype f32")?;
        writeln!(hdr, "byte_order little-endian")?;
        writeln!(hdr, "layout x-fastest index = x + w * (y + h * z)")?;
        Ok(())
    }
}

pub fn header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    s.into()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajScore {
    pub candidate_index: usize,
    pub cost: f64,
}

pub fn score_trajectory(map: &ValueMap, candidate: &TrajectoryCandidate) -> TrajScore {
    TrajScore {
        candidate_index: candidate.candidate_index,
        cost: candidate.points.iter().map(|p| map.value_at(p)).sum(),
    }
}

pub fn score_all(map: &ValueMap, candidates: &[TrajectoryCandidate]) -> Vec<TrajScore> {
    candidates.par_iter().map(|c| score_trajectory(map, c)).collect()
}

/// Candidate index of the cheapest score; the earliest on ties.
pub fn select_trajectory(scores: &[TrajScore]) -> Result<usize> {
    let costs: Vec<f64> = scores.iter().map(|s| s.cost).collect();
    Ok(scores[argmin(&costs)?].candidate_index)
}
