//! Seeded episode batches, persisted traces and aggregate metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use vlmpc_core::sim::{TaskKind, WorldState};
use vlmpc_core::{run_episode, run_traj_episode, EpisodeConfig, EpisodeTrace, Outcome, Pipeline, Variant};

use crate::error::{Error, Result};
use crate::scene::SceneConfig;

/// Columns of `metrics.csv` and `comparison.csv`, in order.
pub const METRICS_COLUMNS: [&str; 9] = [
    "scene",
    "task_kind",
    "pipeline",
    "variant",
    "episodes",
    "success_rate",
    "mean_steps",
    "mean_min_clearance",
    "mean_perception_calls",
];

/// Columns of the per-episode `episodes.csv`.
pub const EPISODE_COLUMNS: [&str; 8] = [
    "episode",
    "seed",
    "outcome",
    "steps",
    "min_clearance",
    "perception_calls",
    "grasp_events",
    "path_length",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    /// Scene file. Relative paths in spec files resolve against the spec's
    /// directory.
    pub config: PathBuf,
    pub episodes: usize,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub variant: Variant,
    /// Partial episode config layered over the scene's planner section.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub overrides: Value,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl BatchSpec {
    pub fn new(config: impl Into<PathBuf>, pipeline: Pipeline, episodes: usize, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            episodes,
            pipeline,
            variant: Variant::Full,
            overrides: Value::Null,
            seed_base: 0,
            output_dir: output_dir.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut spec: Self = serde_path_to_error::deserialize(de).map_err(Error::from_path)?;
        if spec.config.is_relative() {
            if let Some(dir) = path.parent() {
                spec.config = dir.join(&spec.config);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be >= 1"));
        }
        if !self.overrides.is_null() && !self.overrides.is_object() {
            return Err(Error::config("overrides", "must be an object"));
        }
        Ok(())
    }

    pub fn seed(&self, episode: usize) -> u64 {
        self.seed_base.wrapping_add(episode as u64)
    }

    /// Config of one episode. The noisy perceiver's seed is offset by the
    /// episode seed so episodes draw independent perception noise.
    pub fn episode_config(&self, scene: &SceneConfig, episode: usize) -> Result<EpisodeConfig> {
        let mut cfg = scene.episode_config(&self.overrides)?;
        cfg.variant = self.variant;
        cfg.seed = self.seed(episode);
        cfg.perceiver.seed = cfg.perceiver.seed.wrapping_add(cfg.seed);
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scene: String,
    pub task_kind: TaskKind,
    pub pipeline: Pipeline,
    pub variant: Variant,
    pub episodes: usize,
    pub success_rate: f64,
    /// Over all episodes, failures included.
    pub mean_steps: f64,
    /// Over episodes with interference objects; `inf` when there are none.
    pub mean_min_clearance: f64,
    pub mean_perception_calls: f64,
}

impl MetricsRow {
    pub fn from_traces(scene: &str, traces: &[EpisodeTrace]) -> Result<Self> {
        let first = traces.first().ok_or_else(|| Error::InvalidInput("no traces".into()))?;
        if traces
            .iter()
            .any(|t| (t.pipeline, t.variant, t.task_kind) != (first.pipeline, first.variant, first.task_kind))
        {
            return Err(Error::InvalidInput("traces mix pipelines, variants or task kinds".into()));
        }
        let n = traces.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeTrace) -> f64| traces.iter().map(f).sum::<f64>() / n;
        let clearances: Vec<f64> = traces.iter().filter_map(|t| t.min_clearance_overall).collect();
        let mean_min_clearance = if clearances.is_empty() {
            f64::INFINITY
        } else {
            clearances.iter().sum::<f64>() / clearances.len() as f64
        };
        Ok(Self {
            scene: scene.to_string(),
            task_kind: first.task_kind,
            pipeline: first.pipeline,
            variant: first.variant,
            episodes: traces.len(),
            success_rate: traces.iter().filter(|t| t.succeeded()).count() as f64 / n,
            mean_steps: mean(&|t| t.steps_used as f64),
            mean_min_clearance,
            mean_perception_calls: mean(&|t| t.perception_calls as f64),
        })
    }

    pub fn record(&self) -> [String; 9] {
        [
            self.scene.clone(),
            self.task_kind.as_str().to_string(),
            self.pipeline.as_str().to_string(),
            self.variant.as_str().to_string(),
            self.episodes.to_string(),
            format!("{:.6}", self.success_rate),
            format!("{:.6}", self.mean_steps),
            format!("{:.6}", self.mean_min_clearance),
            format!("{:.6}", self.mean_perception_calls),
        ]
    }
}

/// Renders rows as CSV with a header line.
pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    finish(w)
}

fn episodes_csv(traces: &[EpisodeTrace], worlds: &[WorldState]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EPISODE_COLUMNS)?;
    for (i, (t, world)) in traces.iter().zip(worlds).enumerate() {
        w.write_record([
            i.to_string(),
            t.seed.to_string(),
            outcome_str(t.outcome).to_string(),
            t.steps_used.to_string(),
            format!("{:.6}", t.min_clearance_overall.unwrap_or(f64::INFINITY)),
            t.perception_calls.to_string(),
            t.grasp_events.to_string(),
            format!("{:.6}", t.path_length(&world.ee_position)),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn outcome_str(o: Outcome) -> &'static str {
    match o {
        Outcome::Success => "success",
        Outcome::Timeout => "timeout",
        Outcome::Error => "error",
    }
}

/// Written next to the traces so metrics can be rebuilt from disk alone.
#[derive(Serialize, Deserialize)]
struct Manifest {
    scene: String,
    episodes: usize,
}

#[derive(Debug)]
pub struct BatchResult {
    pub row: MetricsRow,
    pub traces: Vec<EpisodeTrace>,
    /// Initial world of each episode.
    pub worlds: Vec<WorldState>,
}

pub fn trace_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join("traces").join(format!("episode_{episode:04}.json"))
}

/// Runs one episode. Errors past config validation become `Error` traces so
/// a batch always yields one trace per episode.
pub fn run_one(spec: &BatchSpec, scene: &SceneConfig, episode: usize) -> Result<(EpisodeTrace, WorldState)> {
    let cfg = spec.episode_config(scene, episode)?;
    let world = scene.world_for_seed(cfg.seed)?;
    let run = match spec.pipeline {
        Pipeline::Vlmpc => run_episode(&cfg, &world),
        Pipeline::Traj => run_traj_episode(&cfg, &world),
    };
    let trace = match run {
        Ok(t) => t,
        Err(e @ (vlmpc_core::Error::Config { .. } | vlmpc_core::Error::InvalidInput(_))) => return Err(e.into()),
        Err(e) => EpisodeTrace {
            pipeline: spec.pipeline,
            variant: spec.variant,
            task_kind: cfg.task.kind,
            seed: cfg.seed,
            steps: Vec::new(),
            replans: Vec::new(),
            outcome: Outcome::Error,
            error: Some(e.to_string()),
            steps_used: 0,
            min_clearance_overall: None,
            perception_calls: 0,
            grasp_events: 0,
            phase_log: Vec::new(),
            final_state: world.clone(),
        },
    };
    Ok((trace, world))
}

pub fn run_batch(spec: &BatchSpec) -> Result<BatchResult> {
    let scene = SceneConfig::load(&spec.config)?;
    run_scene_batch(spec, &scene)
}

/// Runs the batch for an already loaded scene and persists
/// `metrics.csv`, `episodes.csv` and one JSON trace per episode under
/// `spec.output_dir`.
pub fn run_scene_batch(spec: &BatchSpec, scene: &SceneConfig) -> Result<BatchResult> {
    spec.validate()?;
    let cfg = spec.episode_config(scene, 0)?;
    cfg.validate(&scene.world_for_seed(cfg.seed)?)?;

    let results: Vec<(EpisodeTrace, WorldState)> = (0..spec.episodes)
        .into_par_iter()
        .map(|i| run_one(spec, scene, i))
        .collect::<Result<_>>()?;
    let (traces, worlds): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let row = MetricsRow::from_traces(&scene.name, &traces)?;

    let dir = &spec.output_dir;
    let traces_dir = dir.join("traces");
    std::fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;
    for (i, t) in traces.iter().enumerate() {
        write(&trace_path(dir, i), &serde_json::to_vec(t)?)?;
    }
    let manifest = Manifest {
        scene: scene.name.clone(),
        episodes: spec.episodes,
    };
    write(&dir.join("batch.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    write(&dir.join("metrics.csv"), metrics_csv(std::slice::from_ref(&row))?.as_bytes())?;
    write(&dir.join("episodes.csv"), episodes_csv(&traces, &worlds)?.as_bytes())?;
    Ok(BatchResult { row, traces, worlds })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Rebuilds the metrics row of a finished batch from its persisted traces.
pub fn recompute_metrics(dir: &Path) -> Result<MetricsRow> {
    let manifest_path = dir.join("batch.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let traces = (0..manifest.episodes)
        .map(|i| {
            let p = trace_path(dir, i);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok(serde_json::from_slice(&bytes)?)
        })
        .collect::<Result<Vec<EpisodeTrace>>>()?;
    MetricsRow::from_traces(&manifest.scene, &traces)
}

#[derive(Debug)]
pub struct Comparison {
    pub rows: Vec<MetricsRow>,
    pub batches: Vec<BatchResult>,
}

impl Comparison {
    pub fn csv(&self) -> Result<String> {
        metrics_csv(&self.rows)
    }
}

/// Runs every spec and lines the rows up. All pipelines present must cover
/// the same set of `(scene, task kind)` pairs.
pub fn compare_pipelines(specs: &[BatchSpec]) -> Result<Comparison> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("no batch specs".into()));
    }
    let scenes = specs
        .iter()
        .map(|s| SceneConfig::load(&s.config))
        .collect::<Result<Vec<_>>>()?;
    check_task_sets(specs, &scenes)?;
    let batches = specs
        .iter()
        .zip(&scenes)
        .map(|(spec, scene)| run_scene_batch(spec, scene))
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        rows: batches.iter().map(|b| b.row.clone()).collect(),
        batches,
    })
}

pub fn check_task_sets(specs: &[BatchSpec], scenes: &[SceneConfig]) -> Result<()> {
    let mut sets: BTreeMap<Pipeline, BTreeSet<(String, TaskKind)>> = BTreeMap::new();
    for (spec, scene) in specs.iter().zip(scenes) {
        sets.entry(spec.pipeline)
            .or_default()
            .insert((scene.name.clone(), scene.task.kind));
    }
    let mut it = sets.iter();
    if let Some((p0, first)) = it.next() {
        for (p, set) in it {
            if set != first {
                return Err(Error::InvalidInput(format!(
                    "pipelines `{}` and `{}` cover different task sets: {:?} vs {:?}",
                    p0.as_str(),
                    p.as_str(),
                    first,
                    set
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vlmpc_core::sim::{Bounds3, Vec3};

    fn trace(outcome: Outcome, steps: usize, clearance: Option<f64>, calls: usize) -> EpisodeTrace {
        EpisodeTrace {
            pipeline: Pipeline::Traj,
            variant: Variant::Full,
            task_kind: TaskKind::Reach,
            seed: 0,
            steps: Vec::new(),
            replans: Vec::new(),
            outcome,
            error: None,
            steps_used: steps,
            min_clearance_overall: clearance,
            perception_calls: calls,
            grasp_events: 0,
            phase_log: Vec::new(),
            final_state: WorldState::new(Vec3::zeros(), Vec::new(), Bounds3::default()).unwrap(),
        }
    }

    #[test]
    fn row_aggregates_and_formats() {
        let traces = [
            trace(Outcome::Success, 10, Some(0.02), 1),
            trace(Outcome::Timeout, 50, None, 5),
            trace(Outcome::Error, 3, Some(-0.01), 1),
            trace(Outcome::Success, 9, Some(0.05), 1),
        ];
        let row = MetricsRow::from_traces("s", &traces).unwrap();
        assert_eq!(row.success_rate, 0.5);
        assert_eq!(row.mean_steps, 18.0);
        assert!((row.mean_min_clearance - 0.02).abs() < 1e-15);
        assert_eq!(
            metrics_csv(&[row]).unwrap(),
            "scene,task_kind,pipeline,variant,episodes,success_rate,mean_steps,mean_min_clearance,mean_perception_calls\n\
             s,reach,traj,full,4,0.500000,18.000000,0.020000,2.000000\n"
        );
    }

    #[test]
    fn no_interference_reports_infinite_clearance() {
        let row = MetricsRow::from_traces("s", &[trace(Outcome::Success, 4, None, 1)]).unwrap();
        assert_eq!(row.record()[7], "inf");
    }

    #[test]
    fn rows_need_consistent_traces() {
        assert!(MetricsRow::from_traces("s", &[]).is_err());
        let mut other = trace(Outcome::Success, 1, None, 1);
        other.pipeline = Pipeline::Vlmpc;
        assert!(MetricsRow::from_traces("s", &[trace(Outcome::Success, 1, None, 1), other]).is_err());
    }

    #[test]
    fn seeds_wrap() {
        let mut s = BatchSpec::new("x.json", Pipeline::Vlmpc, 3, "out");
        s.seed_base = u64::MAX;
        assert_eq!(s.seed(1), 0);
    }
}
