use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vlmpc_core::perception::PhaseMemory;
use vlmpc_core::{planner_rng, sim, traj_vlmpc, Pipeline, Variant};
use vlmpc_harness::batch::check_task_sets;
use vlmpc_harness::{metrics_csv, run_scene_batch, BatchSpec, Error, Result, SceneConfig};

#[derive(Parser)]
#[command(name = "vlmpc", about = "Run planning episodes and collect metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of seeded episodes on one scene.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "vlmpc")]
        pipeline: Pipeline,
        #[arg(long, default_value = "full")]
        variant: Variant,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several batch spec files and write a side-by-side table.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        specs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the value map of a scene's first replan (f32 LE plus `.hdr`).
    DumpMap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Placement seed; omit to use the positions in the file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            pipeline,
            variant,
            episodes,
            seed,
            out,
        } => {
            let scene = SceneConfig::load(&config)?;
            let mut spec = BatchSpec::new(config, pipeline, episodes, out);
            spec.variant = variant;
            spec.seed_base = seed;
            let result = run_scene_batch(&spec, &scene)?;
            print!("{}", metrics_csv(&[result.row])?);
        }
        Command::Compare { specs, out } => {
            let mut loaded = specs.iter().map(|p| BatchSpec::load(p)).collect::<Result<Vec<_>>>()?;
            let scenes = loaded
                .iter()
                .map(|s| SceneConfig::load(&s.config))
                .collect::<Result<Vec<_>>>()?;
            check_task_sets(&loaded, &scenes)?;
            let mut rows = Vec::new();
            for (i, (spec, scene)) in loaded.iter_mut().zip(&scenes).enumerate() {
                spec.output_dir = out.join(format!(
                    "{i:02}_{}_{}_{}",
                    scene.name,
                    spec.pipeline.as_str(),
                    spec.variant.as_str()
                ));
                rows.push(run_scene_batch(spec, scene)?.row);
            }
            let csv = metrics_csv(&rows)?;
            write(&out.join("comparison.csv"), csv.as_bytes())?;
            print!("{csv}");
        }
        Command::DumpMap { config, out, seed } => {
            let scene = SceneConfig::load(&config)?;
            let mut cfg = scene.episode_config(&serde_json::Value::Null)?;
            let world = match seed {
                Some(s) => {
                    cfg.seed = s;
                    scene.world_for_seed(s)?
                }
                None => scene.base_world()?,
            };
            cfg.validate(&world)?;
            let obs = sim::render(&world, &cfg.sim.render);
            let report = cfg.perceiver.build()?.perceive(&obs, &cfg.task, &PhaseMemory::default())?;
            let plan = traj_vlmpc::plan_trajectory(&cfg, &obs, &report, &mut planner_rng(&cfg))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            plan.map.dump(&out)?;
            println!(
                "{}: {}x{}x{} voxels, min {:.6} at sub-goal `{}`",
                out.display(),
                plan.map.grid.dims[0],
                plan.map.grid.dims[1],
                plan.map.grid.dims[2],
                plan.map.values.iter().copied().fold(f64::INFINITY, f64::min),
                report.sub_goal.id
            );
        }
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
