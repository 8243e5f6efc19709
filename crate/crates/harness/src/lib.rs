//! Batch runner for the planning pipelines: scene files with seeded object
//! placement, per-episode JSON traces, and CSV metrics tables.
//!
//! Output layout of a batch directory:
//!
//! ```text
//! batch.json           scene name and episode count
//! metrics.csv          one aggregate row (see METRICS_COLUMNS)
//! episodes.csv         one row per episode (see EPISODE_COLUMNS)
//! traces/episode_NNNN.json
//! ```

pub mod batch;
pub mod error;
pub mod scene;

pub use batch::{
    compare_pipelines, metrics_csv, recompute_metrics, run_batch, run_scene_batch, BatchResult, BatchSpec, Comparison,
    MetricsRow,
};
pub use error::{Error, Result};
pub use scene::SceneConfig;
