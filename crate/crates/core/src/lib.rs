//! Closed-loop manipulation planning over a kinematic tabletop world.
//!
//! Two pipelines share the world model in [`sim`] and the perceivers in
//! [`perception`]:
//!
//! * the step-wise planner ([`vlmpc`]) samples action sequences around a
//!   hint-derived mean ([`sampling`]), rolls them out with a [`predictor`] and
//!   scores them with the hierarchical [`costs`];
//! * the trajectory planner ([`traj_vlmpc`]) samples whole waypoint paths
//!   ([`traj`]) and scores them against a voxel [`value_map`].

pub mod costs;
pub mod episode;
pub mod error;
pub mod perception;
pub mod predictor;
pub mod sampling;
pub mod sim;
pub mod traj;
pub mod traj_vlmpc;
pub mod value_map;
pub mod vlmpc;

pub use episode::{EpisodeConfig, EpisodeTrace, Outcome, Pipeline, Variant};
pub use error::{Error, PerceptionError, Result};
pub use traj_vlmpc::run_traj_episode;
pub use vlmpc::{planner_rng, run_episode};
