//! Run configuration, the DP training loop and the experiment grid.

mod config;
mod grid;
mod train;

pub use config::{SigmaSetting, TrainConfig};
pub use grid::{load_grid_configs, run_grid, GridRow};
pub use train::{run_training, RngStreams, RunManifest, StepPlan};
