//! Training, evaluation, persistence and the command-line surface.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod evaluate;
pub mod gradcheck;
pub mod heatmap;
pub mod optim;
pub mod train;
