pub mod adaptation;
pub mod classifier;
pub mod config;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;
pub mod pnm;
pub mod synthdata;
pub mod tpca;

pub use error::{Error, Result};
