//! File formats: F4D volumes and patch sets, F4DW checkpoints, key=value
//! configs and run manifests.

pub mod checkpoint;
pub mod config;
pub mod f4d;
pub mod manifest;

pub use checkpoint::{load_params, save_params};
pub use config::Config;
pub use manifest::RunManifest;
