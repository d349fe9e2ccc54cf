//! Synthetic data, CSV ingestion, seeded randomness and checkpoints.

mod checkpoint;
mod rng;
mod synthetic;
mod table;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SCHEMA_VERSION};
pub use rng::SplitMix64;
pub use synthetic::{gen_gaussian_mixture, SyntheticSpec};
pub use table::{load_csv, write_csv, DatasetTable};
