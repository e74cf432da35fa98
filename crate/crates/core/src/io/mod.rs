//! Dataset ingestion, synthetic data generation, and checkpoint persistence.

pub mod checkpoint;
pub mod dataset;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ClassifierCheckpoint};
pub use dataset::{gen_synthetic, load_csv, parse_csv, save_csv, LabeledDataset, SyntheticSpec};
