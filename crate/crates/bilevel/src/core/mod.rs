//! Data model shared by every other module: transitions, datasets, training
//! configuration, run traces and the seeded random stream.

mod config;
mod dataset;
mod rng;
mod trace;

pub use config::{Geometry, OutputRule, PolicyInit, StepSchedule, TauModelKind, TrainConfig};
pub use dataset::{header_path, load_dataset, save_dataset, DatasetHeader, OfflineDataset, Transition};
pub use rng::{seeded_rng, substream, RngStream};
pub use trace::{RoundRecord, TrainTrace};
