//! Run configuration, model assembly, optimization, evaluation,
//! checkpoints and run manifests.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod manifest;
pub mod model;
pub mod optim;
pub mod train;

pub use config::{EvalConfig, OptimConfig, RunConfig, SubsetConfig, Task};
pub use eval::{evaluate, format_table, order_study, score_entities, score_links, EvalReport, Prf, Variant};
pub use manifest::{manifest_path, Manifest};
pub use model::{collect_classes, load_prefix, rng_for, KeyedPrediction, Model, Stream};
pub use optim::AdamW;
pub use train::{finetune, pretrain, select_subset, TrainSummary};
