//! Desk-scale training harness: datasets, training and evaluation,
//! checkpoints, channel statistics and the ablation grid.

pub mod ablation;
pub mod checkpoint;
pub mod data;
pub mod stats;
pub mod train;

pub use ablation::{ablation_variants, run_ablation, write_ablation_csv, AblationRow};
pub use checkpoint::Checkpoint;
pub use data::{gen_synthetic, load_cifar10, load_cifar10_split, synthetic_splits, Dataset, Split};
pub use stats::{channel_stats, export_channel_stats, ChannelStat, GroupTag};
pub use train::{
    evaluate, evaluate_model, train, train_model, EpochMetrics, MetricsLog, OptimizerKind, RunConfig,
    TrainConfig, TrainOutcome,
};
