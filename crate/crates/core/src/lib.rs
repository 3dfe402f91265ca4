//! Task-vector pruning with searched subspace reweighting.
//!
//! The pipeline: subtract a pre-trained checkpoint from a fine-tuned one to
//! get a task vector, partition it into magnitude-ranked subspaces, search
//! per-subspace weights with CMA-ES against a fitness evaluator, then keep
//! only the top fraction of the reweighted vector by magnitude. The sparse
//! result transfers to the base model, fuses across tasks, and stores
//! compactly as one base checkpoint plus per-task masks and deltas.

pub mod baselines;
pub mod checkpoint;
pub mod cmaes;
pub mod compress;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod prune;
pub mod storage;
pub mod subspace;
pub mod transfer;

pub use baselines::{dare, task_arithmetic, ties_merge, weight_average, DareConfig};
pub use checkpoint::{apply, diff, Checkpoint, TaskVector, TensorLayout, TensorSpec};
pub use compress::{compress, load_bundle, save_bundle, CompressedBundle};
pub use error::{Error, Result};
pub use fusion::{
    fuse, fuse_search, fuse_unnormalized, FusionResult, FUSION_LAMBDA_MAX, FUSION_LAMBDA_MIN,
};
pub use mask::Mask;
pub use metrics::{h_score, normalized_accuracy};
pub use prune::{
    nps_search, prune, top_r_mask, FitnessEvaluator, NpsSearchConfig, NpsSearchResult,
    PrunedTaskVector, SparsityRatio,
};
pub use storage::{storage_report, StorageReport};
pub use subspace::{
    adjusted_model, partition, partition_scoped, reweight, PartitionScope, SubspacePartition,
    WeightVector,
};
pub use transfer::{transfer, TransferConfig};
