//! Training loop, evaluation protocols, ranking metrics, and run reports.

pub mod eval;
pub mod metrics;
pub mod synthetic;
mod train;

pub use eval::{
    collect_attention, eval_csr, eval_isr, eval_tsr, item_primitives, mean_metrics, prepare_all,
    rank_items, sample_profile, train_items_by_user, warm_windows, CandidatePolicy, EvalInputs,
    IsrSplit, PopularityRanker, PreparedSample, Protocol, RankingReport,
};
pub use metrics::{evaluate_ranking, ndcg_at_k, precision_at_k, recall_at_k, MetricTriple};
pub use synthetic::{planted_dataset, SyntheticSpec};
pub use train::{train, TrainOutcome};

use thiserror::Error;

use crate::ingest::{make_csr_samples, Dataset, TrainingSample};
use crate::numkernel::KernelError;
use crate::recommender::{ConfigError, ModelConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no {0} samples available")]
    NoSamples(&'static str),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("training diverged at epoch {epoch}: batch loss {batch_loss}")]
    Divergence { epoch: usize, batch_loss: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Sliding-window samples for a dataset under a model configuration.
pub fn config_samples(dataset: &Dataset, config: &ModelConfig) -> Vec<TrainingSample> {
    make_csr_samples(
        &dataset.sequences,
        config.session_len,
        config.future_len,
        config.stride(),
    )
}
