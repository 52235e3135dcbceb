//! Coherence scorers: the linear grid-feature ranker and the recurrent
//! neural scorer, with ranking and checkpointing.

pub mod checkpoint;
pub mod linear;
pub mod neural;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Turn;
use crate::engine::EngineError;
use crate::grid::GridError;
use crate::linearizer::LinearizeError;
use crate::metrics::{pessimistic_order, MetricError};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, ModelCheckpoint};
pub use linear::{train_linear, train_linear_ranker, LinearConfig, LinearModel, LinearRankerParams};
pub use neural::{
    score_instances, train_neural, train_neural_from, Channel, EpochRecord, NeuralConfig, NeuralModel, PairObjective, ScorerParams,
    TrainedNeural, TrainingManifest,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoding(#[from] LinearizeError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{what}: expected {expected}, got {got}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("stream channels `{got}` do not match model channels `{expected}`")]
    ChannelMismatch { expected: String, got: String },
    #[error("{channel} id {id} outside vocabulary of size {size}")]
    VocabRange { channel: Channel, id: u32, size: usize },
    #[error("empty token stream")]
    EmptyStream,
    #[error("no training pairs")]
    EmptyTrain,
    #[error("empty development set")]
    EmptyDev,
    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ModelError {
    /// Numeric failures as opposed to bad input data or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, ModelError::Divergence { .. } | ModelError::Engine(EngineError::NonFinite(_)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoherenceModel {
    Neural(NeuralModel),
    Linear(LinearModel),
}

impl CoherenceModel {
    pub fn kind(&self) -> &'static str {
        match self {
            CoherenceModel::Neural(_) => "neural",
            CoherenceModel::Linear(_) => "linear",
        }
    }

    pub fn score(&self, context: &[Turn], candidate: &Turn) -> Result<f64, ModelError> {
        match self {
            CoherenceModel::Neural(m) => m.score(context, candidate),
            CoherenceModel::Linear(m) => m.score(context, candidate),
        }
    }

    pub fn score_candidates(&self, context: &[Turn], candidates: &[Turn]) -> Result<Vec<f64>, ModelError> {
        candidates.par_iter().map(|c| self.score(context, c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    /// Position in the input candidate list.
    pub index: usize,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Orders candidates by descending score. Ties are broken pessimistically by
/// `relevance` when given (more relevant last), then by input position.
pub fn rank_scores(scores: &[f64], relevance: Option<&[f64]>) -> Vec<RankedCandidate> {
    let zeros = vec![0.0; scores.len()];
    let rel = relevance.unwrap_or(&zeros);
    pessimistic_order(scores, rel)
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankedCandidate {
            index: i,
            score: scores[i],
            rank: r + 1,
        })
        .collect()
}

pub fn rank_candidates(
    context: &[Turn],
    candidates: &[Turn],
    relevance: Option<&[f64]>,
    model: &CoherenceModel,
) -> Result<Vec<RankedCandidate>, ModelError> {
    let scores = model.score_candidates(context, candidates)?;
    Ok(rank_scores(&scores, relevance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_examples() {
        let r = rank_scores(&[0.9, 0.1, 0.5], Some(&[1.0, 0.0, 0.0]));
        assert_eq!(r[0].index, 0);
        let r = rank_scores(&[0.5, 0.5, 0.9], Some(&[1.0, 0.0, 0.0]));
        let pos = r.iter().find(|c| c.index == 0).unwrap();
        assert_eq!(pos.rank, 3);
    }
}
