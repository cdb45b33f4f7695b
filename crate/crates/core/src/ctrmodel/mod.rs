//! CTR model: features, forward pass, loss, training and checkpoints.
//!
//! A sample's feature vector is `[h_query ‖ h_user ‖ h_ad ‖ h]`, where `h` is
//! the intention embedding from [`crate::gid`] (or a sum-pool of the raw
//! click embeddings for the baseline aggregator). A five-layer perceptron
//! maps it to one logit and a sigmoid gives the predicted CTR.

mod checkpoint;
mod gradcheck;
mod model;
mod sample;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{end_to_end_grad_check, random_graph, GradCheckSetup};
pub use model::{
    cross_entropy, init_params, init_params_with_bound, Encoded, GraphIndex, Layer, ModelParams,
    Vocab, Vocabularies, INIT_BOUND, UNK_TOKEN,
};
pub use sample::{parse_samples, parse_samples_str, write_samples, Sample};
pub use train::{batch_gradients, train, train_from, Adam, TrainOutcome};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    /// Graph diffusion with attention aggregation and ad-aware readout.
    Gin,
    /// Sum of raw click embeddings.
    SumPool,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Gin => "gin",
            Aggregator::SumPool => "sumpool-base",
        })
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gin" => Ok(Aggregator::Gin),
            "sumpool-base" | "sumpool" => Ok(Aggregator::SumPool),
            other => Err(Error::invalid(format!(
                "unknown aggregator {other:?} (expected gin or sumpool-base)"
            ))),
        }
    }
}

/// Architecture hyperparameters; everything a checkpoint must agree on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Diffusion depth `K`.
    pub depth: usize,
    /// Top-N neighbors per node.
    pub neighbors: usize,
    /// Most recent clicks kept per sample.
    pub clicks: usize,
    /// Hidden widths of the perceptron; one more layer maps to the logit.
    pub hidden: Vec<usize>,
    pub aggregator: Aggregator,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 16,
            depth: 2,
            neighbors: 10,
            clicks: 20,
            hidden: vec![64, 32, 16, 8],
            aggregator: Aggregator::Gin,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.neighbors == 0 || self.clicks == 0 {
            return Err(Error::invalid("dim, neighbors and clicks must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    /// Hops that actually run: the baseline never diffuses.
    pub fn effective_depth(&self) -> usize {
        match self.aggregator {
            Aggregator::Gin => self.depth,
            Aggregator::SumPool => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-3,
            epochs: 1,
            batch: 64,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch == 0 || self.threads == 0 {
            return Err(Error::invalid("batch and threads must be positive"));
        }
        Ok(())
    }
}
