//! Multiplex thinking at desk scale.
//!
//! Each reasoning step samples K discrete tokens from the policy and feeds
//! the model a single continuous "multiplex token" built from their
//! embeddings. The crate covers the step construction, a small transformer
//! policy, rollouts with a factorized likelihood, GRPO training on synthetic
//! verifiable tasks, and Pass@k / entropy evaluation.

pub mod config;
pub mod embedding;
pub mod error;
pub mod grpo;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod rng;
pub mod rollout;
pub mod sampler;
pub mod tasks;
pub mod viz;

pub use embedding::{CoefficientMap, EmbeddingTable};
pub use error::{Error, Result};
pub use model::{ContextSequence, ModelConfig, Params, PolicyModel};
pub use sampler::{AggregationScheme, MultiplexSample, ProbVector, Selection};
pub use rollout::{Diversity, Mode, MultiplexStep, RolloutConfig, StopRule, Termination, Trajectory};
pub use tasks::{TaskInstance, TaskSpec, Vocabulary};
