//! TOML run configuration.
//!
//! ```toml
//! [model]
//! d_model = 64
//!
//! [pretrain]
//! steps = 2000
//! tasks = [{ kind = "chain_apply", depth = 3, modulus = 10 }]
//!
//! [train]
//! group_size = 8
//! task = { kind = "chain_apply", depth = 3, modulus = 10 }
//! [train.rollout]
//! K = 3
//! scheme = "reweighted"
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::TrainConfig;
use crate::model::ModelConfig;
use crate::pretrain::PretrainConfig;
use crate::rollout::RolloutConfig;
use crate::tasks::{generate, TaskSpec, TASK_VOCAB_MIN};

/// Settings of an evaluation job (Pass@k sampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub questions: usize,
    /// Samples per question (n).
    pub samples: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub task: TaskSpec,
    pub rollout: RolloutConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            questions: 64,
            samples: 64,
            bootstrap: 1000,
            seed: 1,
            task: TaskSpec::ChainApply { depth: 3, modulus: 10 },
            rollout: RolloutConfig { k: 3, max_think: 8, max_answer: 4, ..RolloutConfig::default() },
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.rollout.validate()?;
        self.task.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.questions == 0 || self.samples == 0 {
            return Err(Error::Config("questions and samples must be positive".into()));
        }
        if self.bootstrap == 0 {
            return Err(Error::Config("bootstrap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn check_fits(model: &ModelConfig, task: TaskSpec, rollout: &RolloutConfig, what: &str) -> Result<()> {
    let prompt = generate(task, 0, 0)?.prompt_tokens.len();
    if prompt + rollout.max_answer + 1 > model.max_context {
        return Err(Error::Config(format!(
            "{what}: prompt of {prompt} tokens plus an answer of {} does not fit max_context {}",
            rollout.max_answer, model.max_context
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.vocab_size < TASK_VOCAB_MIN {
            return Err(Error::Config(format!(
                "vocab_size {} is below the {TASK_VOCAB_MIN} tokens the tasks need",
                self.model.vocab_size
            )));
        }
        self.pretrain.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        check_fits(&self.model, self.train.task, &self.train.rollout, "train")?;
        check_fits(&self.model, self.eval.task, &self.eval.rollout, "eval")?;
        for &t in &self.pretrain.tasks {
            let inst = generate(t, 0, 0)?;
            let len = inst.supervised_pair().0.len();
            if len > self.model.max_context {
                return Err(Error::Config(format!(
                    "pretraining sequence of {len} tokens exceeds max_context {}",
                    self.model.max_context
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::AggregationScheme;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c = RunConfig::from_toml_str(
            r#"
            [train]
            learning_rate = 3e-4
            task = { kind = "modular_add", modulus = 7 }
            [train.rollout]
            K = 5
            scheme = "uniform"
            stop_rule = "any-sampled"
            "#,
        )
        .unwrap();
        assert_eq!(c.train.learning_rate, 3e-4);
        assert_eq!(c.train.rollout.k, 5);
        assert_eq!(c.train.rollout.scheme, AggregationScheme::Uniform);
        assert_eq!(c.train.group_size, 8);
        assert_eq!(c.train.task, TaskSpec::ModularAdd { modulus: 7 });
    }

    #[test]
    fn schema_violations_are_config_errors() {
        for bad in [
            "[train]\nbogus = 1",
            "[train]\ngroup_size = 1",
            "[train.rollout]\nK = 0",
            "[train.rollout]\ntop_p = 1.5",
            "[model]\nvocab_size = 8",
            "[model]\nd_model = 30\nn_heads = 4",
            "[model]\nmax_context = 8",
            "[eval]\nsamples = 0",
            "[pretrain]\ntasks = [{ kind = \"copy\", length = 99 }]",
            "[train]\nprecision = \"bf16\"",
            "not toml at all =",
        ] {
            assert!(matches!(RunConfig::from_toml_str(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
