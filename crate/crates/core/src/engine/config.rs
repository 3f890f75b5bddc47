use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Whole network trained on the stream with no memory.
    Finetune,
    /// Whole network trained on the shuffled union of all tasks.
    Joint,
    /// Reservoir of raw inputs at full precision; whole network trained on replays.
    ErRaw,
    /// Frozen extractor, bit-packed latent reservoir, wake phase only.
    LatentReplay,
    /// Latent replay followed by the noisy sleep phase.
    Seslr,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Finetune,
        StrategyKind::Joint,
        StrategyKind::ErRaw,
        StrategyKind::LatentReplay,
        StrategyKind::Seslr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Finetune => "finetune",
            StrategyKind::Joint => "joint",
            StrategyKind::ErRaw => "er_raw",
            StrategyKind::LatentReplay => "latent_replay",
            StrategyKind::Seslr => "seslr",
        }
    }

    /// Whether the extractor stays frozen and training runs on latents.
    pub fn uses_latents(self) -> bool {
        matches!(self, StrategyKind::LatentReplay | StrategyKind::Seslr)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// Hyperparameters of pretraining, the wake phase and the sleep phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub pretrain_epochs: usize,
    /// Fraction of each class used for pretraining.
    pub pretrain_fraction: f64,
    pub pretrain_batch: usize,
    pub pretrain_optimizer: OptimizerConfig,
    /// λ, weight of the replay loss.
    pub lambda: f64,
    pub batch_current: usize,
    pub batch_replay: usize,
    pub capacity: usize,
    pub continual_optimizer: OptimizerConfig,
    pub sleep_epochs: usize,
    /// Standard deviation of the Gaussian feature noise during sleep.
    pub noise_sigma: f64,
    pub sleep_optimizer: OptimizerConfig,
    /// Sequence length T.
    pub steps: usize,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 16,
            pretrain_fraction: 0.5,
            pretrain_batch: 32,
            pretrain_optimizer: OptimizerConfig::adam(0.001),
            lambda: 1.0,
            batch_current: 16,
            batch_replay: 16,
            capacity: 50,
            continual_optimizer: OptimizerConfig::adam(0.0005),
            sleep_epochs: 5,
            noise_sigma: 0.4,
            sleep_optimizer: OptimizerConfig::adam(0.0005),
            steps: 4,
            eval_batch: 256,
            seed: 0,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction <= 1.0) {
            return fail(format!(
                "pretrain_fraction must lie in (0, 1], got {}",
                self.pretrain_fraction
            ));
        }
        for (name, v) in [
            ("pretrain_batch", self.pretrain_batch),
            ("batch_current", self.batch_current),
            ("batch_replay", self.batch_replay),
            ("steps", self.steps),
            ("eval_batch", self.eval_batch),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        for (name, o) in [
            ("pretrain_optimizer", self.pretrain_optimizer),
            ("continual_optimizer", self.continual_optimizer),
            ("sleep_optimizer", self.sleep_optimizer),
        ] {
            if !(o.lr() > 0.0 && o.lr().is_finite()) {
                return fail(format!("{name} learning rate must be positive"));
            }
        }
        Ok(())
    }

    /// Flat `key = value` echo used in reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let opt = |o: &OptimizerConfig| match o {
            OptimizerConfig::Sgd { lr } => format!("sgd(lr={lr})"),
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                format!("adam(lr={lr},beta1={beta1},beta2={beta2},eps={eps})")
            }
        };
        vec![
            ("pretrain_epochs".into(), self.pretrain_epochs.to_string()),
            (
                "pretrain_fraction".into(),
                self.pretrain_fraction.to_string(),
            ),
            ("pretrain_batch".into(), self.pretrain_batch.to_string()),
            ("pretrain_optimizer".into(), opt(&self.pretrain_optimizer)),
            ("lambda".into(), self.lambda.to_string()),
            ("batch_current".into(), self.batch_current.to_string()),
            ("batch_replay".into(), self.batch_replay.to_string()),
            ("capacity".into(), self.capacity.to_string()),
            ("continual_optimizer".into(), opt(&self.continual_optimizer)),
            ("sleep_epochs".into(), self.sleep_epochs.to_string()),
            ("noise_sigma".into(), self.noise_sigma.to_string()),
            ("sleep_optimizer".into(), opt(&self.sleep_optimizer)),
            ("steps".into(), self.steps.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}
