use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GeneratorConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadKind};
use crate::objectives::MaskingConfig;

/// What a training run optimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pretrain,
    EeBio,
    #[default]
    EeSpade,
    ElSpade,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Pretrain => "pretrain",
            Task::EeBio => "ee_bio",
            Task::EeSpade => "ee_spade",
            Task::ElSpade => "el_spade",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "pretrain" => Ok(Task::Pretrain),
            "ee_bio" => Ok(Task::EeBio),
            "ee_spade" => Ok(Task::EeSpade),
            "el_spade" => Ok(Task::ElSpade),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }

    pub fn heads(self) -> &'static [HeadKind] {
        match self {
            Task::Pretrain => &[],
            Task::EeBio => &[HeadKind::Bio],
            Task::EeSpade => &[HeadKind::Itc, HeadKind::Stc],
            Task::ElSpade => &[HeadKind::Rel],
        }
    }

    /// Whether decoding is independent of the serialization order.
    pub fn order_free(self) -> bool {
        matches!(self, Task::EeSpade | Task::ElSpade)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    /// Optimizer steps; ignored when `epochs` is positive.
    pub steps: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            batch_size: 8,
            steps: 1000,
            epochs: 0,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.steps == 0 && self.epochs == 0 {
            return fail("one of steps or epochs must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return fail("grad_clip must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("invalid Adam moments");
        }
        Ok(())
    }

    /// Total optimizer steps over `n_train` documents.
    pub fn total_steps(&self, n_train: usize) -> usize {
        if self.epochs > 0 {
            self.epochs * n_train.div_ceil(self.batch_size).max(1)
        } else {
            self.steps
        }
    }
}

/// Training subset of a fine-tuning run; at most one may be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetConfig {
    pub train_count: Option<usize>,
    pub train_fraction: Option<f64>,
}

impl SubsetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_count.is_some() && self.train_fraction.is_some() {
            return Err(Error::Config("train_count and train_fraction are mutually exclusive".into()));
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("train_fraction {f} outside (0, 1]")));
            }
        }
        if self.train_count == Some(0) {
            return Err(Error::Config("train_count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rotation angle of the `rotate` variant, in degrees.
    pub rotate_angle: f64,
    /// Evaluate on the held-out split after every epoch of fine-tuning.
    pub every_epoch: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            rotate_angle: 10.0,
            every_epoch: true,
        }
    }
}

/// Everything a run depends on. Every key has a default and unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub heads: HeadConfig,
    pub masking: MaskingConfig,
    pub pretrain: OptimConfig,
    pub finetune: OptimConfig,
    pub subset: SubsetConfig,
    pub eval: EvalConfig,
    pub generator: GeneratorConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.heads.validate()?;
        self.masking.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.subset.validate()?;
        self.generator.validate()?;
        if !(self.eval.rotate_angle.abs() < 45.0) {
            return Err(Error::Config("eval.rotate_angle must lie in (-45, 45)".into()));
        }
        let mut enc = self.encoder.clone();
        if enc.vocab_size == 0 {
            enc.vocab_size = 1;
        }
        enc.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sed = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[encoder]\nhiden = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 7;
        c.encoder.num_layers = 3;
        c.subset.train_count = Some(10);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(RunConfig::from_toml("[subset]\ntrain_count = 5\ntrain_fraction = 0.5").is_err());
        assert!(RunConfig::from_toml("[finetune]\nbatch_size = 0").is_err());
        assert!(RunConfig::from_toml("[encoder]\nhidden = 10\nheads = 4").is_err());
    }

    #[test]
    fn epochs_override_steps() {
        let o = OptimConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        assert_eq!(o.total_steps(17), 9);
    }
}
