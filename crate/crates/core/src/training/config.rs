//! Training configuration: a flat TOML table whose keys mirror
//! [`TrainConfig`]. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Activation, PermutationKind};
use crate::sim::Process;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Hierarchical two-mode process.
    Exp1,
    /// Maze navigation.
    Exp2,
    /// Fluid field distributions.
    Exp3,
}

impl Experiment {
    pub fn process(self) -> Process {
        match self {
            Experiment::Exp1 => Process::Hierarchical,
            Experiment::Exp2 => Process::Maze,
            Experiment::Exp3 => Process::Fluid,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Stack of recurrent autoregressive flow cells.
    Raf,
    /// Stack of affine couplings without memory.
    Realnvp,
    /// GRU with an isotropic Gaussian head.
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Leaky,
    Logistic,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationName {
    Reversal,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub experiment: Experiment,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Episodes per optimiser step.
    #[serde(default = "default_batch")]
    pub batch_episodes: usize,
    /// Flow layers (RAF cells or couplings); experiment default when absent.
    #[serde(default)]
    pub layers: Option<usize>,
    /// GRU width; experiment default when absent.
    #[serde(default)]
    pub hidden: Option<usize>,
    /// Weight of the KL term in the field loss.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_activation")]
    pub activation: ActivationName,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_permutation")]
    pub permutation: PermutationName,
    /// Autoencoder-only epochs before joint training (field experiment).
    #[serde(default = "default_pretrain")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Backpropagation window in steps; 0 means the whole episode.
    #[serde(default)]
    pub truncation: usize,
}

fn default_model() -> ModelKind {
    ModelKind::Raf
}
fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    10
}
fn default_alpha() -> f64 {
    1.0
}
fn default_activation() -> ActivationName {
    ActivationName::Leaky
}
/// Training default for the leaky slope. Steeper negative branches
/// (smaller slopes) make the density jump by a factor `α` at every kink,
/// which gradients cannot see; at 0.1 the training loss rises.
pub const TRAIN_LEAKY_SLOPE: f64 = 0.9;

fn default_slope() -> f64 {
    TRAIN_LEAKY_SLOPE
}
fn default_permutation() -> PermutationName {
    PermutationName::Reversal
}
fn default_pretrain() -> usize {
    500
}
fn default_clip() -> f64 {
    10.0
}

impl TrainConfig {
    pub fn new(experiment: Experiment, model: ModelKind) -> Self {
        TrainConfig {
            experiment,
            model,
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_episodes: default_batch(),
            layers: None,
            hidden: None,
            alpha: default_alpha(),
            seed: None,
            activation: default_activation(),
            leaky_slope: default_slope(),
            permutation: default_permutation(),
            pretrain_epochs: default_pretrain(),
            grad_clip: default_clip(),
            truncation: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        // An unreadable config is a usage error, not an I/O failure.
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_episodes == 0 {
            return bad("batch_episodes must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if self.layers == Some(0) || self.hidden == Some(0) {
            return bad("layers and hidden must be positive".into());
        }
        self.activation().validate()?;
        let ok = matches!(
            (self.experiment, self.model),
            (Experiment::Exp1, ModelKind::Raf | ModelKind::Realnvp)
                | (Experiment::Exp2, ModelKind::Raf | ModelKind::Rnn)
                | (Experiment::Exp3, ModelKind::Raf)
        );
        if !ok {
            return bad(format!(
                "model {:?} is not available for {}",
                self.model,
                self.experiment.name()
            ));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers.unwrap_or(match self.experiment {
            Experiment::Exp1 => 5,
            Experiment::Exp2 => 8,
            Experiment::Exp3 => 4,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(match self.experiment {
            Experiment::Exp1 => 32,
            Experiment::Exp2 => 64,
            Experiment::Exp3 => 32,
        })
    }

    pub fn activation(&self) -> Activation {
        match self.activation {
            ActivationName::Leaky => Activation::LeakyLinear {
                alpha: self.leaky_slope,
            },
            ActivationName::Logistic => Activation::Logistic,
            ActivationName::Identity => Activation::Identity,
        }
    }

    pub fn permutation(&self, seed: u64) -> PermutationKind {
        match self.permutation {
            PermutationName::Reversal => PermutationKind::Reversal,
            PermutationName::Random => PermutationKind::Random { seed },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_full() {
        let c = TrainConfig::parse("experiment = \"exp1\"").unwrap();
        assert_eq!(c.model, ModelKind::Raf);
        assert_eq!(c.layers(), 5);
        assert_eq!(c.learning_rate, 1e-3);
        let c = TrainConfig::parse(
            "experiment = \"exp2\"\nmodel = \"rnn\"\nlearning_rate = 0.01\nepochs = 3\nhidden = 16\nseed = 4\n",
        )
        .unwrap();
        assert_eq!(c.hidden(), 16);
        assert_eq!(c.seed, Some(4));
        let back = TrainConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(
            TrainConfig::parse("experiment = \"exp1\"\nlearnig_rate = 0.1"),
            Err(Error::Config(_))
        ));
        assert!(TrainConfig::parse("experiment = \"exp1\"\nlearning_rate = 0").is_err());
        assert!(TrainConfig::parse("experiment = \"exp1\"\nepochs = 0").is_err());
        assert!(TrainConfig::parse("experiment = \"exp1\"\nalpha = -1").is_err());
        assert!(TrainConfig::parse("experiment = \"exp3\"\nmodel = \"rnn\"").is_err());
    }
}
