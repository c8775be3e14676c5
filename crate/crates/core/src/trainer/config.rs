//! Training configuration as plain `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. Keys and defaults:
//!
//! | key | default |
//! |-----|---------|
//! | learning_rate | 0.001 |
//! | beta1, beta2 | 0, 0.99 |
//! | adam_epsilon | 1e-8 |
//! | critic_iters_per_gen | 5 |
//! | penalty | gp-scaled-one-sided |
//! | lambda, drift_epsilon, clip_bound | 10, 0.001, 0.01 |
//! | batch_size | 64 |
//! | epochs_per_stage, fade_epochs_per_stage | 2000, 2000 |
//! | seed | 0 |
//! | latent_dim, channels, base_len | 200, 50, 24 |
//! | max_stage | 5 (architecture depth; data length is `base_len * 2^max_stage`) |
//! | final_stage | max_stage (last stage actually trained) |
//! | upsample, downsample | cubic, strided-conv |
//! | leaky_slope, equalized_lr | 0.2, true |
//! | precision | 64 (or 32) |
//! | eval_every | 0 (epochs between evaluations; 0 = end of each phase) |
//! | eval_projections | 512 |
//! | checkpoint_every | 0 (epochs between checkpoints; 0 = end of each phase) |

use std::fmt::Write;
use std::path::Path;

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::ganloss::{PenaltyConfig, PenaltyKind};
use crate::nets::NetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub critic_iters_per_gen: usize,
    pub penalty: PenaltyConfig,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    pub fade_epochs_per_stage: usize,
    pub seed: u64,
    pub net: NetConfig,
    /// Last stage to train; `None` trains through `net.max_stage`.
    pub final_stage: Option<usize>,
    pub precision: Precision,
    pub eval_every: usize,
    pub eval_projections: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            critic_iters_per_gen: 5,
            penalty: PenaltyConfig::default(),
            batch_size: 64,
            epochs_per_stage: 2000,
            fade_epochs_per_stage: 2000,
            seed: 0,
            net: NetConfig::default(),
            final_stage: None,
            precision: Precision::F32,
            eval_every: 0,
            eval_projections: 512,
            checkpoint_every: 0,
        }
    }
}

pub(crate) fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.penalty.validate()?;
        if self.critic_iters_per_gen == 0 {
            return Err(Error::invalid("critic_iters_per_gen must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.last_stage() > self.net.max_stage {
            return Err(Error::invalid(format!(
                "final_stage {} exceeds max_stage {}",
                self.last_stage(),
                self.net.max_stage
            )));
        }
        if self.net.channels == 0 || self.net.latent_dim == 0 {
            return Err(Error::invalid("channels and latent_dim must be positive"));
        }
        if self.eval_projections == 0 {
            return Err(Error::invalid("eval_projections must be positive"));
        }
        if self.net.base_len % 2 != 0 || self.net.base_len < 4 {
            return Err(Error::invalid("base_len must be even and at least 4"));
        }
        Ok(())
    }

    pub fn last_stage(&self) -> usize {
        self.final_stage.unwrap_or(self.net.max_stage)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.adam.learning_rate = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "adam_epsilon" => self.adam.epsilon = parse_value(key, value)?,
            "critic_iters_per_gen" => self.critic_iters_per_gen = parse_value(key, value)?,
            "penalty" => self.penalty.kind = value.parse::<PenaltyKind>()?,
            "lambda" => self.penalty.lambda = parse_value(key, value)?,
            "drift_epsilon" => self.penalty.drift_epsilon = parse_value(key, value)?,
            "clip_bound" => self.penalty.clip_bound = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs_per_stage" => self.epochs_per_stage = parse_value(key, value)?,
            "fade_epochs_per_stage" => self.fade_epochs_per_stage = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "latent_dim" => self.net.latent_dim = parse_value(key, value)?,
            "channels" => self.net.channels = parse_value(key, value)?,
            "base_len" => self.net.base_len = parse_value(key, value)?,
            "max_stage" => self.net.max_stage = parse_value(key, value)?,
            "final_stage" => self.final_stage = Some(parse_value(key, value)?),
            "upsample" => self.net.upsample = value.parse()?,
            "downsample" => self.net.downsample = value.parse()?,
            "leaky_slope" => self.net.leaky_slope = parse_value(key, value)?,
            "equalized_lr" => self.net.equalized_lr = parse_value(key, value)?,
            "precision" => {
                self.precision = match value {
                    "32" => Precision::F32,
                    "64" => Precision::F64,
                    _ => {
                        return Err(Error::invalid(format!(
                            "precision must be 32 or 64, got `{value}`"
                        )))
                    }
                }
            }
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "eval_projections" => self.eval_projections = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key, in a stable order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("learning_rate", self.adam.learning_rate.to_string());
        put("beta1", self.adam.beta1.to_string());
        put("beta2", self.adam.beta2.to_string());
        put("adam_epsilon", self.adam.epsilon.to_string());
        put(
            "critic_iters_per_gen",
            self.critic_iters_per_gen.to_string(),
        );
        put("penalty", self.penalty.kind.to_string());
        put("lambda", self.penalty.lambda.to_string());
        put("drift_epsilon", self.penalty.drift_epsilon.to_string());
        put("clip_bound", self.penalty.clip_bound.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs_per_stage", self.epochs_per_stage.to_string());
        put(
            "fade_epochs_per_stage",
            self.fade_epochs_per_stage.to_string(),
        );
        put("seed", self.seed.to_string());
        put("latent_dim", self.net.latent_dim.to_string());
        put("channels", self.net.channels.to_string());
        put("base_len", self.net.base_len.to_string());
        put("max_stage", self.net.max_stage.to_string());
        if let Some(f) = self.final_stage {
            put("final_stage", f.to_string());
        }
        put("upsample", self.net.upsample.name().to_string());
        put("downsample", self.net.downsample.name().to_string());
        put("leaky_slope", self.net.leaky_slope.to_string());
        put("equalized_lr", self.net.equalized_lr.to_string());
        put("precision", self.precision.bits().to_string());
        put("eval_every", self.eval_every.to_string());
        put("eval_projections", self.eval_projections.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = TrainConfig::default();
        assert_eq!(
            c.adam,
            AdamConfig {
                learning_rate: 1e-3,
                beta1: 0.0,
                beta2: 0.99,
                epsilon: 1e-8
            }
        );
        assert_eq!(c.critic_iters_per_gen, 5);
        assert_eq!(c.penalty.lambda, 10.0);
        assert_eq!((c.epochs_per_stage, c.fade_epochs_per_stage), (2000, 2000));
        assert_eq!(c.net.latent_dim, 200);
        assert_eq!(c.precision, Precision::F32);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig::parse(
            "# toy\nmax_stage = 2\nepochs_per_stage=20\npenalty = gp-two-sided\nprecision = 32\n",
        )
        .unwrap();
        assert_eq!(c.net.max_stage, 2);
        assert_eq!(c.penalty.kind, PenaltyKind::TwoSided);
        assert_eq!(c.last_stage(), 2);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        let c = TrainConfig::parse("final_stage = 2\nchannels = 8\n").unwrap();
        assert_eq!((c.net.full_len(), c.last_stage()), (768, 2));
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        assert!(TrainConfig::parse("max_stage = 2\nfinal_stage = 3").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("nonsense = 1").is_err());
        assert!(TrainConfig::parse("critic_iters_per_gen = 0").is_err());
        assert!(TrainConfig::parse("batch_size = many").is_err());
        assert!(TrainConfig::parse("just a line").is_err());
        assert!(TrainConfig::parse("precision = 16").is_err());
    }
}
