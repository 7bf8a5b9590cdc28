use std::path::Path;

use crate::data::{parse_key_values, parse_value, read_key_values, MaskMode};
use crate::model::ModelConfig;
use crate::sstda::LossWeights;
use crate::{Error, Result};

/// Which adaptation terms are trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Prediction loss on labelled source frames only.
    SourceOnly,
    /// Adds frame-level binary domain prediction and attentive entropy.
    Local,
    /// Adds sequence-level permutation prediction with attentive pooling.
    #[default]
    Full,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source-only" => Ok(Mode::SourceOnly),
            "local" => Ok(Mode::Local),
            "full" => Ok(Mode::Full),
            _ => Err(Error::Config(format!("unknown mode {s:?} (source-only|local|full)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::SourceOnly => "source-only",
            Mode::Local => "local",
            Mode::Full => "full",
        })
    }
}

/// Videos whose class predictions enter the attentive entropy term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EntropyScope {
    #[default]
    Both,
    Target,
}

impl std::str::FromStr for EntropyScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(EntropyScope::Both),
            "target" => Ok(EntropyScope::Target),
            _ => Err(Error::Config(format!("unknown entropy scope {s:?} (both|target)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub model: ModelConfig,
    /// Base weights; `beta_l`, `beta_g` and `grl_lambda` are multiplied by
    /// the progress ramp at every step.
    pub weights: LossWeights,
    pub labeled_fraction: f64,
    pub mask_mode: MaskMode,
    pub seed: u64,
    /// Each epoch has at least `target_reload * |target|` steps.
    pub target_reload: usize,
    /// Stop gradients through the attention weights of pooling and entropy.
    pub detach_attention: bool,
    pub entropy_scope: EntropyScope,
    /// Apply the progress ramp to the domain weights; when false they stay at
    /// their base values.
    pub ramp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Full,
            epochs: 50,
            learning_rate: 5e-4,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            labeled_fraction: 1.0,
            mask_mode: MaskMode::Stride,
            seed: 0,
            target_reload: 1,
            detach_attention: true,
            entropy_scope: EntropyScope::Both,
            ramp: true,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "labeled_fraction {} not in (0, 1]",
                self.labeled_fraction
            )));
        }
        if self.target_reload < 1 {
            return Err(Error::Config("target_reload must be at least 1".into()));
        }
        self.weights.validate()?;
        self.model.validate()
    }

    /// Applies `key = value` overrides; keys mirror the field names, with the
    /// model and loss-weight fields flattened.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            let w = &mut self.weights;
            let m = &mut self.model;
            match k.as_str() {
                "mode" => self.mode = v.parse()?,
                "epochs" => self.epochs = parse_value(k, v)?,
                "learning_rate" => self.learning_rate = parse_value(k, v)?,
                "labeled_fraction" => self.labeled_fraction = parse_value(k, v)?,
                "mask_mode" => self.mask_mode = v.parse()?,
                "seed" => self.seed = parse_value(k, v)?,
                "target_reload" => self.target_reload = parse_value(k, v)?,
                "detach_attention" => self.detach_attention = parse_bool(k, v)?,
                "entropy_scope" => self.entropy_scope = v.parse()?,
                "ramp" => self.ramp = parse_bool(k, v)?,
                "alpha" => w.alpha = parse_value(k, v)?,
                "mu" => w.mu = parse_value(k, v)?,
                "beta_l" => w.beta_l = parse_value(k, v)?,
                "beta_g" => w.beta_g = parse_value(k, v)?,
                "grl_lambda" => w.grl_lambda = parse_value(k, v)?,
                "num_stages" => m.num_stages = parse_value(k, v)?,
                "layers" => m.stage.layers = parse_value(k, v)?,
                "filters" => m.stage.filters = parse_value(k, v)?,
                "kernel" => m.stage.kernel = parse_value(k, v)?,
                "segment_count" => m.segment_count = parse_value(k, v)?,
                "da_stages" => {
                    m.da_stages = v
                        .split(',')
                        .map(|s| parse_value(k, s.trim()))
                        .collect::<Result<Vec<usize>>>()?
                }
                "input_dim" | "num_classes" => {
                    return Err(Error::Config(format!("{k} is taken from the dataset")));
                }
                _ => return Err(Error::Config(format!("unknown training config key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply(&parse_key_values(bytes, path)?)?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply(&read_key_values(path)?)?;
        Ok(c)
    }

    /// Loss weights at progress `p` for this mode.
    pub fn weights_at(&self, p: f64) -> LossWeights {
        let r = if self.ramp { crate::sstda::ramp(p) } else { 1.0 };
        let w = self.weights;
        match self.mode {
            Mode::SourceOnly => LossWeights {
                mu: 0.0,
                beta_l: 0.0,
                beta_g: 0.0,
                grl_lambda: 0.0,
                ..w
            },
            Mode::Local => LossWeights {
                beta_l: w.beta_l * r,
                beta_g: 0.0,
                grl_lambda: w.grl_lambda * r,
                ..w
            },
            Mode::Full => LossWeights {
                beta_l: w.beta_l * r,
                beta_g: w.beta_g * r,
                grl_lambda: w.grl_lambda * r,
                ..w
            },
        }
    }
}
