//! Model and training configuration.
//!
//! The file format is one `key = value` pair per line; `#` starts a comment.
//! Every key of [`ModelConfig`] may appear at most once per file, and
//! command-line overrides are applied afterwards with [`ModelConfig::set`].

use std::fmt;
use std::path::Path;

use crate::equivariant::Variant;
use crate::error::{Error, Result};
use crate::lie::RepSignature;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of discrete states `S`.
    pub states: usize,
    /// Continuous latent dimension `K`.
    pub latent_dim: usize,
    /// Autoregressive lags of the transition prior.
    pub lags: Vec<usize>,
    /// Number of observed joints `D`.
    pub joints: usize,
    /// Signature of `z`; `None` means `K / 3` vectors.
    pub latent_signature: Option<RepSignature>,
    /// Hidden width multipliers (`m` in `m K`) of the three network families.
    pub switch_width: usize,
    pub transition_width: usize,
    pub emission_width: usize,
    /// Observation noise standard deviation.
    pub sigma_x: f64,
    pub train_sigma_x: bool,
    /// Added to the transition standard deviation after softplus.
    pub sigma_floor: f64,
    pub variant: Variant,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Gradient steps per test-time inference step.
    pub infer_steps: usize,
    /// Test-time learning rate; `None` reuses `lr`.
    pub infer_lr: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            states: 2,
            latent_dim: 3,
            lags: vec![1, 2],
            joints: 1,
            latent_signature: None,
            switch_width: 3,
            transition_width: 5,
            emission_width: 2,
            sigma_x: 0.01,
            train_sigma_x: false,
            sigma_floor: 1e-3,
            variant: Variant::Equivariant,
            lr: 1e-2,
            epochs: 1000,
            seed: 0,
            infer_steps: 50,
            infer_lr: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "states",
    "latent_dim",
    "lags",
    "joints",
    "latent_signature",
    "switch_width",
    "transition_width",
    "emission_width",
    "sigma_x",
    "train_sigma_x",
    "sigma_floor",
    "variant",
    "lr",
    "epochs",
    "seed",
    "infer_steps",
    "infer_lr",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    pub fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(0)
    }

    pub fn infer_lr(&self) -> f64 {
        self.infer_lr.unwrap_or(self.lr)
    }

    /// The latent signature, defaulting to `K / 3` vectors.
    pub fn latent_signature(&self) -> Result<RepSignature> {
        match &self.latent_signature {
            Some(s) => {
                if s.size(3) != self.latent_dim {
                    return Err(Error::Config(format!(
                        "latent_signature {s} has size {}, latent_dim is {}",
                        s.size(3),
                        self.latent_dim
                    )));
                }
                Ok(s.clone())
            }
            None if self.latent_dim.is_multiple_of(3) && self.latent_dim > 0 => Ok(RepSignature::vectors(self.latent_dim / 3)),
            None => Err(Error::Config(format!(
                "latent_dim {} is not a multiple of 3; set latent_signature explicitly",
                self.latent_dim
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.states == 0 {
            return bad("states must be at least 1".into());
        }
        if self.lags.is_empty() || self.lags.contains(&0) {
            return bad("lags must be a non-empty list of positive integers".into());
        }
        let mut sorted = self.lags.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.lags.len() {
            return bad("lags must be distinct".into());
        }
        if self.joints == 0 {
            return bad("joints must be at least 1".into());
        }
        if self.switch_width == 0 || self.transition_width == 0 || self.emission_width == 0 {
            return bad("network widths must be positive".into());
        }
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return bad(format!("sigma_x must be positive, got {}", self.sigma_x));
        }
        if !(self.sigma_floor >= 0.0 && self.sigma_floor.is_finite()) {
            return bad("sigma_floor must be non-negative".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.infer_lr() > 0.0 && self.infer_lr().is_finite()) {
            return bad("learning rates must be positive".into());
        }
        self.latent_signature()?;
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "states" => self.states = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "lags" => {
                self.lags = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "joints" => self.joints = parse(key, value)?,
            "latent_signature" => {
                self.latent_signature = match value {
                    "" | "default" => None,
                    v => Some(v.parse().map_err(|e| Error::Config(format!("latent_signature: {e}")))?),
                }
            }
            "switch_width" => self.switch_width = parse(key, value)?,
            "transition_width" => self.transition_width = parse(key, value)?,
            "emission_width" => self.emission_width = parse(key, value)?,
            "sigma_x" => self.sigma_x = parse(key, value)?,
            "train_sigma_x" => self.train_sigma_x = parse(key, value)?,
            "sigma_floor" => self.sigma_floor = parse(key, value)?,
            "variant" => self.variant = value.parse().map_err(|e| Error::Config(format!("{e}")))?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "infer_steps" => self.infer_steps = parse(key, value)?,
            "infer_lr" => {
                self.infer_lr = match value {
                    "" | "default" => None,
                    v => Some(parse(key, v)?),
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key `{k}`"),
                });
            }
            cfg.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }
}

impl fmt::Display for ModelConfig {
    /// Writes every key, so the output parses back to an equal config.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lags: Vec<String> = self.lags.iter().map(ToString::to_string).collect();
        writeln!(f, "states = {}", self.states)?;
        writeln!(f, "latent_dim = {}", self.latent_dim)?;
        writeln!(f, "lags = {}", lags.join(","))?;
        writeln!(f, "joints = {}", self.joints)?;
        match &self.latent_signature {
            Some(s) => writeln!(f, "latent_signature = {s}")?,
            None => writeln!(f, "latent_signature = default")?,
        }
        writeln!(f, "switch_width = {}", self.switch_width)?;
        writeln!(f, "transition_width = {}", self.transition_width)?;
        writeln!(f, "emission_width = {}", self.emission_width)?;
        writeln!(f, "sigma_x = {}", self.sigma_x)?;
        writeln!(f, "train_sigma_x = {}", self.train_sigma_x)?;
        writeln!(f, "sigma_floor = {}", self.sigma_floor)?;
        writeln!(f, "variant = {}", self.variant)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "infer_steps = {}", self.infer_steps)?;
        match self.infer_lr {
            Some(v) => writeln!(f, "infer_lr = {v}"),
            None => writeln!(f, "infer_lr = default"),
        }
    }
}
