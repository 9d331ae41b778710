use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    Contrast,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Use the posterior itself (expectation over rules).
    Soft,
    /// One straight-through Gumbel draw per attribute.
    GumbelHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub baseline: f64,
    pub mode: LossMode,
    pub sampling: Sampling,
    pub tau: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            baseline: 0.0,
            mode: LossMode::Contrast,
            sampling: Sampling::Soft,
            tau: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.baseline.is_finite() {
            return Err(Error::Config(format!("baseline_b must be finite, got {}", self.baseline)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Ablation presets. Each one fixes which components are present and the
/// default loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// No contrast modules, no inference branch, cross-entropy.
    BackboneXe,
    /// Contrast modules, cross-entropy.
    ContrastXe,
    /// Contrast modules, contrast loss.
    ContrastCl,
    /// Contrast modules, contrast loss, inference branch.
    Copinet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::BackboneXe, Variant::ContrastXe, Variant::ContrastCl, Variant::Copinet];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BackboneXe => "backbone-xe",
            Variant::ContrastXe => "contrast-xe",
            Variant::ContrastCl => "contrast-cl",
            Variant::Copinet => "copinet",
        }
    }

    pub fn has_contrast(self) -> bool {
        self != Variant::BackboneXe
    }

    pub fn has_inference(self) -> bool {
        self == Variant::Copinet
    }

    pub fn default_loss(self) -> LossMode {
        match self {
            Variant::BackboneXe | Variant::ContrastXe => LossMode::CrossEntropy,
            Variant::ContrastCl | Variant::Copinet => LossMode::Contrast,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub feature_dim: usize,
    /// Contrast + residual repetitions.
    pub repetitions: usize,
    pub loss: LossConfig,
    /// Initialization seed.
    pub seed: u64,
}

impl ModelConfig {
    pub fn preset(variant: Variant) -> Self {
        Self {
            variant,
            feature_dim: 64,
            repetitions: 2,
            loss: LossConfig {
                mode: variant.default_loss(),
                ..LossConfig::default()
            },
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        if self.loss.mode != self.variant.default_loss() {
            return Err(Error::Config(format!(
                "variant {} trains with {} loss, config asks for {}",
                self.variant,
                loss_name(self.variant.default_loss()),
                loss_name(self.loss.mode)
            )));
        }
        self.loss.validate()
    }

    pub const KEYS: [&'static str; 8] =
        ["variant", "feature_dim", "repetitions", "loss", "sampling", "tau", "baseline_b", "seed"];

    /// Builds a config from `key=value` pairs; all keys are optional and
    /// default to the `copinet` preset.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let variant = get("variant").map(str::parse).transpose()?.unwrap_or(Variant::Copinet);
        let mut cfg = Self::preset(variant);
        if let Some(v) = get("feature_dim") {
            cfg.feature_dim = parse_num(v, "feature_dim")?;
        }
        if let Some(v) = get("repetitions") {
            cfg.repetitions = parse_num(v, "repetitions")?;
        }
        if let Some(v) = get("loss") {
            cfg.loss.mode = match v {
                "contrast" => LossMode::Contrast,
                "cross_entropy" => LossMode::CrossEntropy,
                _ => return Err(Error::Config(format!("unknown loss {v:?}"))),
            };
        }
        if let Some(v) = get("sampling") {
            cfg.loss.sampling = match v {
                "soft" => Sampling::Soft,
                "gumbel_hard" => Sampling::GumbelHard,
                _ => return Err(Error::Config(format!("unknown sampling {v:?}"))),
            };
        }
        if let Some(v) = get("tau") {
            cfg.loss.tau = parse_num(v, "tau")?;
        }
        if let Some(v) = get("baseline_b") {
            cfg.loss.baseline = parse_num(v, "baseline_b")?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = parse_num(v, "seed")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_key_values(text)?;
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !Self::KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        Self::from_pairs(&pairs)
    }

    pub fn to_text(&self) -> String {
        format!(
            "variant={}\nfeature_dim={}\nrepetitions={}\nloss={}\nsampling={}\ntau={}\nbaseline_b={}\nseed={}\n",
            self.variant,
            self.feature_dim,
            self.repetitions,
            loss_name(self.loss.mode),
            match self.loss.sampling {
                Sampling::Soft => "soft",
                Sampling::GumbelHard => "gumbel_hard",
            },
            self.loss.tau,
            self.loss.baseline,
            self.seed
        )
    }
}

pub fn loss_name(mode: LossMode) -> &'static str {
    match mode {
        LossMode::Contrast => "contrast",
        LossMode::CrossEntropy => "cross_entropy",
    }
}

pub(crate) fn parse_num<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
