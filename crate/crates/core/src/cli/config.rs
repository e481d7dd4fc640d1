use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::data::{LabelMaps, DEFAULT_MAX_LEN};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{Ablation, LossWeights, ModelConfig};

/// Everything a run depends on. Config-file keys and command-line flags use
/// the same kebab-case names as [`RunConfig::KEYS`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub d: usize,
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub max_len: usize,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            dev: None,
            test: None,
            output_dir: PathBuf::from("runs"),
            seed: 42,
            epochs: 20,
            batch_size: 32,
            lr: 5e-5,
            dropout: 0.1,
            d: 64,
            d_h: 32,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            max_len: DEFAULT_MAX_LEN,
            ablation: Ablation::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "train",
        "dev",
        "test",
        "output-dir",
        "seed",
        "epochs",
        "batch-size",
        "lr",
        "dropout",
        "d",
        "d-h",
        "layers",
        "heads",
        "ffn-dim",
        "alpha",
        "beta",
        "gamma",
        "max-len",
        "no-aux-network",
        "no-cross-attention",
        "no-intent-concat",
        "no-aux-loss",
        "frozen-uniform",
    ];

    /// Sets one field by its key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ab = &mut self.ablation;
        match key {
            "train" => self.train = Some(PathBuf::from(value.trim())),
            "dev" => self.dev = Some(PathBuf::from(value.trim())),
            "test" => self.test = Some(PathBuf::from(value.trim())),
            "output-dir" => self.output_dir = PathBuf::from(value.trim()),
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch-size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "d-h" => self.d_h = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ffn-dim" => self.ffn_dim = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "max-len" => self.max_len = parse(key, value)?,
            "no-aux-network" => ab.no_aux_network = parse_bool(key, value)?,
            "no-cross-attention" => ab.no_cross_attention = parse_bool(key, value)?,
            "no-intent-concat" => ab.no_intent_concat = parse_bool(key, value)?,
            "no-aux-loss" => ab.no_aux_loss = parse_bool(key, value)?,
            "frozen-uniform" => ab.frozen_uniform = parse_bool(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse_file_text(text: &str) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in Self::parse_file_text(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Renders the config in the file format, one key per line.
    pub fn to_file_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let ab = self.ablation;
        let pairs: Vec<(&str, Option<String>)> = vec![
            ("train", path(&self.train)),
            ("dev", path(&self.dev)),
            ("test", path(&self.test)),
            ("output-dir", Some(self.output_dir.display().to_string())),
            ("seed", Some(self.seed.to_string())),
            ("epochs", Some(self.epochs.to_string())),
            ("batch-size", Some(self.batch_size.to_string())),
            ("lr", Some(self.lr.to_string())),
            ("dropout", Some(self.dropout.to_string())),
            ("d", Some(self.d.to_string())),
            ("d-h", Some(self.d_h.to_string())),
            ("layers", Some(self.layers.to_string())),
            ("heads", Some(self.heads.to_string())),
            ("ffn-dim", Some(self.ffn_dim.to_string())),
            ("alpha", Some(self.alpha.to_string())),
            ("beta", Some(self.beta.to_string())),
            ("gamma", Some(self.gamma.to_string())),
            ("max-len", Some(self.max_len.to_string())),
            ("no-aux-network", Some(ab.no_aux_network.to_string())),
            ("no-cross-attention", Some(ab.no_cross_attention.to_string())),
            ("no-intent-concat", Some(ab.no_intent_concat.to_string())),
            ("no-aux-loss", Some(ab.no_aux_loss.to_string())),
            ("frozen-uniform", Some(ab.frozen_uniform.to_string())),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k} = {v}\n")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max-len must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn model_config(&self, vocab_size: usize, maps: &LabelMaps) -> Result<ModelConfig> {
        self.validate()?;
        let encoder = EncoderConfig {
            vocab_size,
            d: self.d,
            n_layers: self.layers,
            n_heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_positions: self.max_len + 1,
            dropout_rate: self.dropout,
        };
        let mut cfg = ModelConfig::new(encoder, self.d_h, maps);
        cfg.weights = LossWeights {
            intent: self.alpha,
            aux: self.beta,
            slot: self.gamma,
        };
        cfg.ablation = self.ablation;
        cfg.validate()?;
        Ok(cfg)
    }
}
