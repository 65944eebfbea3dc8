//! Flat `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flops::Family;
use crate::harness::{TaskMode, ToyTask, TrainConfig};
use crate::model::ModelConfig;

/// Split sizes for the generated toy data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for DataSizes {
    fn default() -> Self {
        Self {
            train: 5000,
            valid: 500,
            test: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: ToyTask,
    pub data: DataSizes,
    /// Inference latent count used by `evaluate`/`generate` when no flag
    /// overrides it.
    pub k_prime: Option<usize>,
    pub beam: usize,
}

impl Default for Config {
    fn default() -> Self {
        let task = ToyTask::default();
        let model = ModelConfig {
            vocab: task.model_vocab(),
            input_dim: task.feature_dim,
            ..ModelConfig::default()
        };
        Self {
            model,
            train: TrainConfig::default(),
            task,
            data: DataSizes::default(),
            k_prime: None,
            beam: 5,
        }
    }
}

/// Every accepted key, in canonical output order.
pub const KEYS: &[&str] = &[
    "family",
    "d_model",
    "heads",
    "ffn_dim",
    "encoder_layers",
    "decoder_layers",
    "n_latents",
    "use_input_processor",
    "conv_channels",
    "conv_kernel",
    "conv_layers",
    "conv_stride",
    "dropout",
    "lr",
    "warmup",
    "batch_size",
    "max_epochs",
    "max_steps",
    "patience",
    "label_smoothing",
    "k",
    "keep_best",
    "target_accuracy",
    "seed",
    "task_vocab",
    "min_len",
    "max_len",
    "frames_per_token",
    "feature_dim",
    "noise_std",
    "task_mode",
    "task_seed",
    "train_size",
    "valid_size",
    "test_size",
    "k_prime",
    "beam",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("cannot parse `{value}`"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            message: format!("expected true or false, got `{value}`"),
        }),
    }
}

fn optional<V: FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

impl Config {
    /// Parses configuration text: one `key = value` per line, `#` starts a
    /// comment, unknown or repeated keys are errors. Unset keys keep their
    /// defaults. The result is validated.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// [`Config::parse`] followed by `key=value` overrides, which may repeat
    /// keys of `text`.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) && KEYS.contains(&key) {
                return Err(Error::Config {
                    key: key.into(),
                    message: "set more than once".into(),
                });
            }
            cfg.set(key, value)?;
        }
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| Error::Config {
                key: o.clone(),
                message: "expected `key=value`".into(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.model.vocab = cfg.task.model_vocab();
        cfg.model.input_dim = cfg.task.feature_dim;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, task) = (&mut self.model, &mut self.train, &mut self.task);
        match key {
            "family" => {
                m.family = match value {
                    "perceiver" => Family::Perceiver,
                    "transformer" => Family::Transformer,
                    _ => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: format!("expected perceiver or transformer, got `{value}`"),
                        })
                    }
                }
            }
            "d_model" => m.d_model = parse_value(key, value)?,
            "heads" => m.heads = parse_value(key, value)?,
            "ffn_dim" => m.ffn_dim = parse_value(key, value)?,
            "encoder_layers" => m.encoder_layers = parse_value(key, value)?,
            "decoder_layers" => m.decoder_layers = parse_value(key, value)?,
            "n_latents" => m.n_latents = parse_value(key, value)?,
            "use_input_processor" => m.use_input_processor = parse_bool(key, value)?,
            "conv_channels" => m.conv_channels = parse_value(key, value)?,
            "conv_kernel" => m.conv_kernel = parse_value(key, value)?,
            "conv_layers" => m.conv_layers = parse_value(key, value)?,
            "conv_stride" => m.conv_stride = parse_value(key, value)?,
            "dropout" => m.dropout = parse_value(key, value)?,
            "lr" => t.lr = parse_value(key, value)?,
            "warmup" => t.warmup = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "max_epochs" => t.max_epochs = parse_value(key, value)?,
            "max_steps" => t.max_steps = optional(key, value)?,
            "patience" => t.patience = parse_value(key, value)?,
            "label_smoothing" => t.label_smoothing = parse_value(key, value)?,
            "k" => t.k = parse_value(key, value)?,
            "keep_best" => t.keep_best = parse_value(key, value)?,
            "target_accuracy" => t.target_accuracy = optional(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "task_seed" => task.seed = parse_value(key, value)?,
            "task_vocab" => task.vocab = parse_value(key, value)?,
            "min_len" => task.min_len = parse_value(key, value)?,
            "max_len" => task.max_len = parse_value(key, value)?,
            "frames_per_token" => task.frames_per_token = parse_value(key, value)?,
            "feature_dim" => task.feature_dim = parse_value(key, value)?,
            "noise_std" => task.noise_std = parse_value(key, value)?,
            "task_mode" => {
                task.mode = match value {
                    "copy" => TaskMode::Copy,
                    "reverse" => TaskMode::Reverse,
                    _ => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: format!("expected copy or reverse, got `{value}`"),
                        })
                    }
                }
            }
            "train_size" => self.data.train = parse_value(key, value)?,
            "valid_size" => self.data.valid = parse_value(key, value)?,
            "test_size" => self.data.test = parse_value(key, value)?,
            "k_prime" => self.k_prime = optional(key, value)?,
            "beam" => self.beam = parse_value(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Checks every cross-field constraint; the error names the key.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        let perceiver = self.model.family == Family::Perceiver;
        self.train.validate(perceiver.then_some(self.model.n_latents))?;
        if self.beam == 0 {
            return Err(Error::Config {
                key: "beam".into(),
                message: "must be at least 1".into(),
            });
        }
        for (key, size) in [("train_size", self.data.train), ("valid_size", self.data.valid), ("test_size", self.data.test)] {
            if size == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    message: "must be positive".into(),
                });
            }
        }
        if let Some(k_prime) = self.k_prime {
            if !perceiver {
                return Err(Error::Config {
                    key: "k_prime".into(),
                    message: "only meaningful for the perceiver family".into(),
                });
            }
            if k_prime == 0 {
                return Err(Error::Config {
                    key: "k_prime".into(),
                    message: "must be at least 1".into(),
                });
            }
            if k_prime > self.model.n_latents {
                return Err(Error::KPrime {
                    k_prime,
                    n: self.model.n_latents,
                });
            }
        }
        Ok(())
    }

    /// Canonical text with every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let (m, t, task) = (&self.model, &self.train, &self.task);
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut out = String::new();
        for &key in KEYS {
            let value = match key {
                "family" => match m.family {
                    Family::Perceiver => "perceiver".into(),
                    Family::Transformer => "transformer".into(),
                },
                "d_model" => m.d_model.to_string(),
                "heads" => m.heads.to_string(),
                "ffn_dim" => m.ffn_dim.to_string(),
                "encoder_layers" => m.encoder_layers.to_string(),
                "decoder_layers" => m.decoder_layers.to_string(),
                "n_latents" => m.n_latents.to_string(),
                "use_input_processor" => m.use_input_processor.to_string(),
                "conv_channels" => m.conv_channels.to_string(),
                "conv_kernel" => m.conv_kernel.to_string(),
                "conv_layers" => m.conv_layers.to_string(),
                "conv_stride" => m.conv_stride.to_string(),
                "dropout" => format!("{:?}", m.dropout),
                "lr" => format!("{:?}", t.lr),
                "warmup" => t.warmup.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "max_epochs" => t.max_epochs.to_string(),
                "max_steps" => opt(t.max_steps.map(|v| v.to_string())),
                "patience" => t.patience.to_string(),
                "label_smoothing" => format!("{:?}", t.label_smoothing),
                "k" => t.k.to_string(),
                "keep_best" => t.keep_best.to_string(),
                "target_accuracy" => opt(t.target_accuracy.map(|v| format!("{v:?}"))),
                "seed" => t.seed.to_string(),
                "task_vocab" => task.vocab.to_string(),
                "min_len" => task.min_len.to_string(),
                "max_len" => task.max_len.to_string(),
                "frames_per_token" => task.frames_per_token.to_string(),
                "feature_dim" => task.feature_dim.to_string(),
                "noise_std" => format!("{:?}", task.noise_std),
                "task_mode" => match task.mode {
                    TaskMode::Copy => "copy".into(),
                    TaskMode::Reverse => "reverse".into(),
                },
                "task_seed" => task.seed.to_string(),
                "train_size" => self.data.train.to_string(),
                "valid_size" => self.data.valid.to_string(),
                "test_size" => self.data.test.to_string(),
                "k_prime" => opt(self.k_prime.map(|v| v.to_string())),
                "beam" => self.beam.to_string(),
                _ => unreachable!("every key is listed"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
