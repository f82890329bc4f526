//! `key = value` configuration files for [`AgentConfig`].
//!
//! One assignment per line, `#` starts a comment, keys are the snake_case
//! field names. Keys that are not mentioned keep the base profile's value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use drdqn_core::nn::{LossKind, OptimizerKind};
use drdqn_core::{ActContext, AgentConfig, TargetRule};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: `{key}` given twice")]
    DuplicateKey { line: usize, key: String },

    #[error("line {line}: invalid value `{value}` for `{key}`")]
    InvalidValue { line: usize, key: String, value: String },

    #[error("line {line}: `{key}` out of range: {reason}")]
    OutOfRange { line: usize, key: String, reason: String },
}

pub const KEYS: [&str; 18] = [
    "iterations",
    "minibatch_size",
    "memory_capacity",
    "learning_rate",
    "action_repeat",
    "target_sync_period",
    "sgd_period",
    "replay_start_size",
    "eps_max",
    "eps_min",
    "eps_steps",
    "discount_factor",
    "recurrent",
    "target_rule",
    "seq_len",
    "act_context",
    "loss",
    "optimizer",
];

/// Reads a config file on top of the full-scale defaults.
pub fn load_config(path: &Path) -> Result<AgentConfig, ConfigError> {
    load_config_with_base(path, AgentConfig::paper())
}

pub fn load_config_with_base(path: &Path, base: AgentConfig) -> Result<AgentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text, base)
}

fn parse_loss(value: &str) -> Option<LossKind> {
    match value {
        "mse" => Some(LossKind::Mse),
        "huber" => Some(LossKind::Huber { delta: 1.0 }),
        _ => {
            let delta = value.strip_prefix("huber(")?.strip_suffix(')')?.trim().parse().ok()?;
            Some(LossKind::Huber { delta })
        }
    }
}

fn format_loss(loss: LossKind) -> String {
    match loss {
        LossKind::Mse => "mse".into(),
        LossKind::Huber { delta } if delta == 1.0 => "huber".into(),
        LossKind::Huber { delta } => format!("huber({delta})"),
    }
}

pub fn parse_config(text: &str, base: AgentConfig) -> Result<AgentConfig, ConfigError> {
    let mut cfg = base;
    let mut seen: Vec<(&str, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .filter(|(k, v)| !k.is_empty() && !v.is_empty())
            .ok_or_else(|| ConfigError::Malformed { line, text: raw.trim().to_owned() })?;
        let key = KEYS
            .iter()
            .copied()
            .find(|k| *k == key)
            .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_owned() })?;
        if seen.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey { line, key: key.to_owned() });
        }
        seen.push((key, line));

        let invalid = || ConfigError::InvalidValue { line, key: key.to_owned(), value: value.to_owned() };
        let range = |reason: &str| ConfigError::OutOfRange { line, key: key.to_owned(), reason: reason.to_owned() };
        let int = || value.replace('_', "").parse::<u64>().map_err(|_| invalid());
        let positive = || match int()? {
            0 => Err(range("must be positive")),
            v => Ok(v),
        };
        let real = || match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(invalid()),
        };
        let unit = || match real()? {
            v if (0.0..=1.0).contains(&v) => Ok(v),
            _ => Err(range("must lie in [0, 1]")),
        };
        match key {
            "iterations" => cfg.iterations = int()?,
            "minibatch_size" => cfg.minibatch_size = positive()? as usize,
            "memory_capacity" => cfg.memory_capacity = positive()? as usize,
            "learning_rate" => {
                cfg.learning_rate = match real()? {
                    v if v > 0.0 => v,
                    _ => return Err(range("must be positive")),
                }
            }
            "action_repeat" => cfg.action_repeat = positive()? as usize,
            "target_sync_period" => cfg.target_sync_period = positive()?,
            "sgd_period" => cfg.sgd_period = positive()?,
            "replay_start_size" => cfg.replay_start_size = int()? as usize,
            "eps_max" => cfg.eps_max = unit()?,
            "eps_min" => cfg.eps_min = unit()?,
            "eps_steps" => cfg.eps_steps = int()?,
            "discount_factor" => cfg.discount_factor = unit()?,
            "recurrent" => cfg.recurrent = value.parse().map_err(|_| invalid())?,
            "target_rule" => cfg.target_rule = value.parse::<TargetRule>().map_err(|_| invalid())?,
            "seq_len" => cfg.seq_len = positive()? as usize,
            "act_context" => cfg.act_context = value.parse::<ActContext>().map_err(|_| invalid())?,
            "loss" => {
                cfg.loss = match parse_loss(value).ok_or_else(invalid)? {
                    LossKind::Huber { delta } if !(delta > 0.0 && delta.is_finite()) => {
                        return Err(range("huber delta must be positive"))
                    }
                    loss => loss,
                }
            }
            "optimizer" => {
                cfg.optimizer = match value {
                    "rmsprop" => OptimizerKind::RmsProp,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(invalid()),
                }
            }
            _ => unreachable!("key checked against KEYS"),
        }
    }

    let line_of = |key: &str| seen.iter().find(|(k, _)| *k == key).map_or(0, |(_, l)| *l);
    if cfg.eps_min > cfg.eps_max {
        let key = if line_of("eps_min") >= line_of("eps_max") { "eps_min" } else { "eps_max" };
        return Err(ConfigError::OutOfRange {
            line: line_of(key),
            key: key.into(),
            reason: format!("eps_min {} exceeds eps_max {}", cfg.eps_min, cfg.eps_max),
        });
    }
    if cfg.replay_start_size > cfg.memory_capacity {
        let key = if line_of("replay_start_size") >= line_of("memory_capacity") {
            "replay_start_size"
        } else {
            "memory_capacity"
        };
        return Err(ConfigError::OutOfRange {
            line: line_of(key),
            key: key.into(),
            reason: format!(
                "replay_start_size {} exceeds memory_capacity {}",
                cfg.replay_start_size, cfg.memory_capacity
            ),
        });
    }
    Ok(cfg)
}

/// Every key in canonical order; parsing the result reproduces `cfg`.
pub fn config_to_text(cfg: &AgentConfig) -> String {
    let mut s = String::new();
    let optimizer = match cfg.optimizer {
        OptimizerKind::RmsProp => "rmsprop",
        OptimizerKind::Adam => "adam",
    };
    let _ = writeln!(s, "iterations = {}", cfg.iterations);
    let _ = writeln!(s, "minibatch_size = {}", cfg.minibatch_size);
    let _ = writeln!(s, "memory_capacity = {}", cfg.memory_capacity);
    let _ = writeln!(s, "learning_rate = {:?}", cfg.learning_rate);
    let _ = writeln!(s, "action_repeat = {}", cfg.action_repeat);
    let _ = writeln!(s, "target_sync_period = {}", cfg.target_sync_period);
    let _ = writeln!(s, "sgd_period = {}", cfg.sgd_period);
    let _ = writeln!(s, "replay_start_size = {}", cfg.replay_start_size);
    let _ = writeln!(s, "eps_max = {:?}", cfg.eps_max);
    let _ = writeln!(s, "eps_min = {:?}", cfg.eps_min);
    let _ = writeln!(s, "eps_steps = {}", cfg.eps_steps);
    let _ = writeln!(s, "discount_factor = {:?}", cfg.discount_factor);
    let _ = writeln!(s, "recurrent = {}", cfg.recurrent);
    let _ = writeln!(s, "target_rule = {}", cfg.target_rule.name());
    let _ = writeln!(s, "seq_len = {}", cfg.seq_len);
    let _ = writeln!(s, "act_context = {}", cfg.act_context.name());
    let _ = writeln!(s, "loss = {}", format_loss(cfg.loss));
    let _ = writeln!(s, "optimizer = {optimizer}");
    s
}
