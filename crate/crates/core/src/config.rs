//! Run configuration: TOML sections plus dotted-path overrides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentNetConfig, EpsilonSchedule};
use crate::envs::EnvConfig;
use crate::mixer::{MixerConfig, MixerKind};
use crate::vib::VibConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected dotted.key=value")]
    Override(String),
    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub name: String,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "qcofr".into(),
            out_dir: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub batch_size: usize,
    /// Replay capacity in episodes.
    pub buffer_size: usize,
    /// Target sync period in collected episodes.
    pub target_update_interval: u64,
    pub total_steps: u64,
    pub test_interval: u64,
    pub test_episodes: usize,
    pub log_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    /// Stop once a greedy evaluation reaches this mean return.
    pub stop_at_return: Option<f64>,
    /// Checkpoint period in environment steps; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            lr: 5e-4,
            rms_alpha: 0.99,
            rms_eps: 1e-5,
            grad_clip: 10.0,
            batch_size: 32,
            buffer_size: 5000,
            target_update_interval: 200,
            total_steps: 200_000,
            test_interval: 10_000,
            test_episodes: 32,
            log_interval: 2_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            stop_at_return: None,
            checkpoint_interval: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            anneal_steps: self.epsilon_anneal_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub env: EnvConfig,
    #[serde(default)]
    pub agent: AgentNetConfig,
    #[serde(default)]
    pub mixer: MixerConfig,
    #[serde(default)]
    pub vib: VibConfig,
    #[serde(default)]
    pub trainer: TrainConfig,
}

impl RunConfig {
    pub fn new(env: EnvConfig) -> Self {
        RunConfig {
            run: RunSection::default(),
            env,
            agent: AgentNetConfig::default(),
            mixer: MixerConfig::default(),
            vib: VibConfig::default(),
            trainer: TrainConfig::default(),
        }
    }

    /// Parses TOML text, applies `key.path=value` overrides, validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if !table.contains_key("env") {
            return Err(ConfigError::Invalid {
                field: "env".into(),
                message: "missing [env] section".into(),
            });
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, message: String| {
            Err(ConfigError::Invalid {
                field: field.into(),
                message,
            })
        };
        self.env
            .validate()
            .or_else(|e| invalid("env", e.to_string()))?;
        self.mixer
            .validate()
            .or_else(|e| invalid("mixer", e.to_string()))?;
        if self.agent.hidden == 0 {
            return invalid("agent.hidden", "must be at least 1".into());
        }
        if self.mixer.kind == MixerKind::Cfn && self.vib.latent == 0 {
            return invalid("vib.latent", "must be at least 1".into());
        }
        if !(self.vib.beta >= 0.0 && self.vib.beta.is_finite()) {
            return invalid("vib.beta", "must be a finite number >= 0".into());
        }
        let t = &self.trainer;
        if !(t.gamma > 0.0 && t.gamma <= 1.0) {
            return invalid("trainer.gamma", "must lie in (0, 1]".into());
        }
        for (name, v) in [
            ("trainer.lr", t.lr),
            ("trainer.rms_eps", t.rms_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(name, "must be positive".into());
            }
        }
        if !(t.rms_alpha > 0.0 && t.rms_alpha < 1.0) {
            return invalid("trainer.rms_alpha", "must lie in (0, 1)".into());
        }
        if t.grad_clip.is_nan() || t.grad_clip < 0.0 {
            return invalid("trainer.grad_clip", "must be >= 0".into());
        }
        for (name, v) in [
            ("trainer.batch_size", t.batch_size as u64),
            ("trainer.buffer_size", t.buffer_size as u64),
            ("trainer.target_update_interval", t.target_update_interval),
            ("trainer.total_steps", t.total_steps),
            ("trainer.test_interval", t.test_interval),
            ("trainer.test_episodes", t.test_episodes as u64),
            ("trainer.log_interval", t.log_interval),
        ] {
            if v == 0 {
                return invalid(name, "must be positive".into());
            }
        }
        if t.batch_size > t.buffer_size {
            return invalid(
                "trainer.batch_size",
                format!("{} exceeds buffer_size {}", t.batch_size, t.buffer_size),
            );
        }
        for (name, v) in [
            ("trainer.epsilon_start", t.epsilon_start),
            ("trainer.epsilon_end", t.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(name, "must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML value
/// when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        node = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
