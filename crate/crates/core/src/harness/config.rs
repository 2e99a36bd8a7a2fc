use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;
use crate::agent::AgentConfig;
use crate::envs::{env_spec, EnvSpec};
use crate::worldmodel::{ModelKind, WorldModelConfig};

/// Full specification of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: String,
    pub total_steps: usize,
    pub seed: u64,
    /// Rollout horizon; `None` picks the environment default.
    pub horizon: Option<usize>,
    pub max_horizon: usize,
    pub ensemble_size: usize,
    pub rollouts: usize,
    pub candidates: usize,
    pub latent_dim: usize,
    pub model_width: usize,
    pub model_blocks: usize,
    pub model_lr: f64,
    pub model_batch: usize,
    pub model_updates: usize,
    pub train_freq: usize,
    pub normalize_targets: bool,
    pub model: ModelKind,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub quantiles: usize,
    pub updates_per_step: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub gamma: f64,
    pub polyak: f64,
    pub real_fraction: f64,
    pub warmup_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub weighting: bool,
    pub weight_actor: bool,
    /// Zero every predictive spread before weighting (parity diagnostics).
    pub force_zero_sigma: bool,
    /// Real-transition store size; 0 means one slot per environment step.
    pub env_capacity: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            total_steps: 30_000,
            seed: 0,
            horizon: None,
            max_horizon: 8,
            ensemble_size: 7,
            rollouts: 200,
            candidates: 4,
            latent_dim: 16,
            model_width: 512,
            model_blocks: 3,
            model_lr: 1e-3,
            model_batch: 512,
            model_updates: 100,
            train_freq: 1000,
            normalize_targets: false,
            model: ModelKind::Imle,
            batch_size: 128,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            quantiles: 100,
            updates_per_step: 10,
            hidden_width: 256,
            hidden_layers: 2,
            gamma: 0.99,
            polyak: 0.005,
            real_fraction: 0.5,
            warmup_steps: 1000,
            eval_interval: 1000,
            eval_episodes: 5,
            weighting: true,
            weight_actor: false,
            force_zero_sigma: false,
            env_capacity: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("cannot parse '{value}' for {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key} expects on or off, got '{value}'"))),
    }
}

fn switch(v: bool) -> &'static str {
    if v {
        "on"
    } else {
        "off"
    }
}

impl ExperimentConfig {
    /// Key names accepted by [`Self::set`], in manifest order.
    pub const KEYS: &'static [&'static str] = &[
        "env",
        "total_steps",
        "seed",
        "horizon",
        "max_horizon",
        "ensemble_size",
        "rollouts",
        "candidates",
        "latent_dim",
        "model_width",
        "model_blocks",
        "model_lr",
        "model_batch",
        "model_updates",
        "train_freq",
        "normalize_targets",
        "model",
        "batch_size",
        "actor_lr",
        "critic_lr",
        "alpha_lr",
        "quantiles",
        "updates_per_step",
        "hidden_width",
        "hidden_layers",
        "gamma",
        "polyak",
        "real_fraction",
        "warmup_steps",
        "eval_interval",
        "eval_episodes",
        "weighting",
        "weight_actor",
        "force_zero_sigma",
        "env_capacity",
    ];

    /// Sets one key; `-` and `_` are interchangeable in key names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let k = key.as_str();
        match k {
            "env" => self.env = v.to_string(),
            "total_steps" => self.total_steps = parse(k, v)?,
            "seed" => self.seed = parse(k, v)?,
            "horizon" => {
                self.horizon = if v == "auto" { None } else { Some(parse(k, v)?) };
            }
            "max_horizon" => self.max_horizon = parse(k, v)?,
            "ensemble_size" => self.ensemble_size = parse(k, v)?,
            "rollouts" => self.rollouts = parse(k, v)?,
            "candidates" => self.candidates = parse(k, v)?,
            "latent_dim" => self.latent_dim = parse(k, v)?,
            "model_width" => self.model_width = parse(k, v)?,
            "model_blocks" => self.model_blocks = parse(k, v)?,
            "model_lr" => self.model_lr = parse(k, v)?,
            "model_batch" => self.model_batch = parse(k, v)?,
            "model_updates" => self.model_updates = parse(k, v)?,
            "train_freq" => self.train_freq = parse(k, v)?,
            "normalize_targets" => self.normalize_targets = parse_switch(k, v)?,
            "model" => self.model = v.parse().map_err(HarnessError::Config)?,
            "batch_size" => self.batch_size = parse(k, v)?,
            "actor_lr" => self.actor_lr = parse(k, v)?,
            "critic_lr" => self.critic_lr = parse(k, v)?,
            "alpha_lr" => self.alpha_lr = parse(k, v)?,
            "quantiles" => self.quantiles = parse(k, v)?,
            "updates_per_step" => self.updates_per_step = parse(k, v)?,
            "hidden_width" => self.hidden_width = parse(k, v)?,
            "hidden_layers" => self.hidden_layers = parse(k, v)?,
            "gamma" => self.gamma = parse(k, v)?,
            "polyak" => self.polyak = parse(k, v)?,
            "real_fraction" => self.real_fraction = parse(k, v)?,
            "warmup_steps" => self.warmup_steps = parse(k, v)?,
            "eval_interval" => self.eval_interval = parse(k, v)?,
            "eval_episodes" => self.eval_episodes = parse(k, v)?,
            "weighting" => self.weighting = parse_switch(k, v)?,
            "weight_actor" => self.weight_actor = parse_switch(k, v)?,
            "force_zero_sigma" => self.force_zero_sigma = parse_switch(k, v)?,
            "env_capacity" => self.env_capacity = parse(k, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let key = key.replace('-', "_");
        Some(match key.as_str() {
            "env" => self.env.clone(),
            "total_steps" => self.total_steps.to_string(),
            "seed" => self.seed.to_string(),
            "horizon" => self.horizon.map_or_else(|| "auto".to_string(), |h| h.to_string()),
            "max_horizon" => self.max_horizon.to_string(),
            "ensemble_size" => self.ensemble_size.to_string(),
            "rollouts" => self.rollouts.to_string(),
            "candidates" => self.candidates.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "model_width" => self.model_width.to_string(),
            "model_blocks" => self.model_blocks.to_string(),
            "model_lr" => self.model_lr.to_string(),
            "model_batch" => self.model_batch.to_string(),
            "model_updates" => self.model_updates.to_string(),
            "train_freq" => self.train_freq.to_string(),
            "normalize_targets" => switch(self.normalize_targets).into(),
            "model" => self.model.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "actor_lr" => self.actor_lr.to_string(),
            "critic_lr" => self.critic_lr.to_string(),
            "alpha_lr" => self.alpha_lr.to_string(),
            "quantiles" => self.quantiles.to_string(),
            "updates_per_step" => self.updates_per_step.to_string(),
            "hidden_width" => self.hidden_width.to_string(),
            "hidden_layers" => self.hidden_layers.to_string(),
            "gamma" => self.gamma.to_string(),
            "polyak" => self.polyak.to_string(),
            "real_fraction" => self.real_fraction.to_string(),
            "warmup_steps" => self.warmup_steps.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "weighting" => switch(self.weighting).into(),
            "weight_actor" => switch(self.weight_actor).into(),
            "force_zero_sigma" => switch(self.force_zero_sigma).into(),
            "env_capacity" => self.env_capacity.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Every key as `key = value`, one per line; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            writeln!(s, "{k} = {}", self.get(k).expect("listed keys resolve")).expect("writing to a String");
        }
        s
    }

    pub fn env_spec(&self) -> Result<EnvSpec, HarnessError> {
        env_spec(&self.env).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn resolved_horizon(&self) -> usize {
        self.horizon
            .unwrap_or(if self.env == "bimodal-fork" { 1 } else { 4 })
    }

    /// Real fraction 1 leaves nothing for synthetic data, so the model is skipped entirely.
    pub fn uses_model(&self) -> bool {
        self.real_fraction < 1.0
    }

    pub fn env_store_capacity(&self) -> usize {
        if self.env_capacity == 0 {
            self.total_steps.max(1)
        } else {
            self.env_capacity
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.env_spec()?;
        let h = self.resolved_horizon();
        if h == 0 || h > self.max_horizon {
            return bad(format!("horizon {h} must lie in 1..={}", self.max_horizon));
        }
        let positive = [
            ("ensemble_size", self.ensemble_size),
            ("candidates", self.candidates),
            ("latent_dim", self.latent_dim),
            ("model_width", self.model_width),
            ("model_batch", self.model_batch),
            ("train_freq", self.train_freq),
            ("batch_size", self.batch_size),
            ("quantiles", self.quantiles),
            ("hidden_width", self.hidden_width),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (k, v) in positive {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.real_fraction) {
            return bad(format!("real_fraction {} outside [0, 1]", self.real_fraction));
        }
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps exceeds total_steps".into());
        }
        if self.uses_model() && self.candidates < 2 {
            return bad("uncertainty needs at least 2 candidates per member".into());
        }
        self.world_model_config()?.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.agent_config()?.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn world_model_config(&self) -> Result<WorldModelConfig, HarnessError> {
        let spec = self.env_spec()?;
        Ok(WorldModelConfig {
            latent_dim: self.latent_dim,
            width: self.model_width,
            blocks: self.model_blocks,
            kind: self.model,
            lr: self.model_lr,
            normalize_targets: self.normalize_targets,
            ..WorldModelConfig::new(spec.state_dim, spec.action_dim)
        })
    }

    pub fn agent_config(&self) -> Result<AgentConfig, HarnessError> {
        let spec = self.env_spec()?;
        Ok(AgentConfig {
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
            quantiles: self.quantiles,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            alpha_lr: self.alpha_lr,
            gamma: self.gamma,
            polyak: self.polyak,
            weighting: self.weighting,
            weight_actor: self.weight_actor,
            ..AgentConfig::new(spec.state_dim, spec.action_low.clone(), spec.action_high.clone())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_table() {
        let c = ExperimentConfig::default();
        assert_eq!((c.batch_size, c.quantiles, c.updates_per_step), (128, 100, 10));
        assert_eq!((c.actor_lr, c.critic_lr, c.model_lr), (3e-4, 3e-4, 1e-3));
        assert_eq!((c.model_batch, c.model_updates, c.candidates), (512, 100, 4));
        assert_eq!((c.train_freq, c.rollouts, c.ensemble_size), (1000, 200, 7));
        assert_eq!(c.resolved_horizon(), 4);
        c.validate().unwrap();
    }

    #[test]
    fn text_roundtrip_and_comments() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# desk\nseed = 7  # trailing\n\nweighting = off\nmodel=gaussian\nhorizon = 2\n")
            .unwrap();
        assert_eq!((c.seed, c.weighting, c.model, c.horizon), (7, false, ModelKind::Gaussian, Some(2)));
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = ExperimentConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("seed", "x").is_err());
        assert!(c.set("weighting", "maybe").is_err());
        assert!(c.apply_text("seed 3").is_err());
        c.set("horizon", "9").unwrap();
        assert!(c.validate().is_err());
        c.set("max-horizon", "40").unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn fork_defaults_to_single_step_rollouts() {
        let mut c = ExperimentConfig::default();
        c.set("env", "bimodal-fork").unwrap();
        assert_eq!(c.resolved_horizon(), 1);
        c.set("env", "cartpole").unwrap();
        assert!(c.validate().is_err());
    }
}
