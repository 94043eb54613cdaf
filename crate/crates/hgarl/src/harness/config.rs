//! Run configuration: what to train, where, for how long.
//!
//! Configurations come from three layers, later wins: built-in defaults,
//! a flat `key = value` config file (`#` starts a comment), and command
//! line flags. `dump_lines` renders the fully resolved configuration for
//! provenance; the same rendering is echoed into the run summary.

use crate::learner::{Algorithm, LearnerConfig};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Single,
    Pa,
    Pm,
    Combo,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Single => "single",
            Rule::Pa => "pa",
            Rule::Pm => "pm",
            Rule::Combo => "combo",
        })
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Rule::Single),
            "pa" => Ok(Rule::Pa),
            "pm" => Ok(Rule::Pm),
            "combo" => Ok(Rule::Combo),
            other => Err(format!(
                "unknown rule {other:?} (expected single, pa, pm or combo)"
            )),
        }
    }
}

/// When agents publish and drain knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeCadence {
    /// At the start of every episode.
    Episode,
    /// After every n-th learner update.
    Updates(u32),
}

impl fmt::Display for ExchangeCadence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExchangeCadence::Episode => f.write_str("episode"),
            ExchangeCadence::Updates(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for ExchangeCadence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("episode") {
            return Ok(ExchangeCadence::Episode);
        }
        match s.parse::<u32>() {
            Ok(n) if n > 0 => Ok(ExchangeCadence::Updates(n)),
            _ => Err(format!(
                "exchange interval must be \"episode\" or a positive update count, got {s:?}"
            )),
        }
    }
}

/// Which environment, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvChoice {
    CartPole { max_steps: u32 },
    GridWorld { grid: GridSpec, max_steps: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Square(usize),
    MapFile(PathBuf),
    MapText(String),
}

impl EnvChoice {
    pub fn name(&self) -> &'static str {
        match self {
            EnvChoice::CartPole { .. } => "cartpole",
            EnvChoice::GridWorld { .. } => "gridworld",
        }
    }
}

/// One roster slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub algorithm: Algorithm,
    pub config: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvChoice,
    pub roster: Vec<AgentSpec>,
    pub rule: Rule,
    pub seeds: Vec<u64>,
    /// Per-agent time-step budget.
    pub total_steps: u64,
    pub exchange: ExchangeCadence,
    /// phi = phi_fraction * ln(action count), unless overridden.
    pub phi_fraction: f64,
    pub phi_absolute: Option<f64>,
    /// Round-robin single-thread interleave for bit-reproducible output.
    pub deterministic: bool,
    /// Trailing-episode window for smoothed curves.
    pub smoothing_window: usize,
    /// Steps at which reward tables are reported; empty means quartiles
    /// of the budget.
    pub ar_checkpoints: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("roster must contain at least one agent")]
    EmptyRoster,
    #[error("seeds must be distinct (seed {0} repeats)")]
    DuplicateSeed(u64),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("total steps must be positive")]
    ZeroSteps,
    #[error("phi_fraction must be positive, got {0}")]
    BadPhiFraction(f64),
    #[error("phi must be positive, got {0}")]
    BadPhi(f64),
    #[error("smoothing window must be at least 1")]
    ZeroWindow,
    #[error("agent {index} ({algorithm}): {source}")]
    Learner {
        index: usize,
        algorithm: Algorithm,
        source: crate::learner::LearnerConfigError,
    },
    #[error("config file line {line}: {message}")]
    File { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("grid size must be at least 2, got {0}")]
    BadGridSize(usize),
    #[error("{0}")]
    Other(String),
}

impl RunConfig {
    /// A 3-agent heterogeneous cart-pole group: the default experiment.
    pub fn example() -> Self {
        Self {
            env: EnvChoice::CartPole { max_steps: 200 },
            roster: vec![
                AgentSpec {
                    algorithm: Algorithm::A2c,
                    config: LearnerConfig::defaults_for(Algorithm::A2c),
                },
                AgentSpec {
                    algorithm: Algorithm::Ppo,
                    config: LearnerConfig::defaults_for(Algorithm::Ppo),
                },
                AgentSpec {
                    algorithm: Algorithm::Acer,
                    config: LearnerConfig::defaults_for(Algorithm::Acer),
                },
            ],
            rule: Rule::Combo,
            seeds: vec![1, 2, 3, 4],
            total_steps: 20_000,
            exchange: ExchangeCadence::Episode,
            phi_fraction: 0.8,
            phi_absolute: None,
            deterministic: false,
            smoothing_window: 10,
            ar_checkpoints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.roster.is_empty() {
            return Err(ConfigError::EmptyRoster);
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(*s) {
                return Err(ConfigError::DuplicateSeed(*s));
            }
        }
        if self.total_steps == 0 {
            return Err(ConfigError::ZeroSteps);
        }
        if self.phi_fraction <= 0.0 {
            return Err(ConfigError::BadPhiFraction(self.phi_fraction));
        }
        if let Some(phi) = self.phi_absolute {
            if phi <= 0.0 {
                return Err(ConfigError::BadPhi(phi));
            }
        }
        if self.smoothing_window == 0 {
            return Err(ConfigError::ZeroWindow);
        }
        for (index, agent) in self.roster.iter().enumerate() {
            agent
                .config
                .validate()
                .map_err(|source| ConfigError::Learner {
                    index,
                    algorithm: agent.algorithm,
                    source,
                })?;
        }
        Ok(())
    }

    /// A group of one degenerates to plain single-agent training; the
    /// outputs record it as such.
    pub fn effective_rule(&self) -> Rule {
        if self.roster.len() == 1 {
            Rule::Single
        } else {
            self.rule
        }
    }

    /// The Combo confidence threshold for an action set of this size.
    pub fn phi(&self, action_count: usize) -> f64 {
        self.phi_absolute
            .unwrap_or_else(|| self.phi_fraction * (action_count as f64).ln())
    }

    /// Reward-table checkpoints: configured ones, or budget quartiles.
    pub fn checkpoints(&self) -> Vec<u64> {
        if !self.ar_checkpoints.is_empty() {
            return self.ar_checkpoints.clone();
        }
        let t = self.total_steps;
        vec![t / 4, t / 2, 3 * t / 4, t]
            .into_iter()
            .filter(|n| *n > 0)
            .collect()
    }

    /// Fully resolved `key = value` lines, stable order.
    pub fn dump_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        lines.push(format!("env = {}", self.env.name()));
        match &self.env {
            EnvChoice::CartPole { max_steps } => {
                lines.push(format!("cartpole_max_steps = {max_steps}"));
            }
            EnvChoice::GridWorld { grid, max_steps } => {
                match grid {
                    GridSpec::Square(n) => lines.push(format!("gridworld_size = {n}")),
                    GridSpec::MapFile(p) => {
                        lines.push(format!("gridworld_map = {}", p.display()))
                    }
                    GridSpec::MapText(_) => lines.push("gridworld_map = <inline>".to_string()),
                }
                lines.push(format!("gridworld_max_steps = {max_steps}"));
            }
        }
        lines.push(format!("rule = {}", self.rule));
        lines.push(format!(
            "seeds = {}",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        lines.push(format!("steps = {}", self.total_steps));
        lines.push(format!("exchange_interval = {}", self.exchange));
        lines.push(format!("phi_fraction = {}", self.phi_fraction));
        if let Some(phi) = self.phi_absolute {
            lines.push(format!("phi = {phi}"));
        }
        lines.push(format!("deterministic = {}", self.deterministic));
        lines.push(format!("smoothing_window = {}", self.smoothing_window));
        if !self.ar_checkpoints.is_empty() {
            lines.push(format!(
                "ar_checkpoints = {}",
                self.ar_checkpoints
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
        }
        for (i, agent) in self.roster.iter().enumerate() {
            let c = &agent.config;
            lines.push(format!("agent{i}.algorithm = {}", agent.algorithm));
            lines.push(format!("agent{i}.gamma = {}", c.gamma));
            lines.push(format!("agent{i}.learning_rate = {}", c.learning_rate));
            lines.push(format!("agent{i}.batch_size = {}", c.batch_size));
            lines.push(format!("agent{i}.clip_epsilon = {}", c.clip_epsilon));
            lines.push(format!("agent{i}.truncation_c = {}", c.truncation_c));
            lines.push(format!("agent{i}.ppo_epochs = {}", c.ppo_epochs));
            lines.push(format!("agent{i}.ppo_minibatch = {}", c.ppo_minibatch));
            lines.push(format!("agent{i}.ppo_adv_norm = {}", c.ppo_adv_norm));
            lines.push(format!("agent{i}.replay_capacity = {}", c.replay_capacity));
            lines.push(format!("agent{i}.replay_ratio = {}", c.replay_ratio));
            lines.push(format!("agent{i}.entropy_coef = {}", c.entropy_coef));
            lines.push(format!("agent{i}.value_coef = {}", c.value_coef));
            lines.push(format!("agent{i}.grad_clip = {}", c.grad_clip));
            lines.push(format!("agent{i}.optimizer = {}", c.optimizer));
            lines.push(format!(
                "agent{i}.hidden_dims = {}",
                c.hidden_dims
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
        }
        lines
    }
}

/// Parse a flat config file into ordered key/value pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::File {
                line: i + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            });
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn bad<T: fmt::Display>(key: &str, err: T) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: err.to_string(),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|e| bad(key, e)))
        .collect()
}

/// Apply one `key = value` pair onto a config under construction.
/// Per-agent keys use an `a2c.` / `ppo.` / `acer.` / `all.` prefix and
/// touch every roster slot they select.
pub fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    if let Some((prefix, field)) = key.split_once('.') {
        let selector: Option<Algorithm> = match prefix {
            "all" => None,
            other => Some(other.parse().map_err(|e| bad(key, e))?),
        };
        let mut touched = false;
        for agent in cfg.roster.iter_mut() {
            if selector.map_or(true, |a| a == agent.algorithm) {
                apply_learner_key(&mut agent.config, key, field, value)?;
                touched = true;
            }
        }
        if !touched && selector.is_some() {
            // A tuning block for an algorithm absent from the roster is
            // not an error; it just does nothing.
        }
        return Ok(());
    }
    match key {
        "env" => {
            cfg.env = match value.trim().to_ascii_lowercase().as_str() {
                "cartpole" => EnvChoice::CartPole { max_steps: 200 },
                "gridworld" => EnvChoice::GridWorld {
                    grid: GridSpec::Square(4),
                    max_steps: 100,
                },
                other => return Err(bad(key, format!("unknown environment {other:?}"))),
            };
        }
        "cartpole_max_steps" => {
            let n = value.parse::<u32>().map_err(|e| bad(key, e))?;
            if let EnvChoice::CartPole { max_steps } = &mut cfg.env {
                *max_steps = n;
            }
        }
        "gridworld_max_steps" => {
            let n = value.parse::<u32>().map_err(|e| bad(key, e))?;
            if let EnvChoice::GridWorld { max_steps, .. } = &mut cfg.env {
                *max_steps = n;
            }
        }
        "gridworld_size" => {
            let n = value.parse::<usize>().map_err(|e| bad(key, e))?;
            if n < 2 {
                return Err(ConfigError::BadGridSize(n));
            }
            if let EnvChoice::GridWorld { grid, .. } = &mut cfg.env {
                *grid = GridSpec::Square(n);
            }
        }
        "gridworld_map" => {
            if let EnvChoice::GridWorld { grid, .. } = &mut cfg.env {
                *grid = GridSpec::MapFile(PathBuf::from(value));
            }
        }
        "agents" => {
            let algos: Vec<Algorithm> = parse_list(key, value)?;
            cfg.roster = algos
                .into_iter()
                .map(|algorithm| AgentSpec {
                    algorithm,
                    config: LearnerConfig::defaults_for(algorithm),
                })
                .collect();
        }
        "rule" => cfg.rule = value.parse().map_err(|e| bad(key, e))?,
        "seeds" => cfg.seeds = parse_list(key, value)?,
        "steps" => cfg.total_steps = value.parse().map_err(|e| bad(key, e))?,
        "exchange_interval" => cfg.exchange = value.parse().map_err(|e| bad(key, e))?,
        "phi_fraction" => cfg.phi_fraction = value.parse().map_err(|e| bad(key, e))?,
        "phi" => cfg.phi_absolute = Some(value.parse().map_err(|e| bad(key, e))?),
        "deterministic" => cfg.deterministic = value.parse().map_err(|e| bad(key, e))?,
        "smoothing_window" => cfg.smoothing_window = value.parse().map_err(|e| bad(key, e))?,
        "ar_checkpoints" => cfg.ar_checkpoints = parse_list(key, value)?,
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

fn apply_learner_key(
    cfg: &mut LearnerConfig,
    full_key: &str,
    field: &str,
    value: &str,
) -> Result<(), ConfigError> {
    match field {
        "gamma" => cfg.gamma = value.parse().map_err(|e| bad(full_key, e))?,
        "learning_rate" => cfg.learning_rate = value.parse().map_err(|e| bad(full_key, e))?,
        "batch_size" => cfg.batch_size = value.parse().map_err(|e| bad(full_key, e))?,
        "clip_epsilon" => cfg.clip_epsilon = value.parse().map_err(|e| bad(full_key, e))?,
        "truncation_c" => cfg.truncation_c = value.parse().map_err(|e| bad(full_key, e))?,
        "ppo_epochs" => cfg.ppo_epochs = value.parse().map_err(|e| bad(full_key, e))?,
        "ppo_minibatch" => cfg.ppo_minibatch = value.parse().map_err(|e| bad(full_key, e))?,
        "ppo_adv_norm" => cfg.ppo_adv_norm = value.parse().map_err(|e| bad(full_key, e))?,
        "replay_capacity" => cfg.replay_capacity = value.parse().map_err(|e| bad(full_key, e))?,
        "replay_ratio" => cfg.replay_ratio = value.parse().map_err(|e| bad(full_key, e))?,
        "entropy_coef" => cfg.entropy_coef = value.parse().map_err(|e| bad(full_key, e))?,
        "value_coef" => cfg.value_coef = value.parse().map_err(|e| bad(full_key, e))?,
        "grad_clip" => cfg.grad_clip = value.parse().map_err(|e| bad(full_key, e))?,
        "optimizer" => cfg.optimizer = value.parse().map_err(|e| bad(full_key, e))?,
        "hidden_dims" => cfg.hidden_dims = parse_list(full_key, value)?,
        other => {
            return Err(ConfigError::UnknownKey(format!(
                "{other} (in {full_key})"
            )))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_validates() {
        RunConfig::example().validate().unwrap();
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let mut cfg = RunConfig::example();
        cfg.seeds = vec![1, 2, 1];
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::DuplicateSeed(1))
        ));
    }

    #[test]
    fn group_of_one_is_effectively_single() {
        let mut cfg = RunConfig::example();
        cfg.rule = Rule::Combo;
        cfg.roster.truncate(1);
        assert_eq!(cfg.effective_rule(), Rule::Single);
    }

    #[test]
    fn phi_defaults_to_fraction_of_uniform_nll() {
        let cfg = RunConfig::example();
        assert!((cfg.phi(4) - 0.8 * 4.0f64.ln()).abs() < 1e-12);
        let mut over = cfg.clone();
        over.phi_absolute = Some(0.3);
        assert_eq!(over.phi(4), 0.3);
    }

    #[test]
    fn config_file_round_trip() {
        let text = "\n# a comment\nenv = gridworld\ngridworld_size = 6\nrule = pa\nseeds = 5, 6\nsteps = 1000\nppo.learning_rate = 0.5\n";
        let mut cfg = RunConfig::example();
        for (k, v) in parse_config_text(text).unwrap() {
            apply_key(&mut cfg, &k, &v).unwrap();
        }
        assert_eq!(cfg.env, EnvChoice::GridWorld { grid: GridSpec::Square(6), max_steps: 100 });
        assert_eq!(cfg.rule, Rule::Pa);
        assert_eq!(cfg.seeds, vec![5, 6]);
        assert_eq!(cfg.total_steps, 1000);
        let ppo = cfg.roster.iter().find(|a| a.algorithm == Algorithm::Ppo).unwrap();
        assert_eq!(ppo.config.learning_rate, 0.5);
        let a2c = cfg.roster.iter().find(|a| a.algorithm == Algorithm::A2c).unwrap();
        assert_ne!(a2c.config.learning_rate, 0.5);
    }

    #[test]
    fn unknown_keys_and_bad_lines_error() {
        let mut cfg = RunConfig::example();
        assert!(matches!(
            apply_key(&mut cfg, "bogus", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(parse_config_text("just words\n").is_err());
    }

    #[test]
    fn dump_lines_are_stable_and_parse_back() {
        let cfg = RunConfig::example();
        let lines = cfg.dump_lines();
        assert_eq!(lines, cfg.dump_lines());
        assert!(lines.iter().any(|l| l == "agent1.batch_size = 256"));
        // Run-level lines parse back through the same reader.
        let text = lines
            .iter()
            .filter(|l| !l.starts_with("agent"))
            .cloned()
            .collect::<Vec<_>>()
            .join("\n");
        let mut cfg2 = RunConfig::example();
        for (k, v) in parse_config_text(&text).unwrap() {
            apply_key(&mut cfg2, &k, &v).unwrap();
        }
        assert_eq!(cfg2.rule, cfg.rule);
        assert_eq!(cfg2.total_steps, cfg.total_steps);
    }
}
