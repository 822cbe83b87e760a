//! Text run configuration: `key = value` lines with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::dimapg::{PreTerm, TrainConfig};
use crate::envs::{CoopNavConfig, EnvConfig, PhysicsConfig, PredatorPreyConfig, SurvivalConfig};
use crate::error::{Error, Result};
use crate::nn::Activation;

/// Everything a training or evaluation run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub initial_log_std: f64,
    /// Save a checkpoint every this many iterations; 0 saves only the final one.
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl RunConfig {
    pub fn new(env: EnvConfig) -> Self {
        Self {
            train: TrainConfig::default(),
            env,
            hidden: vec![100, 100],
            activation: Activation::Relu,
            initial_log_std: 0.0,
            checkpoint_every: 50,
            eval_episodes: 100,
            eval_seed: 12_345,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.env.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !self.initial_log_std.is_finite() {
            return Err(Error::Config("initial_log_std must be finite".into()));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "alpha1" => t.alpha1 = value(key, raw)?,
            "alpha2" => t.alpha2 = value(key, raw)?,
            "epsilon" => t.epsilon = value(key, raw)?,
            "k" => t.k = value(key, raw)?,
            "sample_agents" => t.sample_agents = optional(key, raw, "all")?,
            "n_traj" => t.n_traj = value(key, raw)?,
            "horizon" | "T" => t.horizon = value(key, raw)?,
            "gamma" => t.gamma = value(key, raw)?,
            "iterations" => t.iterations = value(key, raw)?,
            "seed" => t.seed = value(key, raw)?,
            "first_order" => t.first_order = value(key, raw)?,
            "average_agents" => t.average_agents = value(key, raw)?,
            "score_all_agents" => t.score_all_agents = value(key, raw)?,
            "fresh_pre_trajectories" => t.fresh_pre_trajectories = value(key, raw)?,
            "pre_term" => {
                t.pre_term = PreTerm::parse(raw).ok_or_else(|| mismatch(key, raw, "post_return, centered or off"))?
            }
            "trajectory_level_returns" => t.trajectory_level_returns = value(key, raw)?,
            "normalize_advantages" => t.normalize_advantages = value(key, raw)?,
            "use_baseline" => t.use_baseline = value(key, raw)?,
            "max_grad_norm" => t.max_grad_norm = optional(key, raw, "none")?,
            "single_agent" => t.single_agent = value(key, raw)?,
            "deterministic" => t.deterministic = value(key, raw)?,
            "hidden" => {
                self.hidden = if raw.is_empty() {
                    Vec::new()
                } else {
                    raw.split(',').map(|w| value(key, w.trim())).collect::<Result<_>>()?
                }
            }
            "activation" => {
                self.activation = Activation::parse(raw).ok_or_else(|| mismatch(key, raw, "relu or tanh"))?
            }
            "initial_log_std" => self.initial_log_std = value(key, raw)?,
            "checkpoint_every" => self.checkpoint_every = value(key, raw)?,
            "eval_episodes" => self.eval_episodes = value(key, raw)?,
            "eval_seed" => self.eval_seed = value(key, raw)?,
            _ => match key.strip_prefix("env.") {
                Some(field) => set_env(&mut self.env, key, field, raw)?,
                None => return Err(Error::Config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Canonical `key = value` text; `parse_config(&c.render())` returns `c`.
    pub fn render(&self) -> String {
        let t = &self.train;
        let opt = |v: Option<String>, none: &str| v.unwrap_or_else(|| none.to_string());
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let mut entries: Vec<(&str, String)> = vec![
            ("env", self.env.name().to_string()),
            ("alpha1", t.alpha1.to_string()),
            ("alpha2", t.alpha2.to_string()),
            ("epsilon", t.epsilon.to_string()),
            ("k", t.k.to_string()),
            ("sample_agents", opt(t.sample_agents.map(|m| m.to_string()), "all")),
            ("n_traj", t.n_traj.to_string()),
            ("horizon", t.horizon.to_string()),
            ("gamma", t.gamma.to_string()),
            ("iterations", t.iterations.to_string()),
            ("seed", t.seed.to_string()),
            ("first_order", t.first_order.to_string()),
            ("average_agents", t.average_agents.to_string()),
            ("score_all_agents", t.score_all_agents.to_string()),
            ("fresh_pre_trajectories", t.fresh_pre_trajectories.to_string()),
            ("pre_term", t.pre_term.name().to_string()),
            ("trajectory_level_returns", t.trajectory_level_returns.to_string()),
            ("normalize_advantages", t.normalize_advantages.to_string()),
            ("use_baseline", t.use_baseline.to_string()),
            ("max_grad_norm", opt(t.max_grad_norm.map(|c| c.to_string()), "none")),
            ("single_agent", t.single_agent.to_string()),
            ("deterministic", t.deterministic.to_string()),
            ("hidden", hidden.join(",")),
            ("activation", self.activation.name().to_string()),
            ("initial_log_std", self.initial_log_std.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
        ];
        let env_entries = env_entries(&self.env);
        entries.extend(env_entries.iter().map(|(k, v)| (k.as_str(), v.clone())));
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn mismatch(key: &str, raw: &str, expected: &str) -> Error {
    Error::Config(format!("key `{key}`: expected {expected}, got `{raw}`"))
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| mismatch(key, raw, std::any::type_name::<T>()))
}

fn optional<T: FromStr>(key: &str, raw: &str, none: &str) -> Result<Option<T>> {
    if raw == none {
        Ok(None)
    } else {
        value(key, raw).map(Some)
    }
}

fn set_physics(p: &mut PhysicsConfig, key: &str, field: &str, raw: &str) -> Result<bool> {
    match field {
        "dt" => p.dt = value(key, raw)?,
        "damping" => p.damping = value(key, raw)?,
        "max_speed" => p.max_speed = value(key, raw)?,
        "collision_radius" => p.collision_radius = value(key, raw)?,
        "bound" => p.bound = value(key, raw)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_env(env: &mut EnvConfig, key: &str, field: &str, raw: &str) -> Result<()> {
    match env {
        EnvConfig::CoopNav(c) => match field {
            "num_agents" => c.num_agents = value(key, raw)?,
            "collision_penalty" => c.collision_penalty = value(key, raw)?,
            "boundary_penalty" => c.boundary_penalty = value(key, raw)?,
            _ => {
                if !set_physics(&mut c.physics, key, field, raw)? {
                    return Err(unknown_env(key, "coopnav"));
                }
            }
        },
        EnvConfig::PredatorPrey(c) => match field {
            "num_predators" => c.num_predators = value(key, raw)?,
            "num_prey" => c.num_prey = value(key, raw)?,
            "num_obstacles" => c.num_obstacles = value(key, raw)?,
            "obstacle_radius" => c.obstacle_radius = value(key, raw)?,
            "prey_speed" => c.prey_speed = value(key, raw)?,
            "team_reward" => c.team_reward = value(key, raw)?,
            _ => {
                if !set_physics(&mut c.physics, key, field, raw)? {
                    return Err(unknown_env(key, "predprey"));
                }
            }
        },
        EnvConfig::Survival(c) => match field {
            "num_agents" => c.num_agents = value(key, raw)?,
            "width" => c.width = value(key, raw)?,
            "height" => c.height = value(key, raw)?,
            "food" => c.food = value(key, raw)?,
            "hp" => c.hp = value(key, raw)?,
            "view_radius" => c.view_radius = value(key, raw)?,
            _ => return Err(unknown_env(key, "survival")),
        },
    }
    Ok(())
}

fn unknown_env(key: &str, env: &str) -> Error {
    Error::Config(format!("unknown key `{key}` for env {env}"))
}

fn physics_entries(p: &PhysicsConfig) -> Vec<(String, String)> {
    vec![
        ("env.dt".into(), p.dt.to_string()),
        ("env.damping".into(), p.damping.to_string()),
        ("env.max_speed".into(), p.max_speed.to_string()),
        ("env.collision_radius".into(), p.collision_radius.to_string()),
        ("env.bound".into(), p.bound.to_string()),
    ]
}

fn env_entries(env: &EnvConfig) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    match env {
        EnvConfig::CoopNav(c) => {
            out.push(("env.num_agents".into(), c.num_agents.to_string()));
            out.push(("env.collision_penalty".into(), c.collision_penalty.to_string()));
            out.push(("env.boundary_penalty".into(), c.boundary_penalty.to_string()));
            out.extend(physics_entries(&c.physics));
        }
        EnvConfig::PredatorPrey(c) => {
            out.push(("env.num_predators".into(), c.num_predators.to_string()));
            out.push(("env.num_prey".into(), c.num_prey.to_string()));
            out.push(("env.num_obstacles".into(), c.num_obstacles.to_string()));
            out.push(("env.obstacle_radius".into(), c.obstacle_radius.to_string()));
            out.push(("env.prey_speed".into(), c.prey_speed.to_string()));
            out.push(("env.team_reward".into(), c.team_reward.to_string()));
            out.extend(physics_entries(&c.physics));
        }
        EnvConfig::Survival(c) => {
            out.push(("env.num_agents".into(), c.num_agents.to_string()));
            out.push(("env.width".into(), c.width.to_string()));
            out.push(("env.height".into(), c.height.to_string()));
            out.push(("env.food".into(), c.food.to_string()));
            out.push(("env.hp".into(), c.hp.to_string()));
            out.push(("env.view_radius".into(), c.view_radius.to_string()));
        }
    }
    out
}

/// Default environment configuration for a name.
pub fn env_by_name(name: &str) -> Result<EnvConfig> {
    match name {
        "coopnav" => Ok(EnvConfig::CoopNav(CoopNavConfig::default())),
        "predprey" => Ok(EnvConfig::PredatorPrey(PredatorPreyConfig::default())),
        "survival" => Ok(EnvConfig::Survival(SurvivalConfig::default())),
        other => Err(Error::Config(format!(
            "key `env`: expected coopnav, predprey or survival, got `{other}`"
        ))),
    }
}

/// Parses `key = value` lines; a repeated key is an error.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, raw)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", n + 1)));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if pairs.insert(key.to_string(), raw.trim().to_string()).is_some() {
            return Err(Error::Config(format!("key `{key}` given twice")));
        }
    }
    Ok(pairs)
}

/// Parses a config file; `overrides` (`key=value`) replace or add entries.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut pairs = parse_pairs(text)?;
    for (k, v) in overrides {
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    let name = pairs
        .remove("env")
        .ok_or_else(|| Error::Config("missing env name (`env = coopnav|predprey|survival`)".into()))?;
    let mut config = RunConfig::new(env_by_name(&name)?);
    for (k, v) in &pairs {
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &[])
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override `{s}` is not `key=value`")))
}
