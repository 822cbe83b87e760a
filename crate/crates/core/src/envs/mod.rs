//! Multi-agent environments behind one reset/step contract.
//!
//! All randomness enters through the generator handed to `reset`; `step` is a
//! pure function of the current state and the joint action.

mod coopnav;
mod physics;
mod predprey;
mod survival;

pub use coopnav::{CoopNav, CoopNavConfig, CoopNavState};
pub use physics::PhysicsConfig;
pub use predprey::{PredatorPrey, PredatorPreyConfig, PredatorPreyState};
pub use survival::{
    Heading, Survival, SurvivalAgent, SurvivalConfig, ATTACK_OFFSETS, MOVE_OFFSETS,
    NUM_SURVIVAL_ACTIONS, TURN_LEFT, TURN_RIGHT,
};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::policy::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Continuous { dim: usize },
    Discrete { num_actions: usize },
}

/// Per-step counters used by evaluation summaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    /// Colliding pairs (coopnav: agent-agent; predprey: predator-prey).
    pub collisions: usize,
    pub food_eaten: usize,
    pub deaths: usize,
    /// Agents whose action was ignored because they are dead.
    pub ignored_actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Agents still acting after this step.
    pub active: Vec<bool>,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnvSummary {
    pub food_remaining: Option<usize>,
    pub survivors: Option<usize>,
}

/// Step counters summed over an episode plus the final summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpisodeStats {
    pub collisions: usize,
    pub food_eaten: usize,
    pub deaths: usize,
    pub end: EnvSummary,
}

impl EpisodeStats {
    pub fn record(&mut self, info: &StepInfo) {
        self.collisions += info.collisions;
        self.food_eaten += info.food_eaten;
        self.deaths += info.deaths;
    }
}

pub trait MultiAgentEnv: Send {
    fn name(&self) -> &'static str;

    fn num_agents(&self) -> usize;

    fn num_populations(&self) -> usize {
        1
    }

    fn population_of(&self, _agent: usize) -> usize {
        0
    }

    fn obs_dim(&self) -> usize;

    fn action_space(&self, population: usize) -> ActionSpace;

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>>;

    fn step(&mut self, actions: &[Action]) -> Result<StepOutcome>;

    fn active_agents(&self) -> Vec<bool>;

    /// Independent copy with the same configuration and state.
    fn boxed_clone(&self) -> Box<dyn MultiAgentEnv>;

    fn summary(&self) -> EnvSummary {
        EnvSummary::default()
    }

    fn agents_in_population(&self, population: usize) -> Vec<usize> {
        (0..self.num_agents())
            .filter(|&a| self.population_of(a) == population)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    CoopNav(CoopNavConfig),
    PredatorPrey(PredatorPreyConfig),
    Survival(SurvivalConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::CoopNav(_) => "coopnav",
            EnvConfig::PredatorPrey(_) => "predprey",
            EnvConfig::Survival(_) => "survival",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let physics = |p: &PhysicsConfig| {
            let fields = [("dt", p.dt), ("max_speed", p.max_speed), ("bound", p.bound)];
            for (name, v) in fields {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("env.{name} must be positive, got {v}")));
                }
            }
            if !(0.0..1.0).contains(&p.damping) || p.collision_radius.is_nan() || p.collision_radius < 0.0 {
                return Err(Error::Config("env.damping must lie in [0, 1) and env.collision_radius be non-negative".into()));
            }
            Ok(())
        };
        match self {
            EnvConfig::CoopNav(c) => {
                if c.num_agents == 0 {
                    return Err(Error::Config("env.num_agents must be at least 1".into()));
                }
                physics(&c.physics)
            }
            EnvConfig::PredatorPrey(c) => {
                if c.num_predators == 0 || c.num_prey == 0 {
                    return Err(Error::Config("predator-prey needs at least one predator and one prey".into()));
                }
                if !(c.prey_speed.is_finite() && c.prey_speed > 0.0) {
                    return Err(Error::Config(format!("env.prey_speed must be positive, got {}", c.prey_speed)));
                }
                physics(&c.physics)
            }
            EnvConfig::Survival(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Box<dyn MultiAgentEnv> {
        match self {
            EnvConfig::CoopNav(c) => Box::new(CoopNav::new(c.clone())),
            EnvConfig::PredatorPrey(c) => Box::new(PredatorPrey::new(c.clone())),
            EnvConfig::Survival(c) => Box::new(Survival::new(c.clone())),
        }
    }
}

pub(crate) fn clip_reward(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}
