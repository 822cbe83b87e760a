use rand::{Rng, RngCore};

use super::physics::{force, integrate, norm_sq, sub, PhysicsConfig, Vec2};
use super::{clip_reward, ActionSpace, MultiAgentEnv, StepInfo, StepOutcome};
use crate::error::{Error, Result};
use crate::policy::Action;

pub const PREDATORS: usize = 0;
pub const PREY: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PredatorPreyConfig {
    pub num_predators: usize,
    pub num_prey: usize,
    pub num_obstacles: usize,
    pub obstacle_radius: f64,
    /// Prey acceleration and top speed relative to a predator's.
    pub prey_speed: f64,
    /// Every predator receives the team's capture count instead of its own.
    pub team_reward: bool,
    pub physics: PhysicsConfig,
}

impl Default for PredatorPreyConfig {
    fn default() -> Self {
        Self {
            num_predators: 3,
            num_prey: 1,
            num_obstacles: 2,
            obstacle_radius: 0.15,
            prey_speed: 1.3,
            team_reward: false,
            physics: PhysicsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredatorPreyState {
    /// Predators first, then prey.
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub obstacles: Vec<Vec2>,
}

/// Predators (population 0) chase faster prey (population 1) around static
/// disc obstacles. Each predator-prey contact pays the predator +1 and costs
/// the prey -1.
#[derive(Debug, Clone)]
pub struct PredatorPrey {
    config: PredatorPreyConfig,
    state: PredatorPreyState,
}

impl PredatorPrey {
    pub fn new(config: PredatorPreyConfig) -> Self {
        let n = config.num_predators + config.num_prey;
        Self {
            state: PredatorPreyState {
                positions: vec![[0.0; 2]; n],
                velocities: vec![[0.0; 2]; n],
                obstacles: vec![[0.0; 2]; config.num_obstacles],
            },
            config,
        }
    }

    pub fn config(&self) -> &PredatorPreyConfig {
        &self.config
    }

    pub fn state(&self) -> &PredatorPreyState {
        &self.state
    }

    pub fn set_state(&mut self, state: PredatorPreyState) -> Result<()> {
        let n = self.num_agents();
        if state.positions.len() != n || state.velocities.len() != n {
            return Err(Error::dims("predator-prey state", n, state.positions.len()));
        }
        if state.obstacles.len() != self.config.num_obstacles {
            return Err(Error::dims(
                "obstacles",
                self.config.num_obstacles,
                state.obstacles.len(),
            ));
        }
        self.state = state;
        Ok(())
    }

    fn is_prey(&self, agent: usize) -> bool {
        agent >= self.config.num_predators
    }

    fn inside_obstacle(&self, p: Vec2) -> bool {
        let r2 = self.config.obstacle_radius * self.config.obstacle_radius;
        self.state.obstacles.iter().any(|c| norm_sq(sub(p, *c)) <= r2)
    }

    fn push_out_of_obstacles(&mut self, agent: usize) {
        let r = self.config.obstacle_radius;
        for c in self.state.obstacles.clone() {
            let p = self.state.positions[agent];
            let d = sub(p, c);
            let dist = norm_sq(d).sqrt();
            if dist < r {
                let dir = if dist > 0.0 {
                    [d[0] / dist, d[1] / dist]
                } else {
                    [1.0, 0.0]
                };
                self.state.positions[agent] = [c[0] + dir[0] * r, c[1] + dir[1] * r];
                // drop the velocity component pointing into the disc
                let v = self.state.velocities[agent];
                let inward = v[0] * dir[0] + v[1] * dir[1];
                if inward < 0.0 {
                    self.state.velocities[agent] = [v[0] - inward * dir[0], v[1] - inward * dir[1]];
                }
            }
        }
        let b = self.config.physics.bound;
        for x in &mut self.state.positions[agent] {
            *x = x.clamp(-b, b);
        }
    }

    pub fn observation(&self, agent: usize) -> Vec<f64> {
        let s = &self.state;
        let p = s.positions[agent];
        let v = s.velocities[agent];
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend_from_slice(&p);
        obs.extend_from_slice(&v);
        for other in 0..self.num_agents() {
            if other != agent {
                obs.extend_from_slice(&sub(s.positions[other], p));
                obs.extend_from_slice(&sub(s.velocities[other], v));
            }
        }
        for c in &s.obstacles {
            obs.extend_from_slice(&sub(*c, p));
        }
        obs
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.num_agents()).map(|a| self.observation(a)).collect()
    }
}

impl MultiAgentEnv for PredatorPrey {
    fn boxed_clone(&self) -> Box<dyn MultiAgentEnv> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "predprey"
    }

    fn num_agents(&self) -> usize {
        self.config.num_predators + self.config.num_prey
    }

    fn num_populations(&self) -> usize {
        2
    }

    fn population_of(&self, agent: usize) -> usize {
        if self.is_prey(agent) {
            PREY
        } else {
            PREDATORS
        }
    }

    fn obs_dim(&self) -> usize {
        4 + 4 * (self.num_agents() - 1) + 2 * self.config.num_obstacles
    }

    fn action_space(&self, _population: usize) -> ActionSpace {
        ActionSpace::Continuous { dim: 2 }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        let b = self.config.physics.bound;
        let inner = 0.9 * b;
        self.state.obstacles = (0..self.config.num_obstacles)
            .map(|_| [rng.random_range(-inner..inner), rng.random_range(-inner..inner)])
            .collect();
        let n = self.num_agents();
        self.state.velocities = vec![[0.0; 2]; n];
        self.state.positions = Vec::with_capacity(n);
        for _ in 0..n {
            let p = loop {
                let p = [rng.random_range(-b..b), rng.random_range(-b..b)];
                if !self.inside_obstacle(p) {
                    break p;
                }
            };
            self.state.positions.push(p);
        }
        self.observations()
    }

    fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let n = self.num_agents();
        if actions.len() != n {
            return Err(Error::dims("joint action", n, actions.len()));
        }
        let forces = actions.iter().map(force).collect::<Result<Vec<_>>>()?;
        let phys = self.config.physics;
        for (i, f) in forces.iter().enumerate() {
            let scale = if self.is_prey(i) { self.config.prey_speed } else { 1.0 };
            let s = &mut self.state;
            integrate(
                &phys,
                &mut s.positions[i],
                &mut s.velocities[i],
                *f,
                scale,
                phys.max_speed * scale,
            );
            self.push_out_of_obstacles(i);
        }

        let radius_sq = phys.collision_radius * phys.collision_radius;
        let preds = self.config.num_predators;
        let mut raw = vec![0.0; n];
        let mut captures = 0usize;
        for i in 0..preds {
            for j in preds..n {
                if norm_sq(sub(self.state.positions[i], self.state.positions[j])) < radius_sq {
                    raw[i] += 1.0;
                    raw[j] -= 1.0;
                    captures += 1;
                }
            }
        }
        if self.config.team_reward {
            for r in &mut raw[..preds] {
                *r = captures as f64;
            }
        }

        Ok(StepOutcome {
            observations: self.observations(),
            rewards: raw.into_iter().map(clip_reward).collect(),
            active: vec![true; n],
            done: false,
            info: StepInfo {
                collisions: captures,
                ..StepInfo::default()
            },
        })
    }

    fn active_agents(&self) -> Vec<bool> {
        vec![true; self.num_agents()]
    }
}
