use rand::{Rng, RngCore};

use super::physics::{force, integrate, norm_sq, sub, PhysicsConfig, Vec2};
use super::{clip_reward, ActionSpace, MultiAgentEnv, StepInfo, StepOutcome};
use crate::error::{Error, Result};
use crate::policy::Action;

#[derive(Debug, Clone, PartialEq)]
pub struct CoopNavConfig {
    pub num_agents: usize,
    pub physics: PhysicsConfig,
    pub collision_penalty: f64,
    pub boundary_penalty: f64,
}

impl Default for CoopNavConfig {
    fn default() -> Self {
        Self {
            num_agents: 3,
            physics: PhysicsConfig::default(),
            collision_penalty: 1.0,
            boundary_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopNavState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub goals: Vec<Vec2>,
}

impl CoopNavState {
    /// Reorders agents so that new agent `i` is old agent `perm[i]`. Goals stay.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            velocities: perm.iter().map(|&i| self.velocities[i]).collect(),
            goals: self.goals.clone(),
        }
    }
}

/// N agents cover N goals; shared coverage reward minus collision and
/// boundary penalties, clipped to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct CoopNav {
    config: CoopNavConfig,
    state: CoopNavState,
}

impl CoopNav {
    pub fn new(config: CoopNavConfig) -> Self {
        let n = config.num_agents;
        Self {
            state: CoopNavState {
                positions: vec![[0.0; 2]; n],
                velocities: vec![[0.0; 2]; n],
                goals: vec![[0.0; 2]; n],
            },
            config,
        }
    }

    pub fn config(&self) -> &CoopNavConfig {
        &self.config
    }

    pub fn state(&self) -> &CoopNavState {
        &self.state
    }

    pub fn set_state(&mut self, state: CoopNavState) -> Result<()> {
        let n = self.config.num_agents;
        for len in [state.positions.len(), state.velocities.len(), state.goals.len()] {
            if len != n {
                return Err(Error::dims("coopnav state", n, len));
            }
        }
        self.state = state;
        Ok(())
    }

    pub fn observation(&self, agent: usize) -> Vec<f64> {
        let s = &self.state;
        let p = s.positions[agent];
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend_from_slice(&p);
        obs.extend_from_slice(&s.velocities[agent]);
        for g in &s.goals {
            obs.extend_from_slice(&sub(*g, p));
        }
        for (other, q) in s.positions.iter().enumerate() {
            if other != agent {
                obs.extend_from_slice(&sub(*q, p));
            }
        }
        obs
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.config.num_agents).map(|a| self.observation(a)).collect()
    }

    /// `-Σ_j min_n ‖p_n - g_j‖²`.
    pub fn coverage_reward(&self) -> f64 {
        let s = &self.state;
        -s.goals
            .iter()
            .map(|g| {
                s.positions
                    .iter()
                    .map(|p| norm_sq(sub(*p, *g)))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
    }
}

impl MultiAgentEnv for CoopNav {
    fn boxed_clone(&self) -> Box<dyn MultiAgentEnv> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "coopnav"
    }

    fn num_agents(&self) -> usize {
        self.config.num_agents
    }

    fn obs_dim(&self) -> usize {
        4 + 2 * self.config.num_agents + 2 * (self.config.num_agents - 1)
    }

    fn action_space(&self, _population: usize) -> ActionSpace {
        ActionSpace::Continuous { dim: 2 }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        let b = self.config.physics.bound;
        let n = self.config.num_agents;
        let mut point = || [rng.random_range(-b..b), rng.random_range(-b..b)];
        let positions = (0..n).map(|_| point()).collect();
        let goals = (0..n).map(|_| point()).collect();
        self.state = CoopNavState {
            positions,
            velocities: vec![[0.0; 2]; n],
            goals,
        };
        self.observations()
    }

    fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let n = self.config.num_agents;
        if actions.len() != n {
            return Err(Error::dims("joint action", n, actions.len()));
        }
        let forces = actions.iter().map(force).collect::<Result<Vec<_>>>()?;

        let phys = self.config.physics;
        let mut left_world = vec![false; n];
        for (i, f) in forces.iter().enumerate() {
            let s = &mut self.state;
            left_world[i] = integrate(
                &phys,
                &mut s.positions[i],
                &mut s.velocities[i],
                *f,
                1.0,
                phys.max_speed,
            );
        }

        let radius_sq = phys.collision_radius * phys.collision_radius;
        let mut collisions = vec![0usize; n];
        let mut pairs = 0;
        for i in 0..n {
            for j in i + 1..n {
                if norm_sq(sub(self.state.positions[i], self.state.positions[j])) < radius_sq {
                    collisions[i] += 1;
                    collisions[j] += 1;
                    pairs += 1;
                }
            }
        }

        let shared = self.coverage_reward();
        let rewards = (0..n)
            .map(|i| {
                let mut r = shared - self.config.collision_penalty * collisions[i] as f64;
                if left_world[i] {
                    r -= self.config.boundary_penalty;
                }
                clip_reward(r)
            })
            .collect();

        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            active: vec![true; n],
            done: false,
            info: StepInfo {
                collisions: pairs,
                ..StepInfo::default()
            },
        })
    }

    fn active_agents(&self) -> Vec<bool> {
        vec![true; self.config.num_agents]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn still(n: usize) -> Vec<Action> {
        vec![Action::Continuous(vec![0.0, 0.0]); n]
    }

    #[test]
    fn agent_on_goal_scores_zero() {
        let mut env = CoopNav::new(CoopNavConfig {
            num_agents: 1,
            ..Default::default()
        });
        env.set_state(CoopNavState {
            positions: vec![[0.3, -0.2]],
            velocities: vec![[0.0, 0.0]],
            goals: vec![[0.3, -0.2]],
        })
        .unwrap();
        let out = env.step(&still(1)).unwrap();
        assert_eq!(out.rewards, vec![0.0]);
    }

    #[test]
    fn co_located_agents_collide() {
        let mut env = CoopNav::new(CoopNavConfig {
            num_agents: 2,
            ..Default::default()
        });
        env.set_state(CoopNavState {
            positions: vec![[0.0, 0.0], [0.0, 0.0]],
            velocities: vec![[0.0; 2]; 2],
            goals: vec![[0.0, 0.0], [0.0, 0.0]],
        })
        .unwrap();
        let out = env.step(&still(2)).unwrap();
        // coverage term is zero, so the collision penalty is all that remains
        assert_eq!(out.rewards, vec![-1.0, -1.0]);
        assert_eq!(out.info.collisions, 1);
    }

    #[test]
    fn leaving_the_world_is_penalized_and_clamped() {
        let mut env = CoopNav::new(CoopNavConfig {
            num_agents: 1,
            ..Default::default()
        });
        env.set_state(CoopNavState {
            positions: vec![[0.999, 0.0]],
            velocities: vec![[1.0, 0.0]],
            goals: vec![[0.999, 0.0]],
        })
        .unwrap();
        let out = env.step(&[Action::Continuous(vec![1.0, 0.0])]).unwrap();
        assert_eq!(env.state().positions[0][0], 1.0);
        assert!(out.rewards[0] <= -1.0 + 1e-12);
    }

    #[test]
    fn physics_update_by_hand() {
        let mut env = CoopNav::new(CoopNavConfig {
            num_agents: 1,
            ..Default::default()
        });
        env.set_state(CoopNavState {
            positions: vec![[0.0, 0.0]],
            velocities: vec![[0.4, 0.0]],
            goals: vec![[0.5, 0.5]],
        })
        .unwrap();
        // out-of-range force components are clamped to [-1, 1]
        env.step(&[Action::Continuous(vec![5.0, -1.0])]).unwrap();
        let v = env.state().velocities[0];
        assert!((v[0] - (0.75 * 0.4 + 0.1)).abs() < 1e-15);
        assert!((v[1] + 0.1).abs() < 1e-15);
        let p = env.state().positions[0];
        assert!((p[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn observation_layout() {
        let mut env = CoopNav::new(CoopNavConfig::default());
        let obs = env.reset(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(env.obs_dim(), 14);
        assert!(obs.iter().all(|o| o.len() == 14));
        let s = env.state().clone();
        let o1 = &obs[1];
        assert_eq!(&o1[..2], &s.positions[1]);
        assert_eq!(o1[4], s.goals[0][0] - s.positions[1][0]);
        // first "other agent" block of agent 1 is agent 0
        assert_eq!(o1[10], s.positions[0][0] - s.positions[1][0]);
    }

    #[test]
    fn bad_actions_are_errors() {
        let mut env = CoopNav::new(CoopNavConfig::default());
        env.reset(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(env.step(&still(2)).is_err());
        assert!(env
            .step(&[
                Action::Continuous(vec![0.0]),
                Action::Continuous(vec![0.0, 0.0]),
                Action::Continuous(vec![0.0, 0.0])
            ])
            .is_err());
        assert!(env.step(&vec![Action::Discrete(0); 3]).is_err());
    }
}
