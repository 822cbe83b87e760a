//! Seeded generator streams and joint-policy rollouts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{ActionSpace, EpisodeStats, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::pg::{Step, Trajectory, TrajectoryTag};
use crate::policy::{self, Action, PolicySpec};

/// Sentinel agent index for streams shared by all agents.
pub const ALL_AGENTS: u64 = u64::MAX;

/// What a generator stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Sampling,
    Pre,
    FreshPre,
    Inner(usize),
    Post,
    Eval,
}

impl Phase {
    fn code(self) -> u64 {
        match self {
            Phase::Init => 1,
            Phase::Sampling => 2,
            Phase::Pre => 3,
            Phase::FreshPre => 4,
            Phase::Post => 5,
            Phase::Eval => 6,
            Phase::Inner(j) => 1000 + j as u64,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, iteration, agent, phase, index)`.
pub fn stream(seed: u64, iteration: u64, agent: u64, phase: Phase, index: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for word in [iteration, agent, phase.code(), index] {
        h = splitmix64(h ^ word);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Action handed to the environment for an agent that is not acting.
fn placeholder(space: ActionSpace) -> Action {
    match space {
        ActionSpace::Continuous { dim } => Action::Continuous(vec![0.0; dim]),
        ActionSpace::Discrete { .. } => Action::Discrete(0),
    }
}

/// Runs one episode of at most `horizon` steps. Agent `i` acts with
/// `policies[env.population_of(i)]` at `assignment[i]`.
pub fn rollout_joint(
    env: &mut dyn MultiAgentEnv,
    policies: &[PolicySpec],
    assignment: &[&ParamVector],
    tag: TrajectoryTag,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut out = rollout_lockstep(&mut [env], policies, assignment, tag, horizon, std::slice::from_mut(rng))?;
    Ok(out.pop().expect("one trajectory per environment"))
}

fn check_shapes(env: &dyn MultiAgentEnv, policies: &[PolicySpec], assignment: &[&ParamVector]) -> Result<()> {
    let n = env.num_agents();
    if assignment.len() != n {
        return Err(Error::dims("parameter assignment", n, assignment.len()));
    }
    if policies.len() != env.num_populations() {
        return Err(Error::dims("population policies", env.num_populations(), policies.len()));
    }
    for (p, policy) in policies.iter().enumerate() {
        if policy.obs_dim() != env.obs_dim() {
            return Err(Error::dims("policy input", env.obs_dim(), policy.obs_dim()));
        }
        let head_dim = match env.action_space(p) {
            ActionSpace::Continuous { dim } => dim,
            ActionSpace::Discrete { num_actions } => num_actions,
        };
        if policy.net.output_dim != head_dim {
            return Err(Error::dims("policy output", head_dim, policy.net.output_dim));
        }
    }
    for (i, params) in assignment.iter().enumerate() {
        let want = policies[env.population_of(i)].num_params();
        if params.len() != want {
            return Err(Error::dims("policy parameters", want, params.len()));
        }
    }
    Ok(())
}

/// Runs one episode per environment in lockstep, batching the network
/// evaluations of every agent that shares a population and parameter vector.
/// Environment `e` draws only from `rngs[e]`, so each trajectory is identical
/// to a standalone [`rollout_joint`] with the same generator.
pub fn rollout_lockstep(
    envs: &mut [&mut (dyn MultiAgentEnv + '_)],
    policies: &[PolicySpec],
    assignment: &[&ParamVector],
    tag: TrajectoryTag,
    horizon: usize,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Trajectory>> {
    if rngs.len() != envs.len() {
        return Err(Error::dims("rollout generators", envs.len(), rngs.len()));
    }
    let Some(first) = envs.first() else {
        return Ok(Vec::new());
    };
    let n = first.num_agents();
    let obs_dim = first.obs_dim();
    let populations: Vec<usize> = (0..n).map(|i| first.population_of(i)).collect();
    for env in envs.iter() {
        check_shapes(&**env, policies, assignment)?;
    }

    // Agents sharing a population and a parameter vector form one group.
    let mut group_of = Vec::with_capacity(n);
    let mut groups: Vec<(usize, &ParamVector)> = Vec::new();
    for i in 0..n {
        let key = (populations[i], assignment[i]);
        let g = match groups.iter().position(|&(p, q)| p == key.0 && std::ptr::eq(q, key.1)) {
            Some(g) => g,
            None => {
                groups.push(key);
                groups.len() - 1
            }
        };
        group_of.push(g);
    }

    let mut trajs: Vec<Trajectory> = envs.iter().map(|_| Trajectory::new(tag)).collect();
    let mut obs: Vec<Vec<Vec<f64>>> = envs.iter_mut().zip(rngs.iter_mut()).map(|(e, r)| e.reset(r)).collect();
    let mut live: Vec<usize> = (0..envs.len()).collect();
    let mut inputs: Vec<Vec<f64>> = vec![Vec::new(); groups.len()];
    for _ in 0..horizon {
        if live.is_empty() {
            break;
        }
        let active: Vec<Vec<bool>> = live.iter().map(|&e| envs[e].active_agents()).collect();
        for input in &mut inputs {
            input.clear();
        }
        for (slot, &e) in live.iter().enumerate() {
            for i in (0..n).filter(|&i| active[slot][i]) {
                inputs[group_of[i]].extend_from_slice(&obs[e][i]);
            }
        }
        let mut dists = Vec::with_capacity(groups.len());
        for (&(pop, params), input) in groups.iter().zip(&inputs) {
            let rows = input.len() / obs_dim.max(1);
            let batch = if rows == 0 {
                Vec::new()
            } else {
                policy::action_distributions(&policies[pop], params, input, rows)?
            };
            dists.push(batch.into_iter());
        }

        let mut finished = Vec::new();
        for (slot, &e) in live.iter().enumerate() {
            let mut actions = Vec::with_capacity(n);
            let mut recorded = Vec::with_capacity(n);
            let mut log_probs = vec![0.0; n];
            for i in 0..n {
                if active[slot][i] {
                    let dist = dists[group_of[i]].next().expect("one distribution per active agent");
                    let (action, logp) = policy::sample_and_logp(&dist, &mut rngs[e]);
                    log_probs[i] = logp;
                    actions.push(action.clone());
                    recorded.push(Some(action));
                } else {
                    actions.push(placeholder(envs[e].action_space(populations[i])));
                    recorded.push(None);
                }
            }
            let out = envs[e].step(&actions)?;
            trajs[e].stats.record(&out.info);
            trajs[e].push(Step {
                observations: std::mem::replace(&mut obs[e], out.observations),
                actions: recorded,
                rewards: out.rewards,
                log_probs,
            })?;
            if out.done {
                finished.push(e);
            }
        }
        live.retain(|e| !finished.contains(e));
    }
    for (traj, env) in trajs.iter_mut().zip(envs.iter()) {
        traj.stats.end = env.summary();
    }
    Ok(trajs)
}

/// Per-episode, per-agent undiscounted returns.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReturns {
    pub per_agent: Vec<f64>,
    pub stats: EpisodeStats,
}

impl EpisodeReturns {
    pub fn from_trajectory(traj: &Trajectory, num_agents: usize) -> Self {
        Self {
            per_agent: (0..num_agents).map(|a| traj.agent_total_reward(a)).collect(),
            stats: traj.stats,
        }
    }

    pub fn mean(&self) -> f64 {
        self.per_agent.iter().sum::<f64>() / self.per_agent.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.per_agent.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Runs `episodes` episodes with a fixed parameter assignment. Episode `e`
/// draws from stream `(seed, 0, ALL_AGENTS, Eval, e)`.
pub fn evaluate(
    env: &mut dyn MultiAgentEnv,
    policies: &[PolicySpec],
    assignment: &[&ParamVector],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<EpisodeReturns>> {
    let n = env.num_agents();
    let mut envs: Vec<Box<dyn MultiAgentEnv>> = (0..episodes).map(|_| env.boxed_clone()).collect();
    let mut refs: Vec<&mut dyn MultiAgentEnv> = envs.iter_mut().map(|e| e.as_mut()).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..episodes)
        .map(|e| stream(seed, 0, ALL_AGENTS, Phase::Eval, e as u64))
        .collect();
    let trajs = rollout_lockstep(&mut refs, policies, assignment, TrajectoryTag::AllCentral, horizon, &mut rngs)?;
    Ok(trajs.iter().map(|t| EpisodeReturns::from_trajectory(t, n)).collect())
}

/// Mean and standard error of per-episode minimum-agent returns.
pub fn min_agent_summary(returns: &[EpisodeReturns]) -> (f64, f64) {
    mean_and_se(returns.iter().map(EpisodeReturns::min))
}

pub fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
