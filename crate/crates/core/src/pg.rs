//! Returns, the linear feature baseline and the REINFORCE estimator.

use nalgebra::{DMatrix, DVector};

use crate::envs::EpisodeStats;
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::policy::{self, Action, PolicySpec};

pub const BASELINE_RIDGE: f64 = 1e-5;
const FEATURE_CLIP: f64 = 10.0;

/// Which parameter assignment generated a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryTag {
    /// Every agent followed the central parameters.
    AllCentral,
    /// `agent` followed its adapted parameters, everyone else the central ones.
    Adapted { agent: usize },
}

/// One joint step. `actions[i]` is `None` when agent `i` was not acting.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Option<Action>>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tag: TrajectoryTag,
    pub steps: Vec<Step>,
    pub stats: EpisodeStats,
}

impl Trajectory {
    pub fn new(tag: TrajectoryTag) -> Self {
        Self {
            tag,
            steps: Vec::new(),
            stats: EpisodeStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn agent_rewards(&self, agent: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.rewards[agent]).collect()
    }

    pub fn agent_return(&self, agent: usize, gamma: f64) -> f64 {
        discounted_returns(&self.agent_rewards(agent), gamma).1
    }

    /// Undiscounted sum of an agent's rewards.
    pub fn agent_total_reward(&self, agent: usize) -> f64 {
        self.steps.iter().map(|s| s.rewards[agent]).sum()
    }

    pub fn push(&mut self, step: Step) -> Result<()> {
        let n = step.observations.len();
        for len in [step.actions.len(), step.rewards.len(), step.log_probs.len()] {
            if len != n {
                return Err(Error::dims("trajectory step", n, len));
            }
        }
        if let Some(first) = self.steps.first() {
            if first.observations.len() != n {
                return Err(Error::dims("agents per step", first.observations.len(), n));
            }
        }
        self.steps.push(step);
        Ok(())
    }
}

/// Reward-to-go `G_t = r_t + γ G_{t+1}` and the total `G_0`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> (Vec<f64>, f64) {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in returns.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    let total = returns.first().copied().unwrap_or(0.0);
    (returns, total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgOptions {
    pub gamma: f64,
    /// Normalizer for the time features.
    pub horizon: usize,
    /// Weight every score term by the whole-trajectory return instead of the reward-to-go.
    pub trajectory_level_returns: bool,
    /// Standardize advantages across the batch.
    pub normalize_advantages: bool,
    pub use_baseline: bool,
}

impl Default for PgOptions {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            horizon: 200,
            trajectory_level_returns: false,
            normalize_advantages: false,
            use_baseline: true,
        }
    }
}

/// Per-step return targets for one agent, one vector per trajectory.
pub fn return_targets(trajectories: &[Trajectory], agent: usize, opts: &PgOptions) -> Vec<Vec<f64>> {
    trajectories
        .iter()
        .map(|traj| {
            let (g, total) = discounted_returns(&traj.agent_rewards(agent), opts.gamma);
            if opts.trajectory_level_returns {
                vec![total; g.len()]
            } else {
                g
            }
        })
        .collect()
}

/// Linear value predictor over `[obs, obs², t/T, (t/T)², (t/T)³, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    pub weights: Vec<f64>,
    pub obs_dim: usize,
    pub horizon: usize,
}

impl LinearBaseline {
    pub fn feature_len(obs_dim: usize) -> usize {
        2 * obs_dim + 4
    }

    pub fn zeros(obs_dim: usize, horizon: usize) -> Self {
        Self {
            weights: vec![0.0; Self::feature_len(obs_dim)],
            obs_dim,
            horizon,
        }
    }

    pub fn features(obs: &[f64], t: usize, horizon: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(obs.iter().map(|o| o.clamp(-FEATURE_CLIP, FEATURE_CLIP)));
        out.extend(obs.iter().map(|o| {
            let c = o.clamp(-FEATURE_CLIP, FEATURE_CLIP);
            c * c
        }));
        let tau = t as f64 / horizon.max(1) as f64;
        out.extend_from_slice(&[tau, tau * tau, tau * tau * tau, 1.0]);
    }

    pub fn predict(&self, obs: &[f64], t: usize) -> f64 {
        let mut f = Vec::with_capacity(self.weights.len());
        Self::features(obs, t, self.horizon, &mut f);
        f.iter().zip(&self.weights).map(|(a, b)| a * b).sum()
    }
}

/// Ridge least squares of the agent's return targets onto the baseline
/// features, using only steps where the agent acted. The intercept is not
/// penalized, so constant targets are reproduced exactly.
pub fn fit_baseline(
    trajectories: &[Trajectory],
    agent: usize,
    opts: &PgOptions,
) -> Result<LinearBaseline> {
    let first = trajectories
        .iter()
        .find_map(|t| t.steps.first())
        .ok_or(Error::Empty("baseline trajectories"))?;
    let obs_dim = first.observations[agent].len();
    let p = LinearBaseline::feature_len(obs_dim);
    let targets = return_targets(trajectories, agent, opts);

    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut f = Vec::with_capacity(p);
    for (traj, g) in trajectories.iter().zip(&targets) {
        for (t, step) in traj.steps.iter().enumerate() {
            if step.actions[agent].is_none() {
                continue;
            }
            LinearBaseline::features(&step.observations[agent], t, opts.horizon, &mut f);
            rows.extend_from_slice(&f);
            y.push(g[t]);
        }
    }
    if y.is_empty() {
        return Ok(LinearBaseline::zeros(obs_dim, opts.horizon));
    }
    let x = DMatrix::from_row_slice(y.len(), p, &rows);
    let y = DVector::from_vec(y);
    let gram = x.tr_mul(&x);
    let rhs = x.tr_mul(&y);
    let mut ridge = BASELINE_RIDGE;
    for _ in 0..5 {
        let mut a = gram.clone();
        // the trailing bias weight is left unpenalized
        for i in 0..p - 1 {
            a[(i, i)] += ridge;
        }
        if let Some(chol) = a.cholesky() {
            let w = chol.solve(&rhs);
            if w.iter().all(|v| v.is_finite()) {
                return Ok(LinearBaseline {
                    weights: w.iter().copied().collect(),
                    obs_dim,
                    horizon: opts.horizon,
                });
            }
        }
        ridge *= 10.0;
    }
    Err(Error::NonFinite("baseline normal equations".into()))
}

/// Advantages `target - baseline` for one agent; zero on steps it did not act.
pub fn advantages(
    trajectories: &[Trajectory],
    agent: usize,
    baseline: Option<&LinearBaseline>,
    opts: &PgOptions,
) -> Vec<Vec<f64>> {
    let mut adv = return_targets(trajectories, agent, opts);
    let mut f = Vec::new();
    for (traj, a) in trajectories.iter().zip(adv.iter_mut()) {
        for (t, step) in traj.steps.iter().enumerate() {
            if step.actions[agent].is_none() {
                a[t] = 0.0;
            } else if let Some(b) = baseline {
                LinearBaseline::features(&step.observations[agent], t, b.horizon, &mut f);
                a[t] -= f.iter().zip(&b.weights).map(|(x, w)| x * w).sum::<f64>();
            }
        }
    }
    if opts.normalize_advantages {
        let active = || {
            trajectories.iter().zip(adv.iter()).flat_map(|(traj, a)| {
                traj.steps
                    .iter()
                    .zip(a)
                    .filter(|(s, _)| s.actions[agent].is_some())
                    .map(|(_, v)| *v)
            })
        };
        let n = active().count();
        if n > 1 {
            let mean = active().sum::<f64>() / n as f64;
            let var = active().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt() + 1e-8;
            for (traj, a) in trajectories.iter().zip(adv.iter_mut()) {
                for (step, v) in traj.steps.iter().zip(a.iter_mut()) {
                    if step.actions[agent].is_some() {
                        *v = (*v - mean) / std;
                    }
                }
            }
        }
    }
    adv
}

/// `(1/|τ|) Σ_τ Σ_t weights[τ][t] · ∇ log π(a_{m,t} | s_{m,t})` summed over
/// the listed `(agent, params)` factors.
pub fn weighted_score_sum(
    trajectories: &[Trajectory],
    policy: &PolicySpec,
    factors: &[(usize, &ParamVector)],
    weights: &[Vec<f64>],
) -> Result<ParamVector> {
    if trajectories.is_empty() {
        return Err(Error::Empty("policy-gradient trajectories"));
    }
    let mut grad = ParamVector::zeros(policy.num_params());
    let mut obs = Vec::new();
    let mut actions = Vec::new();
    let mut row_weights = Vec::new();
    for &(agent, params) in factors {
        obs.clear();
        actions.clear();
        row_weights.clear();
        for (traj, w) in trajectories.iter().zip(weights) {
            for (step, &weight) in traj.steps.iter().zip(w) {
                if weight == 0.0 {
                    continue;
                }
                if let Some(action) = &step.actions[agent] {
                    obs.extend_from_slice(&step.observations[agent]);
                    actions.push(action);
                    row_weights.push(weight);
                }
            }
        }
        if !actions.is_empty() {
            policy::accumulate_grad_log_prob_batch(policy, params, &obs, &actions, &row_weights, &mut grad)?;
        }
    }
    grad.scale(1.0 / trajectories.len() as f64);
    Ok(grad)
}

/// REINFORCE gradient of `agent`'s return with respect to the parameters it acted with.
pub fn reinforce_gradient(
    trajectories: &[Trajectory],
    policy: &PolicySpec,
    params: &ParamVector,
    agent: usize,
    baseline: Option<&LinearBaseline>,
    opts: &PgOptions,
) -> Result<ParamVector> {
    reinforce_gradient_factors(trajectories, policy, agent, &[(agent, params)], baseline, opts)
}

/// REINFORCE where `agent`'s advantages weight the score of every listed factor.
pub fn reinforce_gradient_factors(
    trajectories: &[Trajectory],
    policy: &PolicySpec,
    agent: usize,
    factors: &[(usize, &ParamVector)],
    baseline: Option<&LinearBaseline>,
    opts: &PgOptions,
) -> Result<ParamVector> {
    if trajectories.is_empty() {
        return Err(Error::Empty("policy-gradient trajectories"));
    }
    let adv = advantages(trajectories, agent, baseline, opts);
    weighted_score_sum(trajectories, policy, factors, &adv)
}

/// Fits a fresh baseline when enabled, then estimates the gradient.
pub fn policy_gradient(
    trajectories: &[Trajectory],
    policy: &PolicySpec,
    agent: usize,
    factors: &[(usize, &ParamVector)],
    opts: &PgOptions,
) -> Result<ParamVector> {
    let baseline = if opts.use_baseline {
        Some(fit_baseline(trajectories, agent, opts)?)
    } else {
        None
    };
    reinforce_gradient_factors(trajectories, policy, agent, factors, baseline.as_ref(), opts)
}

/// Mean total discounted return of `agent` over the trajectories.
pub fn estimate_loss(trajectories: &[Trajectory], agent: usize, gamma: f64) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Empty("loss trajectories"));
    }
    Ok(trajectories
        .iter()
        .map(|t| t.agent_return(agent, gamma))
        .sum::<f64>()
        / trajectories.len() as f64)
}
