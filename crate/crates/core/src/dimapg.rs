//! Central-policy training: per-agent inner adaptation with the other agents
//! frozen, a two-term outer gradient, and one consolidating ascent step.

use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;

use crate::envs::{ActionSpace, EnvConfig, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParamVector};
use crate::pg::{self, PgOptions, Trajectory, TrajectoryTag};
use crate::policy::PolicySpec;
use crate::rollout::{self, stream, EpisodeReturns, Phase, ALL_AGENTS};

/// Scalar weighting the pre-adaptation score term of the outer gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreTerm {
    /// The agent's post-adaptation return estimate.
    PostReturn,
    /// Post-adaptation return minus its mean over the agents of the same population.
    Centered,
    /// Term dropped.
    Off,
}

impl PreTerm {
    pub fn name(self) -> &'static str {
        match self {
            PreTerm::PostReturn => "post_return",
            PreTerm::Centered => "centered",
            PreTerm::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "post_return" => Some(PreTerm::PostReturn),
            "centered" => Some(PreTerm::Centered),
            "off" => Some(PreTerm::Off),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inner step size for the first adaptation step.
    pub alpha1: f64,
    /// Inner step size for later adaptation steps.
    pub alpha2: f64,
    /// Central step size.
    pub epsilon: f64,
    /// Inner adaptation steps.
    pub k: usize,
    /// Agents adapted per iteration; `None` adapts every agent.
    pub sample_agents: Option<usize>,
    pub n_traj: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub iterations: usize,
    pub seed: u64,
    pub first_order: bool,
    /// Divide each population's outer gradient by its number of contributing agents.
    pub average_agents: bool,
    pub score_all_agents: bool,
    pub fresh_pre_trajectories: bool,
    pub pre_term: PreTerm,
    pub trajectory_level_returns: bool,
    pub normalize_advantages: bool,
    pub use_baseline: bool,
    /// Rescale inner and central gradients to at most this norm before stepping.
    pub max_grad_norm: Option<f64>,
    /// Only agent 0 learns; the others keep the initial parameters.
    pub single_agent: bool,
    /// Force sequential execution.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.01,
            alpha2: 0.01,
            epsilon: 0.05,
            k: 3,
            sample_agents: None,
            n_traj: 25,
            horizon: 200,
            gamma: 0.99,
            iterations: 100,
            seed: 0,
            first_order: true,
            average_agents: false,
            score_all_agents: false,
            fresh_pre_trajectories: false,
            pre_term: PreTerm::PostReturn,
            trajectory_level_returns: false,
            normalize_advantages: false,
            use_baseline: true,
            max_grad_norm: None,
            single_agent: false,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")))
            }
        };
        positive("alpha1", self.alpha1)?;
        positive("alpha2", self.alpha2)?;
        positive("epsilon", self.epsilon)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.n_traj == 0 {
            return Err(Error::Config("n_traj must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("max_grad_norm must be positive, got {c}")));
            }
        }
        if self.sample_agents == Some(0) {
            return Err(Error::Config("sample_agents must be at least 1".into()));
        }
        if !self.first_order {
            return Err(Error::Config(
                "second-order outer gradients are only available in the tabular oracle".into(),
            ));
        }
        Ok(())
    }

    pub fn pg_options(&self) -> PgOptions {
        PgOptions {
            gamma: self.gamma,
            horizon: self.horizon,
            trajectory_level_returns: self.trajectory_level_returns,
            normalize_advantages: self.normalize_advantages,
            use_baseline: self.use_baseline,
        }
    }
}

/// One policy per population, shaped by the environment.
pub fn population_policies(
    env: &dyn MultiAgentEnv,
    hidden: &[usize],
    activation: Activation,
    initial_log_std: f64,
) -> Result<Vec<PolicySpec>> {
    (0..env.num_populations())
        .map(|p| match env.action_space(p) {
            ActionSpace::Continuous { dim } => PolicySpec::gaussian(
                MlpSpec::new(env.obs_dim(), hidden.to_vec(), dim, activation)?,
                initial_log_std,
            ),
            ActionSpace::Discrete { num_actions } => PolicySpec::categorical(MlpSpec::new(
                env.obs_dim(),
                hidden.to_vec(),
                num_actions,
                activation,
            )?),
        })
        .collect()
}

pub fn init_population_params(policies: &[PolicySpec], seed: u64) -> Vec<ParamVector> {
    policies
        .iter()
        .enumerate()
        .map(|(p, policy)| policy.init_params(&mut stream(seed, 0, ALL_AGENTS, Phase::Init, p as u64)))
        .collect()
}

/// Everything an iteration needs besides the central parameters.
pub struct Trainer<'a> {
    pub config: &'a TrainConfig,
    pub env_config: &'a EnvConfig,
    pub policies: &'a [PolicySpec],
    /// Parameters for agents that do not learn in single-agent mode.
    pub frozen: Option<&'a [ParamVector]>,
    populations: Vec<usize>,
    num_agents: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedParams {
    pub agent: usize,
    pub params: ParamVector,
    /// `trace[0]` is the starting point, `trace[k]` equals `params`.
    pub trace: Vec<ParamVector>,
}

/// Outer gradient per population plus the loss estimates that fed it.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterGradient {
    pub grads: Vec<ParamVector>,
    pub loss_pre: Vec<f64>,
    pub loss_post: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Episodes simulated so far, including this iteration.
    pub episodes: usize,
    pub mean_return: f64,
    pub min_agent_return: f64,
    pub loss_pre: f64,
    pub loss_post: f64,
    pub grad_norm: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Vec<ParamVector>,
    pub metrics: Vec<IterationMetrics>,
}

/// Scales `grad` down to norm `max_norm` when it is longer.
pub fn clip_norm(grad: &mut ParamVector, max_norm: Option<f64>) {
    if let Some(c) = max_norm {
        let norm = grad.norm();
        if norm > c {
            grad.scale(c / norm);
        }
    }
}

/// `θ + ε · grad`, rejecting non-finite results.
pub fn central_update(theta: &ParamVector, grad: &ParamVector, epsilon: f64) -> Result<ParamVector> {
    let next = theta.add_scaled(grad, epsilon)?;
    if !next.is_finite() {
        return Err(Error::NonFinite("central parameters after update".into()));
    }
    Ok(next)
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: &'a TrainConfig,
        env_config: &'a EnvConfig,
        policies: &'a [PolicySpec],
    ) -> Result<Self> {
        config.validate()?;
        let env = env_config.build();
        if policies.len() != env.num_populations() {
            return Err(Error::dims("population policies", env.num_populations(), policies.len()));
        }
        let num_agents = env.num_agents();
        Ok(Self {
            config,
            env_config,
            policies,
            frozen: None,
            populations: (0..num_agents).map(|i| env.population_of(i)).collect(),
            num_agents,
        })
    }

    pub fn with_frozen(mut self, frozen: &'a [ParamVector]) -> Self {
        self.frozen = Some(frozen);
        self
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn population_of(&self, agent: usize) -> usize {
        self.populations[agent]
    }

    pub fn learns(&self, agent: usize) -> bool {
        !self.config.single_agent || agent == 0
    }

    /// Parameters for every agent when `focus` (if any) uses `focus_params`.
    fn assignment<'p>(
        &'p self,
        theta: &'p [ParamVector],
        focus: Option<(usize, &'p ParamVector)>,
    ) -> Vec<&'p ParamVector> {
        (0..self.num_agents)
            .map(|i| match focus {
                Some((n, params)) if n == i => params,
                _ => match self.frozen {
                    Some(frozen) if !self.learns(i) => &frozen[self.populations[i]],
                    _ => &theta[self.populations[i]],
                },
            })
            .collect()
    }

    /// `n_traj` rollouts of the given assignment, stream-indexed by rollout number.
    pub fn collect(
        &self,
        assignment: &[&ParamVector],
        tag: TrajectoryTag,
        iteration: usize,
        agent: u64,
        phase: Phase,
    ) -> Result<Vec<Trajectory>> {
        let mut envs: Vec<Box<dyn MultiAgentEnv>> = (0..self.config.n_traj).map(|_| self.env_config.build()).collect();
        let mut refs: Vec<&mut dyn MultiAgentEnv> = envs.iter_mut().map(|e| e.as_mut()).collect();
        let mut rngs: Vec<_> = (0..self.config.n_traj)
            .map(|i| stream(self.config.seed, iteration as u64, agent, phase, i as u64))
            .collect();
        rollout::rollout_lockstep(&mut refs, self.policies, assignment, tag, self.config.horizon, &mut rngs)
    }

    /// Agents adapted this iteration, in increasing index order.
    pub fn sample_agents(&self, iteration: usize) -> Vec<usize> {
        let learners: Vec<usize> = (0..self.num_agents).filter(|&i| self.learns(i)).collect();
        match self.config.sample_agents {
            Some(m) if m < learners.len() => {
                let mut rng = stream(self.config.seed, iteration as u64, ALL_AGENTS, Phase::Sampling, 0);
                let mut picked: Vec<usize> = index::sample(&mut rng, learners.len(), m)
                    .into_iter()
                    .map(|j| learners[j])
                    .collect();
                picked.sort_unstable();
                picked
            }
            _ => learners,
        }
    }

    /// `k` ascent steps on agent `n`'s own return with every other agent frozen.
    pub fn inner_adapt(&self, theta: &[ParamVector], agent: usize, iteration: usize) -> Result<AdaptedParams> {
        let pop = self.populations[agent];
        let opts = self.config.pg_options();
        let mut current = theta[pop].clone();
        let mut trace = vec![current.clone()];
        for j in 0..self.config.k {
            let alpha = if j == 0 { self.config.alpha1 } else { self.config.alpha2 };
            let assignment = self.assignment(theta, Some((agent, &current)));
            let trajs = self.collect(
                &assignment,
                TrajectoryTag::Adapted { agent },
                iteration,
                agent as u64,
                Phase::Inner(j),
            )?;
            let mut grad =
                pg::policy_gradient(&trajs, &self.policies[pop], agent, &[(agent, &current)], &opts)?;
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!(
                    "inner gradient of agent {agent} at step {}",
                    j + 1
                )));
            }
            clip_norm(&mut grad, self.config.max_grad_norm);
            current = current.add_scaled(&grad, alpha)?;
            trace.push(current.clone());
        }
        Ok(AdaptedParams {
            agent,
            params: current,
            trace,
        })
    }

    /// Score factors entering the outer gradient for `agent`'s return.
    fn factors<'p>(
        &self,
        agent: usize,
        own: &'p ParamVector,
        theta: &'p [ParamVector],
    ) -> Vec<(usize, &'p ParamVector)> {
        let pop = self.populations[agent];
        let mut factors = vec![(agent, own)];
        if self.config.score_all_agents {
            factors.extend(
                (0..self.num_agents)
                    .filter(|&m| m != agent && self.populations[m] == pop && self.learns(m))
                    .map(|m| (m, &theta[pop])),
            );
            factors.sort_by_key(|(m, _)| *m);
        }
        factors
    }

    /// Agent `n`'s outer contribution.
    ///
    /// Term A is the policy gradient at `θ_n` on `post`, applied to θ as if
    /// `θ_n` did not depend on θ. Term B is the score of `pre` under θ
    /// scaled by `pre_weight`.
    pub fn agent_contribution(
        &self,
        theta: &[ParamVector],
        adapted: &AdaptedParams,
        pre: &[Trajectory],
        post: &[Trajectory],
        pre_weight: f64,
    ) -> Result<ParamVector> {
        let n = adapted.agent;
        let pop = self.populations[n];
        let policy = &self.policies[pop];
        let opts = self.config.pg_options();

        let factors_a = self.factors(n, &adapted.params, theta);
        let mut grad = pg::policy_gradient(post, policy, n, &factors_a, &opts)?;
        if self.config.pre_term != PreTerm::Off {
            let factors_b = self.factors(n, &theta[pop], theta);
            let ones: Vec<Vec<f64>> = pre.iter().map(|t| vec![1.0; t.len()]).collect();
            let score = pg::weighted_score_sum(pre, policy, &factors_b, &ones)?;
            grad.axpy(pre_weight, &score)?;
        }
        Ok(grad)
    }

    /// Weights of the pre-adaptation term, one per adapted agent.
    pub fn pre_weights(&self, adapted: &[AdaptedParams], loss_post: &[f64]) -> Vec<f64> {
        match self.config.pre_term {
            PreTerm::PostReturn => loss_post.to_vec(),
            PreTerm::Off => vec![0.0; loss_post.len()],
            PreTerm::Centered => {
                let pops = self.policies.len();
                let mut sum = vec![0.0; pops];
                let mut count = vec![0usize; pops];
                for (a, l) in adapted.iter().zip(loss_post) {
                    sum[self.populations[a.agent]] += l;
                    count[self.populations[a.agent]] += 1;
                }
                adapted
                    .iter()
                    .zip(loss_post)
                    .map(|(a, l)| {
                        let p = self.populations[a.agent];
                        l - sum[p] / count[p] as f64
                    })
                    .collect()
            }
        }
    }

    /// Sums per-agent contributions into per-population gradients in agent order.
    pub fn outer_gradient(
        &self,
        theta: &[ParamVector],
        adapted: &[AdaptedParams],
        pre: &[&[Trajectory]],
        post: &[Vec<Trajectory>],
    ) -> Result<OuterGradient> {
        if pre.len() != adapted.len() || post.len() != adapted.len() {
            return Err(Error::Empty("outer-gradient trajectory sets"));
        }
        let pops = self.policies.len();
        let mut grads: Vec<ParamVector> = self
            .policies
            .iter()
            .map(|p| ParamVector::zeros(p.num_params()))
            .collect();
        let mut counts = vec![0usize; pops];
        let mut loss_pre = vec![0.0; pops];
        let mut loss_post = vec![0.0; pops];
        let agent_losses = adapted
            .iter()
            .zip(post)
            .map(|(a, post_n)| pg::estimate_loss(post_n, a.agent, self.config.gamma))
            .collect::<Result<Vec<_>>>()?;
        let weights = self.pre_weights(adapted, &agent_losses);
        for (i, a) in adapted.iter().enumerate() {
            let pop = self.populations[a.agent];
            let g = self.agent_contribution(theta, a, pre[i], &post[i], weights[i])?;
            grads[pop].axpy(1.0, &g)?;
            loss_post[pop] += agent_losses[i];
            loss_pre[pop] += pg::estimate_loss(pre[i], a.agent, self.config.gamma)?;
            counts[pop] += 1;
        }
        for p in 0..pops {
            if counts[p] > 0 {
                loss_pre[p] /= counts[p] as f64;
                loss_post[p] /= counts[p] as f64;
                if self.config.average_agents {
                    grads[p].scale(1.0 / counts[p] as f64);
                }
            }
        }
        Ok(OuterGradient {
            grads,
            loss_pre,
            loss_post,
        })
    }

    /// One full iteration; returns the new central parameters and metrics.
    pub fn iterate(
        &self,
        theta: &[ParamVector],
        iteration: usize,
    ) -> Result<(Vec<ParamVector>, IterationMetrics)> {
        let agents = self.sample_agents(iteration);
        let all_theta = self.assignment(theta, None);
        let pre = self.collect(&all_theta, TrajectoryTag::AllCentral, iteration, ALL_AGENTS, Phase::Pre)?;

        let per_agent = |&n: &usize| -> Result<(AdaptedParams, Vec<Trajectory>, Option<Vec<Trajectory>>)> {
            let adapted = self.inner_adapt(theta, n, iteration)?;
            let assignment = self.assignment(theta, Some((n, &adapted.params)));
            let post = self.collect(
                &assignment,
                TrajectoryTag::Adapted { agent: n },
                iteration,
                n as u64,
                Phase::Post,
            )?;
            let fresh = if self.config.fresh_pre_trajectories {
                Some(self.collect(&all_theta, TrajectoryTag::AllCentral, iteration, n as u64, Phase::FreshPre)?)
            } else {
                None
            };
            Ok((adapted, post, fresh))
        };
        let results: Vec<_> = if self.config.deterministic {
            agents.iter().map(per_agent).collect::<Result<_>>()?
        } else {
            agents.par_iter().map(per_agent).collect::<Result<_>>()?
        };

        let mut adapted = Vec::with_capacity(results.len());
        let mut post = Vec::with_capacity(results.len());
        let mut fresh = Vec::with_capacity(results.len());
        for (a, p, f) in results {
            adapted.push(a);
            post.push(p);
            fresh.push(f);
        }
        let pre_sets: Vec<&[Trajectory]> = fresh
            .iter()
            .map(|f| f.as_deref().unwrap_or(&pre))
            .collect();
        let mut outer = self.outer_gradient(theta, &adapted, &pre_sets, &post)?;
        let grad_norm = outer.grads.iter().map(|g| g.dot(g)).sum::<f64>().sqrt();
        for g in &mut outer.grads {
            clip_norm(g, self.config.max_grad_norm);
        }

        let next = theta
            .iter()
            .zip(&outer.grads)
            .map(|(t, g)| central_update(t, g, self.config.epsilon))
            .collect::<Result<Vec<_>>>()?;

        let episodes_per_agent = self.config.n_traj
            * (self.config.k + 1 + usize::from(self.config.fresh_pre_trajectories));
        let returns: Vec<EpisodeReturns> = pre
            .iter()
            .map(|t| EpisodeReturns::from_trajectory(t, self.num_agents))
            .collect();
        let mean = |f: fn(&EpisodeReturns) -> f64| returns.iter().map(f).sum::<f64>() / returns.len() as f64;
        let metrics = IterationMetrics {
            iteration,
            episodes: self.config.n_traj + agents.len() * episodes_per_agent,
            mean_return: mean(EpisodeReturns::mean),
            min_agent_return: mean(EpisodeReturns::min),
            loss_pre: outer.loss_pre.iter().sum::<f64>() / outer.loss_pre.len() as f64,
            loss_post: outer.loss_post.iter().sum::<f64>() / outer.loss_post.len() as f64,
            grad_norm,
            wallclock_s: 0.0,
        };
        Ok((next, metrics))
    }
}

/// Runs `config.iterations` iterations from `initial`, reporting each
/// metrics row to `on_iteration` as it is produced.
pub fn train_from<F>(
    config: &TrainConfig,
    env_config: &EnvConfig,
    policies: &[PolicySpec],
    initial: Vec<ParamVector>,
    mut on_iteration: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&IterationMetrics, &[ParamVector]) -> Result<()>,
{
    let frozen = initial.clone();
    let mut trainer = Trainer::new(config, env_config, policies)?;
    if config.single_agent {
        trainer = trainer.with_frozen(&frozen);
    }
    let start = Instant::now();
    let mut theta = initial;
    let mut metrics = Vec::with_capacity(config.iterations);
    let mut episodes = 0;
    for iteration in 0..config.iterations {
        let (next, mut row) = trainer.iterate(&theta, iteration).map_err(|e| Error::Training {
            iteration,
            source: Box::new(e),
        })?;
        episodes += row.episodes;
        row.episodes = episodes;
        row.wallclock_s = if config.deterministic {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        };
        theta = next;
        on_iteration(&row, &theta)?;
        metrics.push(row);
    }
    Ok(TrainOutcome {
        params: theta,
        metrics,
    })
}

pub fn train(config: &TrainConfig, env_config: &EnvConfig, policies: &[PolicySpec]) -> Result<TrainOutcome> {
    let initial = init_population_params(policies, config.seed);
    train_from(config, env_config, policies, initial, |_, _| Ok(()))
}
