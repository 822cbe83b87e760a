//! Stochastic policies on top of [`crate::nn`]: a diagonal Gaussian head with
//! a state-independent learnable log-std, or a categorical softmax head.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{self, MlpSpec, ParamVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionHead {
    Gaussian {
        action_dim: usize,
        initial_log_std: f64,
    },
    Categorical {
        num_actions: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub net: MlpSpec,
    pub head: ActionHead,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Categorical { probabilities: Vec<f64> },
}

impl PolicySpec {
    pub fn gaussian(net: MlpSpec, initial_log_std: f64) -> Result<Self> {
        let spec = Self {
            head: ActionHead::Gaussian {
                action_dim: net.output_dim,
                initial_log_std,
            },
            net,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn categorical(net: MlpSpec) -> Result<Self> {
        let spec = Self {
            head: ActionHead::Categorical {
                num_actions: net.output_dim,
            },
            net,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let head_dim = match self.head {
            ActionHead::Gaussian { action_dim, .. } => action_dim,
            ActionHead::Categorical { num_actions } => num_actions,
        };
        if head_dim != self.net.output_dim {
            return Err(Error::InvalidSpec(format!(
                "action head expects {head_dim} network outputs, network has {}",
                self.net.output_dim
            )));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim
    }

    /// Network parameters plus, for Gaussian heads, one log-std per action dim.
    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.log_std_len()
    }

    fn log_std_len(&self) -> usize {
        match self.head {
            ActionHead::Gaussian { action_dim, .. } => action_dim,
            ActionHead::Categorical { .. } => 0,
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = nn::init_params(&self.net, rng).into_inner();
        if let ActionHead::Gaussian {
            action_dim,
            initial_log_std,
        } = self.head
        {
            values.extend(std::iter::repeat_n(initial_log_std, action_dim));
        }
        ParamVector::new(values)
    }

    fn check(&self, params: &ParamVector, obs: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dims("policy parameters", self.num_params(), params.len()));
        }
        if obs.len() != self.obs_dim() {
            return Err(Error::dims("observation", self.obs_dim(), obs.len()));
        }
        Ok(())
    }

    fn net_params<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[..self.net.num_params()]
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn action_distribution(
    policy: &PolicySpec,
    params: &ParamVector,
    obs: &[f64],
) -> Result<ActionDistribution> {
    policy.check(params, obs)?;
    let net_params = policy.net_params(params);
    let (out, _) = nn::forward(&policy.net, net_params, obs)?;
    distribution_from_output(policy, params, out)
}

fn distribution_from_output(
    policy: &PolicySpec,
    params: &ParamVector,
    out: Vec<f64>,
) -> Result<ActionDistribution> {
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy network output".into()));
    }
    match policy.head {
        ActionHead::Gaussian { .. } => {
            let std = params[policy.net.num_params()..]
                .iter()
                .map(|ls| ls.exp())
                .collect::<Vec<_>>();
            if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::NonFinite("policy log-std".into()));
            }
            Ok(ActionDistribution::Gaussian { mean: out, std })
        }
        ActionHead::Categorical { .. } => Ok(ActionDistribution::Categorical {
            probabilities: softmax(&out),
        }),
    }
}

impl ActionDistribution {
    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (ActionDistribution::Gaussian { mean, std }, Action::Continuous(a)) => {
                if a.len() != mean.len() {
                    return Err(Error::dims("continuous action", mean.len(), a.len()));
                }
                Ok(mean
                    .iter()
                    .zip(std)
                    .zip(a)
                    .map(|((m, s), x)| {
                        let z = (x - m) / s;
                        -0.5 * z * z - s.ln() - 0.5 * LN_2PI
                    })
                    .sum())
            }
            (ActionDistribution::Categorical { probabilities }, Action::Discrete(i)) => {
                let p = probabilities.get(*i).ok_or_else(|| {
                    Error::InvalidAction(format!("index {i} of {}", probabilities.len()))
                })?;
                Ok(p.ln())
            }
            _ => Err(Error::InvalidAction("action kind does not match the head".into())),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionDistribution::Gaussian { mean, std } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + s * z
                    })
                    .collect(),
            ),
            ActionDistribution::Categorical { probabilities } => {
                // inverse CDF
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probabilities.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(probabilities.len() - 1)
            }
        }
    }
}

pub fn sample_and_logp<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> (Action, f64) {
    let action = dist.sample(rng);
    let log_prob = dist
        .log_prob(&action)
        .expect("a sampled action is always in the support");
    (action, log_prob)
}

pub fn log_prob(policy: &PolicySpec, params: &ParamVector, obs: &[f64], action: &Action) -> Result<f64> {
    action_distribution(policy, params, obs)?.log_prob(action)
}

pub fn grad_log_prob(
    policy: &PolicySpec,
    params: &ParamVector,
    obs: &[f64],
    action: &Action,
) -> Result<ParamVector> {
    let mut grad = ParamVector::zeros(policy.num_params());
    accumulate_grad_log_prob(policy, params, obs, action, 1.0, &mut grad)?;
    Ok(grad)
}

/// `grad += weight * ∇_θ log π_θ(action | obs)`.
pub fn accumulate_grad_log_prob(
    policy: &PolicySpec,
    params: &ParamVector,
    obs: &[f64],
    action: &Action,
    weight: f64,
    grad: &mut ParamVector,
) -> Result<()> {
    policy.check(params, obs)?;
    if grad.len() != policy.num_params() {
        return Err(Error::dims("policy gradient", policy.num_params(), grad.len()));
    }
    let net_len = policy.net.num_params();
    let net_params = policy.net_params(params);
    let (out, cache) = nn::forward(&policy.net, net_params, obs)?;
    let dist = distribution_from_output(policy, params, out)?;

    let output_grad = head_output_grad(&dist, action, weight, &mut grad.as_mut_slice()[net_len..])?;
    nn::backward_accumulate(
        &policy.net,
        net_params,
        &cache,
        &output_grad,
        weight,
        &mut grad.as_mut_slice()[..net_len],
    )
}

/// Score of `action` with respect to the network output. Log-std entries of
/// the score are added to `log_std_grad` scaled by `weight`; the returned
/// network-output score is unscaled.
fn head_output_grad(
    dist: &ActionDistribution,
    action: &Action,
    weight: f64,
    log_std_grad: &mut [f64],
) -> Result<Vec<f64>> {
    match (dist, action) {
        (ActionDistribution::Gaussian { mean, std }, Action::Continuous(a)) => {
            if a.len() != mean.len() {
                return Err(Error::dims("continuous action", mean.len(), a.len()));
            }
            let mut d_mean = Vec::with_capacity(mean.len());
            for (i, ((m, s), x)) in mean.iter().zip(std).zip(a).enumerate() {
                let z = (x - m) / s;
                d_mean.push(z / s);
                log_std_grad[i] += weight * (z * z - 1.0);
            }
            Ok(d_mean)
        }
        (ActionDistribution::Categorical { probabilities }, Action::Discrete(i)) => {
            if *i >= probabilities.len() {
                return Err(Error::InvalidAction(format!(
                    "index {i} of {}",
                    probabilities.len()
                )));
            }
            Ok(probabilities
                .iter()
                .enumerate()
                .map(|(b, p)| if b == *i { 1.0 - p } else { -p })
                .collect())
        }
        _ => Err(Error::InvalidAction("action kind does not match the head".into())),
    }
}

/// Action distributions for `rows` observations stored row-major.
pub fn action_distributions(
    policy: &PolicySpec,
    params: &ParamVector,
    observations: &[f64],
    rows: usize,
) -> Result<Vec<ActionDistribution>> {
    if params.len() != policy.num_params() {
        return Err(Error::dims("policy parameters", policy.num_params(), params.len()));
    }
    let cache = nn::forward_batch(&policy.net, policy.net_params(params), observations, rows)?;
    let out_dim = policy.net.output_dim;
    cache
        .output()
        .chunks_exact(out_dim)
        .map(|out| distribution_from_output(policy, params, out.to_vec()))
        .collect()
}

/// `grad += Σ_rows weights[r] · ∇_θ log π_θ(actions[r] | observations[r])`.
pub fn accumulate_grad_log_prob_batch(
    policy: &PolicySpec,
    params: &ParamVector,
    observations: &[f64],
    actions: &[&Action],
    weights: &[f64],
    grad: &mut ParamVector,
) -> Result<()> {
    let rows = actions.len();
    if weights.len() != rows {
        return Err(Error::dims("score weights", rows, weights.len()));
    }
    if params.len() != policy.num_params() {
        return Err(Error::dims("policy parameters", policy.num_params(), params.len()));
    }
    if grad.len() != policy.num_params() {
        return Err(Error::dims("policy gradient", policy.num_params(), grad.len()));
    }
    let net_len = policy.net.num_params();
    let net_params = policy.net_params(params);
    let cache = nn::forward_batch(&policy.net, net_params, observations, rows)?;
    let out_dim = policy.net.output_dim;
    let mut output_grads = Vec::with_capacity(rows * out_dim);
    let (net_grad, head_grad) = grad.as_mut_slice().split_at_mut(net_len);
    for ((out, action), &w) in cache.output().chunks_exact(out_dim).zip(actions).zip(weights) {
        let dist = distribution_from_output(policy, params, out.to_vec())?;
        let g = head_output_grad(&dist, action, w, head_grad)?;
        output_grads.extend(g.into_iter().map(|v| v * w));
    }
    nn::backward_batch_accumulate(&policy.net, net_params, &cache, &output_grads, net_grad)
}
