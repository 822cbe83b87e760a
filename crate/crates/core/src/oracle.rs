//! Brute-force oracles used to check gradients and estimator expectations.
//!
//! Nothing here calls into the network, policy or gradient-estimator code: the
//! tabular softmax, trajectory enumeration, reference network and finite
//! differences are written independently so they can serve as ground truth for
//! those modules. Only the spec types are shared.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParamVector};
use crate::policy::{Action, ActionHead, PolicySpec};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
const MAX_ENUMERATED: u128 = 1_000_000;

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(f: F, theta: &[f64], h: f64) -> Result<ParamVector>
where
    F: Fn(&[f64]) -> f64,
{
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let plus = f(&point);
        point[i] = theta[i] - h;
        let minus = f(&point);
        point[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(ParamVector::new(grad))
}

/// One-sided differences `(f(θ + h e_i) - f(θ)) / h`. Only first-order
/// accurate; used to cross-check [`finite_diff_grad`].
pub fn forward_diff_grad<F>(f: F, theta: &[f64], h: f64) -> Result<ParamVector>
where
    F: Fn(&[f64]) -> f64,
{
    let base = f(theta);
    if !base.is_finite() {
        return Err(Error::NonFinite("objective at base point".into()));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + h;
        let plus = f(&point);
        point[i] = theta[i];
        if !plus.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        grad.push((plus - base) / h);
    }
    Ok(ParamVector::new(grad))
}

/// Plain-loop network used by [`log_prob_finite_diff`]. Offsets are recomputed
/// from the dimensions: per layer, row-major `W (out × in)`, then the bias.
struct ReferenceNet {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    tanh: bool,
}

impl ReferenceNet {
    fn new(spec: &MlpSpec) -> Self {
        let mut dims = vec![spec.input_dim];
        dims.extend(&spec.hidden_dims);
        dims.push(spec.output_dim);
        let mut offsets = vec![0];
        for l in 0..dims.len() - 1 {
            offsets.push(offsets[l] + dims[l + 1] * (dims[l] + 1));
        }
        Self {
            dims,
            offsets,
            tanh: spec.activation == Activation::Tanh,
        }
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn activate(&self, z: f64) -> f64 {
        if self.tanh {
            z.tanh()
        } else {
            z.max(0.0)
        }
    }

    fn pre_activation(&self, params: &[f64], layer: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
        let w = &params[self.offsets[layer]..];
        (0..n_out)
            .map(|j| w[n_out * n_in + j] + (0..n_in).map(|p| w[j * n_in + p] * x[p]).sum::<f64>())
            .collect()
    }

    /// Output given the pre-activation `z` of `layer`.
    fn finish(&self, params: &[f64], layer: usize, z: Vec<f64>) -> Vec<f64> {
        let mut z = z;
        for l in layer + 1..=self.layers() - 1 {
            let x: Vec<f64> = z.iter().map(|&v| self.activate(v)).collect();
            z = self.pre_activation(params, l, &x);
        }
        z
    }
}

fn reference_log_density(head: &ActionHead, out: &[f64], log_std: &[f64], action: &Action) -> Result<f64> {
    match (head, action) {
        (ActionHead::Gaussian { .. }, Action::Continuous(a)) if a.len() == out.len() => Ok(out
            .iter()
            .zip(log_std)
            .zip(a)
            .map(|((m, ls), x)| {
                let z = (x - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()),
        (ActionHead::Categorical { .. }, Action::Discrete(i)) if *i < out.len() => {
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + out.iter().map(|o| (o - max).exp()).sum::<f64>().ln();
            Ok(out[*i] - lse)
        }
        _ => Err(Error::InvalidAction("action does not match the policy head".into())),
    }
}

/// Central differences of `θ ↦ log π_θ(action | obs)` over every parameter,
/// evaluated with an independent plain-loop network. A perturbed weight or
/// bias moves a single pre-activation, so each evaluation only recomputes the
/// layers above it.
pub fn log_prob_finite_diff(
    policy: &PolicySpec,
    params: &[f64],
    obs: &[f64],
    action: &Action,
    h: f64,
) -> Result<ParamVector> {
    let net = ReferenceNet::new(&policy.net);
    let net_len = net.offsets[net.layers()];
    if params.len() != policy.num_params() || net_len != policy.net.num_params() {
        return Err(Error::dims("policy parameters", policy.num_params(), params.len()));
    }
    if obs.len() != net.dims[0] {
        return Err(Error::dims("observation", net.dims[0], obs.len()));
    }
    let (weights, log_std) = params.split_at(net_len);
    let density = |out: &[f64], ls: &[f64]| -> Result<f64> {
        let v = reference_log_density(&policy.head, out, ls, action)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("reference log-density".into()))
        }
    };

    let mut inputs = vec![obs.to_vec()];
    let mut pre = Vec::with_capacity(net.layers());
    for l in 0..net.layers() {
        let z = net.pre_activation(weights, l, &inputs[l]);
        inputs.push(z.iter().map(|&v| net.activate(v)).collect());
        pre.push(z);
    }
    let mut grad = Vec::with_capacity(params.len());
    for l in 0..net.layers() {
        let n_out = net.dims[l + 1];
        let x = &inputs[l];
        let shifted = |j: usize, delta: f64| -> Result<f64> {
            let mut z = pre[l].clone();
            z[j] += delta;
            density(&net.finish(weights, l, z), log_std)
        };
        // Weights (j, p) in row-major order, then the biases.
        for j in 0..n_out {
            for &xp in x {
                grad.push((shifted(j, h * xp)? - shifted(j, -h * xp)?) / (2.0 * h));
            }
        }
        for j in 0..n_out {
            grad.push((shifted(j, h)? - shifted(j, -h)?) / (2.0 * h));
        }
    }
    let out = net.finish(weights, net.layers() - 1, pre[net.layers() - 1].clone());
    let mut ls = log_std.to_vec();
    for i in 0..ls.len() {
        ls[i] = log_std[i] + h;
        let plus = density(&out, &ls)?;
        ls[i] = log_std[i] - h;
        let minus = density(&out, &ls)?;
        ls[i] = log_std[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(ParamVector::new(grad))
}

/// Small, fully enumerable finite-horizon MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Initial state distribution.
    pub initial: Vec<f64>,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub horizon: usize,
    pub gamma: f64,
}

/// One fully specified path through a [`TinyMdp`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub probability: f64,
}

impl EnumeratedPath {
    pub fn total_return(&self, gamma: f64) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for r in &self.rewards {
            total += discount * r;
            discount *= gamma;
        }
        total
    }
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

impl TinyMdp {
    pub fn validate(&self) -> Result<()> {
        let rows_ok = |row: &[f64]| (row.iter().sum::<f64>() - 1.0).abs() < 1e-12;
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidSpec("empty state or action set".into()));
        }
        if self.initial.len() != self.num_states || !rows_ok(&self.initial) {
            return Err(Error::InvalidSpec("initial distribution".into()));
        }
        for s in 0..self.num_states {
            if self.transitions[s].len() != self.num_actions
                || self.rewards[s].len() != self.num_actions
            {
                return Err(Error::InvalidSpec(format!("state {s} table width")));
            }
            for a in 0..self.num_actions {
                let row = &self.transitions[s][a];
                if row.len() != self.num_states || !rows_ok(row) {
                    return Err(Error::InvalidSpec(format!("transition row ({s}, {a})")));
                }
            }
        }
        Ok(())
    }

    /// Random instance with up to 8 states, 4 actions and horizon 3.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let num_states = rng.random_range(1..=8);
        let num_actions = rng.random_range(2..=4);
        let horizon = rng.random_range(1..=3);
        Self::random_with(rng, num_states, num_actions, horizon)
    }

    pub fn random_with<R: Rng + ?Sized>(
        rng: &mut R,
        num_states: usize,
        num_actions: usize,
        horizon: usize,
    ) -> Self {
        let initial = random_simplex(rng, num_states);
        let transitions = (0..num_states)
            .map(|_| {
                (0..num_actions)
                    .map(|_| random_simplex(rng, num_states))
                    .collect()
            })
            .collect();
        let rewards = (0..num_states)
            .map(|_| (0..num_actions).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Self {
            num_states,
            num_actions,
            initial,
            transitions,
            rewards,
            horizon,
            gamma: 1.0,
        }
    }

    /// Number of tabular-softmax parameters, one logit per (state, action).
    pub fn num_params(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// Every path with its probability under `policy(state) -> probabilities`.
    pub fn enumerate<P>(&self, policy: P) -> Result<Vec<EnumeratedPath>>
    where
        P: Fn(usize) -> Vec<f64>,
    {
        let count = (self.num_states as u128 * self.num_actions as u128)
            .checked_pow(self.horizon as u32)
            .unwrap_or(u128::MAX);
        if count > MAX_ENUMERATED {
            return Err(Error::EnumerationTooLarge(count));
        }
        let probs: Vec<Vec<f64>> = (0..self.num_states).map(&policy).collect();
        let mut out = Vec::new();
        for s0 in 0..self.num_states {
            let start = EnumeratedPath {
                states: vec![s0],
                actions: vec![],
                rewards: vec![],
                probability: self.initial[s0],
            };
            self.extend(start, &probs, &mut out);
        }
        Ok(out)
    }

    fn extend(&self, path: EnumeratedPath, probs: &[Vec<f64>], out: &mut Vec<EnumeratedPath>) {
        let s = *path.states.last().expect("path has a state");
        for a in 0..self.num_actions {
            let mut with_action = path.clone();
            with_action.actions.push(a);
            with_action.rewards.push(self.rewards[s][a]);
            with_action.probability *= probs[s][a];
            if with_action.actions.len() == self.horizon {
                out.push(with_action);
                continue;
            }
            for next in 0..self.num_states {
                let mut stepped = with_action.clone();
                stepped.states.push(next);
                stepped.probability *= self.transitions[s][a][next];
                self.extend(stepped, probs, out);
            }
        }
    }
}

/// Softmax over the logits `theta[s * A .. (s + 1) * A]`.
pub fn tabular_softmax(theta: &[f64], state: usize, num_actions: usize) -> Vec<f64> {
    let logits = &theta[state * num_actions..(state + 1) * num_actions];
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn tabular_score(theta: &[f64], mdp: &TinyMdp, state: usize, action: usize, out: &mut [f64]) {
    let probs = tabular_softmax(theta, state, mdp.num_actions);
    for (b, p) in probs.iter().enumerate() {
        let indicator = if b == action { 1.0 } else { 0.0 };
        out[state * mdp.num_actions + b] += indicator - p;
    }
}

fn check_theta(mdp: &TinyMdp, theta: &[f64]) -> Result<()> {
    if theta.len() != mdp.num_params() {
        return Err(Error::dims("tabular parameters", mdp.num_params(), theta.len()));
    }
    Ok(())
}

/// `Σ_τ P(τ | θ) R(τ)` for a tabular-softmax policy.
pub fn exact_expected_return(mdp: &TinyMdp, theta: &[f64]) -> Result<f64> {
    check_theta(mdp, theta)?;
    exact_expected_return_with(mdp, |s| tabular_softmax(theta, s, mdp.num_actions))
}

/// Same as [`exact_expected_return`] for an arbitrary state-conditional policy.
pub fn exact_expected_return_with<P>(mdp: &TinyMdp, policy: P) -> Result<f64>
where
    P: Fn(usize) -> Vec<f64>,
{
    Ok(mdp
        .enumerate(policy)?
        .iter()
        .map(|p| p.probability * p.total_return(mdp.gamma))
        .sum())
}

/// `Σ_τ P(τ | θ) R(τ) ∇_θ log π_θ(τ)` by exhaustive enumeration.
pub fn exact_score_gradient(mdp: &TinyMdp, theta: &[f64]) -> Result<ParamVector> {
    exact_score_gradient_with_baseline(mdp, theta, |_, _| 0.0)
}

/// Score gradient where the step-`t` factor is weighted by `R(τ) - b(s_t, t)`.
/// Any state-dependent `b` leaves the exact value unchanged.
pub fn exact_score_gradient_with_baseline<B>(
    mdp: &TinyMdp,
    theta: &[f64],
    baseline: B,
) -> Result<ParamVector>
where
    B: Fn(usize, usize) -> f64,
{
    check_theta(mdp, theta)?;
    let paths = mdp.enumerate(|s| tabular_softmax(theta, s, mdp.num_actions))?;
    let mut grad = vec![0.0; mdp.num_params()];
    let mut score = vec![0.0; mdp.num_params()];
    for path in &paths {
        let total = path.total_return(mdp.gamma);
        for (t, (&s, &a)) in path.states.iter().zip(&path.actions).enumerate() {
            score.iter_mut().for_each(|v| *v = 0.0);
            tabular_score(theta, mdp, s, a, &mut score);
            let weight = path.probability * (total - baseline(s, t));
            for (g, sc) in grad.iter_mut().zip(&score) {
                *g += weight * sc;
            }
        }
    }
    Ok(ParamVector::new(grad))
}

/// `E_τ[∇_θ log π_θ(τ)]`, which is zero for any valid policy.
pub fn exact_mean_score(mdp: &TinyMdp, theta: &[f64]) -> Result<ParamVector> {
    check_theta(mdp, theta)?;
    let paths = mdp.enumerate(|s| tabular_softmax(theta, s, mdp.num_actions))?;
    let mut mean = vec![0.0; mdp.num_params()];
    let mut score = vec![0.0; mdp.num_params()];
    for path in &paths {
        score.iter_mut().for_each(|v| *v = 0.0);
        for (&s, &a) in path.states.iter().zip(&path.actions) {
            tabular_score(theta, mdp, s, a, &mut score);
        }
        for (m, sc) in mean.iter_mut().zip(&score) {
            *m += path.probability * sc;
        }
    }
    Ok(ParamVector::new(mean))
}

/// Single-agent, tabular, `k = 1` comparison between the true gradient of the
/// adapt-then-evaluate objective and the first-order two-term estimator, both
/// in exact expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    /// Finite-difference gradient of `θ ↦ J(θ + α ∇J(θ))`.
    pub composite_gradient: ParamVector,
    /// Exact expectation of the first-order two-term estimator at k = 1.
    pub first_order_estimate: ParamVector,
    /// `max_i |composite - first_order|`.
    pub first_order_gap: f64,
    /// Gap relative to the composite gradient's max-norm.
    pub relative_gap: f64,
    /// With k = 0, `max_i |two-term - plain score gradient|`.
    pub k0_deviation: f64,
}

/// Exact one-step inner adaptation `θ + α ∇J(θ)`.
pub fn exact_adapt(mdp: &TinyMdp, theta: &[f64], alpha: f64) -> Result<ParamVector> {
    let grad = exact_score_gradient(mdp, theta)?;
    ParamVector::new(theta.to_vec()).add_scaled(&grad, alpha)
}

pub fn dimapg_fidelity(mdp: &TinyMdp, theta: &[f64], alpha: f64, h: f64) -> Result<FidelityReport> {
    let composite = |t: &[f64]| -> f64 {
        exact_adapt(mdp, t, alpha)
            .and_then(|adapted| exact_expected_return(mdp, &adapted))
            .unwrap_or(f64::NAN)
    };
    let composite_gradient = finite_diff_grad(composite, theta, h)?;

    // Term A: score gradient on post-adaptation trajectories, applied to θ.
    // Term B: pre-adaptation score weighted by the post-adaptation return.
    let adapted = exact_adapt(mdp, theta, alpha)?;
    let term_a = exact_score_gradient(mdp, &adapted)?;
    let post_return = exact_expected_return(mdp, &adapted)?;
    let pre_score = exact_mean_score(mdp, theta)?;
    let first_order_estimate = term_a.add_scaled(&pre_score, post_return)?;

    let first_order_gap = composite_gradient.max_abs_diff(&first_order_estimate);
    let scale = composite_gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let relative_gap = if scale > 0.0 { first_order_gap / scale } else { first_order_gap };

    let plain = exact_score_gradient(mdp, theta)?;
    let k0_return = exact_expected_return(mdp, theta)?;
    let k0_two_term = plain.add_scaled(&pre_score, k0_return)?;
    let k0_deviation = k0_two_term.max_abs_diff(&plain);

    Ok(FidelityReport {
        composite_gradient,
        first_order_estimate,
        first_order_gap,
        relative_gap,
        k0_deviation,
    })
}
