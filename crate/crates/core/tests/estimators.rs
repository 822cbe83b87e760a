use dimapg::envs::EpisodeStats;
use dimapg::nn::{Activation, MlpSpec, ParamVector};
use dimapg::oracle::{self, finite_diff_grad, EnumeratedPath, TinyMdp};
use dimapg::pg::{self, LinearBaseline, PgOptions, Step, Trajectory, TrajectoryTag};
use dimapg::policy::{Action, PolicySpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Categorical policy with no hidden layer over one-hot states.
fn linear_policy(mdp: &TinyMdp) -> PolicySpec {
    PolicySpec::categorical(MlpSpec::new(mdp.num_states, vec![], mdp.num_actions, Activation::Relu).unwrap())
        .unwrap()
}

/// Tabular logits `θ[s·A + a] = W[a][s] + b[a]` of the linear policy.
fn tabular_logits(mdp: &TinyMdp, params: &[f64]) -> Vec<f64> {
    let (s_n, a_n) = (mdp.num_states, mdp.num_actions);
    let (w, b) = params.split_at(a_n * s_n);
    let mut theta = vec![0.0; s_n * a_n];
    for s in 0..s_n {
        for a in 0..a_n {
            theta[s * a_n + a] = w[a * s_n + s] + b[a];
        }
    }
    theta
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn to_trajectory(mdp: &TinyMdp, path: &EnumeratedPath) -> Trajectory {
    let mut traj = Trajectory::new(TrajectoryTag::AllCentral);
    for ((&s, &a), &r) in path.states.iter().zip(&path.actions).zip(&path.rewards) {
        traj.push(Step {
            observations: vec![one_hot(mdp.num_states, s)],
            actions: vec![Some(Action::Discrete(a))],
            rewards: vec![r],
            log_probs: vec![0.0],
        })
        .unwrap();
    }
    assert_eq!(traj.stats, EpisodeStats::default());
    traj
}

fn options(mdp: &TinyMdp, trajectory_level_returns: bool) -> PgOptions {
    PgOptions {
        gamma: mdp.gamma,
        horizon: mdp.horizon,
        trajectory_level_returns,
        normalize_advantages: false,
        use_baseline: false,
    }
}

/// `Σ_τ P(τ) ĝ(τ)` for the single-trajectory REINFORCE estimator.
fn expected_estimate(
    mdp: &TinyMdp,
    policy: &PolicySpec,
    params: &ParamVector,
    baseline: Option<&LinearBaseline>,
    opts: &PgOptions,
) -> ParamVector {
    let theta = tabular_logits(mdp, params);
    let paths = mdp.enumerate(|s| oracle::tabular_softmax(&theta, s, mdp.num_actions)).unwrap();
    let mut total = ParamVector::zeros(policy.num_params());
    for path in &paths {
        let traj = to_trajectory(mdp, path);
        let g = pg::reinforce_gradient(&[traj], policy, params, 0, baseline, opts).unwrap();
        total.axpy(path.probability, &g).unwrap();
    }
    total
}

fn true_gradient(mdp: &TinyMdp, params: &ParamVector) -> ParamVector {
    finite_diff_grad(
        |p| oracle::exact_expected_return(mdp, &tabular_logits(mdp, p)).unwrap(),
        params.as_slice(),
        1e-5,
    )
    .unwrap()
}

fn random_case(seed: u64) -> (TinyMdp, PolicySpec, ParamVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mdp = TinyMdp::random(&mut rng);
    mdp.gamma = rng.random_range(0.5..=1.0);
    let policy = linear_policy(&mdp);
    let params = ParamVector::new((0..policy.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect());
    (mdp, policy, params)
}

#[test]
fn tabular_score_gradient_equals_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mdp = TinyMdp::random(&mut rng);
        let theta: Vec<f64> = (0..mdp.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact = oracle::exact_score_gradient(&mdp, &theta).unwrap();
        let fd = finite_diff_grad(|t| oracle::exact_expected_return(&mdp, t).unwrap(), &theta, 1e-5).unwrap();
        assert!(exact.max_abs_diff(&fd) < 1e-9);
        let b = |s: usize, t: usize| (s as f64 * 0.7 - t as f64).sin() * 3.0;
        let with_b = oracle::exact_score_gradient_with_baseline(&mdp, &theta, b).unwrap();
        assert!(with_b.max_abs_diff(&exact) < 1e-9);
    }
}

#[test]
fn trajectory_level_reinforce_is_unbiased_for_any_discount() {
    for seed in 0..20 {
        let (mdp, policy, params) = random_case(seed);
        let truth = true_gradient(&mdp, &params);
        let est = expected_estimate(&mdp, &policy, &params, None, &options(&mdp, true));
        assert!(est.max_abs_diff(&truth) < 1e-9, "seed {seed}: {}", est.max_abs_diff(&truth));
    }
}

#[test]
fn reward_to_go_reinforce_is_unbiased_without_discount() {
    for seed in 20..40 {
        let (mut mdp, policy, params) = random_case(seed);
        mdp.gamma = 1.0;
        let truth = true_gradient(&mdp, &params);
        let est = expected_estimate(&mdp, &policy, &params, None, &options(&mdp, false));
        assert!(est.max_abs_diff(&truth) < 1e-9, "seed {seed}: {}", est.max_abs_diff(&truth));
    }
}

#[test]
fn fixed_baseline_leaves_the_expectation_unchanged() {
    for seed in 100..120 {
        let (mdp, policy, params) = random_case(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut baseline = LinearBaseline::zeros(mdp.num_states, mdp.horizon);
        baseline.weights.iter_mut().for_each(|w| *w = rng.random_range(-2.0..2.0));
        let opts = options(&mdp, false);
        let plain = expected_estimate(&mdp, &policy, &params, None, &opts);
        let with_b = expected_estimate(&mdp, &policy, &params, Some(&baseline), &opts);
        assert!(with_b.max_abs_diff(&plain) < 1e-9);
    }
}

#[test]
fn fidelity_report_k0_matches_reinforce() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mdp = TinyMdp::random(&mut rng);
        let theta: Vec<f64> = (0..mdp.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = oracle::dimapg_fidelity(&mdp, &theta, 0.1, 1e-5).unwrap();
        assert!(report.k0_deviation <= 1e-9);
        assert!(report.first_order_gap.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mean_score_is_zero(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TinyMdp::random(&mut rng);
        let theta: Vec<f64> = (0..mdp.num_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = oracle::exact_mean_score(&mdp, &theta).unwrap();
        prop_assert!(m.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn returns_to_go_satisfy_the_recursion(rewards in prop::collection::vec(-5.0f64..5.0, 1..40), gamma in 0.0f64..=1.0) {
        let (g, total) = pg::discounted_returns(&rewards, gamma);
        for t in 0..rewards.len() {
            let next = if t + 1 < rewards.len() { g[t + 1] } else { 0.0 };
            prop_assert!((g[t] - (rewards[t] + gamma * next)).abs() < 1e-9);
        }
        prop_assert!((total - g[0]).abs() < 1e-12);
    }

    #[test]
    fn fitted_baseline_reproduces_constant_returns(c in -50.0f64..50.0, n in 2usize..6) {
        let mut trajs = Vec::new();
        for k in 0..n {
            let mut traj = Trajectory::new(TrajectoryTag::AllCentral);
            for t in 0..5 {
                let x = (k * 5 + t) as f64;
                let last = t == 4;
                traj.push(Step {
                    observations: vec![vec![(0.7 * x).sin(), (1.3 * x).cos()]],
                    actions: vec![Some(Action::Discrete(0))],
                    rewards: vec![if last { c } else { 0.0 }],
                    log_probs: vec![0.0],
                }).unwrap();
            }
            trajs.push(traj);
        }
        let opts = PgOptions { gamma: 1.0, horizon: 5, trajectory_level_returns: true, normalize_advantages: false, use_baseline: true };
        let b = pg::fit_baseline(&trajs, 0, &opts).unwrap();
        let adv = pg::advantages(&trajs, 0, Some(&b), &opts);
        prop_assert!(adv.iter().flatten().all(|a| a.abs() < 1e-8 * c.abs().max(1.0)));
    }
}
