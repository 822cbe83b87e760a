//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Learning criteria train real
//! runs from the files in `configs/`, so expect tens of minutes on one core.
//! The process fails only when the k = 0 two-term estimator departs from
//! plain REINFORCE.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dimapg::dimapg::{self as algo, TrainConfig, Trainer};
use dimapg::envs::{
    CoopNav, CoopNavConfig, CoopNavState, EnvConfig, MultiAgentEnv, PredatorPrey, PredatorPreyConfig, Survival,
    SurvivalConfig, NUM_SURVIVAL_ACTIONS,
};
use dimapg::harness::{
    self, cmd_train, dump_trajectory, evaluate_params, load_config, replay_matches, trajectory_csv, EvalMode,
    EvalSummary, RunConfig, TrainOptions,
};
use dimapg::nn::{Activation, MlpSpec, ParamVector};
use dimapg::oracle::{self, finite_diff_grad, TinyMdp};
use dimapg::policy::{self, Action, PolicySpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TRIPLES: usize = 20;
const GRAD_FD_STEP: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error.
const GRAD_REL_FLOOR: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(10);

const ESTIMATOR_MDPS: usize = 20;
const ESTIMATOR_FD_STEP: f64 = 1e-5;
const ESTIMATOR_TOL: f64 = 1e-9;
const ESTIMATOR_BUDGET: Duration = Duration::from_secs(30);

const PERMUTATION_CASES: usize = 100;
const CLIP_STEPS: usize = 1000;
const SURVIVAL_STEPS: usize = 1000;

const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_EPISODES: usize = 100;
const LEARNING_SE_MARGIN: f64 = 5.0;
const LEARNING_BUDGET: Duration = Duration::from_secs(30 * 60);
const ADAPTED_REL_GAP: f64 = 0.15;
const FOOD_CLEARED_MIN: f64 = 0.8;

const FIDELITY_MDPS: usize = 20;
const FIDELITY_ALPHA: f64 = 0.1;
const FIDELITY_FD_STEP: f64 = 1e-5;
const FIDELITY_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(name: &str, seed: u64) -> dimapg::Result<RunConfig> {
    let mut config = load_config(&configs_dir().join(name), &[])?;
    config.train.seed = seed;
    config.train.deterministic = true;
    Ok(config)
}

fn max_relative_error(analytic: &ParamVector, numeric: &ParamVector) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(GRAD_REL_FLOOR))
        .fold(0.0, f64::max)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..GRAD_TRIPLES {
        let net = MlpSpec::new(6, vec![100, 100], 3, Activation::Relu).unwrap();
        let spec = if i % 2 == 0 {
            PolicySpec::gaussian(net, rng.random_range(-1.0..0.5)).unwrap()
        } else {
            PolicySpec::categorical(net).unwrap()
        };
        let params = spec.init_params(&mut rng);
        let obs: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let action = policy::action_distribution(&spec, &params, &obs).unwrap().sample(&mut rng);
        let analytic = policy::grad_log_prob(&spec, &params, &obs, &action).unwrap();
        let numeric = oracle::log_prob_finite_diff(&spec, params.as_slice(), &obs, &action, GRAD_FD_STEP).unwrap();
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst < GRAD_REL_TOL && elapsed < GRAD_BUDGET,
        format!("max rel err {worst:.2e} (< {GRAD_REL_TOL:e}), {:.1}s (< {}s)", elapsed.as_secs_f64(), GRAD_BUDGET.as_secs()),
    )
}

fn estimator_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut plain, mut based) = (0.0f64, 0.0f64);
    for _ in 0..ESTIMATOR_MDPS {
        let mdp = TinyMdp::random(&mut rng);
        let theta: Vec<f64> = (0..mdp.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fd = finite_diff_grad(|t| oracle::exact_expected_return(&mdp, t).unwrap(), &theta, ESTIMATOR_FD_STEP)
            .unwrap();
        let exact = oracle::exact_score_gradient(&mdp, &theta).unwrap();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let baseline = move |s: usize, t: usize| a * s as f64 + b * (t as f64).powi(2) + (s as f64 * t as f64).sin();
        let with_b = oracle::exact_score_gradient_with_baseline(&mdp, &theta, baseline).unwrap();
        plain = plain.max(exact.max_abs_diff(&fd));
        based = based.max(with_b.max_abs_diff(&fd));
    }
    let elapsed = start.elapsed();
    Outcome::new(
        plain < ESTIMATOR_TOL && based < ESTIMATOR_TOL && elapsed < ESTIMATOR_BUDGET,
        format!(
            "|exact - fd| {plain:.2e}, with baseline {based:.2e} (< {ESTIMATOR_TOL:e}), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn bits(v: &ParamVector) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn adaptation_identities() -> Outcome {
    let envs = [
        EnvConfig::CoopNav(CoopNavConfig::default()),
        EnvConfig::PredatorPrey(PredatorPreyConfig::default()),
        EnvConfig::Survival(SurvivalConfig {
            num_agents: 4,
            width: 8,
            height: 8,
            food: 6,
            ..Default::default()
        }),
    ];
    let mut checked = 0;
    for env in envs {
        let policies = algo::population_policies(env.build().as_ref(), &[16, 16], Activation::Relu, 0.0).unwrap();
        let theta = algo::init_population_params(&policies, 3);
        let before: Vec<Vec<u64>> = theta.iter().map(bits).collect();
        for (k, alpha) in [(0, 0.01), (3, 0.0)] {
            let config = TrainConfig {
                k,
                alpha1: alpha,
                alpha2: alpha,
                n_traj: 3,
                horizon: 10,
                deterministic: true,
                ..Default::default()
            };
            let trainer = Trainer::new(&config, &env, &policies).unwrap();
            for n in 0..trainer.num_agents() {
                let adapted = trainer.inner_adapt(&theta, n, 0).unwrap();
                if bits(&adapted.params) != bits(&theta[trainer.population_of(n)]) {
                    return Outcome::new(false, format!("{}: k={k} alpha={alpha} agent {n} moved", env.name()));
                }
                checked += 1;
            }
        }
        if theta.iter().map(bits).collect::<Vec<_>>() != before {
            return Outcome::new(false, format!("{}: inner_adapt modified theta", env.name()));
        }
    }
    Outcome::new(true, format!("{checked} adaptations bitwise equal to theta; theta untouched"))
}

fn determinism() -> Outcome {
    let run = || -> dimapg::Result<Outcome> {
        let dir = tempfile::tempdir()?;
        let config_path = dir.path().join("tiny.conf");
        fs::write(
            &config_path,
            "env = predprey\niterations = 3\nn_traj = 4\nhorizon = 25\nk = 1\nhidden = 16,16\npre_term = centered\n",
        )?;
        let metrics: Vec<Vec<u8>> = (0..2)
            .map(|i| {
                let out = dir.path().join(format!("run{i}"));
                let opts = TrainOptions {
                    config: config_path.clone(),
                    seed: Some(17),
                    out: out.clone(),
                    runs: 1,
                    overrides: Vec::new(),
                    deterministic: true,
                };
                cmd_train(&opts, |_, _| {})?;
                Ok(fs::read(out.join(harness::commands::METRICS_FILE))?)
            })
            .collect::<dimapg::Result<_>>()?;
        let same_metrics = metrics[0] == metrics[1];
        let mut replays = 0;
        for name in ["coopnav", "predprey", "survival"] {
            let mut config = RunConfig::new(harness::config::env_by_name(name)?);
            config.hidden = vec![16];
            let dump = trajectory_csv(&dump_trajectory(&config, 60)?);
            replays += usize::from(replay_matches(&config, &dump)?);
        }
        Ok(Outcome::new(
            same_metrics && replays == 3,
            format!(
                "metrics.csv byte-identical: {same_metrics} ({} bytes); dump replays bitwise: {replays}/3",
                metrics[0].len()
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

fn random_force(rng: &mut ChaCha8Rng, scale: f64) -> Action {
    Action::Continuous(vec![rng.random_range(-scale..scale), rng.random_range(-scale..scale)])
}

/// Number of (state, action) pairs whose permuted step disagrees.
fn permutation_violations(rng: &mut ChaCha8Rng) -> usize {
    let mut bad = 0;
    for case in 0..PERMUTATION_CASES {
        let n = 3 + case % 3;
        let spread = if case % 2 == 0 { 0.15 } else { 1.2 };
        let mut point = |b: f64| [rng.random_range(-b..b), rng.random_range(-b..b)];
        let state = CoopNavState {
            positions: (0..n).map(|_| point(spread)).collect(),
            velocities: (0..n).map(|_| point(1.0)).collect(),
            goals: (0..n).map(|_| point(1.0)).collect(),
        };
        let actions: Vec<Action> = (0..n).map(|_| random_force(rng, 2.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let config = CoopNavConfig {
            num_agents: n,
            ..Default::default()
        };
        let mut a = CoopNav::new(config.clone());
        let mut b = CoopNav::new(config);
        a.set_state(state.clone()).unwrap();
        b.set_state(state.permuted(&perm)).unwrap();
        let out = a.step(&actions).unwrap();
        let permuted: Vec<Action> = perm.iter().map(|&i| actions[i].clone()).collect();
        let out_p = b.step(&permuted).unwrap();
        let rewards_ok = perm.iter().enumerate().all(|(i, &src)| out_p.rewards[i] == out.rewards[src]);
        if !rewards_ok || b.state() != &a.state().permuted(&perm) {
            bad += 1;
        }
    }
    bad
}

fn clipped_reward_violations(rng: &mut ChaCha8Rng) -> usize {
    let mut envs: Vec<Box<dyn MultiAgentEnv>> = vec![
        Box::new(CoopNav::new(CoopNavConfig::default())),
        Box::new(PredatorPrey::new(PredatorPreyConfig::default())),
    ];
    let mut bad = 0;
    for env in envs.iter_mut() {
        env.reset(rng);
        for step in 0..CLIP_STEPS {
            if step % 200 == 0 {
                env.reset(rng);
            }
            let actions: Vec<Action> = (0..env.num_agents()).map(|_| random_force(rng, 20.0)).collect();
            let out = env.step(&actions).unwrap();
            bad += out.rewards.iter().filter(|r| !(-1.0..=1.0).contains(*r)).count();
        }
    }
    bad
}

fn survival_violations(rng: &mut ChaCha8Rng) -> usize {
    let config = SurvivalConfig {
        food: 40,
        ..Default::default()
    };
    let mut env = Survival::new(config.clone());
    env.reset(rng);
    let initial = env.food_remaining();
    let mut bad = 0;
    for _ in 0..SURVIVAL_STEPS {
        let actions: Vec<Action> = (0..config.num_agents)
            .map(|_| Action::Discrete(rng.random_range(0..NUM_SURVIVAL_ACTIONS)))
            .collect();
        env.step(&actions).unwrap();
        let mut occupied = 0;
        for y in 0..config.height {
            for x in 0..config.width {
                if let Some(i) = env.occupant(x, y) {
                    occupied += 1;
                    let a = &env.agents()[i];
                    bad += usize::from(!a.alive || (a.x, a.y) != (x, y));
                }
            }
        }
        let alive = env.agents().iter().filter(|a| a.alive).count();
        bad += usize::from(occupied != alive);
        bad += usize::from(env.food_remaining() + env.food_consumed() != initial);
    }
    bad
}

fn environment_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let perm = permutation_violations(&mut rng);
    let clip = clipped_reward_violations(&mut rng);
    let surv = survival_violations(&mut rng);
    Outcome::new(
        perm + clip + surv == 0,
        format!(
            "permutation {perm}/{PERMUTATION_CASES}, unclipped rewards {clip}, survival food/occupancy {surv} over {SURVIVAL_STEPS} steps"
        ),
    )
}

struct TrainedRun {
    config: RunConfig,
    policies: Vec<PolicySpec>,
    initial: Vec<ParamVector>,
    trained: Vec<ParamVector>,
}

fn train(name: &str, seed: u64, edit: impl FnOnce(&mut RunConfig), scratch: &Path) -> dimapg::Result<TrainedRun> {
    let mut config = run_config(name, seed)?;
    edit(&mut config);
    let policies = harness::commands::build_policies(&config)?;
    let initial = algo::init_population_params(&policies, seed);
    let dir = scratch.join(format!("{}_{seed}_{}", config.env.name(), config.train.single_agent));
    let ckpt = harness::train_run(&config, &dir, |_| {})?;
    Ok(TrainedRun {
        config,
        policies,
        initial,
        trained: ckpt.params,
    })
}

impl TrainedRun {
    fn eval(&self, params: &[ParamVector], mode: EvalMode, finetune: Option<&[ParamVector]>) -> dimapg::Result<EvalSummary> {
        let seed = self.config.eval_seed;
        evaluate_params(&self.config, &self.policies, params, mode, finetune, EVAL_EPISODES, seed)
    }
}

struct CoopNavSeed {
    untrained: EvalSummary,
    central: EvalSummary,
    adapted: EvalSummary,
    finetune: EvalSummary,
}

fn coopnav_seed(seed: u64, scratch: &Path) -> dimapg::Result<(CoopNavSeed, Duration)> {
    let start = Instant::now();
    let run = train("coopnav.conf", seed, |_| {}, scratch)?;
    let untrained = run.eval(&run.initial, EvalMode::Central, None)?;
    let central = run.eval(&run.trained, EvalMode::Central, None)?;
    let learning_time = start.elapsed();
    let adapted = run.eval(&run.trained, EvalMode::Adapted, None)?;
    let single = train("coopnav.conf", seed, |c| c.train.single_agent = true, scratch)?;
    let finetune = run.eval(&run.trained, EvalMode::Finetune, Some(&single.trained))?;
    Ok((
        CoopNavSeed {
            untrained,
            central,
            adapted,
            finetune,
        },
        learning_time,
    ))
}

fn learning_and_ordering(scratch: &Path) -> (Outcome, Outcome) {
    let mut seeds = Vec::new();
    let mut learning_time = Duration::ZERO;
    for seed in SEEDS {
        match coopnav_seed(seed, scratch) {
            Ok((s, t)) => {
                learning_time += t;
                seeds.push(s);
            }
            Err(e) => return (Outcome::error(&e), Outcome::error(e)),
        }
    }

    let mut improved = 0;
    let mut lines = Vec::new();
    for s in &seeds {
        let gain = s.central.min_agent_return - s.untrained.min_agent_return;
        let needed = LEARNING_SE_MARGIN * s.untrained.min_agent_return_se;
        improved += usize::from(gain >= needed);
        lines.push(format!("{:.1} -> {:.1} (gain {gain:.1} vs {needed:.1})", s.untrained.min_agent_return, s.central.min_agent_return));
    }
    let learning = Outcome::new(
        improved == SEEDS.len() && learning_time < LEARNING_BUDGET,
        format!("min-agent {}; {:.0}s training", lines.join(", "), learning_time.as_secs_f64()),
    );

    let mut votes = 0;
    let mut lines = Vec::new();
    for s in &seeds {
        let (c, a, f) = (s.central.min_agent_return, s.adapted.min_agent_return, s.finetune.min_agent_return);
        let gap = (c - a).abs() / c.abs();
        votes += usize::from(gap <= ADAPTED_REL_GAP && c > f);
        lines.push(format!("central {c:.1} adapted {a:.1} ({:.1}%) finetune {f:.1}", 100.0 * gap));
    }
    let ordering = Outcome::new(
        2 * votes > SEEDS.len(),
        format!("{votes}/{} seeds; {}", SEEDS.len(), lines.join("; ")),
    );
    (learning, ordering)
}

fn predator_prey(scratch: &Path) -> Outcome {
    let run = || -> dimapg::Result<Outcome> {
        let mut wins = 0;
        let mut lines = Vec::new();
        for seed in SEEDS {
            let run = train("predprey.conf", seed, |_| {}, scratch)?;
            let trained = run.eval(&run.trained, EvalMode::Central, None)?;
            let naive = [run.initial[0].clone(), run.trained[1].clone()];
            let untrained = run.eval(&naive, EvalMode::Central, None)?;
            wins += usize::from(trained.collisions_per_episode > untrained.collisions_per_episode);
            lines.push(format!(
                "{:.2} vs {:.2}",
                trained.collisions_per_episode, untrained.collisions_per_episode
            ));
        }
        Ok(Outcome::new(
            wins == SEEDS.len(),
            format!("collisions/episode trained vs untrained predators: {}", lines.join(", ")),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

fn survival(scratch: &Path) -> Outcome {
    let run = || -> dimapg::Result<Outcome> {
        let run = train("survival.conf", SEEDS[0], |_| {}, scratch)?;
        let before = run.eval(&run.initial, EvalMode::Central, None)?.food_cleared_fraction().unwrap_or(0.0);
        let after = run.eval(&run.trained, EvalMode::Central, None)?.food_cleared_fraction().unwrap_or(0.0);
        Ok(Outcome::new(
            after >= FOOD_CLEARED_MIN,
            format!(
                "food cleared in {:.0}% of {EVAL_EPISODES} episodes (untrained {:.0}%, need {:.0}%)",
                100.0 * after,
                100.0 * before,
                100.0 * FOOD_CLEARED_MIN
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

/// Returns the outcome and whether the k = 0 identity held.
fn fidelity() -> (Outcome, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut k0, mut gap, mut rel) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..FIDELITY_MDPS {
        let mdp = TinyMdp::random(&mut rng);
        let theta: Vec<f64> = (0..mdp.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        match oracle::dimapg_fidelity(&mdp, &theta, FIDELITY_ALPHA, FIDELITY_FD_STEP) {
            Ok(r) => {
                k0 = k0.max(r.k0_deviation);
                gap = gap.max(r.first_order_gap);
                rel = rel.max(r.relative_gap);
            }
            Err(e) => return (Outcome::error(e), false),
        }
    }
    let ok = k0 <= FIDELITY_TOL;
    (
        Outcome::new(
            ok,
            format!("k=0 deviation {k0:.2e} (<= {FIDELITY_TOL:e}); first-order gap at k=1, alpha={FIDELITY_ALPHA}: max {gap:.3e}, relative {rel:.3}"),
        ),
        ok,
    )
}

fn report(id: usize, title: &str, outcome: &Outcome, elapsed: Duration) {
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    println!("[{verdict}] {id:>2} {title}: {} [{:.1}s]", outcome.detail, elapsed.as_secs_f64());
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let value = f();
    (value, start.elapsed())
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let scratch = scratch.path();

    let (o, t) = timed(gradient_correctness);
    report(1, "gradient correctness", &o, t);
    let (o, t) = timed(estimator_exactness);
    report(2, "estimator exactness", &o, t);
    let (o, t) = timed(adaptation_identities);
    report(3, "adaptation identities", &o, t);
    let (o, t) = timed(determinism);
    report(4, "determinism", &o, t);
    let (o, t) = timed(environment_invariants);
    report(5, "environment invariants", &o, t);
    let ((learning, ordering), t) = timed(|| learning_and_ordering(scratch));
    report(6, "coopnav learning", &learning, t);
    report(7, "eval mode ordering", &ordering, Duration::ZERO);
    let (o, t) = timed(|| predator_prey(scratch));
    report(8, "predator-prey co-training", &o, t);
    let (o, t) = timed(|| survival(scratch));
    report(9, "survival food cleared", &o, t);
    let ((o, k0_ok), t) = timed(fidelity);
    report(10, "fidelity report", &o, t);

    if k0_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
