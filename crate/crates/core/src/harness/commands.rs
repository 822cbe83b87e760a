//! Entry points behind the command-line tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dimapg::{self, IterationMetrics, Trainer};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::harness::config::{parse_config_with, RunConfig};
use crate::harness::metrics::{aggregate_metrics, read_metrics, MetricsWriter};
use crate::nn::ParamVector;
use crate::pg::{Trajectory, TrajectoryTag};
use crate::policy::{Action, PolicySpec};
use crate::rollout::{self, mean_and_se, stream, EpisodeReturns, Phase, ALL_AGENTS};

pub const RESOLVED_CONFIG: &str = "resolved_config";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FINAL_CHECKPOINT: &str = "final.dmpg";

pub fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_with(&text, overrides)
}

pub fn build_policies(config: &RunConfig) -> Result<Vec<PolicySpec>> {
    let env = config.env.build();
    dimapg::population_policies(env.as_ref(), &config.hidden, config.activation, config.initial_log_std)
}

fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.dmpg")
}

/// Trains one run into `dir`: `metrics.csv`, `resolved_config`, periodic
/// checkpoints and `final.dmpg`. `log` sees every iteration's metrics.
pub fn train_run<F>(config: &RunConfig, dir: &Path, mut log: F) -> Result<Checkpoint>
where
    F: FnMut(&IterationMetrics),
{
    config.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), config.render())?;
    let policies = build_policies(config)?;
    let initial = dimapg::init_population_params(&policies, config.train.seed);
    let mut metrics = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    let snapshot = |params: &[ParamVector], iteration: usize| Checkpoint {
        seed: config.train.seed,
        iteration: iteration as u32,
        policies: policies.clone(),
        params: params.to_vec(),
    };
    let outcome = dimapg::train_from(&config.train, &config.env, &policies, initial, |m, params| {
        metrics.write(m)?;
        log(m);
        let done = m.iteration + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            save_checkpoint(&dir.join(checkpoint_name(done)), &snapshot(params, done))?;
        }
        Ok(())
    })?;
    let last = snapshot(&outcome.params, config.train.iterations);
    save_checkpoint(&dir.join(FINAL_CHECKPOINT), &last)?;
    Ok(last)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub runs: usize,
    pub overrides: Vec<(String, String)>,
    /// Forces sequential, wallclock-free training.
    pub deterministic: bool,
}

/// Trains `runs` seeds. A single run writes into `out`; several runs write
/// `out/run_i` with seed `seed + i` plus `out/aggregate.csv`.
pub fn cmd_train<F>(opts: &TrainOptions, mut log: F) -> Result<Vec<PathBuf>>
where
    F: FnMut(usize, &IterationMetrics),
{
    if opts.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let mut base = load_config(&opts.config, &opts.overrides)?;
    if let Some(seed) = opts.seed {
        base.train.seed = seed;
    }
    base.train.deterministic |= opts.deterministic;
    let mut dirs = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let mut config = base.clone();
        config.train.seed = base.train.seed.wrapping_add(run as u64);
        let dir = if opts.runs == 1 {
            opts.out.clone()
        } else {
            opts.out.join(format!("run_{run}"))
        };
        train_run(&config, &dir, |m| log(run, m))?;
        dirs.push(dir);
    }
    if opts.runs > 1 {
        let runs = dirs
            .iter()
            .map(|d| read_metrics(&fs::read_to_string(d.join(METRICS_FILE))?))
            .collect::<Result<Vec<_>>>()?;
        fs::write(opts.out.join(AGGREGATE_FILE), aggregate_metrics(&runs)?)?;
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Every agent runs θ.
    Central,
    /// Every agent adapts from θ for k inner steps and runs its own θ_n.
    Adapted,
    /// Every agent runs a policy trained with only one learning agent.
    Finetune,
}

impl EvalMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "central" => Some(EvalMode::Central),
            "adapted" => Some(EvalMode::Adapted),
            "finetune" => Some(EvalMode::Finetune),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Central => "central",
            EvalMode::Adapted => "adapted",
            EvalMode::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mode: EvalMode,
    pub episodes: Vec<EpisodeReturns>,
    pub mean_return: f64,
    pub mean_return_se: f64,
    pub min_agent_return: f64,
    pub min_agent_return_se: f64,
    pub per_agent_mean: Vec<f64>,
    pub collisions_per_episode: f64,
}

impl EvalSummary {
    fn new(mode: EvalMode, episodes: Vec<EpisodeReturns>) -> Self {
        let (mean_return, mean_return_se) = mean_and_se(episodes.iter().map(EpisodeReturns::mean));
        let (min_agent_return, min_agent_return_se) = rollout::min_agent_summary(&episodes);
        let agents = episodes.first().map_or(0, |e| e.per_agent.len());
        let count = episodes.len().max(1) as f64;
        let per_agent_mean = (0..agents)
            .map(|a| episodes.iter().map(|e| e.per_agent[a]).sum::<f64>() / count)
            .collect();
        let collisions_per_episode = episodes.iter().map(|e| e.stats.collisions as f64).sum::<f64>() / count;
        Self {
            mode,
            episodes,
            mean_return,
            mean_return_se,
            min_agent_return,
            min_agent_return_se,
            per_agent_mean,
            collisions_per_episode,
        }
    }

    /// Fraction of episodes that ended with no food left (survival only).
    pub fn food_cleared_fraction(&self) -> Option<f64> {
        let left: Option<Vec<usize>> = self.episodes.iter().map(|e| e.stats.end.food_remaining).collect();
        left.filter(|l| !l.is_empty())
            .map(|l| l.iter().filter(|&&f| f == 0).count() as f64 / l.len() as f64)
    }

    /// One row per episode.
    pub fn to_csv(&self) -> String {
        let agents = self.per_agent_mean.len();
        let mut out = String::from("episode,mean_return,min_agent_return,collisions,food_remaining");
        for a in 0..agents {
            let _ = write!(out, ",agent_{a}");
        }
        out.push('\n');
        for (i, e) in self.episodes.iter().enumerate() {
            let food = e.stats.end.food_remaining.map(|f| f.to_string()).unwrap_or_default();
            let _ = write!(out, "{i},{},{},{},{food}", e.mean(), e.min(), e.stats.collisions);
            for r in &e.per_agent {
                let _ = write!(out, ",{r}");
            }
            out.push('\n');
        }
        out
    }

    pub fn human(&self) -> String {
        let mut out = format!(
            "mode {}: {} episodes\n  mean return        {:.4} ± {:.4}\n  min-agent return   {:.4} ± {:.4}\n  collisions/episode {:.4}\n",
            self.mode.name(),
            self.episodes.len(),
            self.mean_return,
            self.mean_return_se,
            self.min_agent_return,
            self.min_agent_return_se,
            self.collisions_per_episode,
        );
        if let Some(f) = self.food_cleared_fraction() {
            let _ = writeln!(out, "  food cleared       {:.1}%", 100.0 * f);
        }
        let agents: Vec<String> = self.per_agent_mean.iter().map(|r| format!("{r:.3}")).collect();
        let _ = writeln!(out, "  per-agent mean     [{}]", agents.join(", "));
        out
    }
}

/// Evaluates central parameters `theta` under `mode`. `finetune` supplies the
/// single-agent-trained parameters for [`EvalMode::Finetune`].
pub fn evaluate_params(
    config: &RunConfig,
    policies: &[PolicySpec],
    theta: &[ParamVector],
    mode: EvalMode,
    finetune: Option<&[ParamVector]>,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let mut env = config.env.build();
    check_params(policies, theta)?;
    let populations: Vec<usize> = (0..env.num_agents()).map(|i| env.population_of(i)).collect();
    let adapted: Vec<ParamVector>;
    let assignment: Vec<&ParamVector> = match mode {
        EvalMode::Central => populations.iter().map(|&p| &theta[p]).collect(),
        EvalMode::Finetune => {
            let ft = finetune.ok_or_else(|| Error::Config("finetune mode needs a finetune checkpoint".into()))?;
            check_params(policies, ft)?;
            populations.iter().map(|&p| &ft[p]).collect()
        }
        EvalMode::Adapted => {
            let mut train = config.train.clone();
            train.seed = seed;
            train.single_agent = false;
            let trainer = Trainer::new(&train, &config.env, policies)?;
            adapted = (0..populations.len())
                .map(|n| trainer.inner_adapt(theta, n, 0).map(|a| a.params))
                .collect::<Result<_>>()?;
            adapted.iter().collect()
        }
    };
    let returns = rollout::evaluate(env.as_mut(), policies, &assignment, episodes, config.train.horizon, seed)?;
    Ok(EvalSummary::new(mode, returns))
}

fn check_params(policies: &[PolicySpec], params: &[ParamVector]) -> Result<()> {
    if params.len() != policies.len() {
        return Err(Error::dims("checkpoint populations", policies.len(), params.len()));
    }
    for (p, v) in policies.iter().zip(params) {
        if p.num_params() != v.len() {
            return Err(Error::dims("checkpoint parameters", p.num_params(), v.len()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub mode: EvalMode,
    pub episodes: usize,
    pub seed: Option<u64>,
    /// Defaults to `resolved_config` next to the checkpoint.
    pub config: Option<PathBuf>,
    pub finetune_checkpoint: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

pub fn cmd_eval(opts: &EvalOptions) -> Result<EvalSummary> {
    let config_path = match &opts.config {
        Some(p) => p.clone(),
        None => opts.checkpoint.parent().unwrap_or(Path::new(".")).join(RESOLVED_CONFIG),
    };
    let config = load_config(&config_path, &opts.overrides)?;
    let policies = build_policies(&config)?;
    let ckpt = load_checkpoint(&opts.checkpoint)?;
    if ckpt.policies != policies {
        return Err(Error::Config(format!(
            "checkpoint {} does not match the policies of {}",
            opts.checkpoint.display(),
            config_path.display()
        )));
    }
    let finetune = match (opts.mode, &opts.finetune_checkpoint) {
        (EvalMode::Finetune, None) => {
            return Err(Error::Config("finetune mode needs --finetune-checkpoint".into()));
        }
        (EvalMode::Finetune, Some(path)) => {
            let ft = load_checkpoint(path)?;
            if ft.policies != policies {
                return Err(Error::Config(format!("finetune checkpoint {} has other dimensions", path.display())));
            }
            Some(ft.params)
        }
        _ => None,
    };
    evaluate_params(
        &config,
        &policies,
        &ckpt.params,
        opts.mode,
        finetune.as_deref(),
        opts.episodes,
        opts.seed.unwrap_or(config.eval_seed),
    )
}

/// One episode of at most `steps` steps with the untrained central policy of
/// `config`, drawn from the evaluation stream of `config.train.seed`.
pub fn dump_trajectory(config: &RunConfig, steps: usize) -> Result<Trajectory> {
    let policies = build_policies(config)?;
    let theta = dimapg::init_population_params(&policies, config.train.seed);
    let mut env = config.env.build();
    let assignment: Vec<&ParamVector> = (0..env.num_agents()).map(|i| &theta[env.population_of(i)]).collect();
    let mut rng = stream(config.train.seed, 0, ALL_AGENTS, Phase::Eval, 0);
    rollout::rollout_joint(env.as_mut(), &policies, &assignment, TrajectoryTag::AllCentral, steps, &mut rng)
}

pub const DUMP_HEADER: &str = "step,agent,acted,reward,log_prob,action,observation";

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Trajectory CSV: one row per (step, agent); vectors are space-separated.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = format!("{DUMP_HEADER}\n");
    for (t, step) in traj.steps.iter().enumerate() {
        for (i, obs) in step.observations.iter().enumerate() {
            let action = match &step.actions[i] {
                Some(Action::Continuous(a)) => join(a),
                Some(Action::Discrete(a)) => a.to_string(),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "{t},{i},{},{},{},{action},{}",
                u8::from(step.actions[i].is_some()),
                step.rewards[i],
                step.log_probs[i],
                join(obs)
            );
        }
    }
    out
}

/// Row of a trajectory CSV with every number parsed back.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow {
    pub step: usize,
    pub agent: usize,
    pub acted: bool,
    pub reward: f64,
    pub log_prob: f64,
    pub action: Vec<f64>,
    pub observation: Vec<f64>,
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<DumpRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(DUMP_HEADER) {
        return Err(Error::Format("trajectory header does not match".into()));
    }
    let bad = |line: usize| Error::Format(format!("trajectory row {line} is malformed"));
    let floats = |s: &str, line: usize| -> Result<Vec<f64>> {
        s.split_whitespace().map(|v| v.parse().map_err(|_| bad(line))).collect()
    };
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(n + 1));
            }
            Ok(DumpRow {
                step: f[0].parse().map_err(|_| bad(n + 1))?,
                agent: f[1].parse().map_err(|_| bad(n + 1))?,
                acted: f[2] == "1",
                reward: f[3].parse().map_err(|_| bad(n + 1))?,
                log_prob: f[4].parse().map_err(|_| bad(n + 1))?,
                action: floats(f[5], n + 1)?,
                observation: floats(f[6], n + 1)?,
            })
        })
        .collect()
}

/// Regenerates the dumped episode and reports whether every number matches bitwise.
pub fn replay_matches(config: &RunConfig, dump: &str) -> Result<bool> {
    let rows = parse_trajectory_csv(dump)?;
    let steps = rows.iter().map(|r| r.step + 1).max().unwrap_or(0);
    let fresh = parse_trajectory_csv(&trajectory_csv(&dump_trajectory(config, steps)?))?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    Ok(rows.len() == fresh.len()
        && rows.iter().zip(&fresh).all(|(a, b)| {
            (a.step, a.agent, a.acted) == (b.step, b.agent, b.acted)
                && a.reward.to_bits() == b.reward.to_bits()
                && a.log_prob.to_bits() == b.log_prob.to_bits()
                && bits(&a.action) == bits(&b.action)
                && bits(&a.observation) == bits(&b.observation)
        }))
}
