use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use dwsl::config::{Algorithm, RunConfig};
use dwsl::datagen::{collect_dataset, dataset_stats, make_behavior_policy, read_dataset, write_dataset, BehaviorKind};
use dwsl::distance::fit_tabular;
use dwsl::eval::{evaluate, EvalTasks, GoalStrategy};
use dwsl::mdp;
use dwsl::oracle::{verify_suite, BehaviorTable, CheckStatus, Suite, VerifyConfig, DEFAULT_ENUMERATION_CAP};
use dwsl::pipeline::{eval_tasks, run_training};
use dwsl::policy::{ActMode, PolicyBackend, PolicyModel};
use dwsl::relabel::BinningConfig;
use dwsl::Error;

#[derive(Parser)]
#[command(name = "dwsl", version, about = "Distance-weighted goal-conditioned policy learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a dataset with a scripted behavior policy.
    GenData {
        #[arg(long)]
        env: String,
        /// random | noisy_expert:<eps> | mixture:<rho>:<eps>
        #[arg(long)]
        behavior: String,
        #[arg(long)]
        traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the environment's default horizon.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Print return statistics of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Goal id (default: the goal of the last state).
        #[arg(long)]
        goal: Option<usize>,
    },
    /// Train a distance model and a policy from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        backend: Option<String>,
    },
    /// Evaluate a policy checkpoint.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// dataset_states | all_reachable (default: the training strategy).
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, default_value = "greedy")]
        mode: String,
        /// Dataset for goal sampling (default: the training dataset).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the exact verification checks.
    Verify {
        #[arg(long)]
        env: String,
        /// all | finite | discounted | corollary | extraction | residual
        #[arg(long, default_value = "all")]
        suite: String,
        /// Dataset whose supported pairs and behavior are checked.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Behavior used when no dataset is given.
        #[arg(long, default_value = "noisy_expert:0.2")]
        behavior: String,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.9,0.99")]
        gamma: Vec<f64>,
        /// Finite-horizon length (default: the environment's horizon).
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Usage and validation problems exit with 2, everything else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::InputDomain(_)
            | Error::UnknownEnv { .. }
            | Error::Config(_)
            | Error::Format { .. }
            | Error::UnsupportedPair { .. },
        ) => 2,
        Some(_) => 1,
        None if err.is::<UsageError>() => 2,
        None => 1,
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())).into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::GenData {
            env,
            behavior,
            traj,
            seed,
            out,
            horizon,
        } => {
            let spec = mdp::resolve_with_horizon(&env, horizon)?;
            let kind: BehaviorKind = behavior.parse()?;
            let policy = make_behavior_policy(&spec, kind, seed)?;
            let dataset = collect_dataset(&spec, &policy, traj, seed)?;
            write_dataset(&out, &dataset)?;
            let goal = spec.phi(spec.num_states() - 1);
            let stats = dataset_stats(&spec, &dataset, goal)?;
            println!(
                "{}",
                serde_json::json!({
                    "out": out, "env": spec.env_id(), "horizon": spec.horizon(),
                    "trajectories": dataset.len(), "behavior": kind.to_string(), "seed": seed,
                    "goal": goal, "returns": stats,
                })
            );
        }
        Command::Stats { data, goal } => {
            require_file(&data, "dataset")?;
            let dataset = read_dataset(&data)?;
            let spec = dataset.spec()?;
            let goal = goal.unwrap_or_else(|| spec.phi(spec.num_states() - 1));
            if goal >= spec.goal_count() {
                return Err(UsageError(format!("goal {goal} out of range")).into());
            }
            let stats = dataset_stats(&spec, &dataset, goal)?;
            println!(
                "{}",
                serde_json::json!({"data": data, "env": spec.env_id(), "goal": goal, "returns": stats})
            );
        }
        Command::Train {
            config,
            seed,
            out_dir,
            algorithm,
            backend,
        } => {
            require_file(&config, "config")?;
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if let Some(dir) = out_dir {
                cfg.run.out_dir = dir;
            }
            if let Some(a) = algorithm {
                cfg.run.algorithm = a.parse::<Algorithm>()?;
            }
            if let Some(b) = backend {
                cfg.run.backend = b.parse::<PolicyBackend>()?;
            }
            let (outcome, artifacts) = run_training(&cfg)?;
            let last = outcome.history.last().map(|(step, r)| serde_json::json!({"step": step, "report": r}));
            println!(
                "{}",
                serde_json::json!({
                    "out_dir": artifacts.out_dir, "curves": artifacts.curves, "policy": artifacts.policy,
                    "distance": artifacts.distance, "unsupported_queries": outcome.unsupported_queries,
                    "final": last,
                })
            );
        }
        Command::Eval {
            policy,
            episodes,
            seed,
            strategy,
            mode,
            data,
        } => {
            require_file(&policy, "policy checkpoint")?;
            let (model, spec, prov) = PolicyModel::load(&policy)?;
            let mode: ActMode = mode.parse()?;
            let field = |key: &str| prov.as_ref().and_then(|p| p.get(key)).cloned();
            let strategy: GoalStrategy = match strategy {
                Some(s) => s.parse()?,
                None => field("eval_strategy")
                    .and_then(|v| serde_json::from_value(v).ok())
                    .unwrap_or(GoalStrategy::DatasetStates),
            };
            let data = data.or_else(|| field("dataset").and_then(|v| v.as_str().map(PathBuf::from)));
            let dataset = match (strategy, data) {
                (GoalStrategy::DatasetStates, Some(path)) => {
                    require_file(&path, "dataset")?;
                    Some(read_dataset(&path)?)
                }
                (GoalStrategy::DatasetStates, None) => {
                    bail!(UsageError("dataset_states evaluation needs --data".into()))
                }
                (GoalStrategy::AllReachable, _) => None,
            };
            let tasks = match &dataset {
                Some(d) => eval_tasks(strategy, d),
                None => EvalTasks::AllReachable,
            };
            let report = evaluate(&spec, &model, episodes, &tasks, mode, seed)?;
            println!(
                "{}",
                serde_json::json!({"policy": policy, "strategy": strategy, "report": report})
            );
        }
        Command::Verify {
            env,
            suite,
            data,
            behavior,
            alpha,
            gamma,
            horizon,
            out,
        } => {
            let suite: Suite = suite.parse()?;
            let (spec, kind, pairs) = match data {
                Some(path) => {
                    require_file(&path, "dataset")?;
                    let dataset = read_dataset(&path)?;
                    let spec = dataset.spec()?;
                    if spec.env_id() != mdp::resolve(&env)?.env_id() {
                        return Err(UsageError(format!(
                            "--env {env} does not match the dataset environment {}",
                            spec.env_id()
                        ))
                        .into());
                    }
                    let kind: BehaviorKind = dataset.header.behavior.parse().context("dataset behavior")?;
                    let binning = BinningConfig::new(dataset.horizon(), 1)?;
                    let table = fit_tabular(&spec, &dataset, &binning)?;
                    let pairs: Vec<_> = table.as_tabular().expect("tabular").supported_pairs().collect();
                    (spec, kind, pairs)
                }
                None => {
                    let spec = mdp::resolve(&env)?;
                    let kind: BehaviorKind = behavior.parse()?;
                    let pairs = (0..spec.num_states())
                        .flat_map(|s| spec.reachable_goals(s).into_iter().map(move |g| (s, g)))
                        .collect();
                    (spec, kind, pairs)
                }
            };
            let pi = BehaviorTable::from_behavior(&spec, &make_behavior_policy(&spec, kind, 0)?);
            let cfg = VerifyConfig {
                alphas: alpha,
                gammas: gamma,
                horizon: horizon.unwrap_or(spec.horizon()),
                enumeration_cap: DEFAULT_ENUMERATION_CAP,
            };
            let report = verify_suite(&spec, &pi, &pairs, &cfg, suite)?;
            let mut text = String::new();
            for record in &report {
                text.push_str(&serde_json::to_string(record)?);
                text.push('\n');
            }
            match out {
                Some(path) => fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            if report.iter().any(|r| r.status == CheckStatus::Fail) {
                eprintln!("verification failed");
                return Ok(1);
            }
        }
    }
    Ok(0)
}
