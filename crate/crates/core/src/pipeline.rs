//! End-to-end training: distance phase, policy phase, periodic evaluation
//! and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{Algorithm, RunConfig};
use crate::datagen::{read_dataset, Dataset};
use crate::distance::{fit_tabular, train_classifier, train_regression, DistanceModel, RegressionMode};
use crate::error::{Error, Result};
use crate::eval::{emit_curves, evaluate, EvalReport, EvalTasks, GoalStrategy};
use crate::mdp::MdpSpec;
use crate::policy::{train_dwsl_b, train_tabular, MlpPolicyTrainer, PolicyBackend, PolicyModel, Weighting};
use crate::relabel::BinningConfig;

pub const CURVES_FILE: &str = "curves.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const DISTANCE_FILE: &str = "distance.json";
pub const CONFIG_FILE: &str = "resolved_config.toml";
pub const EVAL_FILE: &str = "eval.jsonl";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: MdpSpec,
    pub distance: Option<DistanceModel>,
    pub policy: PolicyModel,
    /// `(policy step, report)` per evaluation point.
    pub history: Vec<(usize, EvalReport)>,
    pub unsupported_queries: usize,
}

pub fn eval_tasks<'a>(strategy: GoalStrategy, dataset: &'a Dataset) -> EvalTasks<'a> {
    match strategy {
        GoalStrategy::DatasetStates => EvalTasks::DatasetStates(dataset),
        GoalStrategy::AllReachable => EvalTasks::AllReachable,
    }
}

/// Phase 1: the distance model the algorithm weights with, if any.
pub fn train_distance(cfg: &RunConfig, spec: &MdpSpec, dataset: &Dataset) -> Result<Option<DistanceModel>> {
    let binning = BinningConfig::new(dataset.horizon(), cfg.binning.n_step)?;
    let settings = cfg.net_settings(cfg.train.distance_steps);
    Ok(match (cfg.run.algorithm, cfg.run.backend) {
        (Algorithm::Gcsl, _) => None,
        (Algorithm::Dwsl | Algorithm::Awr, PolicyBackend::Tabular) => Some(fit_tabular(spec, dataset, &binning)?),
        (Algorithm::Dwsl | Algorithm::Awr, PolicyBackend::Mlp) => {
            Some(train_classifier(spec, dataset, &binning, &settings)?)
        }
        (Algorithm::Expectile, _) => Some(train_regression(
            spec,
            dataset,
            &binning,
            &settings,
            RegressionMode::Expectile {
                tau: cfg.train.expectile_tau,
            },
        )?),
        (Algorithm::DwslB, _) => Some(train_dwsl_b(spec, dataset, &binning, &settings, &cfg.bootstrap())?),
    })
}

fn weighting<'a>(cfg: &RunConfig, distance: Option<&'a DistanceModel>) -> Weighting<'a> {
    let train = cfg.train_config();
    match (cfg.run.algorithm, distance) {
        (Algorithm::Gcsl, _) | (_, None) => Weighting::Unit,
        (Algorithm::Dwsl | Algorithm::DwslB, Some(d)) => Weighting::dwsl(d, &train),
        (Algorithm::Awr, Some(d)) => Weighting::awr(d, &train),
        (Algorithm::Expectile, Some(d)) => Weighting::regressed(d, &train),
    }
}

/// Train on an in-memory dataset without writing files.
pub fn train_on(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate_values()?;
    let spec = dataset.spec()?;
    if let Some(env) = &cfg.run.env {
        if env != spec.env_id() {
            return Err(Error::Config(format!(
                "run.env `{env}` does not match the dataset environment `{}`",
                spec.env_id()
            )));
        }
    }
    let binning = BinningConfig::new(dataset.horizon(), cfg.binning.n_step)?;
    let distance = train_distance(cfg, &spec, dataset)?;
    let weights = weighting(cfg, distance.as_ref());
    let tasks = eval_tasks(cfg.eval.strategy, dataset);
    let run_eval = |policy: &PolicyModel| evaluate(&spec, policy, cfg.eval.episodes, &tasks, cfg.eval.mode, cfg.eval.seed);

    let (policy, history, unsupported_queries) = match cfg.run.backend {
        PolicyBackend::Tabular => {
            let fit = train_tabular(&spec, dataset, &binning, weights)?;
            let report = run_eval(&fit.policy)?;
            (fit.policy, vec![(0, report)], fit.unsupported_queries)
        }
        PolicyBackend::Mlp => {
            let train = cfg.train_config();
            let mut trainer = MlpPolicyTrainer::new(&spec, dataset, &binning, weights, &train.net)?;
            let mut history = Vec::new();
            while trainer.steps_done() < train.net.steps {
                let chunk = cfg.eval.every.min(train.net.steps - trainer.steps_done());
                trainer.run(chunk)?;
                history.push((trainer.steps_done(), run_eval(&trainer.policy())?));
            }
            if history.is_empty() {
                history.push((0, run_eval(&trainer.policy())?));
            }
            (trainer.policy(), history, trainer.unsupported_queries())
        }
    };
    Ok(TrainOutcome {
        spec,
        distance,
        policy,
        history,
        unsupported_queries,
    })
}

/// Paths written by [`run_training`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub curves: PathBuf,
    pub policy: PathBuf,
    pub distance: Option<PathBuf>,
}

fn provenance(cfg: &RunConfig, outcome: &TrainOutcome) -> serde_json::Value {
    serde_json::json!({
        "config_toml": cfg.to_toml(),
        "dataset": cfg.run.dataset,
        "eval_strategy": cfg.eval.strategy,
        "unsupported_queries": outcome.unsupported_queries,
    })
}

/// Read the dataset, train, and write the resolved config, checkpoints,
/// per-evaluation summaries and the curve file into `run.out_dir`.
pub fn run_training(cfg: &RunConfig) -> Result<(TrainOutcome, RunArtifacts)> {
    cfg.validate()?;
    let dataset = read_dataset(&cfg.run.dataset)?;
    let outcome = train_on(cfg, &dataset)?;
    let out = &cfg.run.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let prov = provenance(cfg, &outcome);
    let distance = match &outcome.distance {
        Some(d) => {
            let path = out.join(DISTANCE_FILE);
            d.save(&path, &outcome.spec, Some(prov.clone()))?;
            Some(path)
        }
        None => None,
    };
    let policy = out.join(POLICY_FILE);
    outcome.policy.save(&policy, &outcome.spec, Some(prov))?;
    let mut lines = String::new();
    for (step, report) in &outcome.history {
        let mut record = serde_json::to_value(report).expect("report serializes");
        record["step"] = (*step).into();
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    write(&out.join(EVAL_FILE), &lines)?;
    let curves = out.join(crate::pipeline::CURVES_FILE);
    emit_curves(&outcome.history, &curves)?;
    Ok((
        outcome,
        RunArtifacts {
            out_dir: out.clone(),
            curves,
            policy,
            distance,
        },
    ))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
