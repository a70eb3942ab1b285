//! Exponentiated-advantage weighted imitation and its baselines.
//!
//! Every learner maximizes `Σ w · log π(a_i | s_i, φ(s_j))` over relabeled
//! samples. DWSL weights by the soft-min distance reduction, the AWR variant
//! by the mean-distance reduction, the expectile variant by a regressed
//! distance, and GCSL uses unit weights. The tabular backend solves the
//! weighted maximum-likelihood problem in closed form over all pairs; the
//! MLP backend runs minibatch Adam on the sampled objective.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{sample_categorical, Dataset};
use crate::distance::{init_classifier, DistanceBackend, DistanceModel, DistanceStatistic, TrainSettings};
use crate::error::{Error, Result};
use crate::mdp::{self, Action, FeatureKind, Goal, MdpSpec, State, StateFeatures};
use crate::nn::{soft_cross_entropy, AdamState, Mlp};
use crate::numerics::softmax;
use crate::relabel::{pair_probability, sample_batch, BinningConfig};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Temperature of the soft-min distance estimate.
    pub alpha: f64,
    /// Temperature of the exponentiated advantage.
    pub beta: f64,
    /// Largest weight; `f64::INFINITY` disables clipping.
    pub clip: f64,
    pub net: TrainSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.05,
            clip: 10.0,
            net: TrainSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta = {} must be positive", self.beta)));
        }
        if !(self.clip >= 1.0) {
            return Err(Error::Config(format!("clip = {} must be at least 1", self.clip)));
        }
        self.net.validate()
    }
}

/// `d_cur - c - d_next` with `c = 1/B` unless `s_next` achieves `g`.
pub fn advantage(spec: &MdpSpec, binning: &BinningConfig, d_cur: f64, d_next: f64, s_next: State, g: Goal) -> f64 {
    let cost = if spec.phi(s_next) == g {
        0.0
    } else {
        1.0 / binning.bins() as f64
    };
    d_cur - cost - d_next
}

/// `min(exp(adv / beta), clip)`.
pub fn weight(adv: f64, beta: f64, clip: f64) -> f64 {
    (adv / beta).exp().min(clip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Greedy,
    Sample,
}

impl std::str::FromStr for ActMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(ActMode::Greedy),
            "sample" => Ok(ActMode::Sample),
            _ => Err(Error::domain(format!("unknown action mode `{s}` (greedy | sample)"))),
        }
    }
}

/// Lowest-id action of maximal probability.
pub fn greedy_action(probs: &[f64]) -> Action {
    let mut best = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = a;
        }
    }
    best
}

/// Anything that picks actions during a rollout. `t` is the step index
/// within the episode. The flag reports a fallback to a uniform action.
pub trait Actor {
    fn act(&self, t: usize, s: State, g: Goal, mode: ActMode, rng: &mut ChaCha8Rng) -> (Action, bool);
}

#[derive(Debug, Clone)]
pub enum PolicyModel {
    /// One optional action distribution per `(state, goal)`.
    Tabular {
        num_actions: usize,
        goal_count: usize,
        rows: Vec<Option<Vec<f64>>>,
    },
    Mlp {
        net: Mlp,
        feature_kind: FeatureKind,
        features: StateFeatures,
    },
}

impl PolicyModel {
    pub fn num_actions(&self) -> usize {
        match self {
            PolicyModel::Tabular { num_actions, .. } => *num_actions,
            PolicyModel::Mlp { net, .. } => net.output_dim(),
        }
    }

    pub fn backend_tag(&self) -> &'static str {
        match self {
            PolicyModel::Tabular { .. } => "tabular",
            PolicyModel::Mlp { .. } => "mlp",
        }
    }

    /// `π(·|s, g)`, or `None` for a tabular pair never seen in training.
    pub fn probs(&self, s: State, g: Goal) -> Option<Vec<f64>> {
        match self {
            PolicyModel::Tabular { goal_count, rows, .. } => rows.get(s * goal_count + g).cloned().flatten(),
            PolicyModel::Mlp { net, features, .. } => {
                Some(softmax(&net.forward(&features.input(s, g)).expect("feature dims match")))
            }
        }
    }

    pub fn is_supported(&self, s: State, g: Goal) -> bool {
        match self {
            PolicyModel::Tabular { goal_count, rows, .. } => rows.get(s * goal_count + g).is_some_and(Option::is_some),
            PolicyModel::Mlp { .. } => true,
        }
    }

    /// Greedy or sampled action. Unsupported tabular pairs draw a uniform
    /// action and set the fallback flag.
    pub fn act<R: Rng + ?Sized>(&self, s: State, g: Goal, mode: ActMode, rng: &mut R) -> (Action, bool) {
        match self.probs(s, g) {
            Some(p) => match mode {
                ActMode::Greedy => (greedy_action(&p), false),
                ActMode::Sample => (sample_categorical(&p, rng), false),
            },
            None => (rng.gen_range(0..self.num_actions()), true),
        }
    }
}

impl Actor for PolicyModel {
    fn act(&self, _t: usize, s: State, g: Goal, mode: ActMode, rng: &mut ChaCha8Rng) -> (Action, bool) {
        PolicyModel::act(self, s, g, mode, rng)
    }
}

/// How relabeled samples are weighted.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// GCSL: every weight is 1.
    Unit,
    Distance {
        model: &'a DistanceModel,
        stat: DistanceStatistic,
        beta: f64,
        clip: f64,
    },
}

impl<'a> Weighting<'a> {
    pub fn dwsl(model: &'a DistanceModel, cfg: &TrainConfig) -> Self {
        Weighting::Distance {
            model,
            stat: DistanceStatistic::LogSumExp { alpha: cfg.alpha },
            beta: cfg.beta,
            clip: cfg.clip,
        }
    }

    pub fn awr(model: &'a DistanceModel, cfg: &TrainConfig) -> Self {
        Weighting::Distance {
            model,
            stat: DistanceStatistic::Expectation,
            beta: cfg.beta,
            clip: cfg.clip,
        }
    }

    pub fn regressed(model: &'a DistanceModel, cfg: &TrainConfig) -> Self {
        Weighting::Distance {
            model,
            stat: DistanceStatistic::Point,
            beta: cfg.beta,
            clip: cfg.clip,
        }
    }
}

/// Memoized distance queries; the model is fixed during policy training.
struct DistanceCache<'a> {
    model: &'a DistanceModel,
    stat: DistanceStatistic,
    goal_count: usize,
    values: Vec<Option<Option<f64>>>,
}

impl<'a> DistanceCache<'a> {
    fn new(spec: &MdpSpec, model: &'a DistanceModel, stat: DistanceStatistic) -> Self {
        Self {
            model,
            stat,
            goal_count: spec.goal_count(),
            values: vec![None; spec.num_states() * spec.goal_count()],
        }
    }

    /// `None` when the model does not cover `(s, g)`.
    fn get(&mut self, s: State, g: Goal) -> Result<Option<f64>> {
        let idx = s * self.goal_count + g;
        if let Some(v) = self.values[idx] {
            return Ok(v);
        }
        let v = match self.model.distance(s, g, self.stat) {
            Ok(d) => Some(d),
            Err(Error::UnsupportedPair { .. }) => None,
            Err(e) => return Err(e),
        };
        self.values[idx] = Some(v);
        Ok(v)
    }
}

/// Per-sample weights with unsupported-query bookkeeping.
struct Weigher<'a> {
    binning: BinningConfig,
    cache: Option<(DistanceCache<'a>, f64, f64)>,
    unsupported: usize,
}

impl<'a> Weigher<'a> {
    fn new(spec: &MdpSpec, binning: BinningConfig, weighting: Weighting<'a>) -> Result<Self> {
        let cache = match weighting {
            Weighting::Unit => None,
            Weighting::Distance { model, stat, beta, clip } => {
                if model.binning() != &binning {
                    return Err(Error::domain("distance model was fitted with a different binning"));
                }
                if !(beta > 0.0) || !(clip >= 1.0) {
                    return Err(Error::domain("weights need beta > 0 and clip >= 1"));
                }
                Some((DistanceCache::new(spec, model, stat), beta, clip))
            }
        };
        Ok(Self {
            binning,
            cache,
            unsupported: 0,
        })
    }

    fn weight(&mut self, spec: &MdpSpec, s: State, s_next: State, g: Goal) -> Result<f64> {
        let Some((cache, beta, clip)) = self.cache.as_mut() else {
            return Ok(1.0);
        };
        let adv = match (cache.get(s, g)?, cache.get(s_next, g)?) {
            (Some(d_cur), Some(d_next)) => advantage(spec, &self.binning, d_cur, d_next, s_next, g),
            _ => {
                self.unsupported += 1;
                0.0
            }
        };
        Ok(weight(adv, *beta, *clip))
    }
}

#[derive(Debug, Clone)]
pub struct PolicyFit {
    pub policy: PolicyModel,
    /// Training samples whose distance query hit an unsupported pair; their
    /// advantage was taken as 0.
    pub unsupported_queries: usize,
}

/// Exact weighted maximum likelihood over every relabeled pair, each
/// weighted by its sampler probability.
pub fn train_tabular(spec: &MdpSpec, dataset: &Dataset, binning: &BinningConfig, weighting: Weighting) -> Result<PolicyFit> {
    if dataset.is_empty() {
        return Err(Error::domain("policy training on an empty dataset"));
    }
    let mut weigher = Weigher::new(spec, *binning, weighting)?;
    let (num_actions, goal_count) = (spec.num_actions(), spec.goal_count());
    let horizon = dataset.horizon();
    let mut mass: Vec<Option<Vec<f64>>> = vec![None; spec.num_states() * goal_count];
    for traj in &dataset.trajectories {
        for i in 0..horizon {
            let (s, a, s_next) = (traj.states[i], traj.actions[i], traj.states[i + 1]);
            let p = pair_probability(horizon, i);
            for j in i + 1..=horizon {
                let g = spec.phi(traj.states[j]);
                let w = weigher.weight(spec, s, s_next, g)?;
                mass[s * goal_count + g].get_or_insert_with(|| vec![0.0; num_actions])[a] += p * w;
            }
        }
    }
    let rows = mass
        .into_iter()
        .map(|row| {
            row.map(|r| {
                let total: f64 = r.iter().sum();
                r.into_iter().map(|m| m / total).collect()
            })
        })
        .collect();
    Ok(PolicyFit {
        policy: PolicyModel::Tabular {
            num_actions,
            goal_count,
            rows,
        },
        unsupported_queries: weigher.unsupported,
    })
}

/// Minibatch trainer for the MLP policy; stepping is exposed so callers can
/// evaluate between chunks.
pub struct MlpPolicyTrainer<'a> {
    spec: &'a MdpSpec,
    dataset: &'a Dataset,
    binning: BinningConfig,
    weigher: Weigher<'a>,
    settings: TrainSettings,
    features: StateFeatures,
    net: Mlp,
    adam: AdamState,
    rng: ChaCha8Rng,
    steps_done: usize,
}

impl<'a> MlpPolicyTrainer<'a> {
    pub fn new(
        spec: &'a MdpSpec,
        dataset: &'a Dataset,
        binning: &BinningConfig,
        weighting: Weighting<'a>,
        settings: &TrainSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if dataset.is_empty() {
            return Err(Error::domain("policy training on an empty dataset"));
        }
        let features = spec.features(settings.features);
        let net = Mlp::new(
            &settings.layer_sizes(features.input_dim(), spec.num_actions()),
            settings.seed.wrapping_add(1),
        )?;
        Ok(Self {
            spec,
            dataset,
            binning: *binning,
            weigher: Weigher::new(spec, *binning, weighting)?,
            adam: AdamState::new(net.num_params(), settings.lr),
            settings: settings.clone(),
            features,
            net,
            rng: ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(0xac7)),
            steps_done: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn unsupported_queries(&self) -> usize {
        self.weigher.unsupported
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        let scale = 1.0 / self.settings.batch as f64;
        let num_actions = self.spec.num_actions();
        for _ in 0..steps {
            let batch = sample_batch(self.spec, self.dataset, &self.binning, self.settings.batch, &mut self.rng)?;
            let mut grad = vec![0.0; self.net.num_params()];
            let mut loss = 0.0;
            for sample in &batch {
                let w = self.weigher.weight(self.spec, sample.state, sample.next_state, sample.goal)?;
                let x = self.features.input(sample.state, sample.goal);
                let logits = self.net.forward(&x)?;
                let mut target = vec![0.0; num_actions];
                target[sample.action] = 1.0;
                let (l, mut upstream) = soft_cross_entropy(&logits, &target);
                loss += w * l;
                upstream.iter_mut().for_each(|u| *u *= w * scale);
                self.net.accumulate_gradient(&x, &upstream, &mut grad);
            }
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: self.steps_done,
                    msg: format!("non-finite policy loss {loss}"),
                });
            }
            self.adam.update(self.net.params_mut(), &grad);
            self.steps_done += 1;
        }
        Ok(())
    }

    pub fn policy(&self) -> PolicyModel {
        PolicyModel::Mlp {
            net: self.net.clone(),
            feature_kind: self.settings.features,
            features: self.features.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyBackend {
    Tabular,
    Mlp,
}

fn train_with(
    spec: &MdpSpec,
    dataset: &Dataset,
    binning: &BinningConfig,
    weighting: Weighting,
    cfg: &TrainConfig,
    backend: PolicyBackend,
) -> Result<PolicyFit> {
    cfg.validate()?;
    match backend {
        PolicyBackend::Tabular => train_tabular(spec, dataset, binning, weighting),
        PolicyBackend::Mlp => {
            let mut trainer = MlpPolicyTrainer::new(spec, dataset, binning, weighting, &cfg.net)?;
            trainer.run(cfg.net.steps)?;
            Ok(PolicyFit {
                policy: trainer.policy(),
                unsupported_queries: trainer.unsupported_queries(),
            })
        }
    }
}

/// Soft-min distance weighting.
pub fn train_dwsl(
    spec: &MdpSpec,
    dataset: &Dataset,
    distance: &DistanceModel,
    cfg: &TrainConfig,
    backend: PolicyBackend,
) -> Result<PolicyFit> {
    train_with(spec, dataset, distance.binning(), Weighting::dwsl(distance, cfg), cfg, backend)
}

/// Unit weights.
pub fn train_gcsl(
    spec: &MdpSpec,
    dataset: &Dataset,
    binning: &BinningConfig,
    cfg: &TrainConfig,
    backend: PolicyBackend,
) -> Result<PolicyFit> {
    train_with(spec, dataset, binning, Weighting::Unit, cfg, backend)
}

/// Mean-distance weighting.
pub fn train_awr_variant(
    spec: &MdpSpec,
    dataset: &Dataset,
    distance: &DistanceModel,
    cfg: &TrainConfig,
    backend: PolicyBackend,
) -> Result<PolicyFit> {
    train_with(spec, dataset, distance.binning(), Weighting::awr(distance, cfg), cfg, backend)
}

/// Settings of the bootstrapped distance learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub target_period: usize,
    pub polyak: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            target_period: 20,
            polyak: 0.05,
        }
    }
}

/// Bootstrap target: point mass at bin 0 when `s_next` achieves `g`, else
/// the target distribution at `(s_next, g)` shifted up one bin, with the
/// overflow kept in the last bin.
pub fn shifted_target(next: &[f64], reached: bool) -> Vec<f64> {
    let bins = next.len();
    let mut target = vec![0.0; bins];
    if reached {
        target[0] = 1.0;
        return target;
    }
    for (b, &p) in next.iter().enumerate() {
        target[(b + 1).min(bins - 1)] += p;
    }
    target
}

/// Distance classifier trained by distributional bootstrapping against a
/// Polyak-averaged target network. Requires unit bins.
pub fn train_dwsl_b(
    spec: &MdpSpec,
    dataset: &Dataset,
    binning: &BinningConfig,
    settings: &TrainSettings,
    bootstrap: &BootstrapSettings,
) -> Result<DistanceModel> {
    settings.validate()?;
    if binning.n_step() != 1 {
        return Err(Error::Config("bootstrapped distances require n_step = 1".into()));
    }
    if bootstrap.target_period == 0 || !(bootstrap.polyak > 0.0 && bootstrap.polyak <= 1.0) {
        return Err(Error::Config("target_period must be positive and polyak in (0, 1]".into()));
    }
    let features = spec.features(settings.features);
    let model = init_classifier(spec, binning, settings)?;
    let DistanceBackend::Classifier(init) = model.backend() else {
        unreachable!()
    };
    let mut online = init.clone();
    let mut target = online.clone();
    let mut adam = AdamState::new(online.num_params(), settings.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(0xb007));
    let scale = 1.0 / settings.batch as f64;
    for step in 0..settings.steps {
        let batch = sample_batch(spec, dataset, binning, settings.batch, &mut rng)?;
        let mut grad = vec![0.0; online.num_params()];
        let mut loss = 0.0;
        for sample in &batch {
            let reached = spec.phi(sample.next_state) == sample.goal;
            let next = if reached {
                Vec::new()
            } else {
                softmax(&target.forward(&features.input(sample.next_state, sample.goal))?)
            };
            let y = if reached {
                shifted_target(&vec![0.0; binning.bins()], true)
            } else {
                shifted_target(&next, false)
            };
            let x = features.input(sample.state, sample.goal);
            let (l, mut upstream) = soft_cross_entropy(&online.forward(&x)?, &y);
            loss += l;
            upstream.iter_mut().for_each(|u| *u *= scale);
            online.accumulate_gradient(&x, &upstream, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                msg: format!("non-finite bootstrap loss {loss}"),
            });
        }
        adam.update(online.params_mut(), &grad);
        if (step + 1) % bootstrap.target_period == 0 {
            target.polyak_from(&online, bootstrap.polyak);
        }
    }
    DistanceModel::from_classifier(*binning, online, spec, settings.features)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
enum PolicyRecord {
    Tabular {
        num_actions: usize,
        goal_count: usize,
        rows: Vec<Option<Vec<f64>>>,
    },
    Mlp {
        net: Mlp,
        features: FeatureKind,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyCheckpoint {
    format_version: u32,
    kind: String,
    env_id: String,
    horizon: usize,
    #[serde(flatten)]
    model: PolicyRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

impl PolicyModel {
    pub fn to_checkpoint(&self, spec: &MdpSpec, provenance: Option<serde_json::Value>) -> String {
        let model = match self {
            PolicyModel::Tabular {
                num_actions,
                goal_count,
                rows,
            } => PolicyRecord::Tabular {
                num_actions: *num_actions,
                goal_count: *goal_count,
                rows: rows.clone(),
            },
            PolicyModel::Mlp { net, feature_kind, .. } => PolicyRecord::Mlp {
                net: net.clone(),
                features: *feature_kind,
            },
        };
        let record = PolicyCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "policy".into(),
            env_id: spec.env_id().to_string(),
            horizon: spec.horizon(),
            model,
            provenance,
        };
        serde_json::to_string(&record).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>, spec: &MdpSpec, provenance: Option<serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint(spec, provenance) + "\n").map_err(|e| Error::io(path, e))
    }

    /// Load a checkpoint; returns the model, its environment, and the
    /// embedded provenance record.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, MdpSpec, Option<serde_json::Value>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text).map_err(|e| match e {
            Error::Format { line, msg, .. } => Error::format(path, line, msg),
            other => other,
        })
    }

    pub fn from_checkpoint(text: &str) -> Result<(Self, MdpSpec, Option<serde_json::Value>)> {
        let bad = |msg: String| Error::format("<checkpoint>", 1, msg);
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if raw.get("format_version").and_then(serde_json::Value::as_u64) != Some(u64::from(CHECKPOINT_FORMAT_VERSION)) {
            return Err(bad("unsupported policy checkpoint version".into()));
        }
        let record: PolicyCheckpoint = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
        if record.kind != "policy" {
            return Err(bad(format!("expected a policy checkpoint, found `{}`", record.kind)));
        }
        let spec = mdp::resolve_with_horizon(&record.env_id, Some(record.horizon))?;
        let model = match record.model {
            PolicyRecord::Tabular {
                num_actions,
                goal_count,
                rows,
            } => {
                if num_actions != spec.num_actions()
                    || goal_count != spec.goal_count()
                    || rows.len() != spec.num_states() * goal_count
                {
                    return Err(bad("tabular policy shape does not match its environment".into()));
                }
                PolicyModel::Tabular {
                    num_actions,
                    goal_count,
                    rows,
                }
            }
            PolicyRecord::Mlp { net, features } => {
                let f = spec.features(features);
                if net.input_dim() != f.input_dim() || net.output_dim() != spec.num_actions() {
                    return Err(bad("policy network shape does not match its environment".into()));
                }
                PolicyModel::Mlp {
                    net,
                    feature_kind: features,
                    features: f,
                }
            }
        };
        Ok((model, spec, record.provenance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Trajectory;
    use crate::distance::fit_tabular;
    use crate::mdp::resolve;
    use crate::numerics::total_variation;

    fn scripted(spec: &MdpSpec, trajs: Vec<Vec<State>>) -> Dataset {
        let trajectories = trajs
            .into_iter()
            .map(|states| {
                let actions = states
                    .windows(2)
                    .map(|w| (0..spec.num_actions()).find(|&a| spec.next(w[0], a) == w[1]).unwrap())
                    .collect();
                Trajectory { states, actions }
            })
            .collect();
        Dataset::from_trajectories(spec, "scripted", trajectories).unwrap()
    }

    fn rows(policy: &PolicyModel) -> &[Option<Vec<f64>>] {
        match policy {
            PolicyModel::Tabular { rows, .. } => rows,
            _ => panic!("tabular expected"),
        }
    }

    #[test]
    fn advantage_examples() {
        let spec = resolve("chain-5").unwrap();
        let b = BinningConfig::new(10, 1).unwrap();
        assert!(advantage(&spec, &b, 0.3, 0.2, 2, 4).abs() < 1e-15);
        assert_eq!(advantage(&spec, &b, 0.1, 0.1, 4, 4), 0.0);
        assert!((advantage(&spec, &b, 0.3, 0.3, 2, 4) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight(0.0, 0.05, 10.0), 1.0);
        assert!((weight(-1.0 / 50.0, 0.05, 10.0) - 0.6703).abs() < 1e-4);
        assert_eq!(weight(5.0, 0.05, 10.0), 10.0);
        assert!(weight(-0.5, 0.05, 10.0) > 0.0);
    }

    #[test]
    fn greedy_tie_break_and_fallback() {
        assert_eq!(greedy_action(&[0.2, 0.2, 0.2, 0.2, 0.2]), 0);
        assert_eq!(greedy_action(&[0.0, 1.0, 0.0]), 1);
        let policy = PolicyModel::Tabular {
            num_actions: 3,
            goal_count: 2,
            rows: vec![Some(vec![0.0, 0.0, 1.0]), None],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(policy.act(0, 0, ActMode::Greedy, &mut rng), (2, false));
        assert_eq!(policy.act(0, 0, ActMode::Sample, &mut rng), (2, false));
        assert!(policy.act(0, 1, ActMode::Greedy, &mut rng).1);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let policy = PolicyModel::Tabular {
            num_actions: 3,
            goal_count: 1,
            rows: vec![Some(vec![0.2, 0.3, 0.5])],
        };
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| policy.act(0, 0, ActMode::Sample, &mut rng).0).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn gcsl_is_empirical_relabeled_frequency() {
        let spec = resolve("chain-5").unwrap().with_horizon(3).unwrap();
        let data = scripted(&spec, vec![vec![0, 1, 2, 3], vec![0, 0, 1, 2]]);
        let b = BinningConfig::new(3, 1).unwrap();
        let fit = train_gcsl(&spec, &data, &b, &TrainConfig::default(), PolicyBackend::Tabular).unwrap();
        // (0, goal 2): trajectory 1 contributes right at i=0 (mass 1/9);
        // trajectory 2 contributes left at i=0 (1/9) and right at i=1 (1/6).
        let row = fit.policy.probs(0, 2).unwrap();
        let total = 1.0 / 9.0 + 1.0 / 9.0 + 1.0 / 6.0;
        assert!((row[0] - (1.0 / 9.0) / total).abs() < 1e-12);
        assert!((row[1] - (1.0 / 9.0 + 1.0 / 6.0) / total).abs() < 1e-12);
        assert_eq!(row[2], 0.0);
        assert!(fit.policy.probs(3, 0).is_none());
    }

    #[test]
    fn optimal_only_data_gives_gcsl() {
        let spec = resolve("chain-5").unwrap().with_horizon(4).unwrap();
        let data = scripted(&spec, vec![vec![0, 1, 2, 3, 4]]);
        let b = BinningConfig::new(4, 1).unwrap();
        let distance = fit_tabular(&spec, &data, &b).unwrap();
        let cfg = TrainConfig::default();
        let dwsl = train_dwsl(&spec, &data, &distance, &cfg, PolicyBackend::Tabular).unwrap();
        let gcsl = train_gcsl(&spec, &data, &b, &cfg, PolicyBackend::Tabular).unwrap();
        for (x, y) in rows(&dwsl.policy).iter().zip(rows(&gcsl.policy)) {
            assert_eq!(x.is_some(), y.is_some());
            if let (Some(x), Some(y)) = (x, y) {
                assert!(total_variation(x, y) < 1e-12);
            }
        }
    }

    #[test]
    fn small_beta_prefers_shortcut() {
        // Two routes from 1 to 3: direct, and via a detour back to 0.
        let spec = resolve("chain-5").unwrap().with_horizon(4).unwrap();
        let data = scripted(&spec, vec![vec![1, 2, 3, 3, 3], vec![1, 0, 1, 2, 3]]);
        let b = BinningConfig::new(4, 1).unwrap();
        let distance = fit_tabular(&spec, &data, &b).unwrap();
        let cfg = TrainConfig {
            alpha: 0.01,
            beta: 0.005,
            clip: f64::INFINITY,
            ..TrainConfig::default()
        };
        let dwsl = train_dwsl(&spec, &data, &distance, &cfg, PolicyBackend::Tabular).unwrap();
        let row = dwsl.policy.probs(1, 3).unwrap();
        assert!(row[1] > 0.999, "{row:?}");
        let gcsl = train_gcsl(&spec, &data, &b, &cfg, PolicyBackend::Tabular).unwrap();
        assert!(gcsl.policy.probs(1, 3).unwrap()[0] > 0.1);
    }

    #[test]
    fn large_beta_recovers_gcsl() {
        let spec = resolve("chain-5").unwrap().with_horizon(4).unwrap();
        let data = scripted(&spec, vec![vec![1, 2, 3, 3, 3], vec![1, 0, 1, 2, 3], vec![4, 3, 3, 2, 1]]);
        let b = BinningConfig::new(4, 1).unwrap();
        let distance = fit_tabular(&spec, &data, &b).unwrap();
        let cfg = TrainConfig {
            beta: 1e12,
            ..TrainConfig::default()
        };
        let gcsl = train_gcsl(&spec, &data, &b, &cfg, PolicyBackend::Tabular).unwrap();
        for other in [
            train_dwsl(&spec, &data, &distance, &cfg, PolicyBackend::Tabular).unwrap(),
            train_awr_variant(&spec, &data, &distance, &cfg, PolicyBackend::Tabular).unwrap(),
        ] {
            for (x, y) in rows(&other.policy).iter().zip(rows(&gcsl.policy)) {
                if let (Some(x), Some(y)) = (x, y) {
                    assert!(total_variation(x, y) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn unsupported_successors_are_counted() {
        let spec = resolve("chain-5").unwrap().with_horizon(2).unwrap();
        let data = scripted(&spec, vec![vec![0, 1, 2]]);
        let b = BinningConfig::new(2, 1).unwrap();
        let distance = fit_tabular(&spec, &data, &b).unwrap();
        let fit = train_dwsl(&spec, &data, &distance, &TrainConfig::default(), PolicyBackend::Tabular).unwrap();
        // (2, goal 2) is never a relabeled pair: the last transition's
        // successor query is unsupported.
        assert_eq!(fit.unsupported_queries, 2);
    }

    #[test]
    fn bootstrap_target_shift() {
        assert_eq!(shifted_target(&[0.2, 0.3, 0.5], true), vec![1.0, 0.0, 0.0]);
        assert_eq!(shifted_target(&[0.2, 0.3, 0.5], false), vec![0.0, 0.2, 0.8]);
    }

    #[test]
    fn dwsl_b_rejects_coarse_bins() {
        let spec = resolve("chain-5").unwrap().with_horizon(4).unwrap();
        let data = scripted(&spec, vec![vec![0, 1, 2, 3, 4]]);
        let b = BinningConfig::new(4, 2).unwrap();
        let err = train_dwsl_b(&spec, &data, &b, &TrainSettings::default(), &BootstrapSettings::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            clip: 0.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            beta: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = resolve("chain-5").unwrap().with_horizon(4).unwrap();
        let data = scripted(&spec, vec![vec![0, 1, 2, 3, 4]]);
        let b = BinningConfig::new(4, 1).unwrap();
        let fit = train_gcsl(&spec, &data, &b, &TrainConfig::default(), PolicyBackend::Tabular).unwrap();
        let (loaded, _, prov) = PolicyModel::from_checkpoint(&fit.policy.to_checkpoint(&spec, None)).unwrap();
        assert!(prov.is_none());
        assert_eq!(rows(&loaded), rows(&fit.policy));

        let cfg = TrainConfig {
            net: TrainSettings {
                steps: 5,
                batch: 8,
                hidden: vec![6],
                ..TrainSettings::default()
            },
            ..TrainConfig::default()
        };
        let mlp = train_gcsl(&spec, &data, &b, &cfg, PolicyBackend::Mlp).unwrap();
        let prov = serde_json::json!({"seed": 3});
        let (loaded, _, p) = PolicyModel::from_checkpoint(&mlp.policy.to_checkpoint(&spec, Some(prov.clone()))).unwrap();
        assert_eq!(p, Some(prov));
        assert_eq!(loaded.probs(1, 3), mlp.policy.probs(1, 3));
    }
}
