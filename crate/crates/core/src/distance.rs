//! Distance-distribution models and the distance estimators built on them.
//!
//! A model maps `(state, goal)` to a categorical distribution over `B`
//! distance bins (tabular or MLP classifier), or directly to a scalar
//! distance (MLP regressor). Bin `b` covers distances `[bN + 1, (b + 1)N]`
//! and is represented by the normalized value `(b + 1) / B`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{self, FeatureKind, Goal, MdpSpec, State, StateFeatures};
use crate::nn::{expectile_loss, softmax_cross_entropy, AdamState, Mlp};
use crate::numerics::{softmax, weighted_logsumexp};
use crate::relabel::{pair_probability, sample_batch, BinningConfig, RelabeledSample};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// `-alpha * log Σ p_i exp(-v_i / alpha)`, evaluated in log space.
pub fn soft_min(probs: &[f64], values: &[f64], alpha: f64) -> f64 {
    let scaled: Vec<f64> = values.iter().map(|v| -v / alpha).collect();
    -alpha * weighted_logsumexp(probs, &scaled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistance {
    probs: Vec<f64>,
}

impl CategoricalDistance {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("distance distribution needs at least one bin"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalize non-negative masses.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("cannot normalize zero mass"));
        }
        Self::new(masses.iter().map(|m| m / total).collect())
    }

    pub fn point_mass(bins: usize, bin: usize) -> Self {
        let mut probs = vec![0.0; bins];
        probs[bin] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    /// Per-bin support flag (positive probability).
    pub fn support(&self) -> Vec<bool> {
        self.probs.iter().map(|&p| p > 0.0).collect()
    }

    pub fn min_support_bin(&self) -> usize {
        self.probs.iter().position(|&p| p > 0.0).expect("a distribution has support")
    }

    fn normalized_values(&self) -> Vec<f64> {
        let b = self.bins() as f64;
        (1..=self.bins()).map(|k| k as f64 / b).collect()
    }

    /// Soft minimum of the normalized bin values at temperature `alpha`.
    pub fn logsumexp_distance(&self, alpha: f64) -> f64 {
        soft_min(&self.probs, &self.normalized_values(), alpha)
    }

    /// Mean normalized distance.
    pub fn expectation_distance(&self) -> f64 {
        self.probs.iter().zip(self.normalized_values()).map(|(p, v)| p * v).sum()
    }
}

/// Discounting used when converting distances to returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnMap {
    pub gamma: f64,
    /// Remaining horizon; distances beyond `horizon + 1` are capped there.
    pub horizon: Option<usize>,
}

impl ReturnMap {
    pub fn new(gamma: f64, horizon: Option<usize>) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::domain(format!("gamma = {gamma} outside (0, 1]")));
        }
        if gamma == 1.0 && horizon.is_none() {
            return Err(Error::domain("gamma = 1 needs a finite horizon"));
        }
        Ok(Self { gamma, horizon })
    }
}

/// Return of a goal-persistent behavior that first achieves the goal after
/// `k` actions: `-(1 - γ^{k-1}) / (1 - γ)`, or `-(k - 1)` when `γ = 1`.
pub fn distance_to_return(k: usize, map: &ReturnMap) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("distance k must be at least 1"));
    }
    let k = match map.horizon {
        Some(h) => k.min(h + 1),
        None => k,
    };
    let steps = (k - 1) as i32;
    if map.gamma == 1.0 {
        Ok(-(steps as f64))
    } else {
        Ok(-(1.0 - map.gamma.powi(steps)) / (1.0 - map.gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegressionMode {
    Mse,
    /// Fits the `tau`-expectile of the negated distance, i.e. a soft minimum.
    Expectile { tau: f64 },
}

/// Statistic used to turn a model's output into one distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceStatistic {
    LogSumExp { alpha: f64 },
    Expectation,
    /// The scalar output of a regression model.
    Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDistance {
    num_states: usize,
    goal_count: usize,
    table: Vec<Option<CategoricalDistance>>,
}

impl TabularDistance {
    pub fn get(&self, s: State, g: Goal) -> Option<&CategoricalDistance> {
        self.table.get(s * self.goal_count + g).and_then(Option::as_ref)
    }

    pub fn supported_pairs(&self) -> impl Iterator<Item = (State, Goal)> + '_ {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_some())
            .map(|(idx, _)| (idx / self.goal_count, idx % self.goal_count))
    }

    pub fn len(&self) -> usize {
        self.table.iter().filter(|d| d.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub enum DistanceBackend {
    Tabular(TabularDistance),
    Classifier(Mlp),
    Regressor { net: Mlp, mode: RegressionMode },
}

#[derive(Debug, Clone)]
pub struct DistanceModel {
    binning: BinningConfig,
    backend: DistanceBackend,
    feature_kind: FeatureKind,
    features: Option<StateFeatures>,
}

/// Minibatch training settings shared by the MLP learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub features: FeatureKind,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 256,
            lr: 5e-4,
            seed: 0,
            hidden: vec![64, 64],
            features: FeatureKind::Coordinates,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(output);
        sizes
    }
}

impl DistanceModel {
    pub fn binning(&self) -> &BinningConfig {
        &self.binning
    }

    pub fn backend(&self) -> &DistanceBackend {
        &self.backend
    }

    pub fn backend_tag(&self) -> &'static str {
        match &self.backend {
            DistanceBackend::Tabular(_) => "tabular",
            DistanceBackend::Classifier(_) => "mlp-classifier",
            DistanceBackend::Regressor {
                mode: RegressionMode::Mse,
                ..
            } => "mlp-regressor",
            DistanceBackend::Regressor {
                mode: RegressionMode::Expectile { .. },
                ..
            } => "mlp-expectile",
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularDistance> {
        match &self.backend {
            DistanceBackend::Tabular(t) => Some(t),
            _ => None,
        }
    }

    /// Build a classifier-backed model from an already trained network.
    pub fn from_classifier(binning: BinningConfig, net: Mlp, spec: &MdpSpec, kind: FeatureKind) -> Result<Self> {
        let features = spec.features(kind);
        if net.input_dim() != features.input_dim() || net.output_dim() != binning.bins() {
            return Err(Error::domain("classifier shape does not match features and bins"));
        }
        Ok(Self {
            binning,
            backend: DistanceBackend::Classifier(net),
            feature_kind: kind,
            features: Some(features),
        })
    }

    fn mlp_input(&self, s: State, g: Goal) -> Vec<f64> {
        self.features.as_ref().expect("MLP models carry features").input(s, g)
    }

    /// Distance distribution `p(·|s, g)`.
    pub fn distribution(&self, s: State, g: Goal) -> Result<CategoricalDistance> {
        match &self.backend {
            DistanceBackend::Tabular(t) => t
                .get(s, g)
                .cloned()
                .ok_or(Error::UnsupportedPair { state: s, goal: g }),
            DistanceBackend::Classifier(net) => {
                let logits = net.forward(&self.mlp_input(s, g))?;
                Ok(CategoricalDistance { probs: softmax(&logits) })
            }
            DistanceBackend::Regressor { .. } => {
                Err(Error::domain("a regression model has no distance distribution"))
            }
        }
    }

    pub fn logsumexp_distance(&self, s: State, g: Goal, alpha: f64) -> Result<f64> {
        self.distance(s, g, DistanceStatistic::LogSumExp { alpha })
    }

    pub fn expectation_distance(&self, s: State, g: Goal) -> Result<f64> {
        self.distance(s, g, DistanceStatistic::Expectation)
    }

    pub fn distance(&self, s: State, g: Goal, stat: DistanceStatistic) -> Result<f64> {
        match (stat, &self.backend) {
            (DistanceStatistic::Point, DistanceBackend::Regressor { net, mode }) => {
                let pred = net.forward(&self.mlp_input(s, g))?[0];
                Ok(match mode {
                    RegressionMode::Mse => pred,
                    RegressionMode::Expectile { .. } => -pred,
                })
            }
            (DistanceStatistic::Point, _) => Err(Error::domain("point statistic needs a regression model")),
            (DistanceStatistic::LogSumExp { alpha }, _) => {
                if !(alpha > 0.0) {
                    return Err(Error::domain(format!("alpha = {alpha} must be positive")));
                }
                Ok(self.distribution(s, g)?.logsumexp_distance(alpha))
            }
            (DistanceStatistic::Expectation, _) => Ok(self.distribution(s, g)?.expectation_distance()),
        }
    }
}

/// Exact maximum-likelihood table: for each observed `(s, g)`, bin masses
/// are summed with the sampler's pair probability.
pub fn fit_tabular(spec: &MdpSpec, dataset: &Dataset, cfg: &BinningConfig) -> Result<DistanceModel> {
    if dataset.is_empty() {
        return Err(Error::domain("fit_tabular on an empty dataset"));
    }
    let horizon = dataset.horizon();
    let goal_count = spec.goal_count();
    let bins = cfg.bins();
    let mut masses: Vec<Option<Vec<f64>>> = vec![None; spec.num_states() * goal_count];
    for traj in &dataset.trajectories {
        for i in 0..horizon {
            let weight = pair_probability(horizon, i);
            let s = traj.states[i];
            for j in i + 1..=horizon {
                let g = spec.phi(traj.states[j]);
                let row = masses[s * goal_count + g].get_or_insert_with(|| vec![0.0; bins]);
                row[cfg.bin(j - i)] += weight;
            }
        }
    }
    let table = masses
        .into_iter()
        .map(|m| m.map(|row| CategoricalDistance::from_masses(&row)).transpose())
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceModel {
        binning: *cfg,
        backend: DistanceBackend::Tabular(TabularDistance {
            num_states: spec.num_states(),
            goal_count,
            table,
        }),
        feature_kind: FeatureKind::default(),
        features: None,
    })
}

/// Mean cross-entropy of a classifier on a batch of relabeled samples.
pub fn classifier_loss(model: &DistanceModel, samples: &[RelabeledSample]) -> Result<f64> {
    let DistanceBackend::Classifier(net) = &model.backend else {
        return Err(Error::domain("classifier_loss needs a classifier model"));
    };
    let mut total = 0.0;
    for sample in samples {
        let logits = net.forward(&model.mlp_input(sample.state, sample.goal))?;
        total += softmax_cross_entropy(&logits, sample.bin).0;
    }
    Ok(total / samples.len() as f64)
}

/// Untrained classifier with the settings' architecture and seed.
pub fn init_classifier(spec: &MdpSpec, cfg: &BinningConfig, train: &TrainSettings) -> Result<DistanceModel> {
    let features = spec.features(train.features);
    let net = Mlp::new(&train.layer_sizes(features.input_dim(), cfg.bins()), train.seed)?;
    Ok(DistanceModel {
        binning: *cfg,
        backend: DistanceBackend::Classifier(net),
        feature_kind: train.features,
        features: Some(features),
    })
}

/// Softmax classifier over distance bins trained by cross-entropy on
/// relabeled minibatches.
pub fn train_classifier(
    spec: &MdpSpec,
    dataset: &Dataset,
    cfg: &BinningConfig,
    train: &TrainSettings,
) -> Result<DistanceModel> {
    train.validate()?;
    let mut model = init_classifier(spec, cfg, train)?;
    let features = model.features.clone().expect("classifier features");
    let DistanceBackend::Classifier(net) = &mut model.backend else {
        unreachable!()
    };
    let mut adam = AdamState::new(net.num_params(), train.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_add(0x5eed));
    let scale = 1.0 / train.batch as f64;
    for step in 0..train.steps {
        let batch = sample_batch(spec, dataset, cfg, train.batch, &mut rng)?;
        let mut grad = vec![0.0; net.num_params()];
        let mut loss = 0.0;
        for sample in &batch {
            let x = features.input(sample.state, sample.goal);
            let logits = net.forward(&x)?;
            let (l, mut upstream) = softmax_cross_entropy(&logits, sample.bin);
            loss += l;
            upstream.iter_mut().for_each(|u| *u *= scale);
            net.accumulate_gradient(&x, &upstream, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                msg: format!("non-finite classifier loss {loss}"),
            });
        }
        adam.update(net.params_mut(), &grad);
    }
    Ok(model)
}

/// Scalar regressor on normalized distances: conditional mean (`Mse`) or
/// the upper expectile of the negated distance (`Expectile`).
pub fn train_regression(
    spec: &MdpSpec,
    dataset: &Dataset,
    cfg: &BinningConfig,
    train: &TrainSettings,
    mode: RegressionMode,
) -> Result<DistanceModel> {
    train.validate()?;
    if let RegressionMode::Expectile { tau } = mode {
        if !(tau > 0.5 && tau < 1.0) {
            return Err(Error::domain(format!("expectile tau = {tau} outside (0.5, 1)")));
        }
    }
    let features = spec.features(train.features);
    let mut net = Mlp::new(&train.layer_sizes(features.input_dim(), 1), train.seed)?;
    let mut adam = AdamState::new(net.num_params(), train.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed.wrapping_add(0x5eed));
    let scale = 1.0 / train.batch as f64;
    for step in 0..train.steps {
        let batch = sample_batch(spec, dataset, cfg, train.batch, &mut rng)?;
        let mut grad = vec![0.0; net.num_params()];
        let mut loss = 0.0;
        for sample in &batch {
            let x = features.input(sample.state, sample.goal);
            let pred = net.forward(&x)?[0];
            let distance = cfg.normalized(sample.bin);
            let (l, dpred) = match mode {
                RegressionMode::Mse => ((pred - distance).powi(2), 2.0 * (pred - distance)),
                RegressionMode::Expectile { tau } => expectile_loss(pred, -distance, tau),
            };
            loss += l;
            net.accumulate_gradient(&x, &[dpred * scale], &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                msg: format!("non-finite regression loss {loss}"),
            });
        }
        adam.update(net.params_mut(), &grad);
    }
    Ok(DistanceModel {
        binning: *cfg,
        backend: DistanceBackend::Regressor { net, mode },
        feature_kind: train.features,
        features: Some(features),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
enum BackendRecord {
    Tabular { table: TabularDistance },
    MlpClassifier { net: Mlp, features: FeatureKind },
    MlpRegressor { net: Mlp, features: FeatureKind, regression: RegressionMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DistanceCheckpoint {
    format_version: u32,
    kind: String,
    env_id: String,
    horizon: usize,
    n_step: usize,
    #[serde(flatten)]
    backend: BackendRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

impl DistanceModel {
    /// Versioned JSON checkpoint. `provenance` is embedded verbatim.
    pub fn to_checkpoint(&self, spec: &MdpSpec, provenance: Option<serde_json::Value>) -> String {
        let backend = match &self.backend {
            DistanceBackend::Tabular(table) => BackendRecord::Tabular { table: table.clone() },
            DistanceBackend::Classifier(net) => BackendRecord::MlpClassifier {
                net: net.clone(),
                features: self.feature_kind,
            },
            DistanceBackend::Regressor { net, mode } => BackendRecord::MlpRegressor {
                net: net.clone(),
                features: self.feature_kind,
                regression: *mode,
            },
        };
        let record = DistanceCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "distance".into(),
            env_id: spec.env_id().to_string(),
            horizon: spec.horizon(),
            n_step: self.binning.n_step(),
            backend,
            provenance,
        };
        serde_json::to_string(&record).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>, spec: &MdpSpec, provenance: Option<serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint(spec, provenance) + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, MdpSpec)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text).map_err(|e| match e {
            Error::Format { line, msg, .. } => Error::format(path, line, msg),
            other => other,
        })
    }

    pub fn from_checkpoint(text: &str) -> Result<(Self, MdpSpec)> {
        let bad = |msg: String| Error::format("<checkpoint>", 1, msg);
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if raw.get("format_version").and_then(serde_json::Value::as_u64) != Some(u64::from(CHECKPOINT_FORMAT_VERSION)) {
            return Err(bad("unsupported distance checkpoint version".into()));
        }
        let record: DistanceCheckpoint = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
        if record.kind != "distance" {
            return Err(bad(format!("expected a distance checkpoint, found `{}`", record.kind)));
        }
        let spec = mdp::resolve_with_horizon(&record.env_id, Some(record.horizon))?;
        let binning = BinningConfig::new(record.horizon, record.n_step)?;
        let (backend, feature_kind, features) = match record.backend {
            BackendRecord::Tabular { table } => (DistanceBackend::Tabular(table), FeatureKind::default(), None),
            BackendRecord::MlpClassifier { net, features } => {
                let f = spec.features(features);
                (DistanceBackend::Classifier(net), features, Some(f))
            }
            BackendRecord::MlpRegressor {
                net,
                features,
                regression,
            } => {
                let f = spec.features(features);
                (DistanceBackend::Regressor { net, mode: regression }, features, Some(f))
            }
        };
        Ok((
            Self {
                binning,
                backend,
                feature_kind,
                features,
            },
            spec,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Trajectory;
    use crate::mdp::resolve;

    fn dataset(spec: &MdpSpec, trajs: Vec<Vec<State>>) -> Dataset {
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

    #[test]
    fn stay_after_one_step_splits_mass_evenly() {
        let spec = resolve("chain-5").unwrap();
        let data = dataset(&spec, vec![vec![0, 1, 1]]);
        let cfg = BinningConfig::new(2, 1).unwrap();
        let model = fit_tabular(&spec, &data, &cfg).unwrap();
        let d = model.distribution(0, 1).unwrap();
        assert!((d.probs()[0] - 0.5).abs() < 1e-15 && (d.probs()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_three_step_reach_is_a_point_mass() {
        let spec = resolve("chain-5").unwrap();
        let data = dataset(&spec, vec![vec![0, 1, 2, 3], vec![1, 2, 3, 4]]);
        let cfg = BinningConfig::new(3, 1).unwrap();
        let model = fit_tabular(&spec, &data, &cfg).unwrap();
        assert_eq!(model.distribution(0, 3).unwrap().probs(), &[0.0, 0.0, 1.0]);
        assert!(matches!(
            model.distribution(3, 0),
            Err(Error::UnsupportedPair { state: 3, goal: 0 })
        ));
        assert!(model.logsumexp_distance(3, 0, 1.0).is_err());
    }

    #[test]
    fn soft_min_of_point_mass_is_exact() {
        for bin in 0..5 {
            let d = CategoricalDistance::point_mass(5, bin);
            for alpha in [1e-3, 0.1, 1.0, 10.0] {
                assert!((d.logsumexp_distance(alpha) - (bin + 1) as f64 / 5.0).abs() < 1e-12);
            }
            assert_eq!(d.expectation_distance(), (bin + 1) as f64 / 5.0);
        }
    }

    #[test]
    fn raw_two_point_soft_min() {
        let value = soft_min(&[0.5, 0.5], &[1.0, 3.0], 1.0);
        let direct = -(0.5 * (-1f64).exp() + 0.5 * (-3f64).exp()).ln();
        assert!((value - direct).abs() < 1e-14);
        assert!((value - 1.5663).abs() < 1e-4);
    }

    #[test]
    fn soft_min_limit_approaches_minimum() {
        let d = CategoricalDistance::new(vec![0.0, 0.3, 0.2, 0.5]).unwrap();
        let min = 0.5;
        for alpha in [1.0, 0.1, 1e-2, 1e-3, 1e-5] {
            let lse = d.logsumexp_distance(alpha);
            // Bounds: min-support value plus at most alpha * ln(1 / p_min).
            assert!(lse >= min - 1e-15);
            assert!(lse - min <= alpha * (1.0 / 0.3f64).ln() + 1e-15);
            assert!(lse <= d.expectation_distance() + 1e-15);
        }
        assert!((d.logsumexp_distance(1e-5) - min).abs() <= 1e-3);
        let heavy = CategoricalDistance::new(vec![0.5, 0.5]).unwrap();
        assert!((heavy.logsumexp_distance(1e-3) - 0.5).abs() <= 1e-3);
    }

    #[test]
    fn soft_min_is_monotone_in_alpha() {
        let d = CategoricalDistance::new(vec![0.1, 0.0, 0.4, 0.2, 0.3]).unwrap();
        let alphas = [1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 10.0];
        for w in alphas.windows(2) {
            assert!(d.logsumexp_distance(w[0]) <= d.logsumexp_distance(w[1]) + 1e-15);
        }
    }

    #[test]
    fn expectation_of_two_points() {
        let d = CategoricalDistance::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert!((d.expectation_distance() - 2.0 / 3.0).abs() < 1e-15);
        assert!(d.logsumexp_distance(1.0) <= d.expectation_distance());
    }

    #[test]
    fn soft_min_stable_at_extremes() {
        let mut probs = vec![1e-3; 1000];
        probs[999] = 1.0 - 999e-3;
        let d = CategoricalDistance::new(probs).unwrap();
        let v = d.logsumexp_distance(1e-4);
        assert!(v.is_finite());
        assert!((v - 1e-3).abs() < 1e-3);
    }

    #[test]
    fn returns_from_distances() {
        let inf = ReturnMap::new(0.9, None).unwrap();
        assert_eq!(distance_to_return(1, &inf).unwrap(), 0.0);
        assert!((distance_to_return(3, &inf).unwrap() + 1.9).abs() < 1e-12);
        assert!(distance_to_return(0, &inf).is_err());
        let g98 = ReturnMap::new(0.98, None).unwrap();
        for k in 1..=50 {
            assert!(distance_to_return(k, &g98).unwrap() > distance_to_return(k + 1, &g98).unwrap());
        }
        let finite = ReturnMap::new(1.0, Some(4)).unwrap();
        assert_eq!(distance_to_return(3, &finite).unwrap(), -2.0);
        assert_eq!(distance_to_return(9, &finite).unwrap(), -4.0);
        assert!(ReturnMap::new(1.0, None).is_err());
        assert!(ReturnMap::new(0.0, None).is_err());
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(CategoricalDistance::new(vec![0.5, 0.4]).is_err());
        assert!(CategoricalDistance::new(vec![1.5, -0.5]).is_err());
        assert!(CategoricalDistance::new(vec![]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = resolve("chain-5").unwrap().with_horizon(4).unwrap();
        let data = dataset(&spec, vec![vec![0, 1, 2, 3, 4]]);
        let cfg = BinningConfig::new(4, 1).unwrap();
        let model = fit_tabular(&spec, &data, &cfg).unwrap();
        let text = model.to_checkpoint(&spec, None);
        let (loaded, spec2) = DistanceModel::from_checkpoint(&text).unwrap();
        assert_eq!(spec2.horizon(), 4);
        assert_eq!(loaded.as_tabular(), model.as_tabular());

        let train = TrainSettings {
            steps: 3,
            batch: 4,
            hidden: vec![5],
            ..TrainSettings::default()
        };
        let net = train_classifier(&spec, &data, &cfg, &train).unwrap();
        let (loaded, _) = DistanceModel::from_checkpoint(&net.to_checkpoint(&spec, None)).unwrap();
        let (a, b) = (net.distribution(1, 3).unwrap(), loaded.distribution(1, 3).unwrap());
        assert!(a.probs().iter().zip(b.probs()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(DistanceModel::from_checkpoint(&text.replace("\"format_version\":1", "\"format_version\":7")).is_err());
    }
}
