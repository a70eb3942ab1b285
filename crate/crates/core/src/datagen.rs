//! Scripted behavior policies, offline trajectory collection, and the
//! line-delimited dataset file.
//!
//! A dataset file is UTF-8 JSON Lines: line 1 is a [`DatasetHeader`] record,
//! each following line one `{"states": [...], "actions": [...]}` record.
//! Commanded goals are used only while collecting and never stored.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, Action, DistanceTable, Goal, MdpSpec, State};
use crate::numerics::percentile_sorted;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `T + 1` visited states.
    pub states: Vec<State>,
    /// `T` actions; `states[t + 1] = f(states[t], actions[t])`.
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn replays(&self, spec: &MdpSpec) -> bool {
        self.states.len() == self.actions.len() + 1
            && self
                .actions
                .iter()
                .enumerate()
                .all(|(t, &a)| spec.step(self.states[t], a).ok() == Some(self.states[t + 1]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub env_id: String,
    pub horizon: usize,
    pub num_trajectories: usize,
    pub behavior: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// The registry environment this dataset was collected in, at the
    /// dataset's horizon.
    pub fn spec(&self) -> Result<MdpSpec> {
        mdp::resolve_with_horizon(&self.header.env_id, Some(self.header.horizon))
    }

    pub fn horizon(&self) -> usize {
        self.header.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    /// Build a dataset from hand-written trajectories (all of one length).
    pub fn from_trajectories(spec: &MdpSpec, behavior: &str, trajectories: Vec<Trajectory>) -> Result<Self> {
        let horizon = trajectories
            .first()
            .map(Trajectory::horizon)
            .ok_or_else(|| Error::domain("dataset needs at least one trajectory"))?;
        for (i, traj) in trajectories.iter().enumerate() {
            if traj.horizon() != horizon || horizon == 0 {
                return Err(Error::domain(format!("trajectory {i} has a different length")));
            }
            if !traj.replays(spec) {
                return Err(Error::domain(format!("trajectory {i} does not replay")));
            }
        }
        Ok(Self {
            header: DatasetHeader {
                format_version: DATASET_FORMAT_VERSION,
                env_id: spec.env_id().to_string(),
                horizon,
                num_trajectories: trajectories.len(),
                behavior: behavior.to_string(),
                seed: 0,
            },
            trajectories,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorKind {
    Random,
    /// Shortest-path action with probability `1 - epsilon`, else uniform;
    /// always the stationary action once the goal is achieved.
    NoisyExpert { epsilon: f64 },
    /// A `random_fraction` share of episodes are [`BehaviorKind::Random`],
    /// the rest noisy-expert.
    Mixture { random_fraction: f64, epsilon: f64 },
}

impl BehaviorKind {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} = {v} outside [0, 1]")))
            }
        };
        match *self {
            BehaviorKind::Random => Ok(()),
            BehaviorKind::NoisyExpert { epsilon } => unit(epsilon, "epsilon"),
            BehaviorKind::Mixture {
                random_fraction,
                epsilon,
            } => unit(random_fraction, "rho").and(unit(epsilon, "epsilon")),
        }
    }

    /// Whether the induced goal-conditioned behavior stays at achieved goals.
    pub fn is_goal_persistent(&self) -> bool {
        match *self {
            BehaviorKind::NoisyExpert { .. } => true,
            BehaviorKind::Mixture { random_fraction, .. } => random_fraction == 0.0,
            BehaviorKind::Random => false,
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorKind::Random => write!(f, "random"),
            BehaviorKind::NoisyExpert { epsilon } => write!(f, "noisy_expert:{epsilon}"),
            BehaviorKind::Mixture {
                random_fraction,
                epsilon,
            } => write!(f, "mixture:{random_fraction}:{epsilon}"),
        }
    }
}

impl FromStr for BehaviorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::domain(format!("bad number `{v}` in behavior `{s}`")))
        };
        let kind = match parts.as_slice() {
            ["random"] => BehaviorKind::Random,
            ["noisy_expert", eps] => BehaviorKind::NoisyExpert { epsilon: num(eps)? },
            ["mixture", rho, eps] => BehaviorKind::Mixture {
                random_fraction: num(rho)?,
                epsilon: num(eps)?,
            },
            _ => {
                return Err(Error::domain(format!(
                    "unknown behavior `{s}` (expected random | noisy_expert:<eps> | mixture:<rho>:<eps>)"
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    Random,
    Expert,
}

#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    kind: BehaviorKind,
    seed: u64,
    num_actions: usize,
    stay_action: Action,
    goal_map: Vec<Goal>,
    distances: DistanceTable,
    optimal: Vec<Option<Action>>,
    goal_count: usize,
}

pub fn make_behavior_policy(spec: &MdpSpec, kind: BehaviorKind, seed: u64) -> Result<BehaviorPolicy> {
    kind.validate()?;
    let distances = DistanceTable::new(spec);
    let mut optimal = Vec::with_capacity(spec.num_states() * spec.goal_count());
    for s in 0..spec.num_states() {
        for g in 0..spec.goal_count() {
            optimal.push(distances.optimal_action(spec, s, g));
        }
    }
    Ok(BehaviorPolicy {
        kind,
        seed,
        num_actions: spec.num_actions(),
        stay_action: spec.stay_action(),
        goal_map: (0..spec.num_states()).map(|s| spec.phi(s)).collect(),
        distances,
        optimal,
        goal_count: spec.goal_count(),
    })
}

impl BehaviorPolicy {
    pub fn kind(&self) -> BehaviorKind {
        self.kind
    }

    pub fn distances(&self) -> &DistanceTable {
        &self.distances
    }

    /// Per-episode modes for `num_traj` episodes. Mixtures mark exactly
    /// `round(rho * num_traj)` episodes random, chosen by a seeded shuffle.
    pub fn episode_modes(&self, num_traj: usize) -> Vec<EpisodeMode> {
        match self.kind {
            BehaviorKind::Random => vec![EpisodeMode::Random; num_traj],
            BehaviorKind::NoisyExpert { .. } => vec![EpisodeMode::Expert; num_traj],
            BehaviorKind::Mixture { random_fraction, .. } => {
                let num_random = (random_fraction * num_traj as f64).round() as usize;
                let mut modes: Vec<EpisodeMode> = (0..num_traj)
                    .map(|i| if i < num_random { EpisodeMode::Random } else { EpisodeMode::Expert })
                    .collect();
                modes.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
                modes
            }
        }
    }

    fn epsilon(&self) -> f64 {
        match self.kind {
            BehaviorKind::Random => 1.0,
            BehaviorKind::NoisyExpert { epsilon } | BehaviorKind::Mixture { epsilon, .. } => epsilon,
        }
    }

    /// Action distribution in a given episode mode toward commanded goal `g`.
    pub fn action_probs(&self, s: State, g: Goal, mode: EpisodeMode) -> Vec<f64> {
        let uniform = vec![1.0 / self.num_actions as f64; self.num_actions];
        if mode == EpisodeMode::Random {
            return uniform;
        }
        if self.goal_map[s] == g {
            let mut probs = vec![0.0; self.num_actions];
            probs[self.stay_action] = 1.0;
            return probs;
        }
        let Some(best) = self.optimal[s * self.goal_count + g] else {
            return uniform;
        };
        let eps = self.epsilon();
        let mut probs: Vec<f64> = uniform.iter().map(|u| eps * u).collect();
        probs[best] += 1.0 - eps;
        probs
    }

    /// The Markov goal-conditioned law of this behavior: per-step mixture of
    /// the episode modes. Exact for random and noisy-expert behaviors.
    pub fn markov_probs(&self, s: State, g: Goal) -> Vec<f64> {
        match self.kind {
            BehaviorKind::Random => self.action_probs(s, g, EpisodeMode::Random),
            BehaviorKind::NoisyExpert { .. } => self.action_probs(s, g, EpisodeMode::Expert),
            BehaviorKind::Mixture { random_fraction, .. } => {
                let r = self.action_probs(s, g, EpisodeMode::Random);
                let e = self.action_probs(s, g, EpisodeMode::Expert);
                r.iter()
                    .zip(&e)
                    .map(|(a, b)| random_fraction * a + (1.0 - random_fraction) * b)
                    .collect()
            }
        }
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the total below u: take the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Where episode starts and commanded goals come from.
#[derive(Debug, Clone, Default)]
pub enum TaskSampler {
    /// Start uniform over the environment's start states, goal uniform over goals
    /// reachable from the start.
    #[default]
    Environment,
    /// Start uniform over `starts`, goal uniform over `goals`.
    Explicit { starts: Vec<State>, goals: Vec<Goal> },
}

pub fn collect_dataset(spec: &MdpSpec, policy: &BehaviorPolicy, num_traj: usize, seed: u64) -> Result<Dataset> {
    collect_dataset_with(spec, policy, num_traj, seed, &TaskSampler::Environment)
}

pub fn collect_dataset_with(
    spec: &MdpSpec,
    policy: &BehaviorPolicy,
    num_traj: usize,
    seed: u64,
    tasks: &TaskSampler,
) -> Result<Dataset> {
    if num_traj == 0 {
        return Err(Error::domain("num_traj must be at least 1"));
    }
    if let TaskSampler::Explicit { starts, goals } = tasks {
        if starts.is_empty() || goals.is_empty() {
            return Err(Error::domain("explicit task sampler needs starts and goals"));
        }
    }
    let modes = policy.episode_modes(num_traj);
    let trajectories = modes
        .iter()
        .enumerate()
        .map(|(idx, &mode)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
            let (start, goal) = match tasks {
                TaskSampler::Environment => {
                    let start = *spec.start_states().choose(&mut rng).expect("non-empty starts");
                    let goals = spec.reachable_goals(start);
                    (start, *goals.choose(&mut rng).expect("start reaches its own goal"))
                }
                TaskSampler::Explicit { starts, goals } => {
                    (*starts.choose(&mut rng).unwrap(), *goals.choose(&mut rng).unwrap())
                }
            };
            rollout_behavior(spec, policy, start, goal, mode, &mut rng)
        })
        .collect();
    Ok(Dataset {
        header: DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            env_id: spec.env_id().to_string(),
            horizon: spec.horizon(),
            num_trajectories: num_traj,
            behavior: policy.kind().to_string(),
            seed,
        },
        trajectories,
    })
}

fn rollout_behavior(
    spec: &MdpSpec,
    policy: &BehaviorPolicy,
    start: State,
    goal: Goal,
    mode: EpisodeMode,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut states = Vec::with_capacity(spec.horizon() + 1);
    let mut actions = Vec::with_capacity(spec.horizon());
    let mut s = start;
    states.push(s);
    for _ in 0..spec.horizon() {
        let a = sample_categorical(&policy.action_probs(s, goal, mode), rng);
        s = spec.next(s, a);
        actions.push(a);
        states.push(s);
    }
    Trajectory { states, actions }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
}

/// Per-trajectory return = number of steps `t` with `φ(s_{t+1}) = goal`.
pub fn dataset_stats(spec: &MdpSpec, dataset: &Dataset, goal: Goal) -> Result<ReturnStats> {
    if dataset.is_empty() {
        return Err(Error::domain("dataset_stats on an empty dataset"));
    }
    let mut returns: Vec<f64> = dataset
        .trajectories
        .iter()
        .map(|t| t.states[1..].iter().filter(|&&s| spec.phi(s) == goal).count() as f64)
        .collect();
    returns.sort_by(f64::total_cmp);
    Ok(ReturnStats {
        mean: returns.iter().sum::<f64>() / returns.len() as f64,
        median: percentile_sorted(&returns, 50.0),
        p75: percentile_sorted(&returns, 75.0),
        p90: percentile_sorted(&returns, 90.0),
    })
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&dataset.header).expect("header serializes"));
    out.push('\n');
    for traj in &dataset.trajectories {
        out.push_str(&serde_json::to_string(traj).expect("trajectory serializes"));
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let first = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "empty file, expected header"))?
        .map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::format(path, 1, format!("malformed header: {e}")))?;
    match raw.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(DATASET_FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::format(
                path,
                1,
                format!("unsupported format_version {v} (expected {DATASET_FORMAT_VERSION})"),
            ))
        }
        None => return Err(Error::format(path, 1, "header lacks format_version")),
    }
    let header: DatasetHeader =
        serde_json::from_value(raw).map_err(|e| Error::format(path, 1, format!("malformed header: {e}")))?;
    let spec = mdp::resolve_with_horizon(&header.env_id, Some(header.horizon))
        .map_err(|e| Error::format(path, 1, e.to_string()))?;

    let mut trajectories = Vec::with_capacity(header.num_trajectories);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if trajectories.len() == header.num_trajectories {
            return Err(Error::format(path, line_no, "more trajectory records than num_trajectories"));
        }
        let traj: Trajectory = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, line_no, format!("malformed trajectory record: {e}")))?;
        if traj.horizon() != header.horizon || traj.states.len() != header.horizon + 1 {
            return Err(Error::format(
                path,
                line_no,
                format!("trajectory length does not match horizon {}", header.horizon),
            ));
        }
        if traj.states.iter().any(|&s| s >= spec.num_states()) || traj.actions.iter().any(|&a| a >= spec.num_actions())
        {
            return Err(Error::format(path, line_no, "state or action id out of range"));
        }
        if !traj.replays(&spec) {
            return Err(Error::format(path, line_no, "trajectory does not replay under the environment"));
        }
        trajectories.push(traj);
    }
    if trajectories.len() != header.num_trajectories {
        return Err(Error::format(
            path,
            trajectories.len() + 2,
            format!(
                "truncated: expected {} trajectories, found {}",
                header.num_trajectories,
                trajectories.len()
            ),
        ));
    }
    Ok(Dataset { header, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::resolve;

    fn chain5() -> MdpSpec {
        resolve("chain-5").unwrap()
    }

    #[test]
    fn noisy_expert_probabilities() {
        let spec = chain5();
        let exact = make_behavior_policy(&spec, BehaviorKind::NoisyExpert { epsilon: 0.0 }, 0).unwrap();
        assert_eq!(exact.action_probs(3, 4, EpisodeMode::Expert), vec![0.0, 1.0, 0.0]);
        let full = make_behavior_policy(&spec, BehaviorKind::NoisyExpert { epsilon: 1.0 }, 0).unwrap();
        for p in full.action_probs(1, 4, EpisodeMode::Expert) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let noisy = make_behavior_policy(&spec, BehaviorKind::NoisyExpert { epsilon: 0.2 }, 0).unwrap();
        let p = noisy.action_probs(0, 4, EpisodeMode::Expert);
        assert!((p[1] - (0.8 + 0.2 / 3.0)).abs() < 1e-12);
        assert!((p[1] - 0.8667).abs() < 1e-4);
        // Stay at an achieved goal regardless of noise.
        assert_eq!(noisy.action_probs(4, 4, EpisodeMode::Expert), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_noise_levels_are_rejected() {
        let spec = chain5();
        assert!(make_behavior_policy(&spec, BehaviorKind::NoisyExpert { epsilon: 1.5 }, 0).is_err());
        assert!("mixture:-0.1:0.2".parse::<BehaviorKind>().is_err());
        assert!("expert".parse::<BehaviorKind>().is_err());
        assert_eq!(
            "mixture:0.9:0.2".parse::<BehaviorKind>().unwrap(),
            BehaviorKind::Mixture {
                random_fraction: 0.9,
                epsilon: 0.2
            }
        );
    }

    #[test]
    fn mixture_counts_are_exact() {
        let spec = resolve("four-rooms").unwrap();
        let policy = make_behavior_policy(
            &spec,
            BehaviorKind::Mixture {
                random_fraction: 0.9,
                epsilon: 0.2,
            },
            11,
        )
        .unwrap();
        let modes = policy.episode_modes(500);
        assert_eq!(modes.iter().filter(|&&m| m == EpisodeMode::Random).count(), 450);
        assert_eq!(modes.iter().filter(|&&m| m == EpisodeMode::Expert).count(), 50);
    }

    #[test]
    fn exact_expert_reaches_adjacent_goal_then_stays() {
        let spec = chain5().with_horizon(6).unwrap();
        let policy = make_behavior_policy(&spec, BehaviorKind::NoisyExpert { epsilon: 0.0 }, 0).unwrap();
        let tasks = TaskSampler::Explicit {
            starts: vec![2],
            goals: vec![3],
        };
        let data = collect_dataset_with(&spec, &policy, 1, 5, &tasks).unwrap();
        assert_eq!(data.trajectories[0].states, vec![2, 3, 3, 3, 3, 3, 3]);
        assert_eq!(data.trajectories[0].actions, vec![1, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn collected_trajectories_replay_and_persist_at_goals() {
        let spec = resolve("grid-4x4").unwrap();
        let policy = make_behavior_policy(&spec, BehaviorKind::NoisyExpert { epsilon: 0.0 }, 0).unwrap();
        let data = collect_dataset(&spec, &policy, 40, 3).unwrap();
        for traj in &data.trajectories {
            assert!(traj.replays(&spec));
            // Goal-persistence: once the trajectory stops moving it never moves again.
            if let Some(t) = traj.states.windows(2).position(|w| w[0] == w[1]) {
                assert!(traj.states[t..].iter().all(|&s| s == traj.states[t]));
            }
        }
    }

    #[test]
    fn stats_on_known_returns() {
        let spec = resolve("chain-5").unwrap();
        // At the goal (state 4) for the last 10 of 50 steps.
        let mut states = vec![0; 38];
        states.extend([1, 2, 3]);
        states.extend([4; 10]);
        let actions = states.windows(2).map(|w| if w[1] > w[0] { 1 } else { 2 }).collect();
        let traj = Trajectory { states, actions };
        let data = Dataset::from_trajectories(&spec, "scripted", vec![traj]).unwrap();
        let stats = dataset_stats(&spec, &data, 4).unwrap();
        assert_eq!(stats.mean, 10.0);
        assert_eq!(stats.median, 10.0);
        let none = dataset_stats(&spec, &data, 2).unwrap();
        assert_eq!(none.mean, 1.0);
    }

    #[test]
    fn stats_zero_when_goal_never_achieved() {
        let spec = chain5();
        let traj = Trajectory {
            states: vec![0, 0, 1, 0],
            actions: vec![2, 1, 0],
        };
        let data = Dataset::from_trajectories(&spec, "scripted", vec![traj]).unwrap();
        assert_eq!(
            dataset_stats(&spec, &data, 4).unwrap(),
            ReturnStats {
                mean: 0.0,
                median: 0.0,
                p75: 0.0,
                p90: 0.0
            }
        );
        let empty = Dataset {
            header: data.header.clone(),
            trajectories: vec![],
        };
        assert!(dataset_stats(&spec, &empty, 4).is_err());
    }
}
