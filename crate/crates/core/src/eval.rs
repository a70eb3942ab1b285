//! Policy rollouts, evaluation goals, success metrics and learning curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::mdp::{Goal, MdpSpec, State};
use crate::policy::{ActMode, Actor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStrategy {
    DatasetStates,
    AllReachable,
}

impl std::str::FromStr for GoalStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset_states" => Ok(GoalStrategy::DatasetStates),
            "all_reachable" => Ok(GoalStrategy::AllReachable),
            _ => Err(Error::domain(format!(
                "unknown goal strategy `{s}` (dataset_states | all_reachable)"
            ))),
        }
    }
}

/// Source of evaluation tasks.
#[derive(Debug, Clone, Copy)]
pub enum EvalTasks<'a> {
    /// Start uniform over start states, goal `φ(s)` for `s` uniform over all
    /// states in the dataset.
    DatasetStates(&'a Dataset),
    /// Start uniform over start states, goal uniform over goals reachable
    /// from the start.
    AllReachable,
    /// Start uniform over `starts`, goal uniform over `goals`.
    Explicit { starts: &'a [State], goals: &'a [Goal] },
}

pub fn sample_eval_goal(spec: &MdpSpec, tasks: &EvalTasks, rng: &mut ChaCha8Rng) -> Result<(State, Goal)> {
    match tasks {
        EvalTasks::DatasetStates(data) => {
            if data.is_empty() {
                return Err(Error::domain("goal sampling from an empty dataset"));
            }
            let start = *spec.start_states().choose(rng).expect("start states are non-empty");
            let traj = data.trajectories.choose(rng).expect("non-empty dataset");
            let s = *traj.states.choose(rng).expect("non-empty trajectory");
            Ok((start, spec.phi(s)))
        }
        EvalTasks::AllReachable => {
            let start = *spec.start_states().choose(rng).expect("start states are non-empty");
            let goals = spec.reachable_goals(start);
            let g = goals
                .choose(rng)
                .ok_or_else(|| Error::domain(format!("no goal reachable from {start}")))?;
            Ok((start, *g))
        }
        EvalTasks::Explicit { starts, goals } => {
            let start = *starts.choose(rng).ok_or_else(|| Error::domain("no explicit starts"))?;
            let goal = *goals.choose(rng).ok_or_else(|| Error::domain("no explicit goals"))?;
            Ok((start, goal))
        }
    }
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub goal: Goal,
    /// Smallest `t` in `0..=horizon` with `φ(s_t) = g`.
    pub first_hit: Option<usize>,
    /// Number of `t` in `0..horizon` with `φ(s_t) = g`.
    pub steps_at_goal: usize,
    pub fallbacks: usize,
}

impl Episode {
    pub fn success(&self) -> bool {
        self.first_hit.is_some()
    }
}

pub fn rollout(
    spec: &MdpSpec,
    actor: &dyn Actor,
    start: State,
    goal: Goal,
    horizon: usize,
    mode: ActMode,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    if start >= spec.num_states() || goal >= spec.goal_count() {
        return Err(Error::domain(format!("invalid start {start} or goal {goal}")));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut fallbacks = 0;
    let mut s = start;
    states.push(s);
    for t in 0..horizon {
        let (a, fell_back) = actor.act(t, s, goal, mode, rng);
        fallbacks += usize::from(fell_back);
        s = spec.next(s, a);
        actions.push(a);
        states.push(s);
    }
    let first_hit = states.iter().position(|&x| spec.phi(x) == goal);
    let steps_at_goal = states[..horizon].iter().filter(|&&x| spec.phi(x) == goal).count();
    Ok(Episode {
        trajectory: Trajectory { states, actions },
        goal,
        first_hit,
        steps_at_goal,
        fallbacks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_steps_at_goal: f64,
    /// Mean first-hit time over successful episodes; `None` without any.
    pub mean_first_hit: Option<f64>,
    pub fallback_count: usize,
    pub seed: u64,
    pub mode: ActMode,
}

/// Aggregate `episodes` rollouts. Episode `i` uses its own stream seeded
/// with `seed + i`, so the result is a pure function of the arguments.
pub fn evaluate(
    spec: &MdpSpec,
    actor: &dyn Actor,
    episodes: usize,
    tasks: &EvalTasks,
    mode: ActMode,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::domain("evaluation needs at least one episode"));
    }
    let (mut successes, mut at_goal, mut hit_sum, mut fallbacks) = (0usize, 0usize, 0usize, 0usize);
    for idx in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        let (start, goal) = sample_eval_goal(spec, tasks, &mut rng)?;
        let ep = rollout(spec, actor, start, goal, spec.horizon(), mode, &mut rng)?;
        if let Some(t) = ep.first_hit {
            successes += 1;
            hit_sum += t;
        }
        at_goal += ep.steps_at_goal;
        fallbacks += ep.fallbacks;
    }
    Ok(EvalReport {
        episodes,
        success_rate: successes as f64 / episodes as f64,
        mean_steps_at_goal: at_goal as f64 / episodes as f64,
        mean_first_hit: (successes > 0).then(|| hit_sum as f64 / successes as f64),
        fallback_count: fallbacks,
        seed,
        mode,
    })
}

pub const CURVE_HEADER: &str = "step,success_rate,mean_steps_at_goal,mean_first_hit,fallback_count";

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub success_rate: f64,
    pub mean_steps_at_goal: f64,
    pub mean_first_hit: Option<f64>,
    pub fallback_count: usize,
}

/// Curve file text: the header plus one row per evaluation point. Floats
/// use the shortest representation that parses back to the same value;
/// a missing first-hit mean is an empty field.
pub fn format_curves(history: &[(usize, EvalReport)]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (step, r) in history {
        let hit = r.mean_first_hit.map(|h| h.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{step},{},{},{hit},{}",
            r.success_rate, r.mean_steps_at_goal, r.fallback_count
        )
        .unwrap();
    }
    out
}

pub fn emit_curves(history: &[(usize, EvalReport)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_curves(history)).map_err(|e| Error::io(path, e))
}

pub fn parse_curves(text: &str) -> Result<Vec<CurvePoint>> {
    let src = "<curves>";
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::format(src, 1, "missing curve header"));
    }
    lines
        .enumerate()
        .map(|(idx, line)| {
            let line_no = idx + 2;
            let bad = |msg: &str| Error::format(src, line_no, msg);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let float = |f: &str| f.parse::<f64>().map_err(|_| bad("malformed number"));
            Ok(CurvePoint {
                step: fields[0].parse().map_err(|_| bad("malformed step"))?,
                success_rate: float(fields[1])?,
                mean_steps_at_goal: float(fields[2])?,
                mean_first_hit: if fields[3].is_empty() {
                    None
                } else {
                    Some(float(fields[3])?)
                },
                fallback_count: fields[4].parse().map_err(|_| bad("malformed count"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{resolve, DistanceTable};
    use crate::policy::PolicyModel;

    struct Optimal(DistanceTable, MdpSpec);

    impl Actor for Optimal {
        fn act(&self, _t: usize, s: State, g: Goal, _m: ActMode, _r: &mut ChaCha8Rng) -> (crate::mdp::Action, bool) {
            (self.0.optimal_action(&self.1, s, g).unwrap(), false)
        }
    }

    fn optimal(spec: &MdpSpec) -> Optimal {
        Optimal(DistanceTable::new(spec), spec.clone())
    }

    fn uniform(spec: &MdpSpec) -> PolicyModel {
        let n = spec.num_actions();
        PolicyModel::Tabular {
            num_actions: n,
            goal_count: spec.goal_count(),
            rows: vec![Some(vec![1.0 / n as f64; n]); spec.num_states() * spec.goal_count()],
        }
    }

    #[test]
    fn optimal_rollout_arithmetic() {
        let spec = resolve("chain-5").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = rollout(&spec, &optimal(&spec), 0, 3, 10, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(ep.first_hit, Some(3));
        assert_eq!(ep.steps_at_goal, 7);
    }

    #[test]
    fn stay_policy_never_succeeds() {
        let spec = resolve("chain-5").unwrap();
        let stay = PolicyModel::Tabular {
            num_actions: 3,
            goal_count: 5,
            rows: vec![Some(vec![0.0, 0.0, 1.0]); 25],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = rollout(&spec, &stay, 0, 4, 10, ActMode::Greedy, &mut rng).unwrap();
        assert!(!ep.success());
        assert_eq!(ep.steps_at_goal, 0);
    }

    #[test]
    fn optimal_policy_always_succeeds() {
        let spec = resolve("chain-5").unwrap();
        let r = evaluate(&spec, &optimal(&spec), 50, &EvalTasks::AllReachable, ActMode::Greedy, 1).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert!(r.mean_steps_at_goal <= spec.horizon() as f64);
    }

    #[test]
    fn random_policy_is_worse_in_four_rooms() {
        let spec = resolve("four-rooms").unwrap();
        let tasks = EvalTasks::AllReachable;
        let best = evaluate(&spec, &optimal(&spec), 200, &tasks, ActMode::Greedy, 5).unwrap();
        let random = evaluate(&spec, &uniform(&spec), 200, &tasks, ActMode::Sample, 5).unwrap();
        assert!(random.success_rate < best.success_rate);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let spec = resolve("grid-4x4").unwrap();
        let policy = uniform(&spec);
        let a = evaluate(&spec, &policy, 30, &EvalTasks::AllReachable, ActMode::Sample, 9).unwrap();
        let b = evaluate(&spec, &policy, 30, &EvalTasks::AllReachable, ActMode::Sample, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn goal_sampling() {
        let spec = resolve("chain-5").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 5];
        for _ in 0..5000 {
            let (_, g) = sample_eval_goal(&spec, &EvalTasks::AllReachable, &mut rng).unwrap();
            counts[g] += 1;
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");

        let data = Dataset::from_trajectories(
            &spec,
            "scripted",
            vec![Trajectory {
                states: vec![1, 2, 2],
                actions: vec![1, 2],
            }],
        )
        .unwrap();
        for _ in 0..50 {
            let (_, g) = sample_eval_goal(&spec, &EvalTasks::DatasetStates(&data), &mut rng).unwrap();
            assert!(g == 1 || g == 2);
        }
    }

    #[test]
    fn curve_round_trip() {
        assert_eq!(format_curves(&[]), format!("{CURVE_HEADER}\n"));
        let report = |s: f64, h: Option<f64>| EvalReport {
            episodes: 3,
            success_rate: s,
            mean_steps_at_goal: 1.0 / 3.0,
            mean_first_hit: h,
            fallback_count: 7,
            seed: 0,
            mode: ActMode::Greedy,
        };
        let history = vec![(10, report(2.0 / 3.0, Some(0.1 + 0.2))), (20, report(0.0, None))];
        let text = format_curves(&history);
        assert_eq!(text.lines().count(), 3);
        let parsed = parse_curves(&text).unwrap();
        assert_eq!(parsed[0].success_rate, 2.0 / 3.0);
        assert_eq!(parsed[0].mean_first_hit, Some(0.1 + 0.2));
        assert_eq!(parsed[1].mean_first_hit, None);
        assert_eq!(parsed[1].step, 20);
    }
}
