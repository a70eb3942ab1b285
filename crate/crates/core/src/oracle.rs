//! Exact tabular solvers used to verify the learning rules.
//!
//! Everything here assumes the deterministic dynamics of [`MdpSpec`] and a
//! known goal-conditioned behavior `π_r(a|s,g)`. The KL-regularized optimal
//! value satisfies the soft Bellman equations
//!
//! ```text
//! Q(s,a,g) = r(s',g) + γ V(s',g)
//! V(s,g)   = α log Σ_a π_r(a|s,g) exp(Q(s,a,g) / α)
//! ```
//!
//! and the optimal policy is `π*(a|s,g) ∝ π_r(a|s,g) exp(A(s,a,g) / α)`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{sample_categorical, BehaviorPolicy, Dataset};
use crate::distance::{distance_to_return, CategoricalDistance, ReturnMap};
use crate::error::{Error, Result};
use crate::mdp::{Action, Goal, MdpSpec, State};
use crate::numerics::{total_variation, weighted_logsumexp, LogSumExpAcc};
use crate::policy::{advantage, greedy_action, weight, ActMode, Actor};
use crate::relabel::{pair_probability, BinningConfig};

/// Tail mass tolerance of the infinite-horizon truncation.
pub const TRUNCATION_EPS: f64 = 1e-10;
/// Default cap on the number of enumerated trajectories.
pub const DEFAULT_ENUMERATION_CAP: u64 = 2_000_000;

/// Goal-conditioned behavior table `π_r(a|s,g)`; `None` rows are pairs
/// outside the support.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTable {
    num_actions: usize,
    goal_count: usize,
    rows: Vec<Option<Vec<f64>>>,
}

impl BehaviorTable {
    pub fn from_fn(spec: &MdpSpec, mut f: impl FnMut(State, Goal) -> Vec<f64>) -> Result<Self> {
        let mut rows = Vec::with_capacity(spec.num_states() * spec.goal_count());
        for s in 0..spec.num_states() {
            for g in 0..spec.goal_count() {
                let row = f(s, g);
                check_row(&row, spec.num_actions())?;
                rows.push(Some(row));
            }
        }
        Ok(Self {
            num_actions: spec.num_actions(),
            goal_count: spec.goal_count(),
            rows,
        })
    }

    pub fn uniform(spec: &MdpSpec) -> Self {
        let n = spec.num_actions();
        Self::from_fn(spec, |_, _| vec![1.0 / n as f64; n]).expect("uniform rows are valid")
    }

    /// The analytic Markov law of a data-collection behavior.
    pub fn from_behavior(spec: &MdpSpec, behavior: &BehaviorPolicy) -> Self {
        Self::from_fn(spec, |s, g| behavior.markov_probs(s, g)).expect("behavior rows are valid")
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: State, g: Goal) -> Option<&[f64]> {
        self.rows[s * self.goal_count + g].as_deref()
    }

    pub fn is_total(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }

    pub fn supported_pairs(&self) -> Vec<(State, Goal)> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i].is_some())
            .map(|i| (i / self.goal_count, i % self.goal_count))
            .collect()
    }

    /// Fill unsupported rows with the state's goal-marginal behavior (the
    /// supported rows of that state averaged), or uniform for unseen states.
    pub fn filled(&self) -> Self {
        let num_states = self.rows.len() / self.goal_count;
        let mut rows = self.rows.clone();
        for s in 0..num_states {
            let seen: Vec<&Vec<f64>> = (0..self.goal_count)
                .filter_map(|g| self.rows[s * self.goal_count + g].as_ref())
                .collect();
            let fill = if seen.is_empty() {
                vec![1.0 / self.num_actions as f64; self.num_actions]
            } else {
                let mut m = vec![0.0; self.num_actions];
                for row in &seen {
                    m.iter_mut().zip(row.iter()).for_each(|(x, y)| *x += y / seen.len() as f64);
                }
                m
            };
            for g in 0..self.goal_count {
                rows[s * self.goal_count + g].get_or_insert_with(|| fill.clone());
            }
        }
        Self { rows, ..self.clone() }
    }

    /// Whether every supported row at a goal-achieving state keeps the goal
    /// achieved, so returns depend only on the first-hit time.
    pub fn is_goal_persistent(&self, spec: &MdpSpec) -> bool {
        (0..spec.num_states()).all(|s| {
            let g = spec.phi(s);
            match self.row(s, g) {
                Some(row) => (0..self.num_actions).all(|a| row[a] == 0.0 || spec.phi(spec.next(s, a)) == g),
                None => true,
            }
        })
    }
}

fn check_row(row: &[f64], num_actions: usize) -> Result<()> {
    if row.len() != num_actions {
        return Err(Error::domain(format!("behavior row has {} entries, expected {num_actions}", row.len())));
    }
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::domain("behavior row is not a probability vector"));
    }
    Ok(())
}

/// Sampler-law weighted action frequencies of the relabeled dataset.
pub fn estimate_behavior(spec: &MdpSpec, dataset: &Dataset) -> Result<BehaviorTable> {
    if dataset.is_empty() {
        return Err(Error::domain("estimate_behavior on an empty dataset"));
    }
    let (num_actions, goal_count) = (spec.num_actions(), spec.goal_count());
    let horizon = dataset.horizon();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; spec.num_states() * goal_count];
    for traj in &dataset.trajectories {
        for i in 0..horizon {
            let p = pair_probability(horizon, i);
            for j in i + 1..=horizon {
                let g = spec.phi(traj.states[j]);
                rows[traj.states[i] * goal_count + g].get_or_insert_with(|| vec![0.0; num_actions])[traj.actions[i]] +=
                    p;
            }
        }
    }
    for row in rows.iter_mut().flatten() {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    Ok(BehaviorTable {
        num_actions,
        goal_count,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Undiscounted, `V_H = 0`.
    Finite(usize),
    /// Infinite horizon fixed point.
    Discounted { gamma: f64 },
}

/// Optimal KL-regularized values. Finite tables hold layers `t = 0..=H`
/// (with `V_H = 0` and no `Q_H`); discounted tables hold one layer.
#[derive(Debug, Clone)]
pub struct SoftValueTable {
    alpha: f64,
    horizon: Horizon,
    num_states: usize,
    num_actions: usize,
    goal_count: usize,
    v: Vec<f64>,
    q: Vec<f64>,
    iterations: usize,
}

impl SoftValueTable {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        match self.horizon {
            Horizon::Finite(_) => 1.0,
            Horizon::Discounted { gamma } => gamma,
        }
    }

    /// Number of decision layers: `H` for finite tables, 1 otherwise.
    pub fn decision_layers(&self) -> usize {
        match self.horizon {
            Horizon::Finite(h) => h,
            Horizon::Discounted { .. } => 1,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn v(&self, t: usize, s: State, g: Goal) -> f64 {
        self.v[(t * self.num_states + s) * self.goal_count + g]
    }

    pub fn q(&self, t: usize, s: State, a: Action, g: Goal) -> f64 {
        self.q[((t * self.num_states + s) * self.num_actions + a) * self.goal_count + g]
    }

    pub fn advantage(&self, t: usize, s: State, a: Action, g: Goal) -> f64 {
        self.q(t, s, a, g) - self.v(t, s, g)
    }
}

fn soft_backup(alpha: f64, probs: &[f64], q: &[f64]) -> f64 {
    let scaled: Vec<f64> = q.iter().map(|x| x / alpha).collect();
    alpha * weighted_logsumexp(probs, &scaled)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha = {alpha} must be positive")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("discounted horizon needs gamma in (0, 1), got {gamma}")))
    }
}

/// Backward recursion (finite) or fixed-point iteration to a residual of at
/// most `1e-12` (discounted).
pub fn soft_value_iteration(spec: &MdpSpec, pi: &BehaviorTable, alpha: f64, horizon: Horizon) -> Result<SoftValueTable> {
    check_alpha(alpha)?;
    if !pi.is_total() {
        return Err(Error::Support("soft value iteration needs a behavior row for every (s, g)".into()));
    }
    let (ns, na, ng) = (spec.num_states(), spec.num_actions(), spec.goal_count());
    let layer = ns * ng;
    let q_layer = ns * na * ng;
    let backup_layer = |v_next: &[f64], v_out: &mut [f64], q_out: &mut [f64], gamma: f64| {
        let mut qs = vec![0.0; na];
        for s in 0..ns {
            for g in 0..ng {
                for (a, q) in qs.iter_mut().enumerate() {
                    let s2 = spec.next(s, a);
                    *q = f64::from(spec.reward_unchecked(s2, g)) + gamma * v_next[s2 * ng + g];
                    q_out[(s * na + a) * ng + g] = *q;
                }
                v_out[s * ng + g] = soft_backup(alpha, pi.row(s, g).unwrap(), &qs);
            }
        }
    };
    match horizon {
        Horizon::Finite(h) => {
            let mut v = vec![0.0; (h + 1) * layer];
            let mut q = vec![0.0; h * q_layer];
            for t in (0..h).rev() {
                let (head, tail) = v.split_at_mut((t + 1) * layer);
                backup_layer(&tail[..layer], &mut head[t * layer..], &mut q[t * q_layer..(t + 1) * q_layer], 1.0);
            }
            Ok(SoftValueTable {
                alpha,
                horizon,
                num_states: ns,
                num_actions: na,
                goal_count: ng,
                v,
                q,
                iterations: h,
            })
        }
        Horizon::Discounted { gamma } => {
            check_gamma(gamma)?;
            let max_iter = 200_000;
            let mut v = vec![0.0; layer];
            let mut next = vec![0.0; layer];
            let mut q = vec![0.0; q_layer];
            let mut residual = f64::INFINITY;
            for iter in 1..=max_iter {
                backup_layer(&v, &mut next, &mut q, gamma);
                residual = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                std::mem::swap(&mut v, &mut next);
                if residual <= 1e-13 {
                    // One more backup so that Q is consistent with the final V.
                    backup_layer(&v, &mut next, &mut q, gamma);
                    return Ok(SoftValueTable {
                        alpha,
                        horizon,
                        num_states: ns,
                        num_actions: na,
                        goal_count: ng,
                        v,
                        q,
                        iterations: iter,
                    });
                }
            }
            Err(Error::Solver {
                iterations: max_iter,
                residual,
            })
        }
    }
}

/// Largest violation of the soft Bellman equations over all table entries,
/// for both the `V` and the `Q` equation.
pub fn fixed_point_residual(spec: &MdpSpec, pi: &BehaviorTable, table: &SoftValueTable) -> f64 {
    let gamma = table.gamma();
    let mut worst: f64 = 0.0;
    for t in 0..table.decision_layers() {
        let t_next = match table.horizon {
            Horizon::Finite(_) => t + 1,
            Horizon::Discounted { .. } => t,
        };
        for s in 0..spec.num_states() {
            for g in 0..spec.goal_count() {
                let qs: Vec<f64> = (0..spec.num_actions()).map(|a| table.q(t, s, a, g)).collect();
                for (a, q) in qs.iter().enumerate() {
                    let s2 = spec.next(s, a);
                    let target = f64::from(spec.reward_unchecked(s2, g)) + gamma * table.v(t_next, s2, g);
                    worst = worst.max((q - target).abs());
                }
                let Some(row) = pi.row(s, g) else { continue };
                worst = worst.max((table.v(t, s, g) - soft_backup(table.alpha, row, &qs)).abs());
            }
        }
    }
    worst
}

/// `⌈log(ε (1 - γ)) / log γ⌉`: beyond this many steps the discounted tail
/// is below `ε`.
pub fn effective_horizon(gamma: f64) -> usize {
    ((TRUNCATION_EPS * (1.0 - gamma)).ln() / gamma.ln()).ceil() as usize
}

/// `α log E_{π_r}[exp(Σ_{t<H} γ^t r_t / α)]` by enumerating every
/// trajectory of `π_r` from `s`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_soft_value(
    spec: &MdpSpec,
    pi: &BehaviorTable,
    s: State,
    g: Goal,
    alpha: f64,
    gamma: f64,
    horizon: usize,
    cap: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let paths = (spec.num_actions() as u64).checked_pow(horizon as u32);
    if paths.is_none_or(|p| p > cap) {
        return Err(Error::Infeasible(format!(
            "{}^{horizon} trajectories exceed the cap of {cap}",
            spec.num_actions()
        )));
    }
    let mut acc = LogSumExpAcc::default();
    enumerate(spec, pi, s, g, alpha, gamma, horizon, 0, 0.0, 0.0, &mut acc)?;
    Ok(alpha * acc.value())
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    spec: &MdpSpec,
    pi: &BehaviorTable,
    s: State,
    g: Goal,
    alpha: f64,
    gamma: f64,
    horizon: usize,
    t: usize,
    log_p: f64,
    ret: f64,
    acc: &mut LogSumExpAcc,
) -> Result<()> {
    if t == horizon {
        acc.push(log_p + ret / alpha);
        return Ok(());
    }
    let row = pi.row(s, g).ok_or(Error::UnsupportedPair { state: s, goal: g })?;
    for (a, &p) in row.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let s2 = spec.next(s, a);
        let r = f64::from(spec.reward_unchecked(s2, g)) * gamma.powi(t as i32);
        enumerate(spec, pi, s2, g, alpha, gamma, horizon, t + 1, log_p + p.ln(), ret + r, acc)?;
    }
    Ok(())
}

/// Same quantity as [`empirical_soft_value`], computed by a forward pass over
/// states in log space. The path weight factorizes over steps, so the sum
/// over trajectories collapses to a per-state recursion.
pub fn empirical_soft_value_dp(
    spec: &MdpSpec,
    pi: &BehaviorTable,
    s: State,
    g: Goal,
    alpha: f64,
    gamma: f64,
    horizon: usize,
) -> Result<f64> {
    check_alpha(alpha)?;
    let n = spec.num_states();
    let mut log_w = vec![f64::NEG_INFINITY; n];
    log_w[s] = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let mut accs = vec![LogSumExpAcc::default(); n];
        for (cur, &lw) in log_w.iter().enumerate() {
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let row = pi.row(cur, g).ok_or(Error::UnsupportedPair { state: cur, goal: g })?;
            for (a, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let s2 = spec.next(cur, a);
                    let r = f64::from(spec.reward_unchecked(s2, g));
                    accs[s2].push(lw + p.ln() + discount * r / alpha);
                }
            }
        }
        log_w = accs.iter().map(LogSumExpAcc::value).collect();
        discount *= gamma;
    }
    let mut total = LogSumExpAcc::default();
    log_w.iter().for_each(|&lw| total.push(lw));
    Ok(alpha * total.value())
}

/// First-hit law of `π_r` from `s`: entry `k - 1` is the probability that
/// `g` is first achieved after exactly `k` actions (`k = 1..=steps`); the
/// last entry holds the mass that misses `g` within `steps` actions.
pub fn first_hit_distribution(spec: &MdpSpec, pi: &BehaviorTable, s: State, g: Goal, steps: usize) -> Result<Vec<f64>> {
    let n = spec.num_states();
    let mut out = vec![0.0; steps + 1];
    let mut mass = vec![0.0; n];
    mass[s] = 1.0;
    for k in 0..steps {
        let mut next = vec![0.0; n];
        for cur in 0..n {
            if mass[cur] == 0.0 {
                continue;
            }
            let row = pi.row(cur, g).ok_or(Error::UnsupportedPair { state: cur, goal: g })?;
            for (a, &p) in row.iter().enumerate() {
                let s2 = spec.next(cur, a);
                if spec.phi(s2) == g {
                    out[k] += mass[cur] * p;
                } else {
                    next[s2] += mass[cur] * p;
                }
            }
        }
        mass = next;
    }
    out[steps] = mass.iter().sum();
    Ok(out)
}

/// `α log Σ_k p(k) exp(R_k / α)` with `R_k` from [`distance_to_return`];
/// `p[k - 1]` is the probability of distance `k`.
pub fn distance_soft_value(p: &[f64], alpha: f64, map: &ReturnMap) -> Result<f64> {
    check_alpha(alpha)?;
    let scaled = (1..=p.len())
        .map(|k| distance_to_return(k, map).map(|r| r / alpha))
        .collect::<Result<Vec<f64>>>()?;
    Ok(alpha * weighted_logsumexp(p, &scaled))
}

/// `π*` rows per decision layer.
#[derive(Debug, Clone)]
pub struct TimedPolicy {
    layers: usize,
    num_states: usize,
    goal_count: usize,
    rows: Vec<Vec<f64>>,
}

impl TimedPolicy {
    /// Action distribution at step `t` (clamped to the last layer).
    pub fn probs(&self, t: usize, s: State, g: Goal) -> &[f64] {
        let t = t.min(self.layers - 1);
        &self.rows[(t * self.num_states + s) * self.goal_count + g]
    }
}

impl Actor for TimedPolicy {
    fn act(&self, t: usize, s: State, g: Goal, mode: ActMode, rng: &mut ChaCha8Rng) -> (Action, bool) {
        let p = self.probs(t, s, g);
        match mode {
            ActMode::Greedy => (greedy_action(p), false),
            ActMode::Sample => (sample_categorical(p, rng), false),
        }
    }
}

/// `π*(a|s,g) = π_r(a|s,g) exp(A(s,a,g)/α) / Z` at every layer.
pub fn optimal_kl_policy(spec: &MdpSpec, table: &SoftValueTable, pi: &BehaviorTable) -> Result<TimedPolicy> {
    let layers = table.decision_layers();
    let mut rows = Vec::with_capacity(layers * spec.num_states() * spec.goal_count());
    for t in 0..layers {
        for s in 0..spec.num_states() {
            for g in 0..spec.goal_count() {
                let prior = pi.row(s, g).ok_or(Error::UnsupportedPair { state: s, goal: g })?;
                let logits: Vec<f64> = (0..spec.num_actions())
                    .map(|a| {
                        if prior[a] > 0.0 {
                            prior[a].ln() + table.advantage(t, s, a, g) / table.alpha
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let mut acc = LogSumExpAcc::default();
                logits.iter().for_each(|&l| acc.push(l));
                let log_z = acc.value();
                if !log_z.is_finite() {
                    return Err(Error::Support(format!("zero normalizer at ({s}, {g})")));
                }
                rows.push(logits.iter().map(|l| (l - log_z).exp()).collect());
            }
        }
    }
    Ok(TimedPolicy {
        layers,
        num_states: spec.num_states(),
        goal_count: spec.goal_count(),
        rows,
    })
}

/// Largest total-variation distance, over layers `t < H` and the given
/// pairs, between `π*` and the distance-weighted imitation rule evaluated
/// with exact time-indexed first-hit distributions.
///
/// Distances use `B = H + 1` unit bins, soft-min temperature `α / B` and
/// advantage temperature `β = α / B` without clipping; under these settings
/// the exponentiated advantage equals `exp(A*/α)`.
pub fn extraction_gap(spec: &MdpSpec, pi: &BehaviorTable, pairs: &[(State, Goal)], alpha: f64, horizon: usize) -> Result<f64> {
    let table = soft_value_iteration(spec, pi, alpha, Horizon::Finite(horizon))?;
    let optimal = optimal_kl_policy(spec, &table, pi)?;
    let binning = BinningConfig::new(horizon + 1, 1)?;
    let bins = binning.bins();
    let temp = alpha / bins as f64;
    let soft_distance = |s: State, g: Goal, steps: usize| -> Result<f64> {
        let mut p = first_hit_distribution(spec, pi, s, g, steps)?;
        p.resize(bins, 0.0);
        Ok(CategoricalDistance::new(p)?.logsumexp_distance(temp))
    };
    let mut worst: f64 = 0.0;
    for t in 0..horizon {
        for &(s, g) in pairs {
            let prior = pi.row(s, g).ok_or(Error::UnsupportedPair { state: s, goal: g })?;
            let d_cur = soft_distance(s, g, horizon - t)?;
            let mut row = vec![0.0; spec.num_actions()];
            for (a, &p) in prior.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let s2 = spec.next(s, a);
                let d_next = soft_distance(s2, g, horizon - t - 1)?;
                row[a] = p * weight(advantage(spec, &binning, d_cur, d_next, s2, g), temp, f64::INFINITY);
            }
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
            worst = worst.max(total_variation(&row, optimal.probs(t, s, g)));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_id: String,
    pub params: serde_json::Value,
    pub residual: Option<f64>,
    pub tolerance: f64,
    pub status: CheckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl CheckRecord {
    fn measured(check_id: &str, params: serde_json::Value, residual: f64, tolerance: f64) -> Self {
        Self {
            check_id: check_id.into(),
            params,
            residual: Some(residual),
            tolerance,
            status: if residual <= tolerance {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            reason: None,
        }
    }

    fn skipped(check_id: &str, params: serde_json::Value, tolerance: f64, reason: String) -> Self {
        Self {
            check_id: check_id.into(),
            params,
            residual: None,
            tolerance,
            status: CheckStatus::Skipped,
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Finite,
    Discounted,
    Corollary,
    Extraction,
    Residual,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "finite" => Suite::Finite,
            "discounted" => Suite::Discounted,
            "corollary" => Suite::Corollary,
            "extraction" => Suite::Extraction,
            "residual" => Suite::Residual,
            _ => {
                return Err(Error::domain(format!(
                    "unknown suite `{s}` (all | finite | discounted | corollary | extraction | residual)"
                )))
            }
        })
    }
}

/// Inputs of [`verify_suite`].
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Horizon of the finite-horizon checks.
    pub horizon: usize,
    pub enumeration_cap: u64,
}

/// Finite-horizon value of a goal-persistent behavior from its first-hit law.
fn corollary_params(
    spec: &MdpSpec,
    pi: &BehaviorTable,
    s: State,
    g: Goal,
    alpha: f64,
    gamma: Option<f64>,
    horizon: usize,
) -> Result<(f64, f64)> {
    let (steps, map) = match gamma {
        Some(gamma) => {
            let h = effective_horizon(gamma);
            (h, ReturnMap::new(gamma, Some(h))?)
        }
        None => (horizon, ReturnMap::new(1.0, Some(horizon))?),
    };
    let p = first_hit_distribution(spec, pi, s, g, steps)?;
    let lhs = distance_soft_value(&p, alpha, &map)?;
    let rhs = empirical_soft_value_dp(spec, pi, s, g, alpha, gamma.unwrap_or(1.0), steps)?;
    Ok((lhs, rhs))
}

/// Run the selected checks over `pairs` (the supported `(s, g)` set) with
/// the exact behavior `pi`, returning one record per check.
pub fn verify_suite(
    spec: &MdpSpec,
    pi: &BehaviorTable,
    pairs: &[(State, Goal)],
    cfg: &VerifyConfig,
    suite: Suite,
) -> Result<Vec<CheckRecord>> {
    if spec.num_states() > 200 {
        return Err(Error::domain("verification is limited to environments with at most 200 states"));
    }
    let run = |s: Suite| suite == Suite::All || suite == s;
    let env = spec.env_id();
    let mut out = Vec::new();

    if run(Suite::Finite) {
        let tol = 1e-9;
        for &alpha in &cfg.alphas {
            let params = serde_json::json!({"env": env, "alpha": alpha, "horizon": cfg.horizon, "pairs": pairs.len()});
            let table = soft_value_iteration(spec, pi, alpha, Horizon::Finite(cfg.horizon))?;
            let mut worst: f64 = 0.0;
            let mut infeasible = None;
            for &(s, g) in pairs {
                match empirical_soft_value(spec, pi, s, g, alpha, 1.0, cfg.horizon, cfg.enumeration_cap) {
                    Ok(v) => worst = worst.max((v - table.v(0, s, g)).abs()),
                    Err(Error::Infeasible(msg)) => {
                        infeasible = Some(msg);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            out.push(match infeasible {
                Some(msg) => CheckRecord::skipped("finite_horizon_equality", params, tol, msg),
                None => CheckRecord::measured("finite_horizon_equality", params, worst, tol),
            });
        }
    }

    if run(Suite::Discounted) {
        let tol = 1e-9;
        for &alpha in &cfg.alphas {
            let mut gaps = Vec::new();
            for &gamma in &cfg.gammas {
                let h = effective_horizon(gamma);
                let table = soft_value_iteration(spec, pi, alpha, Horizon::Discounted { gamma })?;
                let (mut violation, mut max_gap): (f64, f64) = (0.0, 0.0);
                for &(s, g) in pairs {
                    let rhs = empirical_soft_value_dp(spec, pi, s, g, alpha, gamma, h)?;
                    let gap = table.v(0, s, g) - rhs;
                    violation = violation.max(-gap);
                    max_gap = max_gap.max(gap);
                }
                gaps.push(max_gap);
                let params = serde_json::json!({
                    "env": env, "alpha": alpha, "gamma": gamma,
                    "truncation_horizon": h, "max_gap": max_gap,
                });
                out.push(CheckRecord::measured("discounted_bound", params, violation, tol));
            }
            let increases = gaps.windows(2).map(|w| (w[1] - w[0]).max(0.0)).fold(0.0, f64::max);
            let params = serde_json::json!({"env": env, "alpha": alpha, "gammas": cfg.gammas, "max_gaps": gaps});
            out.push(CheckRecord::measured("discounted_gap_monotone", params, increases, 0.0));
        }
    }

    if run(Suite::Corollary) {
        let tol = 1e-12;
        let persistent = pi.is_goal_persistent(spec);
        let mut gammas: Vec<Option<f64>> = cfg.gammas.iter().map(|&g| Some(g)).collect();
        gammas.push(None);
        for &alpha in &cfg.alphas {
            for &gamma in &gammas {
                let params = serde_json::json!({
                    "env": env, "alpha": alpha, "gamma": gamma.unwrap_or(1.0),
                    "horizon": gamma.map_or(cfg.horizon, effective_horizon),
                });
                if !persistent {
                    out.push(CheckRecord::skipped(
                        "corollary_change_of_variables",
                        params,
                        tol,
                        "behavior is not goal-persistent".into(),
                    ));
                    continue;
                }
                let mut worst: f64 = 0.0;
                for &(s, g) in pairs {
                    let (lhs, rhs) = corollary_params(spec, pi, s, g, alpha, gamma, cfg.horizon)?;
                    worst = worst.max((lhs - rhs).abs());
                }
                out.push(CheckRecord::measured("corollary_change_of_variables", params, worst, tol));
            }
        }
    }

    if run(Suite::Extraction) {
        let tol = 1e-6;
        for &alpha in &cfg.alphas {
            let params = serde_json::json!({"env": env, "alpha": alpha, "horizon": cfg.horizon});
            if !pi.is_goal_persistent(spec) {
                out.push(CheckRecord::skipped(
                    "policy_extraction",
                    params,
                    tol,
                    "behavior is not goal-persistent".into(),
                ));
                continue;
            }
            let gap = extraction_gap(spec, pi, pairs, alpha, cfg.horizon)?;
            out.push(CheckRecord::measured("policy_extraction", params, gap, tol));
        }
    }

    if run(Suite::Residual) {
        let tol = 1e-12;
        for &alpha in &cfg.alphas {
            let mut horizons = vec![Horizon::Finite(cfg.horizon)];
            horizons.extend(cfg.gammas.iter().map(|&gamma| Horizon::Discounted { gamma }));
            for h in horizons {
                let table = soft_value_iteration(spec, pi, alpha, h)?;
                let params = match h {
                    Horizon::Finite(n) => serde_json::json!({"env": env, "alpha": alpha, "horizon": n}),
                    Horizon::Discounted { gamma } => {
                        serde_json::json!({"env": env, "alpha": alpha, "gamma": gamma, "iterations": table.iterations()})
                    }
                };
                out.push(CheckRecord::measured(
                    "fixed_point_residual",
                    params,
                    fixed_point_residual(spec, pi, &table),
                    tol,
                ));
            }
        }
    }
    Ok(out)
}
