//! Hindsight relabeling and N-step distance binning.
//!
//! A relabeled sample pairs `(s_i, a_i, s_{i+1})` with the goal achieved at a
//! later step `j > i` of the same trajectory. The sampler draws `i` uniformly
//! and then `j` uniformly over the future, so a pair has probability
//! `1 / T * 1 / (T - i)` within its trajectory.

use rand::Rng;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{Action, Goal, MdpSpec, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningConfig {
    n_step: usize,
    bins: usize,
}

impl BinningConfig {
    /// `B = horizon // n_step` bins.
    pub fn new(horizon: usize, n_step: usize) -> Result<Self> {
        if n_step == 0 {
            return Err(Error::domain("n_step must be positive"));
        }
        let bins = horizon / n_step;
        if bins == 0 {
            return Err(Error::domain(format!("horizon {horizon} // n_step {n_step} leaves no bins")));
        }
        Ok(Self { n_step, bins })
    }

    pub fn n_step(&self) -> usize {
        self.n_step
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Bin of a `k`-step distance: `(k - 1) // N`, clamped to the last bin
    /// when the horizon is not a multiple of `N`.
    pub fn bin(&self, k: usize) -> usize {
        debug_assert!(k >= 1);
        ((k - 1) / self.n_step).min(self.bins - 1)
    }

    /// Normalized representative distance of bin `b`: `(b + 1) / B`.
    pub fn normalized(&self, bin: usize) -> f64 {
        (bin + 1) as f64 / self.bins as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelabeledSample {
    pub state: State,
    pub action: Action,
    pub next_state: State,
    pub goal: Goal,
    /// `j - i`, the number of transitions to the goal source.
    pub k: usize,
    pub bin: usize,
    pub trajectory: usize,
    pub i: usize,
}

impl RelabeledSample {
    fn build(spec: &MdpSpec, dataset: &Dataset, cfg: &BinningConfig, trajectory: usize, i: usize, j: usize) -> Self {
        let traj = &dataset.trajectories[trajectory];
        let k = j - i;
        Self {
            state: traj.states[i],
            action: traj.actions[i],
            next_state: traj.states[i + 1],
            goal: spec.phi(traj.states[j]),
            k,
            bin: cfg.bin(k),
            trajectory,
            i,
        }
    }
}

/// Probability of the pair `(i, j)` under the two-stage sampler, given its
/// trajectory of horizon `T`: `1 / (T (T - i))`.
pub fn pair_probability(horizon: usize, i: usize) -> f64 {
    1.0 / (horizon as f64 * (horizon - i) as f64)
}

fn check_dataset(dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::domain("relabeling needs a non-empty dataset"));
    }
    if dataset.horizon() == 0 {
        return Err(Error::domain("trajectories need at least two states"));
    }
    Ok(())
}

pub fn sample_relabeled<R: Rng + ?Sized>(
    spec: &MdpSpec,
    dataset: &Dataset,
    cfg: &BinningConfig,
    rng: &mut R,
) -> Result<RelabeledSample> {
    check_dataset(dataset)?;
    let horizon = dataset.horizon();
    let trajectory = rng.gen_range(0..dataset.len());
    let i = rng.gen_range(0..horizon);
    let j = rng.gen_range(i + 1..=horizon);
    Ok(RelabeledSample::build(spec, dataset, cfg, trajectory, i, j))
}

pub fn sample_batch<R: Rng + ?Sized>(
    spec: &MdpSpec,
    dataset: &Dataset,
    cfg: &BinningConfig,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<RelabeledSample>> {
    (0..batch).map(|_| sample_relabeled(spec, dataset, cfg, rng)).collect()
}

/// One sample per `(trajectory, i, j)` with `i < j`.
pub fn enumerate_all_pairs(spec: &MdpSpec, dataset: &Dataset, cfg: &BinningConfig) -> Result<Vec<RelabeledSample>> {
    check_dataset(dataset)?;
    let horizon = dataset.horizon();
    let mut out = Vec::with_capacity(dataset.len() * horizon * (horizon + 1) / 2);
    for trajectory in 0..dataset.len() {
        for i in 0..horizon {
            for j in i + 1..=horizon {
                out.push(RelabeledSample::build(spec, dataset, cfg, trajectory, i, j));
            }
        }
    }
    Ok(out)
}
