//! Simulated batched human feedback and the exact preference oracles.

mod exact;

pub use exact::{
    batch_sum_distribution, condorcet_winner, exact_preference_probability, lemma1_batch_bound,
    probability_gap, ExactPreference, PreferenceTable, MAX_CONVOLUTION_ATOMS, QUANTUM,
};

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{rollout_suffix, DeterministicPolicy, TabularEpisodicMdp, Trajectory, TrajectoryReward};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    #[default]
    UniformRandom,
    /// Exact ties go to the first batch.
    FavorFirst,
}

/// A set of (partial) trajectories sharing a start step.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryBatch {
    start_step: Option<usize>,
    trajectories: Vec<Trajectory>,
}

impl TrajectoryBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_trajectories(trajectories: Vec<Trajectory>) -> Result<Self> {
        let mut batch = Self::new();
        for t in trajectories {
            batch.push(t)?;
        }
        Ok(batch)
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        match self.start_step {
            Some(h) if h != traj.start_step() => {
                invalid(format!("batch starts at step {h}, trajectory at {}", traj.start_step()))
            }
            _ => {
                self.start_step = Some(traj.start_step());
                self.trajectories.push(traj);
                Ok(())
            }
        }
    }

    pub fn clear(&mut self) {
        self.start_step = None;
        self.trajectories.clear();
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn start_step(&self) -> Option<usize> {
        self.start_step
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// `sum_m f(tau^m)` in quantised ticks.
    fn tick_sum(&self, reward: &TrajectoryReward) -> Result<i128> {
        self.trajectories
            .iter()
            .map(|t| Ok(exact::quantize(reward.evaluate(t)?)? as i128))
            .sum()
    }
}

/// One audited comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub episode: u64,
    pub h: usize,
    pub s: usize,
    pub champion: usize,
    pub challenger: usize,
    pub sigma: u8,
}

/// The 0-1 link oracle: prefers the batch with the larger average reward.
#[derive(Clone, Debug)]
pub struct PreferenceOracle<'r> {
    reward: &'r TrajectoryReward,
    tie_rule: TieRule,
    rng: ChaCha8Rng,
    queries: u64,
    log: Option<Vec<QueryRow>>,
}

impl<'r> PreferenceOracle<'r> {
    pub fn new(reward: &'r TrajectoryReward, tie_rule: TieRule, seed: u64) -> Self {
        Self {
            reward,
            tie_rule,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queries: 0,
            log: None,
        }
    }

    /// Keeps every comparison passed through [`Self::record`].
    pub fn with_transcript(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn reward(&self) -> &'r TrajectoryReward {
        self.reward
    }

    pub fn tie_rule(&self) -> TieRule {
        self.tie_rule
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// Returns 0 if `d0` has the larger average reward, 1 if `d1` does.
    pub fn human_feedback(&mut self, d0: &TrajectoryBatch, d1: &TrajectoryBatch) -> Result<u8> {
        if d0.is_empty() || d1.is_empty() {
            return invalid("human feedback needs two non-empty batches");
        }
        // compare sum0 / n0 against sum1 / n1 without dividing
        let lhs = d0.tick_sum(self.reward)? * d1.len() as i128;
        let rhs = d1.tick_sum(self.reward)? * d0.len() as i128;
        self.queries += 1;
        Ok(match lhs.cmp(&rhs) {
            std::cmp::Ordering::Greater => 0,
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Equal => match self.tie_rule {
                TieRule::FavorFirst => 0,
                TieRule::UniformRandom => self.rng.gen_range(0..2),
            },
        })
    }

    pub fn record(&mut self, row: QueryRow) {
        if let Some(log) = self.log.as_mut() {
            log.push(row);
        }
    }

    pub fn transcript(&self) -> Option<&[QueryRow]> {
        self.log.as_deref()
    }

    pub fn write_transcript(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.log.iter().flatten() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_transcript_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.log.iter().flatten() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of `samples` fresh batch pairs (each arm then `tail`, `m`
/// suffixes per batch) in which the oracle prefers `a0`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_preference<R: Rng>(
    mdp: &TabularEpisodicMdp,
    oracle: &mut PreferenceOracle<'_>,
    step: usize,
    state: usize,
    a0: usize,
    a1: usize,
    tail: &DeterministicPolicy,
    m: usize,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if m == 0 || samples == 0 {
        return invalid("batch size and sample count must be positive");
    }
    mdp.check_action(step, state, a0)?;
    mdp.check_action(step, state, a1)?;
    let mut buf = Trajectory::new(step, Vec::new());
    let mut wins = 0usize;
    let (mut d0, mut d1) = (TrajectoryBatch::new(), TrajectoryBatch::new());
    for _ in 0..samples {
        d0.clear();
        d1.clear();
        for (batch, arm) in [(&mut d0, a0), (&mut d1, a1)] {
            for _ in 0..m {
                rollout_suffix(mdp, step, state, arm, tail, rng, &mut buf)?;
                batch.push(buf.clone())?;
            }
        }
        if oracle.human_feedback(&d0, &d1)? == 0 {
            wins += 1;
        }
    }
    Ok(wins as f64 / samples as f64)
}
