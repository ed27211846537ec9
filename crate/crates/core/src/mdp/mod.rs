//! Finite-horizon tabular MDPs, trajectories, deterministic policies and
//! exact dynamic-programming / enumeration oracles.
//!
//! Steps are 0-based throughout: an MDP with horizon `H` has decision steps
//! `0..H` and transition kernels `P_h` for `h in 0..H-1`.

mod discounted;
mod exact;
mod reward;
pub mod spec_file;

pub use discounted::DiscountedMdp;
pub use exact::{
    exact_policy_value, exact_q, exact_q_enumerated, initial_value, max_visitation,
    optimal_policy_bruteforce, state_visitation, suffix_reward_distribution, value_gaps,
    visitation_distribution, ValueGaps, MAX_ENUMERATED_SUFFIXES,
};
pub use reward::{RewardKind, TrajectoryReward};

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row-sum tolerance for every probability vector.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularEpisodicMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `(H-1) * S * A * S`, row-major in (step, state, action, next).
    transitions: Vec<f64>,
    transition_cdf: Vec<f64>,
    initial_dist: Vec<f64>,
    initial_cdf: Vec<f64>,
    /// Available actions per (step, state); actions are `0..count`.
    action_counts: Vec<usize>,
}

impl TabularEpisodicMdp {
    /// Builds an MDP from a flat `(H-1) x S x A x S` kernel. Every (step,
    /// state) starts with all `A` actions available.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::InvalidMdp(format!(
                "S, A and H must be positive (got S={num_states}, A={num_actions}, H={horizon})"
            )));
        }
        let expected = (horizon - 1) * num_states * num_actions * num_states;
        if transitions.len() != expected {
            return Err(Error::InvalidMdp(format!(
                "transition table has {} entries, expected {expected}",
                transitions.len()
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::InvalidMdp(format!(
                "initial distribution has {} entries, expected {num_states}",
                initial_dist.len()
            )));
        }
        check_distribution(&initial_dist).map_err(|e| Error::InvalidMdp(format!("initial distribution {e}")))?;
        for h in 0..horizon.saturating_sub(1) {
            for s in 0..num_states {
                for a in 0..num_actions {
                    let start = ((h * num_states + s) * num_actions + a) * num_states;
                    check_distribution(&transitions[start..start + num_states]).map_err(|e| {
                        Error::InvalidMdp(format!("transition row (step={h}, state={s}, action={a}) {e}"))
                    })?;
                }
            }
        }
        let transition_cdf = transitions
            .chunks(num_states)
            .flat_map(cumulative)
            .collect();
        let initial_cdf = cumulative(&initial_dist).collect();
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transitions,
            transition_cdf,
            initial_dist,
            initial_cdf,
            action_counts: vec![num_actions; horizon * num_states],
        })
    }

    /// Restricts the action set per (step, state); `counts` is `H x S`.
    pub fn with_action_counts(mut self, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != self.horizon * self.num_states {
            return Err(Error::InvalidMdp(format!(
                "action count table has {} entries, expected {}",
                counts.len(),
                self.horizon * self.num_states
            )));
        }
        if let Some(i) = counts.iter().position(|&c| c == 0 || c > self.num_actions) {
            return Err(Error::InvalidMdp(format!(
                "action count at (step={}, state={}) must be in 1..={}",
                i / self.num_states,
                i % self.num_states,
                self.num_actions
            )));
        }
        self.action_counts = counts;
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn actions_at(&self, step: usize, state: usize) -> usize {
        self.action_counts[step * self.num_states + state]
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    /// `P_h(. | s, a)`; only defined for `h < H - 1`.
    pub fn transition_row(&self, step: usize, state: usize, action: usize) -> &[f64] {
        let start = self.row_start(step, state, action);
        &self.transitions[start..start + self.num_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    fn row_start(&self, step: usize, state: usize, action: usize) -> usize {
        debug_assert!(step + 1 < self.horizon);
        ((step * self.num_states + state) * self.num_actions + action) * self.num_states
    }

    pub fn check_state(&self, step: usize, state: usize) -> Result<()> {
        if step >= self.horizon {
            return invalid(format!("step {step} outside 0..{}", self.horizon));
        }
        if state >= self.num_states {
            return invalid(format!("state {state} outside 0..{}", self.num_states));
        }
        Ok(())
    }

    pub fn check_action(&self, step: usize, state: usize, action: usize) -> Result<()> {
        self.check_state(step, state)?;
        let n = self.actions_at(step, state);
        if action >= n {
            return invalid(format!("action {action} not available at (step={step}, state={state}); {n} actions"));
        }
        Ok(())
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_cdf(&self.initial_cdf, &self.initial_dist, rng.gen())
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, step: usize, state: usize, action: usize, rng: &mut R) -> usize {
        let start = self.row_start(step, state, action);
        let end = start + self.num_states;
        sample_cdf(&self.transition_cdf[start..end], &self.transitions[start..end], rng.gen())
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(i) = row.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(format!("has invalid entry {} at index {i}", row[i]));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

fn cumulative(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    row.iter().scan(0.0, |acc, p| {
        *acc += p;
        Some(*acc)
    })
}

/// Inverse-CDF draw from one uniform. Falls back to the last atom with
/// positive mass when rounding leaves `u` above the final cumulative value.
pub(crate) fn sample_cdf(cdf: &[f64], probs: &[f64], u: f64) -> usize {
    let i = cdf.partition_point(|&c| c <= u);
    if i < cdf.len() && probs[i] > 0.0 {
        return i;
    }
    if i < cdf.len() {
        // u landed exactly on a boundary followed by zero-mass atoms
        if let Some(j) = (i..cdf.len()).find(|&j| probs[j] > 0.0) {
            return j;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// A (partial) trajectory `tau_{h0:h1}`: consecutive (state, action) pairs
/// starting at `start_step`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    start_step: usize,
    steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn new(start_step: usize, steps: Vec<(usize, usize)>) -> Self {
        Self { start_step, steps }
    }

    pub fn start_step(&self) -> usize {
        self.start_step
    }

    /// Last step covered (inclusive). Empty trajectories report `start_step`.
    pub fn end_step(&self) -> usize {
        self.start_step + self.steps.len().saturating_sub(1)
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<(usize, usize)> {
        self.steps.last().copied()
    }

    pub fn push(&mut self, state: usize, action: usize) {
        self.steps.push((state, action));
    }

    pub(crate) fn clear(&mut self, start_step: usize) {
        self.start_step = start_step;
        self.steps.clear();
    }

    pub(crate) fn truncate(&mut self, len: usize) {
        self.steps.truncate(len);
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}:", self.start_step)?;
        for (i, (s, a)) in self.steps.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "(s{s},a{a})")?;
        }
        Ok(())
    }
}

/// `pi_h(s)` for every step and state; entries may be unset while a policy
/// is built backwards.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    horizon: usize,
    num_states: usize,
    actions: Vec<Option<usize>>,
}

impl DeterministicPolicy {
    pub fn unset(horizon: usize, num_states: usize) -> Self {
        Self {
            horizon,
            num_states,
            actions: vec![None; horizon * num_states],
        }
    }

    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Self {
            horizon,
            num_states,
            actions: vec![Some(action); horizon * num_states],
        }
    }

    /// Builds a complete policy from an `H x S` table.
    pub fn from_table(table: &[Vec<usize>]) -> Self {
        let horizon = table.len();
        let num_states = table.first().map_or(0, Vec::len);
        let actions = table.iter().flat_map(|row| row.iter().map(|&a| Some(a))).collect();
        Self {
            horizon,
            num_states,
            actions,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn get(&self, step: usize, state: usize) -> Option<usize> {
        self.actions[step * self.num_states + state]
    }

    pub fn set(&mut self, step: usize, state: usize, action: usize) {
        self.actions[step * self.num_states + state] = Some(action);
    }

    pub fn clear(&mut self, step: usize, state: usize) {
        self.actions[step * self.num_states + state] = None;
    }

    pub fn action(&self, step: usize, state: usize) -> Result<usize> {
        self.get(step, state).ok_or(Error::UnsetPolicy { step, state })
    }

    pub fn is_complete(&self) -> bool {
        self.actions.iter().all(Option::is_some)
    }

    pub fn is_set_from(&self, step: usize) -> bool {
        self.actions[step * self.num_states..].iter().all(Option::is_some)
    }

    /// Copy with every unset entry replaced by `default`.
    pub fn completed(&self, default: usize) -> Self {
        Self {
            horizon: self.horizon,
            num_states: self.num_states,
            actions: self.actions.iter().map(|a| Some(a.unwrap_or(default))).collect(),
        }
    }

    /// Checks every set entry against the MDP's action sets.
    pub fn validate(&self, mdp: &TabularEpisodicMdp) -> Result<()> {
        if self.horizon != mdp.horizon() || self.num_states != mdp.num_states() {
            return invalid(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                self.horizon,
                self.num_states,
                mdp.horizon(),
                mdp.num_states()
            ));
        }
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                if let Some(a) = self.get(h, s) {
                    mdp.check_action(h, s, a)?;
                }
            }
        }
        Ok(())
    }

    /// `{h: {s: a}}` over the set entries.
    pub fn to_table(&self) -> std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, usize>> {
        let mut out = std::collections::BTreeMap::new();
        for h in 0..self.horizon {
            let row: std::collections::BTreeMap<_, _> =
                (0..self.num_states).filter_map(|s| self.get(h, s).map(|a| (s, a))).collect();
            out.insert(h, row);
        }
        out
    }
}

/// Rolls out one episode (or suffix) to the last step.
///
/// `select(step, state, rng)` picks each action; `start` defaults to step 0
/// with the state drawn from the initial distribution.
pub fn sample_episode<R, F>(
    mdp: &TabularEpisodicMdp,
    mut select: F,
    rng: &mut R,
    start: Option<(usize, usize)>,
) -> Result<Trajectory>
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize, &mut R) -> Result<usize>,
{
    let (h0, mut s) = match start {
        Some((h, s)) => {
            mdp.check_state(h, s)?;
            (h, s)
        }
        None => (0, mdp.sample_initial(rng)),
    };
    let mut traj = Trajectory::new(h0, Vec::with_capacity(mdp.horizon() - h0));
    for h in h0..mdp.horizon() {
        let a = select(h, s, rng)?;
        mdp.check_action(h, s, a)?;
        traj.push(s, a);
        if h + 1 < mdp.horizon() {
            s = mdp.sample_next(h, s, a, rng);
        }
    }
    Ok(traj)
}

/// Takes `first_action` at `(step, state)` and follows `tail` to the end,
/// writing the suffix into `out`.
pub(crate) fn rollout_suffix<R: Rng + ?Sized>(
    mdp: &TabularEpisodicMdp,
    step: usize,
    state: usize,
    first_action: usize,
    tail: &DeterministicPolicy,
    rng: &mut R,
    out: &mut Trajectory,
) -> Result<()> {
    out.clear(step);
    let mut s = state;
    let mut a = first_action;
    for h in step..mdp.horizon() {
        if h > step {
            a = tail.action(h, s)?;
        }
        out.push(s, a);
        if h + 1 < mdp.horizon() {
            s = mdp.sample_next(h, s, a, rng);
        }
    }
    Ok(())
}
