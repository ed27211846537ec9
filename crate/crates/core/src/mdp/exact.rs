//! Exact value, gap and visitation oracles. Values under general trajectory
//! rewards come from enumerating every trajectory suffix; cumulative rewards
//! also admit backward dynamic programming and use it by default.

use super::{DeterministicPolicy, TabularEpisodicMdp, Trajectory, TrajectoryReward};
use crate::error::{invalid, Error, Result};

/// Enumeration oracles refuse to walk more suffixes than this.
pub const MAX_ENUMERATED_SUFFIXES: u64 = 10_000_000;

/// The general-reward optimality check sweeps at most this many policies.
const MAX_POLICY_SWEEP: u64 = 1_000_000;

const OPTIMALITY_TOL: f64 = 1e-10;

struct Enumerator<'a> {
    mdp: &'a TabularEpisodicMdp,
    reward: &'a TrajectoryReward,
    tail: &'a DeterministicPolicy,
    leaves: u64,
    buf: Trajectory,
}

impl<'a> Enumerator<'a> {
    fn new(mdp: &'a TabularEpisodicMdp, reward: &'a TrajectoryReward, tail: &'a DeterministicPolicy, step: usize) -> Self {
        Self {
            mdp,
            reward,
            tail,
            leaves: 0,
            buf: Trajectory::new(step, Vec::with_capacity(mdp.horizon() - step)),
        }
    }

    fn walk(
        &mut self,
        step: usize,
        state: usize,
        forced: Option<usize>,
        prob: f64,
        acc: f64,
        emit: &mut dyn FnMut(f64, f64),
    ) -> Result<()> {
        let action = match forced {
            Some(a) => a,
            None => self.tail.action(step, state)?,
        };
        self.mdp.check_action(step, state, action)?;
        self.buf.push(state, action);
        let acc = acc + self.reward.step_reward(step, state, action).unwrap_or(0.0);
        if step + 1 == self.mdp.horizon() {
            self.leaves += 1;
            if self.leaves > MAX_ENUMERATED_SUFFIXES {
                return Err(Error::TooLarge(format!(
                    "more than {MAX_ENUMERATED_SUFFIXES} trajectory suffixes"
                )));
            }
            let value = if self.reward.is_cumulative() {
                acc
            } else {
                self.reward.evaluate(&self.buf)?
            };
            emit(prob, value);
        } else {
            let row = self.mdp.transition_row(step, state, action);
            for (next, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    self.walk(step + 1, next, None, prob * p, acc, emit)?;
                }
            }
        }
        let len = self.buf.len() - 1;
        self.buf.truncate(len);
        Ok(())
    }
}

fn check_reward(mdp: &TabularEpisodicMdp, reward: &TrajectoryReward) -> Result<()> {
    reward.validate_for(mdp)
}

/// Distribution of `f(tau_{h:H})` when taking `action` at `(step, state)` and
/// following `tail` afterwards, as `(value, probability)` atoms (unmerged).
pub fn suffix_reward_distribution(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    step: usize,
    state: usize,
    action: usize,
    tail: &DeterministicPolicy,
) -> Result<Vec<(f64, f64)>> {
    check_reward(mdp, reward)?;
    mdp.check_action(step, state, action)?;
    let mut atoms = Vec::new();
    Enumerator::new(mdp, reward, tail, step).walk(step, state, Some(action), 1.0, 0.0, &mut |p, v| {
        atoms.push((v, p))
    })?;
    Ok(atoms)
}

/// `Q_h^pi(s, a)` by enumerating every suffix, whatever the reward kind.
pub fn exact_q_enumerated(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    pi: &DeterministicPolicy,
    step: usize,
    state: usize,
    action: usize,
) -> Result<f64> {
    let mut total = 0.0;
    check_reward(mdp, reward)?;
    mdp.check_action(step, state, action)?;
    Enumerator::new(mdp, reward, pi, step).walk(step, state, Some(action), 1.0, 0.0, &mut |p, v| total += p * v)?;
    Ok(total)
}

/// Memoised backward recursion for cumulative rewards. Only states reachable
/// from the queried one are touched, so unset entries elsewhere are fine.
struct DpEvaluator<'a> {
    mdp: &'a TabularEpisodicMdp,
    reward: &'a TrajectoryReward,
    pi: &'a DeterministicPolicy,
    memo: Vec<Option<f64>>,
}

impl<'a> DpEvaluator<'a> {
    fn new(mdp: &'a TabularEpisodicMdp, reward: &'a TrajectoryReward, pi: &'a DeterministicPolicy) -> Self {
        Self {
            mdp,
            reward,
            pi,
            memo: vec![None; mdp.horizon() * mdp.num_states()],
        }
    }

    fn value(&mut self, step: usize, state: usize) -> Result<f64> {
        let key = step * self.mdp.num_states() + state;
        if let Some(v) = self.memo[key] {
            return Ok(v);
        }
        let a = self.pi.action(step, state)?;
        let v = self.q(step, state, a)?;
        self.memo[key] = Some(v);
        Ok(v)
    }

    fn q(&mut self, step: usize, state: usize, action: usize) -> Result<f64> {
        self.mdp.check_action(step, state, action)?;
        let mut total = self.reward.step_reward(step, state, action).unwrap_or(0.0);
        if step + 1 < self.mdp.horizon() {
            let row = self.mdp.transition_row(step, state, action);
            for (next, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    total += p * self.value(step + 1, next)?;
                }
            }
        }
        Ok(total)
    }
}

/// `Q_h^pi(s, a)`: backward DP for cumulative rewards, enumeration otherwise.
pub fn exact_q(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    pi: &DeterministicPolicy,
    step: usize,
    state: usize,
    action: usize,
) -> Result<f64> {
    check_reward(mdp, reward)?;
    if reward.is_cumulative() {
        DpEvaluator::new(mdp, reward, pi).q(step, state, action)
    } else {
        exact_q_enumerated(mdp, reward, pi, step, state, action)
    }
}

/// `V_h^pi(s) = E[f(tau_{h:H}) | s_h = s]`.
pub fn exact_policy_value(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    pi: &DeterministicPolicy,
    step: usize,
    state: usize,
) -> Result<f64> {
    mdp.check_state(step, state)?;
    let a = pi.action(step, state)?;
    exact_q(mdp, reward, pi, step, state, a)
}

/// `E_{mu0}[V_1^pi(s_1)]`.
pub fn initial_value(mdp: &TabularEpisodicMdp, reward: &TrajectoryReward, pi: &DeterministicPolicy) -> Result<f64> {
    check_reward(mdp, reward)?;
    let mut dp = reward.is_cumulative().then(|| DpEvaluator::new(mdp, reward, pi));
    let mut total = 0.0;
    for (s, &p) in mdp.initial_dist().iter().enumerate() {
        if p > 0.0 {
            let v = match dp.as_mut() {
                Some(dp) => dp.value(0, s)?,
                None => exact_q_enumerated(mdp, reward, pi, 0, s, pi.action(0, s)?)?,
            };
            total += p * v;
        }
    }
    Ok(total)
}

/// Returns a policy maximising `V_h^pi(s)` at every (step, state).
///
/// Cumulative rewards use backward DP (uniform optimality holds by the
/// Bellman equations). General rewards build the backward-greedy candidate
/// and then sweep every deterministic policy to confirm no (step, state) can
/// be improved; a witness is reported otherwise. Ties go to the lowest action.
pub fn optimal_policy_bruteforce(mdp: &TabularEpisodicMdp, reward: &TrajectoryReward) -> Result<DeterministicPolicy> {
    check_reward(mdp, reward)?;
    let (h_len, s_len) = (mdp.horizon(), mdp.num_states());
    let mut pi = DeterministicPolicy::unset(h_len, s_len);
    if reward.is_cumulative() {
        let mut next = vec![0.0; s_len];
        for h in (0..h_len).rev() {
            let mut cur = vec![0.0; s_len];
            for s in 0..s_len {
                let (mut best_a, mut best_q) = (0, f64::NEG_INFINITY);
                for a in 0..mdp.actions_at(h, s) {
                    let mut q = reward.step_reward(h, s, a).unwrap_or(0.0);
                    if h + 1 < h_len {
                        q += mdp
                            .transition_row(h, s, a)
                            .iter()
                            .zip(&next)
                            .map(|(p, v)| p * v)
                            .sum::<f64>();
                    }
                    if q > best_q {
                        best_q = q;
                        best_a = a;
                    }
                }
                pi.set(h, s, best_a);
                cur[s] = best_q;
            }
            next = cur;
        }
        return Ok(pi);
    }

    let mut values = vec![0.0; h_len * s_len];
    for h in (0..h_len).rev() {
        for s in 0..s_len {
            let (mut best_a, mut best_q) = (0, f64::NEG_INFINITY);
            for a in 0..mdp.actions_at(h, s) {
                let q = exact_q_enumerated(mdp, reward, &pi, h, s, a)?;
                if q > best_q {
                    best_q = q;
                    best_a = a;
                }
            }
            pi.set(h, s, best_a);
            values[h * s_len + s] = best_q;
        }
    }
    verify_uniform_optimality(mdp, reward, &values)?;
    Ok(pi)
}

fn verify_uniform_optimality(mdp: &TabularEpisodicMdp, reward: &TrajectoryReward, values: &[f64]) -> Result<()> {
    let (h_len, s_len) = (mdp.horizon(), mdp.num_states());
    let radices = mdp.action_counts();
    let count = radices
        .iter()
        .try_fold(1u64, |acc, &r| acc.checked_mul(r as u64).filter(|&c| c <= MAX_POLICY_SWEEP));
    if count.is_none() {
        return Err(Error::TooLarge(format!(
            "more than {MAX_POLICY_SWEEP} deterministic policies to sweep"
        )));
    }
    let mut digits = vec![0usize; radices.len()];
    loop {
        let table: Vec<Vec<usize>> = digits.chunks(s_len).map(<[usize]>::to_vec).collect();
        let candidate = DeterministicPolicy::from_table(&table);
        for h in 0..h_len {
            for s in 0..s_len {
                let v = exact_q_enumerated(mdp, reward, &candidate, h, s, candidate.action(h, s)?)?;
                let best = values[h * s_len + s];
                if v > best + OPTIMALITY_TOL {
                    return Err(Error::AssumptionViolated {
                        step: h,
                        state: s,
                        detail: format!("policy {:?} reaches {v} > backward-greedy value {best}", table),
                    });
                }
            }
        }
        // mixed-radix increment
        let mut i = 0;
        loop {
            if i == digits.len() {
                return Ok(());
            }
            digits[i] += 1;
            if digits[i] < radices[i] {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

/// Value-function gaps `Delta_h(s, a) = V*_h(s) - Q*_h(s, a)`.
#[derive(Clone, Debug)]
pub struct ValueGaps {
    num_states: usize,
    num_actions: usize,
    /// `H x S x A`; NaN for unavailable actions.
    gaps: Vec<f64>,
}

impl ValueGaps {
    pub fn gap(&self, step: usize, state: usize, action: usize) -> f64 {
        self.gaps[(step * self.num_states + state) * self.num_actions + action]
    }

    /// Smallest gap of any sub-optimal available action, over every
    /// (step, state) with more than one action.
    pub fn min_gap(&self) -> Option<f64> {
        let mut out: Option<f64> = None;
        for cell in self.gaps.chunks(self.num_actions) {
            let mut sorted: Vec<f64> = cell.iter().copied().filter(|g| !g.is_nan()).collect();
            sorted.sort_by(f64::total_cmp);
            if let Some(&second) = sorted.get(1) {
                out = Some(out.map_or(second, |m: f64| m.min(second)));
            }
        }
        out
    }

    /// Smallest gap among sub-optimal actions at one (step, state).
    pub fn state_min_gap(&self, step: usize, state: usize) -> Option<f64> {
        let start = (step * self.num_states + state) * self.num_actions;
        let mut sorted: Vec<f64> = self.gaps[start..start + self.num_actions]
            .iter()
            .copied()
            .filter(|g| !g.is_nan())
            .collect();
        sorted.sort_by(f64::total_cmp);
        sorted.get(1).copied()
    }
}

/// Gaps of every available action against `optimal`.
pub fn value_gaps(mdp: &TabularEpisodicMdp, reward: &TrajectoryReward, optimal: &DeterministicPolicy) -> Result<ValueGaps> {
    let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut gaps = vec![f64::NAN; h_len * s_len * a_len];
    for h in 0..h_len {
        for s in 0..s_len {
            let v = exact_policy_value(mdp, reward, optimal, h, s)?;
            for a in 0..mdp.actions_at(h, s) {
                gaps[(h * s_len + s) * a_len + a] = v - exact_q(mdp, reward, optimal, h, s, a)?;
            }
        }
    }
    Ok(ValueGaps {
        num_states: s_len,
        num_actions: a_len,
        gaps,
    })
}

/// Occupancy `p_h^pi(.)` at `step` from the initial distribution.
pub fn visitation_distribution(mdp: &TabularEpisodicMdp, pi: &DeterministicPolicy, step: usize) -> Result<Vec<f64>> {
    if step >= mdp.horizon() {
        return invalid(format!("step {step} outside 0..{}", mdp.horizon()));
    }
    let mut dist = mdp.initial_dist().to_vec();
    for h in 0..step {
        let mut next = vec![0.0; mdp.num_states()];
        for (s, &mass) in dist.iter().enumerate() {
            if mass > 0.0 {
                let a = pi.action(h, s)?;
                mdp.check_action(h, s, a)?;
                for (n, p) in mdp.transition_row(h, s, a).iter().enumerate() {
                    next[n] += mass * p;
                }
            }
        }
        dist = next;
    }
    Ok(dist)
}

/// `p_h^pi(s)`.
pub fn state_visitation(mdp: &TabularEpisodicMdp, pi: &DeterministicPolicy, step: usize, state: usize) -> Result<f64> {
    mdp.check_state(step, state)?;
    Ok(visitation_distribution(mdp, pi, step)?[state])
}

/// `max_pi p_h^pi(s)` by backward DP on the probability of reaching
/// `(step, state)`.
pub fn max_visitation(mdp: &TabularEpisodicMdp, step: usize, state: usize) -> Result<f64> {
    mdp.check_state(step, state)?;
    let s_len = mdp.num_states();
    let mut reach: Vec<f64> = (0..s_len).map(|x| if x == state { 1.0 } else { 0.0 }).collect();
    for h in (0..step).rev() {
        reach = (0..s_len)
            .map(|x| {
                (0..mdp.actions_at(h, x))
                    .map(|a| mdp.transition_row(h, x, a).iter().zip(&reach).map(|(p, r)| p * r).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .collect();
    }
    Ok(mdp.initial_dist().iter().zip(&reach).map(|(m, r)| m * r).sum())
}
