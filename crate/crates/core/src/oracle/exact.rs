//! Exact batch-comparison probabilities.
//!
//! The suffix reward of each arm is enumerated, quantised to integer ticks,
//! and convolved `M` times by repeated squaring. Comparing two batch sums is
//! then a merge over two sorted supports.

use std::collections::HashMap;

use crate::error::{invalid, Error, Result};
use crate::mdp::{optimal_policy_bruteforce, suffix_reward_distribution, DeterministicPolicy, TabularEpisodicMdp, TrajectoryReward};

/// Reward resolution used by every comparison, sampled or exact.
pub const QUANTUM: f64 = 1e-12;

/// Largest support a batch-sum distribution may reach.
pub const MAX_CONVOLUTION_ATOMS: usize = 1_000_000;

/// Pairwise products one convolution may perform.
const MAX_CONVOLUTION_WORK: u64 = 200_000_000;

pub(crate) fn quantize(value: f64) -> Result<i64> {
    let ticks = (value / QUANTUM).round();
    if !ticks.is_finite() || ticks.abs() > 4e18 {
        return Err(Error::TooLarge(format!("reward {value} does not fit the tick grid")));
    }
    Ok(ticks as i64)
}

type Dist = Vec<(i64, f64)>;

fn merge_sorted(mut atoms: Vec<(i64, f64)>) -> Dist {
    atoms.sort_unstable_by_key(|a| a.0);
    let mut out: Dist = Vec::with_capacity(atoms.len());
    for (t, p) in atoms {
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 += p,
            _ => out.push((t, p)),
        }
    }
    out
}

fn convolve(a: &Dist, b: &Dist) -> Result<Dist> {
    let work = a.len() as u64 * b.len() as u64;
    if work > MAX_CONVOLUTION_WORK {
        return Err(Error::TooLarge(format!(
            "convolving supports of {} and {} atoms",
            a.len(),
            b.len()
        )));
    }
    let mut acc: HashMap<i64, f64> = HashMap::with_capacity(a.len().max(b.len()) * 2);
    for &(ta, pa) in a {
        for &(tb, pb) in b {
            let t = ta
                .checked_add(tb)
                .ok_or_else(|| Error::TooLarge("batch reward sum overflows the tick grid".into()))?;
            *acc.entry(t).or_insert(0.0) += pa * pb;
        }
    }
    if acc.len() > MAX_CONVOLUTION_ATOMS {
        return Err(Error::TooLarge(format!(
            "batch-sum support of {} atoms exceeds {MAX_CONVOLUTION_ATOMS}",
            acc.len()
        )));
    }
    Ok(merge_sorted(acc.into_iter().collect()))
}

/// Distribution of the sum of `m` i.i.d. draws from `atoms` (given as
/// `(value, probability)`), on the tick grid, sorted by tick.
pub fn batch_sum_distribution(atoms: &[(f64, f64)], m: usize) -> Result<Vec<(i64, f64)>> {
    if m == 0 {
        return invalid("batch size must be positive");
    }
    let mut base = Vec::with_capacity(atoms.len());
    for &(v, p) in atoms {
        if p > 0.0 {
            base.push((quantize(v)?, p));
        }
    }
    let mut base = merge_sorted(base);
    if base.len() > MAX_CONVOLUTION_ATOMS {
        return Err(Error::TooLarge(format!("{} distinct suffix rewards", base.len())));
    }
    let mut result: Option<Dist> = None;
    let mut k = m;
    loop {
        if k & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => convolve(&r, &base)?,
            });
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        base = convolve(&base, &base)?;
    }
    Ok(result.expect("m >= 1"))
}

/// `P(X > Y) + P(X = Y) / 2` for independent `X ~ x`, `Y ~ y` (sorted).
fn win_probability(x: &Dist, y: &Dist) -> f64 {
    let (mut j, mut below) = (0, 0.0);
    let mut total = 0.0;
    for &(t, p) in x {
        while j < y.len() && y[j].0 < t {
            below += y[j].1;
            j += 1;
        }
        let tie = if j < y.len() && y[j].0 == t { y[j].1 } else { 0.0 };
        total += p * (below + 0.5 * tie);
    }
    total
}

fn arm_distribution(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    step: usize,
    state: usize,
    action: usize,
    tail: &DeterministicPolicy,
    m: usize,
) -> Result<Dist> {
    batch_sum_distribution(&suffix_reward_distribution(mdp, reward, step, state, action, tail)?, m)
}

/// Orients a probability computed for the lower-indexed arm so that
/// `p(a, b) + p(b, a) == 1` holds exactly in floating point.
fn oriented(a0: usize, a1: usize, lower_wins: f64) -> f64 {
    if a0 < a1 {
        lower_wins
    } else {
        1.0 - lower_wins
    }
}

/// Probability that a batch of `m` suffixes starting with `a0` beats one
/// starting with `a1` (both following `tail` afterwards), ties counted half.
#[allow(clippy::too_many_arguments)]
pub fn exact_preference_probability(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    step: usize,
    state: usize,
    a0: usize,
    a1: usize,
    tail: &DeterministicPolicy,
    m: usize,
) -> Result<f64> {
    if m == 0 {
        return invalid("batch size must be positive");
    }
    mdp.check_action(step, state, a0)?;
    mdp.check_action(step, state, a1)?;
    if a0 == a1 {
        return Ok(0.5);
    }
    let (lo, hi) = (a0.min(a1), a0.max(a1));
    let x = arm_distribution(mdp, reward, step, state, lo, tail, m)?;
    let y = arm_distribution(mdp, reward, step, state, hi, tail, m)?;
    Ok(oriented(a0, a1, win_probability(&x, &y)))
}

/// `ceil(8 D^2 / delta_min^2)`.
pub fn lemma1_batch_bound(reward_bound: f64, delta_min: f64) -> Result<u64> {
    if !(reward_bound > 0.0 && reward_bound.is_finite()) || !(delta_min > 0.0 && delta_min.is_finite()) {
        return invalid(format!(
            "reward bound and gap must be positive (got D={reward_bound}, gap={delta_min})"
        ));
    }
    Ok((8.0 * reward_bound * reward_bound / (delta_min * delta_min)).ceil() as u64)
}

/// Exact preference oracles against a fixed optimal tail policy.
#[derive(Clone, Debug)]
pub struct ExactPreference<'a> {
    mdp: &'a TabularEpisodicMdp,
    reward: &'a TrajectoryReward,
    optimal: DeterministicPolicy,
}

impl<'a> ExactPreference<'a> {
    /// Computes the optimal policy by brute force.
    pub fn new(mdp: &'a TabularEpisodicMdp, reward: &'a TrajectoryReward) -> Result<Self> {
        let optimal = optimal_policy_bruteforce(mdp, reward)?;
        Ok(Self { mdp, reward, optimal })
    }

    pub fn with_optimal(mdp: &'a TabularEpisodicMdp, reward: &'a TrajectoryReward, optimal: DeterministicPolicy) -> Self {
        Self { mdp, reward, optimal }
    }

    pub fn optimal(&self) -> &DeterministicPolicy {
        &self.optimal
    }

    pub fn probability(&self, step: usize, state: usize, a0: usize, a1: usize, m: usize) -> Result<f64> {
        exact_preference_probability(self.mdp, self.reward, step, state, a0, a1, &self.optimal, m)
    }

    /// `p(pi*_h(s), a) - 1/2`.
    pub fn probability_gap(&self, step: usize, state: usize, action: usize, m: usize) -> Result<f64> {
        let star = self.optimal.action(step, state)?;
        Ok(self.probability(step, state, star, action, m)? - 0.5)
    }

    pub fn condorcet_winner(&self, step: usize, state: usize, m: usize) -> Result<Option<usize>> {
        Ok(self.table_at(step, state, m)?.condorcet_winner())
    }

    fn table_at(&self, step: usize, state: usize, m: usize) -> Result<StateTable> {
        if m == 0 {
            return invalid("batch size must be positive");
        }
        self.mdp.check_state(step, state)?;
        let n = self.mdp.actions_at(step, state);
        let dists = (0..n)
            .map(|a| arm_distribution(self.mdp, self.reward, step, state, a, &self.optimal, m))
            .collect::<Result<Vec<_>>>()?;
        let mut probs = vec![0.5; n * n];
        for lo in 0..n {
            for hi in lo + 1..n {
                let q = win_probability(&dists[lo], &dists[hi]);
                probs[lo * n + hi] = oriented(lo, hi, q);
                probs[hi * n + lo] = oriented(hi, lo, q);
            }
        }
        Ok(StateTable { n, probs })
    }

    /// Every pairwise probability at every (step, state) for batch size `m`.
    pub fn table(&self, m: usize) -> Result<PreferenceTable> {
        let (h_len, s_len, a_len) = (self.mdp.horizon(), self.mdp.num_states(), self.mdp.num_actions());
        let mut probs = vec![f64::NAN; h_len * s_len * a_len * a_len];
        for h in 0..h_len {
            for s in 0..s_len {
                let t = self.table_at(h, s, m)?;
                for a in 0..t.n {
                    for b in 0..t.n {
                        probs[((h * s_len + s) * a_len + a) * a_len + b] = t.probs[a * t.n + b];
                    }
                }
            }
        }
        Ok(PreferenceTable {
            num_states: s_len,
            num_actions: a_len,
            batch_size: m,
            action_counts: self.mdp.action_counts().to_vec(),
            optimal: self.optimal.clone(),
            probs,
        })
    }
}

struct StateTable {
    n: usize,
    probs: Vec<f64>,
}

impl StateTable {
    fn condorcet_winner(&self) -> Option<usize> {
        (0..self.n).find(|&a| (0..self.n).all(|b| b == a || self.probs[a * self.n + b] > 0.5))
    }
}

/// `p(h, s, a, a')` for every pair, at one batch size.
#[derive(Clone, Debug)]
pub struct PreferenceTable {
    num_states: usize,
    num_actions: usize,
    batch_size: usize,
    action_counts: Vec<usize>,
    optimal: DeterministicPolicy,
    probs: Vec<f64>,
}

impl PreferenceTable {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn optimal(&self) -> &DeterministicPolicy {
        &self.optimal
    }

    pub fn actions_at(&self, step: usize, state: usize) -> usize {
        self.action_counts[step * self.num_states + state]
    }

    pub fn get(&self, step: usize, state: usize, a0: usize, a1: usize) -> f64 {
        self.probs[((step * self.num_states + state) * self.num_actions + a0) * self.num_actions + a1]
    }

    pub fn condorcet_winner(&self, step: usize, state: usize) -> Option<usize> {
        let n = self.actions_at(step, state);
        (0..n).find(|&a| (0..n).all(|b| b == a || self.get(step, state, a, b) > 0.5))
    }

    /// Smallest `p(pi*, a) - 1/2` over every sub-optimal available action.
    pub fn min_gap(&self) -> Option<f64> {
        let horizon = self.action_counts.len() / self.num_states;
        let mut out: Option<f64> = None;
        for h in 0..horizon {
            for s in 0..self.num_states {
                let star = self.optimal.get(h, s)?;
                for a in (0..self.actions_at(h, s)).filter(|&a| a != star) {
                    let g = self.get(h, s, star, a) - 0.5;
                    out = Some(out.map_or(g, |m: f64| m.min(g)));
                }
            }
        }
        out
    }

    /// True when the optimal action is the Condorcet winner everywhere.
    pub fn certifies_optimal(&self) -> bool {
        self.min_gap().is_none_or(|g| g > 0.0)
    }
}

/// `p(pi*_h(s), a) - 1/2` with `pi*` from the brute-force oracle.
pub fn probability_gap(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    step: usize,
    state: usize,
    action: usize,
    m: usize,
) -> Result<f64> {
    ExactPreference::new(mdp, reward)?.probability_gap(step, state, action, m)
}

/// The action beating every rival with probability above 1/2, if any.
pub fn condorcet_winner(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    step: usize,
    state: usize,
    m: usize,
) -> Result<Option<usize>> {
    ExactPreference::new(mdp, reward)?.condorcet_winner(step, state, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::build_counterexample_mdp;
    use approx::assert_abs_diff_eq;

    /// `P(a1 batch beats a2 batch)` on the two-step counter-example with
    /// D=10, eps=0.1, from the binomial count K of high-reward draws:
    /// a1 sums to 10K + 0.9(M-K), a2 to M, so a1 wins iff 91K > M.
    fn binomial_oracle(m: u64) -> f64 {
        let (p, q) = (0.1f64, 0.9f64);
        let mut total = 0.0;
        let mut log_choose = 0.0f64;
        for k in 0..=m {
            if k > 0 {
                log_choose += ((m - k + 1) as f64).ln() - (k as f64).ln();
            }
            let mass = (log_choose + k as f64 * p.ln() + (m - k) as f64 * q.ln()).exp();
            match (91 * k).cmp(&m) {
                std::cmp::Ordering::Greater => total += mass,
                std::cmp::Ordering::Equal => total += 0.5 * mass,
                std::cmp::Ordering::Less => {}
            }
        }
        total
    }

    #[test]
    fn counterexample_reversal() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let ex = ExactPreference::new(&mdp, &f).unwrap();
        assert_eq!(ex.optimal().get(0, 0), Some(0));
        assert_abs_diff_eq!(ex.probability(0, 0, 0, 1, 1).unwrap(), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(ex.probability_gap(0, 0, 1, 1).unwrap(), -0.4, epsilon = 1e-12);
        assert_eq!(ex.condorcet_winner(0, 0, 1).unwrap(), Some(1));
        assert_eq!(ex.probability(0, 0, 1, 1, 5).unwrap(), 0.5);
        assert_eq!(ex.probability_gap(0, 0, 0, 5).unwrap(), 0.0);
    }

    #[test]
    fn matches_binomial_closed_form() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let ex = ExactPreference::new(&mdp, &f).unwrap();
        for m in [1, 2, 3, 8, 50, 90, 91, 92, 182, 400, 1220] {
            let got = ex.probability(0, 0, 0, 1, m).unwrap();
            assert_abs_diff_eq!(got, binomial_oracle(m as u64), epsilon = 1e-9);
        }
    }

    #[test]
    fn gap_increases_and_crosses_zero() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let ex = ExactPreference::new(&mdp, &f).unwrap();
        let gaps: Vec<f64> = [1, 2, 4, 8, 16, 32, 64]
            .iter()
            .map(|&m| ex.probability_gap(0, 0, 1, m).unwrap())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] > w[0]), "{gaps:?}");
        assert!(gaps[0] < 0.0 && *gaps.last().unwrap() > 0.0);
        assert_eq!(ex.condorcet_winner(0, 0, 64).unwrap(), Some(0));
    }

    #[test]
    fn hoeffding_level_at_lemma_bound() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let m = lemma1_batch_bound(10.0, 0.81).unwrap();
        assert_eq!(m, 1220);
        let p = exact_preference_probability(&mdp, &f, 0, 0, 0, 1, &DeterministicPolicy::constant(2, 4, 0), m as usize).unwrap();
        assert!(p >= 1.0 - (-4.0f64).exp(), "{p}");
    }

    #[test]
    fn lemma_bound_arithmetic() {
        assert_eq!(lemma1_batch_bound(1.0, 1.0).unwrap(), 8);
        assert_eq!(lemma1_batch_bound(3.0, 6.0).unwrap(), 2);
        assert!(lemma1_batch_bound(0.0, 1.0).is_err());
        assert!(lemma1_batch_bound(1.0, -1.0).is_err());
    }

    #[test]
    fn batch_sum_of_fair_coin() {
        let d = batch_sum_distribution(&[(0.0, 0.5), (1.0, 0.5)], 4).unwrap();
        let probs: Vec<f64> = d.iter().map(|a| a.1).collect();
        let expect = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        for (p, e) in probs.iter().zip(expect) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-15);
        }
        assert_eq!(d[4].0, quantize(4.0).unwrap());
    }

    #[test]
    fn huge_support_is_refused() {
        // 1000 incommensurable atoms squared blow past the atom limit
        let atoms: Vec<(f64, f64)> = (0..1000).map(|i| ((i as f64).sqrt() * 0.731 + i as f64 * 1e-7, 1e-3)).collect();
        assert!(matches!(batch_sum_distribution(&atoms, 4), Err(Error::TooLarge(_))));
        assert!(batch_sum_distribution(&atoms, 0).is_err());
    }
}
