//! Instance builders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::mdp::{optimal_policy_bruteforce, value_gaps, DiscountedMdp, TabularEpisodicMdp, TrajectoryReward};

/// The two-step instance where the optimal first action loses most
/// single-trajectory comparisons.
///
/// States `0..copies` are first-step copies of `s0` (initial weights
/// `initial_weights`); then `s1`, `s2`, `s3`. Action 0 (`a1`) leads to `s1`
/// with probability `1/D` (reward `D`) and to `s2` otherwise (reward
/// `1 - eps`); action 1 (`a2`) leads to `s3` (reward 1). Only the `s0`
/// copies have two actions, and only at the first step; every other
/// (step, state) has the single action 0.
pub fn build_counterexample_mdp(
    reward_bound: f64,
    epsilon: f64,
    copies: usize,
    initial_weights: &[f64],
) -> Result<(TabularEpisodicMdp, TrajectoryReward)> {
    if !(reward_bound > 2.0 && reward_bound.is_finite()) {
        return invalid(format!("D must exceed 2 (got {reward_bound})"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("eps must lie in (0, 1) (got {epsilon})"));
    }
    if copies == 0 {
        return invalid("need at least one copy of s0");
    }
    if initial_weights.len() != copies {
        return invalid(format!("{} initial weights for {copies} copies", initial_weights.len()));
    }
    if initial_weights.iter().any(|w| !(*w >= 0.0)) || (initial_weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return invalid(format!("initial weights {initial_weights:?} must be a distribution"));
    }
    let (s1, s2, s3) = (copies, copies + 1, copies + 2);
    let s_len = copies + 3;
    let a_len = 2;
    let idx = |s: usize, a: usize, n: usize| (s * a_len + a) * s_len + n;
    let mut t = vec![0.0; s_len * a_len * s_len];
    for c in 0..copies {
        t[idx(c, 0, s1)] = 1.0 / reward_bound;
        t[idx(c, 0, s2)] = 1.0 - 1.0 / reward_bound;
        t[idx(c, 1, s3)] = 1.0;
    }
    for s in copies..s_len {
        for a in 0..a_len {
            t[idx(s, a, s)] = 1.0;
        }
    }
    let mut initial = initial_weights.to_vec();
    initial.extend([0.0; 3]);
    let mut counts = vec![1; 2 * s_len];
    counts[..copies].fill(2);
    let mdp = TabularEpisodicMdp::new(s_len, a_len, 2, t, initial)?.with_action_counts(counts)?;
    let mut r = vec![0.0; 2 * s_len * a_len];
    for (s, v) in [(s1, reward_bound), (s2, 1.0 - epsilon), (s3, 1.0)] {
        r[(s_len + s) * a_len] = v;
    }
    let reward = TrajectoryReward::cumulative(2, s_len, a_len, r)?;
    Ok((mdp, reward))
}

/// Rewards are drawn on this grid so batch sums stay on a lattice and exact
/// convolutions stay small.
const REWARD_GRID: f64 = 0.05;

const MAX_REJECTIONS: usize = 10_000;

fn dirichlet_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // push the rounding residue onto the largest entry
    let residue = 1.0 - row.iter().sum::<f64>();
    let top = (0..n).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
    row[top] += residue;
    row
}

/// Random cumulative-reward instance with a unique optimal action at every
/// (step, state) and every value gap at least `min_gap`.
///
/// Generator, per attempt: the initial distribution and every transition
/// row are flat-Dirichlet draws; at each (step, state) one favoured action
/// gets a reward in `{0.30, 0.35, .., 1.00}` and the others rewards in
/// `{0.00, 0.05, .., 0.70}`. Attempts are rejected until the brute-force
/// oracle reports all gaps `>= min_gap`.
pub fn build_random_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    seed: u64,
    min_gap: f64,
) -> Result<(TabularEpisodicMdp, TrajectoryReward)> {
    if !(min_gap > 0.0) {
        return invalid(format!("minimum gap must be positive (got {min_gap})"));
    }
    if num_states == 0 || num_actions < 2 || horizon == 0 {
        return invalid("need S >= 1, A >= 2, H >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_REJECTIONS {
        let initial = dirichlet_row(&mut rng, num_states);
        let mut t = Vec::with_capacity((horizon - 1) * num_states * num_actions * num_states);
        for _ in 0..(horizon - 1) * num_states * num_actions {
            t.extend(dirichlet_row(&mut rng, num_states));
        }
        let mut r = Vec::with_capacity(horizon * num_states * num_actions);
        for _ in 0..horizon * num_states {
            let favoured = rng.gen_range(0..num_actions);
            for a in 0..num_actions {
                let k = if a == favoured { rng.gen_range(6..=20) } else { rng.gen_range(0..=14) };
                r.push(k as f64 * REWARD_GRID);
            }
        }
        let mdp = TabularEpisodicMdp::new(num_states, num_actions, horizon, t, initial)?;
        let reward = TrajectoryReward::cumulative(horizon, num_states, num_actions, r)?;
        let optimal = optimal_policy_bruteforce(&mdp, &reward)?;
        let gaps = value_gaps(&mdp, &reward, &optimal)?;
        if gaps.min_gap().is_some_and(|g| g >= min_gap) {
            return Ok((mdp, reward));
        }
    }
    Err(Error::Generation(format!(
        "no instance with gaps >= {min_gap} after {MAX_REJECTIONS} attempts"
    )))
}

/// Three-state instance for the discounted wrapper. Every transition row
/// keeps at least 0.2 mass on each state, so frames started from wherever
/// the last one ended still reach every state. Action 0 pays 0.3 more than
/// action 1 and drifts toward the higher-paying states. Starts in state 0.
pub fn build_discounted_chain(gamma: f64) -> Result<DiscountedMdp> {
    #[rustfmt::skip]
    let transitions = vec![
        // state 0: a0, a1
        0.3, 0.5, 0.2,   0.6, 0.2, 0.2,
        // state 1
        0.2, 0.3, 0.5,   0.4, 0.4, 0.2,
        // state 2
        0.2, 0.2, 0.6,   0.3, 0.4, 0.3,
    ];
    let reward = vec![0.5, 0.2, 0.6, 0.3, 0.7, 0.4];
    DiscountedMdp::new(3, 2, gamma, transitions, reward, vec![1.0, 0.0, 0.0])
}
