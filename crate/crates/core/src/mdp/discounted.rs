use rand::Rng;

use super::{check_distribution, cumulative, sample_cdf, TabularEpisodicMdp, TrajectoryReward};
use crate::error::{Error, Result};

/// Stationary infinite-horizon MDP with discount `gamma` and per-step rewards
/// in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountedMdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    /// `S x A x S`
    transitions: Vec<f64>,
    transition_cdf: Vec<f64>,
    /// `S x A`
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
}

impl DiscountedMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        transitions: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("S and A must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("discount {gamma} outside (0, 1)")));
        }
        if transitions.len() != num_states * num_actions * num_states {
            return Err(Error::InvalidMdp(format!(
                "transition table has {} entries, expected {}",
                transitions.len(),
                num_states * num_actions * num_states
            )));
        }
        if reward.len() != num_states * num_actions {
            return Err(Error::InvalidMdp(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                num_states * num_actions
            )));
        }
        if let Some(i) = reward.iter().position(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidMdp(format!(
                "reward at (state={}, action={}) is {}, must lie in [0, 1]",
                i / num_actions,
                i % num_actions,
                reward[i]
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::InvalidMdp(format!(
                "initial distribution has {} entries, expected {num_states}",
                initial_dist.len()
            )));
        }
        check_distribution(&initial_dist).map_err(|e| Error::InvalidMdp(format!("initial distribution {e}")))?;
        for (i, row) in transitions.chunks(num_states).enumerate() {
            check_distribution(row).map_err(|e| {
                Error::InvalidMdp(format!(
                    "transition row (state={}, action={}) {e}",
                    i / num_actions,
                    i % num_actions
                ))
            })?;
        }
        let transition_cdf = transitions.chunks(num_states).flat_map(cumulative).collect();
        Ok(Self {
            num_states,
            num_actions,
            gamma,
            transitions,
            transition_cdf,
            reward,
            initial_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions + action]
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.num_actions + action) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> usize {
        let start = (state * self.num_actions + action) * self.num_states;
        let end = start + self.num_states;
        sample_cdf(&self.transition_cdf[start..end], &self.transitions[start..end], rng.gen())
    }

    fn backup(&self, values: &[f64], state: usize, action: usize) -> f64 {
        let future: f64 = self.transition_row(state, action).iter().zip(values).map(|(p, v)| p * v).sum();
        self.reward(state, action) + self.gamma * future
    }

    /// Value iteration until successive iterates differ by at most `tol` in
    /// sup norm. Returns `V*` and a greedy policy (lowest action on ties).
    pub fn value_iteration(&self, tol: f64) -> (Vec<f64>, Vec<usize>) {
        let mut v = vec![0.0; self.num_states];
        loop {
            let next: Vec<f64> = (0..self.num_states)
                .map(|s| (0..self.num_actions).map(|a| self.backup(&v, s, a)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff <= tol {
                break;
            }
        }
        let greedy = (0..self.num_states)
            .map(|s| {
                let mut best = 0;
                for a in 1..self.num_actions {
                    if self.backup(&v, s, a) > self.backup(&v, s, best) {
                        best = a;
                    }
                }
                best
            })
            .collect();
        (v, greedy)
    }

    /// `V^pi` of a stationary deterministic policy, iterated to `tol`.
    pub fn policy_value(&self, policy: &[usize], tol: f64) -> Result<Vec<f64>> {
        if policy.len() != self.num_states {
            return Err(Error::InvalidArgument(format!(
                "policy has {} entries, expected {}",
                policy.len(),
                self.num_states
            )));
        }
        if let Some(s) = policy.iter().position(|&a| a >= self.num_actions) {
            return Err(Error::InvalidArgument(format!("action {} at state {s} out of range", policy[s])));
        }
        let mut v = vec![0.0; self.num_states];
        loop {
            let next: Vec<f64> = (0..self.num_states).map(|s| self.backup(&v, s, policy[s])).collect();
            let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if diff <= tol {
                return Ok(v);
            }
        }
    }

    /// The length-`horizon` frame MDP: the stationary kernel replicated at
    /// every step and the undiscounted per-step reward as a cumulative
    /// trajectory reward.
    pub fn frame_mdp(&self, horizon: usize) -> Result<(TabularEpisodicMdp, TrajectoryReward)> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("frame length must be positive".into()));
        }
        let transitions = self.transitions.repeat(horizon - 1);
        let mdp = TabularEpisodicMdp::new(
            self.num_states,
            self.num_actions,
            horizon,
            transitions,
            self.initial_dist.clone(),
        )?;
        let reward = TrajectoryReward::cumulative(horizon, self.num_states, self.num_actions, self.reward.repeat(horizon))?;
        Ok((mdp, reward))
    }
}
