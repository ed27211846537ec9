//! Budgeted algorithm runs that produce value traces on a common episode grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bsad::{BsadConfig, BsadRun, StoppingRule, Termination};
use crate::error::{invalid, Error, Result};
use crate::exploration::learning_rate;
use crate::mdp::{initial_value, DeterministicPolicy, TabularEpisodicMdp, TrajectoryReward};
use crate::oracle::PreferenceOracle;

/// One evaluation of the candidate policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub episode: u64,
    pub policy_value: f64,
    pub queries: u64,
}

#[derive(Clone, Debug)]
pub struct AlgorithmTrace {
    /// Points at `cadence, 2 * cadence, ..` up to the budget.
    pub points: Vec<TracePoint>,
    pub policy: DeterministicPolicy,
    /// Episodes actually played (BSAD may stop before the budget).
    pub episodes_used: u64,
    pub termination: String,
}

impl AlgorithmTrace {
    pub fn final_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.policy_value)
    }
}

fn check_grid(budget: u64, cadence: u64) -> Result<()> {
    if cadence == 0 || budget < cadence {
        return invalid(format!("need budget >= cadence >= 1 (budget {budget}, cadence {cadence})"));
    }
    Ok(())
}

/// Plays BSAD (or its fixed-budget variant, per `config.stopping`) for at
/// most `budget` episodes. After termination the returned policy is held
/// fixed for the rest of the grid.
pub fn bsad_trace(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    config: &BsadConfig,
    budget: u64,
    cadence: u64,
) -> Result<AlgorithmTrace> {
    check_grid(budget, cadence)?;
    let oracle = PreferenceOracle::new(reward, config.tie_rule, config.oracle_seed());
    let mut run = BsadRun::new(mdp, reward, oracle, config.clone())?;
    let mut points = Vec::with_capacity((budget / cadence) as usize);
    for episode in 1..=budget {
        run.step()?;
        if episode % cadence == 0 {
            points.push(TracePoint {
                episode,
                policy_value: run.policy_value()?,
                queries: run.oracle().queries(),
            });
        }
    }
    let termination = match run.termination() {
        Some(Termination::Identified) => "identified",
        Some(Termination::Budget) => "budget",
        Some(Termination::Cap) => "cap",
        None => "unfinished",
    };
    Ok(AlgorithmTrace {
        points,
        policy: run.policy().clone(),
        episodes_used: run.episodes(),
        termination: termination.to_string(),
    })
}

/// BSAD with the stopping rule replaced by a fixed per-state visit budget;
/// each step also closes once `budget / H` episodes have been spent on it.
pub fn peps_fixed_horizon(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    visits_per_state: u64,
    config: &BsadConfig,
    budget: u64,
    cadence: u64,
) -> Result<AlgorithmTrace> {
    if visits_per_state == 0 {
        return invalid("per-state visit budget must be positive");
    }
    let quota = (budget / mdp.horizon() as u64).max(1);
    let config = BsadConfig {
        stopping: StoppingRule::FixedBudget {
            visits: visits_per_state,
            quota,
        },
        ..config.clone()
    };
    bsad_trace(mdp, reward, &config, budget, cadence)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QLearningConfig {
    pub delta: f64,
    /// Multiplier on `sqrt(H iota / t)`.
    pub bonus_scale: f64,
    pub seed: u64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            bonus_scale: 1.0,
            seed: 0,
        }
    }
}

/// `sqrt(H iota / t)` with `t` clamped to at least 1.
pub fn q_learning_bonus(t: u64, horizon: usize, iota: f64) -> f64 {
    (horizon as f64 * iota / t.max(1) as f64).sqrt()
}

/// Optimistic Q-learning with a Hoeffding bonus, learning from observed
/// per-step rewards. Values are capped at the reward bound; the reported
/// policy is greedy in Q with ties to the lowest action.
pub fn q_learning_ucb(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    budget: u64,
    cadence: u64,
    config: &QLearningConfig,
) -> Result<AlgorithmTrace> {
    check_grid(budget, cadence)?;
    if reward.step_table().is_none() {
        return Err(Error::Unsupported(
            "Q-learning needs per-step rewards; the trajectory reward is not cumulative".into(),
        ));
    }
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return invalid(format!("delta {} outside (0, 1)", config.delta));
    }
    reward.validate_for(mdp)?;
    let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let cap = reward.bound();
    let iota = ((s_len * a_len * h_len) as f64 * budget as f64 / config.delta).ln();
    let idx = |h: usize, s: usize, a: usize| (h * s_len + s) * a_len + a;
    let mut q = vec![cap; h_len * s_len * a_len];
    let mut n = vec![0u64; h_len * s_len * a_len];
    let mut v = vec![cap; (h_len + 1) * s_len];
    v[h_len * s_len..].fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let greedy = |q: &[f64], h: usize, s: usize| {
        (0..mdp.actions_at(h, s)).fold(0, |b, a| if q[idx(h, s, a)] > q[idx(h, s, b)] { a } else { b })
    };
    let policy_of = |q: &[f64]| {
        let mut pi = DeterministicPolicy::unset(h_len, s_len);
        for h in 0..h_len {
            for s in 0..s_len {
                pi.set(h, s, greedy(q, h, s));
            }
        }
        pi
    };

    let mut points = Vec::with_capacity((budget / cadence) as usize);
    let mut ties = Vec::with_capacity(a_len);
    for episode in 1..=budget {
        let mut s = mdp.sample_initial(&mut rng);
        for h in 0..h_len {
            let k = mdp.actions_at(h, s);
            let best = (0..k).map(|a| q[idx(h, s, a)]).fold(f64::NEG_INFINITY, f64::max);
            ties.clear();
            ties.extend((0..k).filter(|&a| q[idx(h, s, a)] == best));
            let a = ties[if ties.len() == 1 { 0 } else { rng.gen_range(0..ties.len()) }];
            let r = reward.step_reward(h, s, a).expect("cumulative reward");
            let next = if h + 1 < h_len { mdp.sample_next(h, s, a, &mut rng) } else { 0 };
            let i = idx(h, s, a);
            n[i] += 1;
            let t = n[i];
            let alpha = learning_rate(t, h_len);
            let target = r + v[(h + 1) * s_len + next] + config.bonus_scale * q_learning_bonus(t, h_len, iota);
            q[i] = (1.0 - alpha) * q[i] + alpha * target;
            let top = (0..k).map(|b| q[idx(h, s, b)]).fold(f64::NEG_INFINITY, f64::max);
            v[h * s_len + s] = top.min(cap);
            s = next;
        }
        if episode % cadence == 0 {
            points.push(TracePoint {
                episode,
                policy_value: initial_value(mdp, reward, &policy_of(&q))?,
                queries: 0,
            });
        }
    }
    Ok(AlgorithmTrace {
        points,
        policy: policy_of(&q),
        episodes_used: budget,
        termination: "budget".to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::build_counterexample_mdp;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bonus_at_first_visit() {
        assert_abs_diff_eq!(q_learning_bonus(1, 3, 2.5), 7.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(q_learning_bonus(0, 3, 2.5), q_learning_bonus(1, 3, 2.5));
    }

    #[test]
    fn q_learning_finds_optimum_on_counterexample() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let tr = q_learning_ucb(&mdp, &f, 10_000, 1_000, &QLearningConfig::default()).unwrap();
        assert_eq!(tr.points.len(), 10);
        assert!((tr.final_value().unwrap() - 1.81).abs() <= 0.05, "{:?}", tr.final_value());
    }

    #[test]
    fn q_learning_single_action_value_is_exact() {
        let mdp = TabularEpisodicMdp::new(2, 1, 2, vec![0.5, 0.5, 0.2, 0.8], vec![0.3, 0.7]).unwrap();
        let f = TrajectoryReward::cumulative(2, 2, 1, vec![0.1, 0.4, 1.0, 0.0]).unwrap();
        let tr = q_learning_ucb(&mdp, &f, 5, 1, &QLearningConfig::default()).unwrap();
        let exact = initial_value(&mdp, &f, &DeterministicPolicy::constant(2, 2, 0)).unwrap();
        assert!(tr.points.iter().all(|p| p.policy_value == exact));
    }

    #[test]
    fn q_learning_rejects_general_rewards() {
        let (mdp, _) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let g = TrajectoryReward::tabulate(&mdp, Some(1.0), |t| t.len() as f64 / 2.0).unwrap();
        let err = q_learning_ucb(&mdp, &g, 10, 1, &QLearningConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "unsupported");
    }

    #[test]
    fn bsad_trace_pads_after_termination() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let config = BsadConfig { batch_size: 2, ..BsadConfig::default() };
        let tr = bsad_trace(&mdp, &f, &config, 50_000, 5_000).unwrap();
        assert_eq!(tr.termination, "identified");
        assert!(tr.episodes_used < 50_000);
        let last = tr.points.last().unwrap().policy_value;
        assert_eq!(last, initial_value(&mdp, &f, &tr.policy).unwrap());
        assert!(tr.points.windows(2).all(|w| w[1].episode == w[0].episode + 5_000));
    }

    #[test]
    fn peps_unit_budget_is_a_coin_flip() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let runs = 200;
        let mut mean = 0.0;
        for seed in 0..runs {
            let config = BsadConfig { batch_size: 4, seed, ..BsadConfig::default() };
            let tr = peps_fixed_horizon(&mdp, &f, 1, &config, 10, 10).unwrap();
            assert_eq!(tr.termination, "budget");
            mean += tr.final_value().unwrap() / runs as f64;
        }
        // uniform policy at s0: (1.81 + 1.0) / 2
        assert!((mean - 1.405).abs() < 0.1, "{mean}");
    }

    #[test]
    fn grid_is_validated() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        assert!(bsad_trace(&mdp, &f, &BsadConfig::default(), 10, 0).is_err());
        assert!(bsad_trace(&mdp, &f, &BsadConfig::default(), 10, 20).is_err());
    }
}
