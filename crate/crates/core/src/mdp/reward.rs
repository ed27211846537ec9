use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{TabularEpisodicMdp, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Cumulative,
    TabularGeneral,
}

/// Trajectory reward `f: trajectories -> [0, D]`.
///
/// The cumulative kind sums a per-step table over the steps a (partial)
/// trajectory covers. The general kind is an explicit finite map; asking for
/// a trajectory outside the map is an error.
#[derive(Clone, Debug)]
pub struct TrajectoryReward {
    model: Model,
    bound: f64,
}

#[derive(Clone, Debug)]
enum Model {
    Cumulative {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        table: Vec<f64>,
    },
    General {
        values: HashMap<Trajectory, f64>,
    },
}

impl TrajectoryReward {
    /// Per-step rewards `r_h(s, a)` as a flat `H x S x A` table. Entries must
    /// be finite and non-negative; `D` is the sum over steps of the largest
    /// entry at that step.
    pub fn cumulative(horizon: usize, num_states: usize, num_actions: usize, table: Vec<f64>) -> Result<Self> {
        let expected = horizon * num_states * num_actions;
        if table.len() != expected {
            return Err(Error::InvalidMdp(format!(
                "reward table has {} entries, expected {expected}",
                table.len()
            )));
        }
        if let Some(i) = table.iter().position(|r| !r.is_finite() || *r < 0.0) {
            let per_step = num_states * num_actions;
            return Err(Error::InvalidMdp(format!(
                "reward at (step={}, state={}, action={}) is {}, must be finite and >= 0",
                i / per_step,
                (i % per_step) / num_actions,
                i % num_actions,
                table[i]
            )));
        }
        let bound = table
            .chunks(num_states * num_actions)
            .map(|step| step.iter().copied().fold(0.0, f64::max))
            .sum();
        Ok(Self {
            model: Model::Cumulative {
                num_states,
                num_actions,
                horizon,
                table,
            },
            bound,
        })
    }

    /// Explicit reward map. `bound` defaults to the largest value; when given
    /// it must dominate every value.
    pub fn general(entries: impl IntoIterator<Item = (Trajectory, f64)>, bound: Option<f64>) -> Result<Self> {
        let values: HashMap<Trajectory, f64> = entries.into_iter().collect();
        if let Some((t, v)) = values.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidMdp(format!("reward of {t} is {v}, must be finite and >= 0")));
        }
        let max = values.values().copied().fold(0.0, f64::max);
        let bound = match bound {
            Some(d) if d < max => {
                return Err(Error::InvalidMdp(format!("reward bound {d} below largest reward {max}")));
            }
            Some(d) => d,
            None => max,
        };
        Ok(Self {
            model: Model::General { values },
            bound,
        })
    }

    /// Tabulates `f` over every (partial) suffix trajectory of `mdp`, i.e.
    /// every start step and every state/action sequence to the last step.
    pub fn tabulate<F>(mdp: &TabularEpisodicMdp, bound: Option<f64>, mut f: F) -> Result<Self>
    where
        F: FnMut(&Trajectory) -> f64,
    {
        let per_step = (mdp.num_states() * mdp.num_actions()) as f64;
        let total: f64 = (1..=mdp.horizon()).map(|len| per_step.powi(len as i32)).sum();
        if total > super::MAX_ENUMERATED_SUFFIXES as f64 {
            return Err(Error::TooLarge(format!("{total} trajectory suffixes to tabulate")));
        }
        let mut entries = Vec::new();
        for h0 in 0..mdp.horizon() {
            let mut buf = Trajectory::new(h0, Vec::new());
            tabulate_from(mdp, h0, &mut buf, &mut |t| entries.push((t.clone(), f(t))));
        }
        Self::general(entries, bound)
    }

    pub fn kind(&self) -> RewardKind {
        match self.model {
            Model::Cumulative { .. } => RewardKind::Cumulative,
            Model::General { .. } => RewardKind::TabularGeneral,
        }
    }

    pub fn is_cumulative(&self) -> bool {
        matches!(self.model, Model::Cumulative { .. })
    }

    /// `D`, the largest reward any (partial) trajectory can receive.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `r_h(s, a)` for cumulative rewards.
    pub fn step_reward(&self, step: usize, state: usize, action: usize) -> Option<f64> {
        match &self.model {
            Model::Cumulative {
                num_states,
                num_actions,
                table,
                ..
            } => Some(table[(step * num_states + state) * num_actions + action]),
            Model::General { .. } => None,
        }
    }

    pub fn step_table(&self) -> Option<&[f64]> {
        match &self.model {
            Model::Cumulative { table, .. } => Some(table),
            Model::General { .. } => None,
        }
    }

    pub fn evaluate(&self, traj: &Trajectory) -> Result<f64> {
        match &self.model {
            Model::Cumulative {
                num_states,
                num_actions,
                horizon,
                table,
            } => {
                if traj.start_step() + traj.len() > *horizon {
                    return Err(Error::UndefinedReward(traj.to_string()));
                }
                let mut total = 0.0;
                for (i, &(s, a)) in traj.steps().iter().enumerate() {
                    let h = traj.start_step() + i;
                    if s >= *num_states || a >= *num_actions {
                        return Err(Error::UndefinedReward(traj.to_string()));
                    }
                    total += table[(h * num_states + s) * num_actions + a];
                }
                Ok(total)
            }
            Model::General { values } => values
                .get(traj)
                .copied()
                .ok_or_else(|| Error::UndefinedReward(traj.to_string())),
        }
    }

    /// Checks shape compatibility with an MDP.
    pub fn validate_for(&self, mdp: &TabularEpisodicMdp) -> Result<()> {
        if let Model::Cumulative {
            num_states,
            num_actions,
            horizon,
            ..
        } = &self.model
        {
            if (*num_states, *num_actions, *horizon) != (mdp.num_states(), mdp.num_actions(), mdp.horizon()) {
                return Err(Error::InvalidMdp(format!(
                    "reward table shape (S={num_states}, A={num_actions}, H={horizon}) does not match MDP"
                )));
            }
        }
        Ok(())
    }
}

fn tabulate_from(
    mdp: &TabularEpisodicMdp,
    step: usize,
    buf: &mut Trajectory,
    emit: &mut dyn FnMut(&Trajectory),
) {
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            buf.push(s, a);
            if step + 1 == mdp.horizon() {
                emit(buf);
            } else {
                tabulate_from(mdp, step + 1, buf, emit);
            }
            let len = buf.len() - 1;
            buf.truncate(len);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_sums_suffix_and_bounds() {
        // H=2, S=1, A=2
        let f = TrajectoryReward::cumulative(2, 1, 2, vec![0.0, 0.5, 10.0, 1.0]).unwrap();
        assert_eq!(f.bound(), 10.5);
        let t = Trajectory::new(0, vec![(0, 1), (0, 0)]);
        assert_eq!(f.evaluate(&t).unwrap(), 10.5);
        let suffix = Trajectory::new(1, vec![(0, 1)]);
        assert_eq!(f.evaluate(&suffix).unwrap(), 1.0);
        let too_long = Trajectory::new(1, vec![(0, 1), (0, 1)]);
        assert!(f.evaluate(&too_long).is_err());
    }

    #[test]
    fn negative_reward_rejected() {
        assert!(TrajectoryReward::cumulative(1, 1, 2, vec![0.0, -0.1]).is_err());
    }

    #[test]
    fn general_map_lookup_and_bound_check() {
        let t = Trajectory::new(0, vec![(0, 0)]);
        let f = TrajectoryReward::general([(t.clone(), 2.0)], None).unwrap();
        assert_eq!(f.bound(), 2.0);
        assert_eq!(f.evaluate(&t).unwrap(), 2.0);
        let missing = Trajectory::new(0, vec![(0, 1)]);
        assert!(matches!(f.evaluate(&missing), Err(Error::UndefinedReward(_))));
        assert!(TrajectoryReward::general([(t, 2.0)], Some(1.0)).is_err());
    }

    #[test]
    fn tabulate_covers_every_suffix() {
        let mdp = TabularEpisodicMdp::new(2, 2, 2, vec![0.5; 8], vec![0.5, 0.5]).unwrap();
        let f = TrajectoryReward::tabulate(&mdp, None, |t| t.len() as f64).unwrap();
        // 4 single-step suffixes per start step, 16 two-step trajectories
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(f.evaluate(&Trajectory::new(1, vec![(s, a)])).unwrap(), 1.0);
                assert_eq!(f.evaluate(&Trajectory::new(0, vec![(s, a), (1 - s, a)])).unwrap(), 2.0);
            }
        }
    }
}
