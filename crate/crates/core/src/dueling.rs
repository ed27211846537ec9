//! Batched relative-UCB dueling at one (step, state).
//!
//! Visits to `(h, s)` are grouped into blocks of `2M`. The first `M` visits
//! of a block play the champion and collect its suffix trajectories, the
//! next `M` play the challenger, and the last visit sends both batches to
//! the preference oracle.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::mdp::{rollout_suffix, DeterministicPolicy, TabularEpisodicMdp, Trajectory};
use crate::oracle::{PreferenceOracle, QueryRow, TrajectoryBatch};

/// Win counts `w` and comparison counts `N` over `(h, s, a, a')`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceStats {
    num_states: usize,
    num_actions: usize,
    wins: Vec<u64>,
    counts: Vec<u64>,
}

impl PreferenceStats {
    pub fn new(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let len = horizon * num_states * num_actions * num_actions;
        Self {
            num_states,
            num_actions,
            wins: vec![0; len],
            counts: vec![0; len],
        }
    }

    pub fn for_mdp(mdp: &TabularEpisodicMdp) -> Self {
        Self::new(mdp.horizon(), mdp.num_states(), mdp.num_actions())
    }

    fn idx(&self, step: usize, state: usize, a: usize, b: usize) -> usize {
        ((step * self.num_states + state) * self.num_actions + a) * self.num_actions + b
    }

    pub fn wins(&self, step: usize, state: usize, a: usize, b: usize) -> u64 {
        self.wins[self.idx(step, state, a, b)]
    }

    pub fn count(&self, step: usize, state: usize, a: usize, b: usize) -> u64 {
        self.counts[self.idx(step, state, a, b)]
    }

    /// `w / N`, or 1/2 before the first comparison.
    pub fn sigma_hat(&self, step: usize, state: usize, a: usize, b: usize) -> f64 {
        let i = self.idx(step, state, a, b);
        match self.counts[i] {
            0 => 0.5,
            n => self.wins[i] as f64 / n as f64,
        }
    }

    /// `sqrt(iota / max(N, 1))`.
    pub fn bonus(&self, step: usize, state: usize, a: usize, b: usize, iota: f64) -> f64 {
        (iota / self.count(step, state, a, b).max(1) as f64).sqrt()
    }

    /// Records one comparison; `sigma = 1` means the challenger won.
    pub fn record(&mut self, step: usize, state: usize, champion: usize, challenger: usize, sigma: u8) {
        let (cc, hc) = (self.idx(step, state, challenger, champion), self.idx(step, state, champion, challenger));
        self.wins[cc] += sigma as u64;
        self.wins[hc] += 1 - sigma as u64;
        self.counts[cc] += 1;
        self.counts[hc] += 1;
    }

    /// Test support: sets `w(a, b)`, `N(a, b)` and the mirrored pair.
    pub fn set_pair(&mut self, step: usize, state: usize, a: usize, b: usize, wins: u64, count: u64) {
        assert!(wins <= count);
        let (ab, ba) = (self.idx(step, state, a, b), self.idx(step, state, b, a));
        self.wins[ab] = wins;
        self.wins[ba] = count - wins;
        self.counts[ab] = count;
        self.counts[ba] = count;
    }
}

/// Actions whose upper bound reaches 1/2 against every rival.
pub fn candidate_set(stats: &PreferenceStats, step: usize, state: usize, num_actions: usize, iota: f64) -> Vec<usize> {
    (0..num_actions)
        .filter(|&a| {
            (0..num_actions)
                .filter(|&b| b != a)
                .all(|b| stats.sigma_hat(step, state, a, b) + stats.bonus(step, state, a, b, iota) >= 0.5)
        })
        .collect()
}

/// The action whose lower bound beats 1/2 against every rival, if any.
/// Single-action states identify their only action.
pub fn identified_action(stats: &PreferenceStats, step: usize, state: usize, num_actions: usize, iota: f64) -> Option<usize> {
    (0..num_actions).find(|&a| {
        (0..num_actions)
            .filter(|&b| b != a)
            .all(|b| stats.sigma_hat(step, state, a, b) - stats.bonus(step, state, a, b, iota) >= 0.5)
    })
}

/// Per-state result of the stopping rule at `step`; the step closes when
/// every entry is `Some`.
pub fn stopping_check(stats: &PreferenceStats, mdp: &TabularEpisodicMdp, step: usize, iota: f64) -> Vec<Option<usize>> {
    (0..mdp.num_states())
        .map(|s| identified_action(stats, step, s, mdp.actions_at(step, s), iota))
        .collect()
}

#[derive(Clone, Debug, Default)]
struct Slot {
    visits: u64,
    champion: Option<usize>,
    challenger: Option<usize>,
    champion_batch: TrajectoryBatch,
    challenger_batch: TrajectoryBatch,
    queries: u64,
}

/// Champion/challenger bookkeeping for every (step, state).
#[derive(Clone, Debug)]
pub struct DuelState {
    num_states: usize,
    batch_size: usize,
    slots: Vec<Slot>,
    fallbacks: u64,
    scratch: Trajectory,
}

/// What one visit did.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitOutcome {
    pub action: usize,
    /// Final (state, action) of the rolled-out suffix.
    pub last: (usize, usize),
    pub query: Option<QueryRow>,
}

impl DuelState {
    pub fn new(mdp: &TabularEpisodicMdp, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return invalid("batch size must be positive");
        }
        Ok(Self {
            num_states: mdp.num_states(),
            batch_size,
            slots: vec![Slot::default(); mdp.horizon() * mdp.num_states()],
            fallbacks: 0,
            scratch: Trajectory::new(0, Vec::new()),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn slot(&self, step: usize, state: usize) -> &Slot {
        &self.slots[step * self.num_states + state]
    }

    /// `M_h(s)`.
    pub fn visits(&self, step: usize, state: usize) -> u64 {
        self.slot(step, state).visits
    }

    pub(crate) fn count_visit(&mut self, step: usize, state: usize) -> u64 {
        let slot = &mut self.slots[step * self.num_states + state];
        slot.visits += 1;
        slot.visits
    }

    pub fn champion(&self, step: usize, state: usize) -> Option<usize> {
        self.slot(step, state).champion
    }

    pub fn challenger(&self, step: usize, state: usize) -> Option<usize> {
        self.slot(step, state).challenger
    }

    pub fn batch_lengths(&self, step: usize, state: usize) -> (usize, usize) {
        let slot = self.slot(step, state);
        (slot.champion_batch.len(), slot.challenger_batch.len())
    }

    /// Oracle calls made for `(step, state)`.
    pub fn queries(&self, step: usize, state: usize) -> u64 {
        self.slot(step, state).queries
    }

    /// Times an empty candidate set forced the full action set.
    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    /// One dueling visit at `(step, state)`; the visit must already be
    /// counted (see [`crate::exploration::target_update`]). `tail` must be
    /// set at every state reachable after `step`.
    #[allow(clippy::too_many_arguments)]
    pub fn bruc_visit<R: Rng + ?Sized>(
        &mut self,
        stats: &mut PreferenceStats,
        mdp: &TabularEpisodicMdp,
        oracle: &mut PreferenceOracle<'_>,
        tail: &DeterministicPolicy,
        step: usize,
        state: usize,
        iota: f64,
        episode: u64,
        rng: &mut R,
    ) -> Result<VisitOutcome> {
        let n = mdp.actions_at(step, state);
        let m = self.batch_size as u64;
        let idx = step * self.num_states + state;
        let visits = self.slots[idx].visits;
        if visits == 0 {
            return invalid(format!("visit at (step={step}, state={state}) was not counted"));
        }
        if n == 1 {
            rollout_suffix(mdp, step, state, 0, tail, rng, &mut self.scratch)?;
            return Ok(VisitOutcome {
                action: 0,
                last: self.scratch.last().expect("suffix has at least one step"),
                query: None,
            });
        }
        let v = (visits - 1) % (2 * m) + 1;
        if v == 1 {
            let mut candidates = candidate_set(stats, step, state, n, iota);
            if candidates.is_empty() {
                log::warn!("empty candidate set at (step={step}, state={state}); using every action");
                self.fallbacks += 1;
                candidates = (0..n).collect();
            }
            let slot = &mut self.slots[idx];
            slot.champion = Some(candidates[rng.gen_range(0..candidates.len())]);
            slot.challenger = None;
            slot.champion_batch.clear();
            slot.challenger_batch.clear();
        }
        let champion = self.slots[idx].champion.expect("champion drawn at block start");
        let action = if v <= m {
            champion
        } else {
            if v == m + 1 {
                let ucb = |a: usize| stats.sigma_hat(step, state, a, champion) + stats.bonus(step, state, a, champion, iota);
                let best = (0..n).filter(|&a| a != champion).map(ucb).fold(f64::NEG_INFINITY, f64::max);
                let ties: Vec<usize> = (0..n).filter(|&a| a != champion && ucb(a) == best).collect();
                let pick = if ties.len() == 1 { 0 } else { rng.gen_range(0..ties.len()) };
                self.slots[idx].challenger = Some(ties[pick]);
            }
            self.slots[idx].challenger.expect("challenger drawn at phase start")
        };
        rollout_suffix(mdp, step, state, action, tail, rng, &mut self.scratch)?;
        let last = self.scratch.last().expect("suffix has at least one step");
        let slot = &mut self.slots[idx];
        if v <= m {
            slot.champion_batch.push(self.scratch.clone())?;
        } else {
            slot.challenger_batch.push(self.scratch.clone())?;
        }
        let mut query = None;
        if v == 2 * m {
            let sigma = oracle.human_feedback(&slot.champion_batch, &slot.challenger_batch)?;
            slot.queries += 1;
            stats.record(step, state, champion, action, sigma);
            let row = QueryRow {
                episode,
                h: step,
                s: state,
                champion,
                challenger: action,
                sigma,
            };
            oracle.record(row.clone());
            query = Some(row);
        }
        Ok(VisitOutcome { action, last, query })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exploration::{target_update, ExplorationState};
    use crate::harness::build_counterexample_mdp;
    use crate::oracle::TieRule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn candidate_set_examples() {
        let stats = PreferenceStats::new(1, 1, 3);
        assert_eq!(candidate_set(&stats, 0, 0, 3, 1.0), vec![0, 1, 2]);
        let mut stats = PreferenceStats::new(1, 1, 2);
        stats.set_pair(0, 0, 0, 1, 90, 100);
        // b = sqrt(0.25 / 100) = 0.05
        assert_eq!(candidate_set(&stats, 0, 0, 2, 0.25), vec![0]);
    }

    #[test]
    fn stopping_examples() {
        let stats = PreferenceStats::new(1, 1, 2);
        assert_eq!(identified_action(&stats, 0, 0, 2, 1.0), None);
        let mut stats = PreferenceStats::new(1, 1, 2);
        stats.set_pair(0, 0, 0, 1, 90, 100);
        // b = sqrt(0.16 / 100) = 0.04, 0.9 - 0.04 >= 0.5
        assert_eq!(identified_action(&stats, 0, 0, 2, 0.16), Some(0));
        assert_eq!(identified_action(&stats, 0, 0, 1, 100.0), Some(0));
    }

    #[test]
    fn record_is_symmetric() {
        let mut stats = PreferenceStats::new(1, 1, 2);
        stats.record(0, 0, 0, 1, 1);
        assert_eq!(stats.sigma_hat(0, 0, 1, 0), 1.0);
        assert_eq!(stats.sigma_hat(0, 0, 0, 1), 0.0);
        assert_eq!(stats.count(0, 0, 0, 1), stats.count(0, 0, 1, 0));
    }

    #[test]
    fn block_schedule_with_batch_two() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let mut ex = ExplorationState::new(&mdp, 0.1, 4.0).unwrap();
        let mut duel = DuelState::new(&mdp, 2).unwrap();
        let mut stats = PreferenceStats::for_mdp(&mdp);
        let mut oracle = PreferenceOracle::new(&f, TieRule::UniformRandom, 1);
        let tail = DeterministicPolicy::constant(2, 4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut fired = Vec::new();
        for visit in 1..=8u64 {
            ex.begin_episode();
            assert_eq!(target_update(&mut ex, &mut duel, 0, 0).unwrap(), visit);
            let out = duel
                .bruc_visit(&mut stats, &mdp, &mut oracle, &tail, 0, 0, ex.iota().unwrap(), visit, &mut rng)
                .unwrap();
            let champion = duel.champion(0, 0).unwrap();
            match (visit - 1) % 4 + 1 {
                1 | 2 => assert_eq!(out.action, champion),
                _ => assert_eq!(out.action, 1 - champion),
            }
            if out.query.is_some() {
                fired.push(visit);
                assert_eq!(duel.batch_lengths(0, 0), (2, 2));
            }
        }
        assert_eq!(fired, vec![4, 8]);
        assert_eq!(duel.queries(0, 0), 2);
        assert_eq!(oracle.queries(), 2);
        assert_eq!(stats.count(0, 0, 0, 1), 2);
    }

    #[test]
    fn uncounted_visit_is_rejected() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let mut duel = DuelState::new(&mdp, 2).unwrap();
        let mut stats = PreferenceStats::for_mdp(&mdp);
        let mut oracle = PreferenceOracle::new(&f, TieRule::UniformRandom, 1);
        let tail = DeterministicPolicy::constant(2, 4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(duel
            .bruc_visit(&mut stats, &mdp, &mut oracle, &tail, 0, 0, 1.0, 1, &mut rng)
            .is_err());
    }

    #[test]
    fn unset_tail_is_an_error() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let mut duel = DuelState::new(&mdp, 1).unwrap();
        let mut stats = PreferenceStats::for_mdp(&mdp);
        let mut oracle = PreferenceOracle::new(&f, TieRule::UniformRandom, 1);
        let tail = DeterministicPolicy::unset(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        duel.count_visit(0, 0);
        assert!(duel
            .bruc_visit(&mut stats, &mdp, &mut oracle, &tail, 0, 0, 1.0, 1, &mut rng)
            .is_err());
    }
}
