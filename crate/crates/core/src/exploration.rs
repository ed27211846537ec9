//! Reward-free exploration toward a target step.
//!
//! Optimistic `J` values grow where visits are scarce, so the greedy
//! exploration policy keeps steering episodes to under-visited states at
//! the target step. The only "reward" is the target-step value `W_l(s_l)`,
//! which shrinks with the number of dueling visits at `(l, s_l)`.

use std::io::Write;

use rand::Rng;

use crate::dueling::DuelState;
use crate::error::{invalid, Result};
use crate::mdp::TabularEpisodicMdp;

/// `max(0, c ln(S A H k / delta))`.
pub fn iota(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    k: u64,
    delta: f64,
    bonus_constant: f64,
) -> Result<f64> {
    if k < 1 {
        return invalid("episode counter must be at least 1");
    }
    let arg = (num_states * num_actions * horizon) as f64 * k as f64 / delta;
    Ok((bonus_constant * arg.ln()).max(0.0))
}

/// `beta_t = sqrt(H iota / max(t, 1))`.
pub fn bonus_beta(t: u64, iota: f64, horizon: usize) -> f64 {
    (horizon as f64 * iota / t.max(1) as f64).sqrt()
}

/// `alpha_t = (H + 1) / (H + t)`.
pub fn learning_rate(t: u64, horizon: usize) -> f64 {
    (horizon as f64 + 1.0) / (horizon as f64 + t as f64)
}

/// Weight of the `i`-th update after `t` updates of the learning-rate
/// recursion; `i = 0` is the weight left on the initial value.
pub fn alpha_weight(t: u64, i: u64, horizon: usize) -> Result<f64> {
    if i > t {
        return invalid(format!("weight index {i} exceeds update count {t}"));
    }
    let mut w = if i == 0 { 1.0 } else { learning_rate(i, horizon) };
    for j in i + 1..=t {
        w *= 1.0 - learning_rate(j, horizon);
    }
    Ok(w)
}

/// `[alpha_weight(t, 0, H), .., alpha_weight(t, t, H)]` in one backward pass.
pub fn alpha_weights(t: u64, horizon: usize) -> Vec<f64> {
    let mut out = vec![0.0; t as usize + 1];
    let mut tail = 1.0;
    for i in (1..=t).rev() {
        out[i as usize] = learning_rate(i, horizon) * tail;
        tail *= 1.0 - learning_rate(i, horizon);
    }
    out[0] = tail;
    out
}

/// One `J` update, kept when tracing is enabled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JUpdate {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    /// Visit count after the increment.
    pub t: u64,
    pub next_value: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationState {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    delta: f64,
    bonus_constant: f64,
    j: Vec<f64>,
    visits: Vec<u64>,
    w: Vec<f64>,
    k: u64,
    trace: Option<Vec<JUpdate>>,
}

impl ExplorationState {
    pub fn new(mdp: &TabularEpisodicMdp, delta: f64, bonus_constant: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("confidence {delta} outside (0, 1)"));
        }
        if !(bonus_constant >= 0.0 && bonus_constant.is_finite()) {
            return invalid(format!("bonus constant {bonus_constant} must be finite and >= 0"));
        }
        let (s, a, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        Ok(Self {
            num_states: s,
            num_actions: a,
            horizon: h,
            delta,
            bonus_constant,
            j: vec![1.0; h * s * a],
            visits: vec![0; h * s * a],
            w: vec![1.0; h * s],
            k: 0,
            trace: None,
        })
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> Option<&[JUpdate]> {
        self.trace.as_deref()
    }

    pub fn episode_counter(&self) -> u64 {
        self.k
    }

    /// `k <- k + 1`, at the start of every episode.
    pub fn begin_episode(&mut self) {
        self.k += 1;
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn bonus_constant(&self) -> f64 {
        self.bonus_constant
    }

    /// `iota` at the current episode counter.
    pub fn iota(&self) -> Result<f64> {
        iota(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.k,
            self.delta,
            self.bonus_constant,
        )
    }

    fn sa(&self, step: usize, state: usize, action: usize) -> usize {
        (step * self.num_states + state) * self.num_actions + action
    }

    pub fn j(&self, step: usize, state: usize, action: usize) -> f64 {
        self.j[self.sa(step, state, action)]
    }

    pub fn visits(&self, step: usize, state: usize, action: usize) -> u64 {
        self.visits[self.sa(step, state, action)]
    }

    pub fn w(&self, step: usize, state: usize) -> f64 {
        self.w[step * self.num_states + state]
    }

    /// Restores the initial tables: `J = 1`, `L = 0`, `W = 1`, `k = 0`.
    pub fn reset(&mut self) {
        self.j.fill(1.0);
        self.visits.fill(0);
        self.w.fill(1.0);
        self.k = 0;
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
    }

    fn greedy<R: Rng + ?Sized>(&self, mdp: &TabularEpisodicMdp, step: usize, state: usize, rng: &mut R) -> usize {
        let n = mdp.actions_at(step, state);
        let base = self.sa(step, state, 0);
        let row = &self.j[base..base + n];
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties = row.iter().filter(|&&v| v == best).count();
        let pick = if ties == 1 { 0 } else { rng.gen_range(0..ties) };
        row.iter()
            .enumerate()
            .filter(|(_, &v)| v == best)
            .nth(pick)
            .map(|(a, _)| a)
            .expect("non-empty action set")
    }

    fn max_j(&self, mdp: &TabularEpisodicMdp, step: usize, state: usize) -> f64 {
        let base = self.sa(step, state, 0);
        self.j[base..base + mdp.actions_at(step, state)]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Runs the exploration policy from `start` (drawn from the initial
    /// distribution when `None`) up to the 0-based `target` step and returns
    /// the state reached there. `begin_episode` must have been called.
    ///
    /// The value backed up into the last update before `target` is the
    /// stored `W_target(s)` written by [`target_update`], not `max_a J`.
    pub fn explore_episode<R: Rng + ?Sized>(
        &mut self,
        mdp: &TabularEpisodicMdp,
        target: usize,
        start: Option<usize>,
        rng: &mut R,
    ) -> Result<usize> {
        if target >= self.horizon {
            return invalid(format!("target step {target} outside 0..{}", self.horizon));
        }
        let mut s = match start {
            Some(s) => {
                mdp.check_state(0, s)?;
                s
            }
            None => mdp.sample_initial(rng),
        };
        if target == 0 {
            return Ok(s);
        }
        let iota = self.iota()?;
        for h in 0..target {
            let a = self.greedy(mdp, h, s, rng);
            let next = mdp.sample_next(h, s, a, rng);
            let idx = self.sa(h, s, a);
            self.visits[idx] += 1;
            let t = self.visits[idx];
            if h + 1 < target {
                let v = self.max_j(mdp, h + 1, next).min(1.0);
                self.w[(h + 1) * self.num_states + next] = v;
            }
            let next_value = self.w[(h + 1) * self.num_states + next];
            let alpha = learning_rate(t, self.horizon);
            let beta = bonus_beta(t, iota, self.horizon);
            self.j[idx] = (1.0 - alpha) * self.j[idx] + alpha * (next_value + 2.0 * beta);
            if let Some(trace) = self.trace.as_mut() {
                trace.push(JUpdate {
                    step: h,
                    state: s,
                    action: a,
                    t,
                    next_value,
                    beta,
                });
            }
            s = next;
        }
        Ok(s)
    }

    /// Writes `step,state,action,j,visits` rows for the current tables.
    pub fn write_snapshot<W: Write>(&self, episode: u64, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for h in 0..self.horizon {
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    w.write_record(&[
                        episode.to_string(),
                        h.to_string(),
                        s.to_string(),
                        a.to_string(),
                        self.j(h, s, a).to_string(),
                        self.visits(h, s, a).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts a dueling visit at `(target, state)` and lowers its exploration
/// value: `W_l(s) = min(1, beta_{M_l(s)})`. Returns the new visit count.
pub fn target_update(
    explore: &mut ExplorationState,
    duel: &mut DuelState,
    target: usize,
    state: usize,
) -> Result<u64> {
    let m = duel.count_visit(target, state);
    let beta = bonus_beta(m, explore.iota()?, explore.horizon);
    explore.w[target * explore.num_states + state] = beta.min(1.0);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::build_counterexample_mdp;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iota_examples() {
        assert_eq!(iota(1, 1, 1, 1, 1.0, 4.0).unwrap(), 0.0);
        assert_abs_diff_eq!(iota(4, 2, 2, 10, 0.1, 4.0).unwrap(), 4.0 * 1600f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(iota(4, 2, 2, 10, 0.1, 4.0).unwrap(), 29.5110, epsilon = 1e-4);
        assert!(iota(1, 1, 1, 0, 0.5, 4.0).is_err());
        // the log argument drops below 1 only for delta > 1
        assert_eq!(iota(1, 1, 1, 1, 2.0, 4.0).unwrap(), 0.0);
        assert!(iota(2, 2, 2, 5, 0.1, 4.0).unwrap() < iota(2, 2, 2, 6, 0.1, 4.0).unwrap());
    }

    #[test]
    fn alpha_weight_examples() {
        assert_eq!(alpha_weight(0, 0, 3).unwrap(), 1.0);
        assert_abs_diff_eq!(alpha_weight(2, 2, 2).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(alpha_weight(2, 1, 2).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(alpha_weight(5, 0, 2).unwrap(), 0.0);
        assert!(alpha_weight(1, 2, 2).is_err());
    }

    #[test]
    fn target_value_example() {
        // H = 2, iota = 8, M = 32 -> sqrt(16 / 32)
        assert_abs_diff_eq!(bonus_beta(32, 8.0, 2).min(1.0), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(bonus_beta(0, 8.0, 2), 4.0);
    }

    #[test]
    fn target_zero_returns_start_untouched() {
        let (mdp, _) = build_counterexample_mdp(10.0, 0.1, 2, &[0.5, 0.5]).unwrap();
        let mut ex = ExplorationState::new(&mdp, 0.1, 4.0).unwrap();
        let before = ex.clone();
        ex.begin_episode();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ex.explore_episode(&mdp, 0, None, &mut rng).unwrap();
        assert!(s < 2);
        assert_eq!(ex.j, before.j);
        assert_eq!(ex.visits, before.visits);
    }

    #[test]
    fn first_update_replaces_initial_value() {
        let (mdp, _) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let mut ex = ExplorationState::new(&mdp, 0.1, 4.0).unwrap();
        ex.begin_episode();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ex.explore_episode(&mdp, 1, None, &mut rng).unwrap();
        let iota = ex.iota().unwrap();
        let a = (0..2).find(|&a| ex.visits(0, 0, a) == 1).unwrap();
        // W at the target is still 1 and alpha_1 = 1
        assert_abs_diff_eq!(ex.j(0, 0, a), 1.0 + 2.0 * (2.0 * iota).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn reset_restores_initial_tables() {
        let (mdp, _) = build_counterexample_mdp(10.0, 0.1, 2, &[0.5, 0.5]).unwrap();
        let fresh = ExplorationState::new(&mdp, 0.1, 4.0).unwrap();
        let mut ex = fresh.clone();
        let mut duel = DuelState::new(&mdp, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            ex.begin_episode();
            let s = ex.explore_episode(&mdp, 1, None, &mut rng).unwrap();
            target_update(&mut ex, &mut duel, 1, s).unwrap();
        }
        assert_ne!(ex, fresh);
        ex.reset();
        assert_eq!(ex, fresh);
    }

    #[test]
    fn unrolled_recursion_matches() {
        let (mdp, _) = build_counterexample_mdp(10.0, 0.1, 2, &[0.3, 0.7]).unwrap();
        let mut ex = ExplorationState::new(&mdp, 0.1, 4.0).unwrap().with_trace();
        let mut duel = DuelState::new(&mdp, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..400 {
            ex.begin_episode();
            let s = ex.explore_episode(&mdp, 1, None, &mut rng).unwrap();
            target_update(&mut ex, &mut duel, 1, s).unwrap();
        }
        let trace = ex.trace().unwrap().to_vec();
        for s in 0..2 {
            for a in 0..2 {
                let ups: Vec<&JUpdate> = trace.iter().filter(|u| (u.step, u.state, u.action) == (0, s, a)).collect();
                let n = ups.len() as u64;
                let mut unrolled = alpha_weight(n, 0, 2).unwrap();
                for (i, u) in ups.iter().enumerate() {
                    unrolled += alpha_weight(n, i as u64 + 1, 2).unwrap() * (u.next_value + 2.0 * u.beta);
                }
                assert_abs_diff_eq!(ex.j(0, s, a), unrolled, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn snapshot_rows() {
        let (mdp, _) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let ex = ExplorationState::new(&mdp, 0.1, 4.0).unwrap();
        let mut out = Vec::new();
        ex.write_snapshot(0, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2 * 4 * 2);
        assert_eq!(text.lines().next().unwrap(), "0,0,0,0,1,0");
    }
}
