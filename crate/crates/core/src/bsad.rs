//! Backward search with action dueling.
//!
//! Steps are identified from the last one backwards. While step `l` is
//! active, every episode explores (reward-free) to `l`, duels at the state
//! reached, and then follows the already identified tail. Once every state
//! at `l` has an action whose lower confidence bound beats 1/2 against all
//! rivals, that action is fixed and the search moves to `l - 1` with fresh
//! exploration tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dueling::{identified_action, stopping_check, DuelState, PreferenceStats};
use crate::error::{invalid, Result};
use crate::exploration::{target_update, ExplorationState};
use crate::mdp::{initial_value, DeterministicPolicy, DiscountedMdp, TabularEpisodicMdp, TrajectoryReward};
use crate::oracle::{PreferenceOracle, PreferenceTable, TieRule};

/// When a step closes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StoppingRule {
    /// Every state has a confidently best action.
    Adaptive,
    /// Every multi-action state has `visits` dueling visits, or `quota`
    /// episodes have been spent on the step. The action kept is the
    /// confident winner if there is one, else the empirical leader.
    FixedBudget { visits: u64, quota: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BsadConfig {
    pub batch_size: usize,
    pub delta: f64,
    pub bonus_constant: f64,
    /// Episodes allowed per step before giving up.
    pub episode_cap: u64,
    pub seed: u64,
    pub tie_rule: TieRule,
    pub stopping: StoppingRule,
    /// Action used for unset policy entries in the value column.
    pub default_action: usize,
}

impl Default for BsadConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            delta: 0.1,
            bonus_constant: 4.0,
            episode_cap: 1_000_000,
            seed: 0,
            tie_rule: TieRule::UniformRandom,
            stopping: StoppingRule::Adaptive,
            default_action: 0,
        }
    }
}

impl BsadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta {} outside (0, 1)", self.delta));
        }
        if self.episode_cap == 0 {
            return invalid("episode cap must be positive");
        }
        if let StoppingRule::FixedBudget { quota: 0, .. } = self.stopping {
            return invalid("episode quota must be positive");
        }
        Ok(())
    }

    /// Oracle seed derived from the run seed, so the oracle's tie coin and
    /// the environment never share a stream.
    pub fn oracle_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Identified,
    /// Fixed-budget run that closed every step.
    Budget,
    Cap,
}

/// One trace row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: u64,
    pub l: usize,
    pub policy_value: f64,
    pub queries: u64,
    pub elapsed_ns: u64,
}

/// Concentration bookkeeping against exact preference probabilities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub queries_checked: u64,
    /// Queries after which `|sigma_hat - p| > b` for the compared pair.
    pub violations: u64,
    /// Times a state's identified action changed to a different action.
    pub switches: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<TraceRow>,
    /// Episodes spent while each step was active (index = step).
    pub step_episodes: Vec<u64>,
    pub policy: DeterministicPolicy,
    pub termination: Termination,
    pub total_episodes: u64,
    pub queries: u64,
    pub fallbacks: u64,
    pub audit: Option<AuditSummary>,
}

impl RunRecord {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// `{h: {s: a}}`.
    pub fn policy_json(&self) -> serde_json::Value {
        serde_json::to_value(self.policy.to_table()).expect("policy table serialises")
    }

    /// Config echo, instance hash and summary counters.
    pub fn metadata(&self, config: &BsadConfig, instance_hash: Option<&str>) -> serde_json::Value {
        serde_json::json!({
            "config": config,
            "instance_hash": instance_hash,
            "value_completion": format!("unset policy entries take action {}", config.default_action),
            "termination": self.termination,
            "total_episodes": self.total_episodes,
            "step_episodes": self.step_episodes,
            "queries": self.queries,
            "fallbacks": self.fallbacks,
            "audit": self.audit,
            "policy": self.policy_json(),
        })
    }
}

/// Where each episode (frame) starts.
#[derive(Clone, Copy, Debug)]
pub enum StartRule<'a> {
    /// Fresh draw from the initial distribution.
    Episodic,
    /// Continue from the state reached after the previous frame's last
    /// action, using the stationary kernel.
    Carry(&'a DiscountedMdp),
}

/// What the value column measures.
#[derive(Clone, Copy, Debug)]
enum ValueProbe<'a> {
    /// `E_mu0[V_0]` under the trajectory reward.
    Episodic(&'a TrajectoryReward),
    /// `E_mu0[V]` of the step-0 policy row, played stationarily.
    Discounted(&'a DiscountedMdp),
}

/// Per-episode facts exposed for tests and auditing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub step: usize,
    pub start: usize,
    pub target_state: usize,
    pub action: usize,
    pub last: (usize, usize),
    pub queried: bool,
}

struct Audit {
    table: PreferenceTable,
    summary: AuditSummary,
    identified: Vec<Option<usize>>,
}

/// Stepwise BSAD engine: one call to [`BsadRun::step`] plays one episode.
pub struct BsadRun<'a, 'r> {
    mdp: &'a TabularEpisodicMdp,
    oracle: PreferenceOracle<'r>,
    config: BsadConfig,
    start_rule: StartRule<'a>,
    probe: ValueProbe<'a>,
    explore: ExplorationState,
    duel: DuelState,
    stats: PreferenceStats,
    rng: ChaCha8Rng,
    policy: DeterministicPolicy,
    active: usize,
    phase_episodes: u64,
    episode: u64,
    step_episodes: Vec<u64>,
    carry: Option<(usize, usize)>,
    termination: Option<Termination>,
    value: Option<f64>,
    audit: Option<Audit>,
    started: Instant,
}

impl<'a, 'r> BsadRun<'a, 'r> {
    pub fn new(
        mdp: &'a TabularEpisodicMdp,
        reward: &'a TrajectoryReward,
        oracle: PreferenceOracle<'r>,
        config: BsadConfig,
    ) -> Result<Self> {
        Self::build(mdp, oracle, config, StartRule::Episodic, ValueProbe::Episodic(reward))
    }

    fn build(
        mdp: &'a TabularEpisodicMdp,
        oracle: PreferenceOracle<'r>,
        config: BsadConfig,
        start_rule: StartRule<'a>,
        probe: ValueProbe<'a>,
    ) -> Result<Self> {
        config.validate()?;
        oracle.reward().validate_for(mdp)?;
        if config.default_action >= mdp.num_actions() {
            return invalid(format!("default action {} out of range", config.default_action));
        }
        Ok(Self {
            mdp,
            explore: ExplorationState::new(mdp, config.delta, config.bonus_constant)?,
            duel: DuelState::new(mdp, config.batch_size)?,
            stats: PreferenceStats::for_mdp(mdp),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            policy: DeterministicPolicy::unset(mdp.horizon(), mdp.num_states()),
            active: mdp.horizon() - 1,
            phase_episodes: 0,
            episode: 0,
            step_episodes: vec![0; mdp.horizon()],
            carry: None,
            termination: None,
            value: None,
            audit: None,
            started: Instant::now(),
            oracle,
            config,
            start_rule,
            probe,
        })
    }

    /// Checks every query against exact preference probabilities (the table
    /// must be for the configured batch size).
    pub fn with_audit(mut self, table: PreferenceTable) -> Result<Self> {
        if table.batch_size() != self.config.batch_size {
            return invalid(format!(
                "audit table is for batch size {}, run uses {}",
                table.batch_size(),
                self.config.batch_size
            ));
        }
        let n = self.mdp.horizon() * self.mdp.num_states();
        self.audit = Some(Audit {
            table,
            summary: AuditSummary::default(),
            identified: vec![None; n],
        });
        Ok(self)
    }

    pub fn is_finished(&self) -> bool {
        self.termination.is_some()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    /// The step currently being identified (0-based).
    pub fn active_step(&self) -> usize {
        self.active
    }

    pub fn episodes(&self) -> u64 {
        self.episode
    }

    pub fn policy(&self) -> &DeterministicPolicy {
        &self.policy
    }

    pub fn stats(&self) -> &PreferenceStats {
        &self.stats
    }

    pub fn duel(&self) -> &DuelState {
        &self.duel
    }

    pub fn exploration(&self) -> &ExplorationState {
        &self.explore
    }

    pub fn oracle(&self) -> &PreferenceOracle<'r> {
        &self.oracle
    }

    /// Value of the current candidate policy (unset entries completed with
    /// the default action). Cached until the policy changes.
    pub fn policy_value(&mut self) -> Result<f64> {
        if let Some(v) = self.value {
            return Ok(v);
        }
        let full = self.policy.completed(self.config.default_action);
        let v = match self.probe {
            ValueProbe::Episodic(reward) => initial_value(self.mdp, reward, &full)?,
            ValueProbe::Discounted(d) => {
                let row: Vec<usize> = (0..d.num_states()).map(|s| full.get(0, s).expect("completed")).collect();
                let values = d.policy_value(&row, 1e-12)?;
                d.initial_dist().iter().zip(&values).map(|(p, v)| p * v).sum()
            }
        };
        self.value = Some(v);
        Ok(v)
    }

    /// The policy an episode started now would follow, with random
    /// tie-breaks resolved to the lowest action: greedy exploration before
    /// the active step, the dueling slot's current arm at it, the
    /// identified tail after it.
    pub fn executed_policy(&self) -> DeterministicPolicy {
        let mut pi = self.policy.completed(self.config.default_action);
        if self.is_finished() {
            return pi;
        }
        let l = self.active;
        for h in 0..l {
            for s in 0..self.mdp.num_states() {
                let n = self.mdp.actions_at(h, s);
                let best = (0..n).fold(0, |b, a| if self.explore.j(h, s, a) > self.explore.j(h, s, b) { a } else { b });
                pi.set(h, s, best);
            }
        }
        let m = self.config.batch_size as u64;
        for s in 0..self.mdp.num_states() {
            if self.mdp.actions_at(l, s) == 1 {
                pi.set(l, s, 0);
                continue;
            }
            let next_visit = self.duel.visits(l, s) + 1;
            let v = (next_visit - 1) % (2 * m) + 1;
            let arm = if v == 1 {
                None
            } else if v <= m {
                self.duel.champion(l, s)
            } else {
                self.duel.challenger(l, s).or(self.duel.champion(l, s))
            };
            pi.set(l, s, arm.unwrap_or(0));
        }
        pi
    }

    fn draw_start(&mut self) -> usize {
        match (self.start_rule, self.carry) {
            (StartRule::Carry(d), Some((s, a))) => d.sample_next(s, a, &mut self.rng),
            _ => self.mdp.sample_initial(&mut self.rng),
        }
    }

    /// Plays one episode. Returns `None` once the run has terminated.
    pub fn step(&mut self) -> Result<Option<EpisodeSummary>> {
        if self.is_finished() {
            return Ok(None);
        }
        let l = self.active;
        self.explore.begin_episode();
        self.episode += 1;
        self.phase_episodes += 1;
        self.step_episodes[l] += 1;

        let start = self.draw_start();
        let s_l = self.explore.explore_episode(self.mdp, l, Some(start), &mut self.rng)?;
        target_update(&mut self.explore, &mut self.duel, l, s_l)?;
        let iota = self.explore.iota()?;
        let out = self.duel.bruc_visit(
            &mut self.stats,
            self.mdp,
            &mut self.oracle,
            &self.policy,
            l,
            s_l,
            iota,
            self.episode,
            &mut self.rng,
        )?;
        self.carry = Some(out.last);

        let ids = stopping_check(&self.stats, self.mdp, l, iota);
        if let Some(audit) = self.audit.as_mut() {
            if let Some(q) = &out.query {
                let p = audit.table.get(l, s_l, q.challenger, q.champion);
                let est = self.stats.sigma_hat(l, s_l, q.challenger, q.champion);
                let b = self.stats.bonus(l, s_l, q.challenger, q.champion, iota);
                audit.summary.queries_checked += 1;
                if (est - p).abs() > b {
                    audit.summary.violations += 1;
                }
            }
            for (s, id) in ids.iter().enumerate() {
                if let Some(a) = *id {
                    let slot = &mut audit.identified[l * self.mdp.num_states() + s];
                    if slot.is_some_and(|prev| prev != a) {
                        audit.summary.switches += 1;
                    }
                    *slot = Some(a);
                }
            }
        }

        let close = match self.config.stopping {
            StoppingRule::Adaptive => ids.iter().all(Option::is_some),
            StoppingRule::FixedBudget { visits, quota } => {
                self.phase_episodes >= quota
                    || (0..self.mdp.num_states())
                        .all(|s| self.mdp.actions_at(l, s) == 1 || self.duel.visits(l, s) >= visits)
            }
        };
        if close {
            for s in 0..self.mdp.num_states() {
                let a = match ids[s] {
                    Some(a) => a,
                    None => self.leader(l, s),
                };
                self.policy.set(l, s, a);
            }
            self.value = None;
            if l == 0 {
                self.termination = Some(match self.config.stopping {
                    StoppingRule::Adaptive => Termination::Identified,
                    StoppingRule::FixedBudget { .. } => Termination::Budget,
                });
            } else {
                self.active -= 1;
                self.phase_episodes = 0;
                self.explore.reset();
            }
        } else if self.phase_episodes >= self.config.episode_cap {
            log::warn!("episode cap {} reached at step {l}", self.config.episode_cap);
            self.termination = Some(Termination::Cap);
        }

        Ok(Some(EpisodeSummary {
            episode: self.episode,
            step: l,
            start,
            target_state: s_l,
            action: out.action,
            last: out.last,
            queried: out.query.is_some(),
        }))
    }

    /// `argmax_a min_{a'} sigma_hat(a, a')`, ties at random.
    fn leader(&mut self, step: usize, state: usize) -> usize {
        let n = self.mdp.actions_at(step, state);
        let iota = self.explore.iota().unwrap_or(0.0);
        if let Some(a) = identified_action(&self.stats, step, state, n, iota) {
            return a;
        }
        let score = |a: usize| {
            (0..n)
                .filter(|&b| b != a)
                .map(|b| self.stats.sigma_hat(step, state, a, b))
                .fold(f64::INFINITY, f64::min)
        };
        let scores: Vec<f64> = (0..n).map(score).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..n).filter(|&a| scores[a] == best).collect();
        ties[if ties.len() == 1 { 0 } else { self.rng.gen_range(0..ties.len()) }]
    }

    fn row(&mut self) -> Result<TraceRow> {
        Ok(TraceRow {
            episode: self.episode,
            l: self.active,
            policy_value: self.policy_value()?,
            queries: self.oracle.queries(),
            elapsed_ns: self.started.elapsed().as_nanos() as u64,
        })
    }

    /// Runs to termination, recording a trace row every `every` episodes
    /// (0 = only the final row).
    pub fn run(mut self, every: u64) -> Result<(DeterministicPolicy, RunRecord)> {
        let mut rows = Vec::new();
        while self.step()?.is_some() {
            if every > 0 && self.episode.is_multiple_of(every) {
                rows.push(self.row()?);
            }
        }
        if rows.last().is_none_or(|r| r.episode != self.episode) {
            rows.push(self.row()?);
        }
        Ok(self.finish(rows))
    }

    pub fn finish(self, rows: Vec<TraceRow>) -> (DeterministicPolicy, RunRecord) {
        let record = RunRecord {
            rows,
            step_episodes: self.step_episodes,
            policy: self.policy.clone(),
            termination: self.termination.unwrap_or(Termination::Cap),
            total_episodes: self.episode,
            queries: self.oracle.queries(),
            fallbacks: self.duel.fallbacks(),
            audit: self.audit.map(|a| a.summary),
        };
        (self.policy, record)
    }
}

/// Runs BSAD to termination with a fresh oracle seeded from the config.
pub fn run_bsad_episodic(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    config: &BsadConfig,
    trace_every: u64,
) -> Result<(DeterministicPolicy, RunRecord)> {
    let oracle = PreferenceOracle::new(reward, config.tie_rule, config.oracle_seed());
    BsadRun::new(mdp, reward, oracle, config.clone())?.run(trace_every)
}

/// Smallest `H` with `2 gamma^H / (1 - gamma)^2 <= epsilon`, at least 1.
pub fn horizon_for_discounted(gamma: f64, epsilon: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return invalid(format!("discount {gamma} outside (0, 1)"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid(format!("epsilon {epsilon} must be positive"));
    }
    let scale = 2.0 / ((1.0 - gamma) * (1.0 - gamma));
    let ok = |h: usize| scale * gamma.powi(h as i32) <= epsilon;
    let guess = ((scale / epsilon).ln() / (1.0 / gamma).ln()).ceil().max(1.0) as usize;
    let mut h = guess;
    while h > 1 && ok(h - 1) {
        h -= 1;
    }
    while !ok(h) {
        h += 1;
    }
    Ok(h)
}

/// Frame-based BSAD on one continuing trajectory of a discounted MDP.
///
/// Frames of length `horizon_for_discounted(gamma, epsilon)` play the role
/// of episodes; each frame starts where the previous one ended. The oracle
/// compares undiscounted reward sums over frame suffixes; the value column
/// reports the discounted value of the step-0 row. Returns that row as a
/// stationary policy.
pub fn run_bsad_discounted(
    dmdp: &DiscountedMdp,
    epsilon: f64,
    config: &BsadConfig,
    trace_every: u64,
) -> Result<(Vec<usize>, RunRecord)> {
    let horizon = horizon_for_discounted(dmdp.gamma(), epsilon)?;
    let (frame, reward) = dmdp.frame_mdp(horizon)?;
    let oracle = PreferenceOracle::new(&reward, config.tie_rule, config.oracle_seed());
    let run = BsadRun::build(
        &frame,
        oracle,
        config.clone(),
        StartRule::Carry(dmdp),
        ValueProbe::Discounted(dmdp),
    )?;
    let (policy, record) = run.run(trace_every)?;
    let full = policy.completed(config.default_action);
    let stationary = (0..dmdp.num_states()).map(|s| full.get(0, s).expect("completed")).collect();
    Ok((stationary, record))
}

/// Builds a run over explicit start rules; used to compare the episodic and
/// frame code paths step by step.
pub fn bsad_run_with_start<'a, 'r>(
    mdp: &'a TabularEpisodicMdp,
    reward: &'a TrajectoryReward,
    oracle: PreferenceOracle<'r>,
    config: BsadConfig,
    start_rule: StartRule<'a>,
) -> Result<BsadRun<'a, 'r>> {
    BsadRun::build(mdp, oracle, config, start_rule, ValueProbe::Episodic(reward))
}

/// Per-episode regret of explore-then-commit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegretTrace {
    pub instant: Vec<f64>,
    /// First episode played with the committed policy (1-based), if any.
    pub commit_episode: Option<u64>,
    pub identified: bool,
    pub policy: DeterministicPolicy,
}

impl RegretTrace {
    pub fn cumulative(&self) -> f64 {
        self.instant.iter().sum()
    }
}

/// Runs BSAD with `delta = 1/T`, then plays the identified policy for the
/// rest of the `T` episodes. Regret of each episode is the exact value gap
/// of the policy it executed (see [`BsadRun::executed_policy`]).
pub fn explore_then_commit(
    mdp: &TabularEpisodicMdp,
    reward: &TrajectoryReward,
    total_episodes: u64,
    config: &BsadConfig,
) -> Result<RegretTrace> {
    if total_episodes < 2 {
        return invalid("need at least two episodes (delta = 1/T must lie in (0, 1))");
    }
    let config = BsadConfig {
        delta: 1.0 / total_episodes as f64,
        ..config.clone()
    };
    let optimal = crate::mdp::optimal_policy_bruteforce(mdp, reward)?;
    let best = initial_value(mdp, reward, &optimal)?;
    let oracle = PreferenceOracle::new(reward, config.tie_rule, config.oracle_seed());
    let mut run = BsadRun::new(mdp, reward, oracle, config)?;
    let mut instant = Vec::with_capacity(total_episodes as usize);
    let mut cache: BTreeMap<Vec<Option<usize>>, f64> = BTreeMap::new();
    let mut regret_of = |pi: &DeterministicPolicy| -> Result<f64> {
        let key: Vec<Option<usize>> = (0..mdp.horizon())
            .flat_map(|h| (0..mdp.num_states()).map(move |s| (h, s)))
            .map(|(h, s)| pi.get(h, s))
            .collect();
        if let Some(&r) = cache.get(&key) {
            return Ok(r);
        }
        let r = (best - initial_value(mdp, reward, pi)?).max(0.0);
        cache.insert(key, r);
        Ok(r)
    };
    while !run.is_finished() && (instant.len() as u64) < total_episodes {
        let pi = run.executed_policy();
        instant.push(regret_of(&pi)?);
        run.step()?;
    }
    let identified = run.termination() == Some(Termination::Identified);
    let commit_episode = identified.then_some(instant.len() as u64 + 1);
    let committed = run.policy().completed(0);
    let r = regret_of(&committed)?;
    instant.resize(total_episodes as usize, r);
    Ok(RegretTrace {
        instant,
        commit_episode: commit_episode.filter(|&e| e <= total_episodes),
        identified,
        policy: committed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::build_counterexample_mdp;

    #[test]
    fn horizon_examples() {
        assert_eq!(horizon_for_discounted(0.9, 0.1).unwrap(), 73);
        assert!(2.0 * 0.9f64.powi(73) / 0.01 <= 0.1);
        assert!(2.0 * 0.9f64.powi(72) / 0.01 > 0.1);
        assert_eq!(horizon_for_discounted(0.9, 200.0).unwrap(), 1);
        assert_eq!(horizon_for_discounted(0.9, 1000.0).unwrap(), 1);
        assert!(horizon_for_discounted(1.0, 0.1).is_err());
        assert!(horizon_for_discounted(0.5, 0.0).is_err());
        let hs: Vec<usize> = [0.01, 0.1, 0.5, 1.0, 5.0]
            .iter()
            .map(|&e| horizon_for_discounted(0.8, e).unwrap())
            .collect();
        assert!(hs.windows(2).all(|w| w[1] <= w[0]), "{hs:?}");
    }

    #[test]
    fn single_state_bandit_identifies_better_arm() {
        // H = 1, one state, two arms paying 1 and 0
        let mdp = TabularEpisodicMdp::new(1, 2, 1, vec![], vec![1.0]).unwrap();
        let f = TrajectoryReward::cumulative(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let config = BsadConfig {
            batch_size: 1,
            seed: 3,
            ..BsadConfig::default()
        };
        let (pi, rec) = run_bsad_episodic(&mdp, &f, &config, 1).unwrap();
        assert_eq!(pi.get(0, 0), Some(1));
        assert_eq!(rec.termination, Termination::Identified);
        assert_eq!(rec.total_episodes, rec.step_episodes.iter().sum::<u64>());
        // every comparison is won by arm 1, so N >= 4 iota at stopping
        let iota = crate::exploration::iota(1, 2, 1, rec.total_episodes, 0.1, 4.0).unwrap();
        assert!(rec.queries as f64 >= 4.0 * iota - 1.0);
        assert_eq!(rec.queries, rec.total_episodes / 2);
    }

    #[test]
    fn trace_is_monotone_and_counts_match() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let config = BsadConfig {
            batch_size: 4,
            seed: 9,
            ..BsadConfig::default()
        };
        let (_, rec) = run_bsad_episodic(&mdp, &f, &config, 1).unwrap();
        assert!(rec.rows.windows(2).all(|w| w[1].l <= w[0].l && w[1].episode > w[0].episode));
        assert_eq!(rec.rows.len() as u64, rec.total_episodes);
        let mut out = Vec::new();
        rec.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("episode,l,policy_value,queries,elapsed_ns\n"));
    }

    #[test]
    fn cap_is_reported() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let config = BsadConfig {
            batch_size: 64,
            episode_cap: 50,
            ..BsadConfig::default()
        };
        let (pi, rec) = run_bsad_episodic(&mdp, &f, &config, 0).unwrap();
        assert_eq!(rec.termination, Termination::Cap);
        assert_eq!(pi.get(0, 0), None);
        assert!(pi.is_set_from(1));
    }

    #[test]
    fn reset_after_backward_move() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        let oracle = PreferenceOracle::new(&f, TieRule::UniformRandom, 1);
        let mut run = BsadRun::new(&mdp, &f, oracle, BsadConfig::default()).unwrap();
        let fresh = ExplorationState::new(&mdp, 0.1, 4.0).unwrap();
        let mut last = run.active_step();
        while let Some(ep) = run.step().unwrap() {
            if run.active_step() != last {
                assert_eq!(run.exploration(), &fresh);
                assert!(run.active_step() < last);
                last = run.active_step();
            }
            if ep.episode > 100 {
                break;
            }
        }
        assert_eq!(last, 0);
    }

    #[test]
    fn invalid_config_rejected() {
        let (mdp, f) = build_counterexample_mdp(10.0, 0.1, 1, &[1.0]).unwrap();
        for bad in [
            BsadConfig { batch_size: 0, ..BsadConfig::default() },
            BsadConfig { delta: 1.0, ..BsadConfig::default() },
            BsadConfig { episode_cap: 0, ..BsadConfig::default() },
        ] {
            assert!(run_bsad_episodic(&mdp, &f, &bad, 0).is_err());
        }
    }
}
