//! Replicated experiments: one CSV per (variant, seed) cell, a status table,
//! a timing table and a bootstrap aggregate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{bsad_trace, peps_fixed_horizon, q_learning_ucb, AlgorithmTrace, QLearningConfig, TracePoint};
use super::envs::{build_counterexample_mdp, build_random_mdp};
use crate::bsad::{BsadConfig, StoppingRule};
use crate::error::{invalid, Error, Result};
use crate::mdp::spec_file::MdpSpec;
use crate::mdp::{TabularEpisodicMdp, TrajectoryReward};

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const PARALLELISM_ENV: &str = "BSAD_PARALLELISM";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "builder")]
pub enum EnvironmentSpec {
    Counterexample {
        #[serde(default = "default_reward_bound")]
        reward_bound: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_weights")]
        initial_weights: Vec<f64>,
    },
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
        min_gap: f64,
    },
    SpecFile {
        path: PathBuf,
    },
}

fn default_reward_bound() -> f64 {
    10.0
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_weights() -> Vec<f64> {
    vec![0.5, 0.5]
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        EnvironmentSpec::Counterexample {
            reward_bound: default_reward_bound(),
            epsilon: default_epsilon(),
            initial_weights: default_weights(),
        }
    }
}

impl EnvironmentSpec {
    /// Two copies of the first state with a skewed initial distribution.
    pub fn skewed_counterexample() -> Self {
        EnvironmentSpec::Counterexample {
            reward_bound: default_reward_bound(),
            epsilon: default_epsilon(),
            initial_weights: vec![0.8, 0.2],
        }
    }

    pub fn build(&self) -> Result<(TabularEpisodicMdp, TrajectoryReward)> {
        match self {
            EnvironmentSpec::Counterexample {
                reward_bound,
                epsilon,
                initial_weights,
            } => build_counterexample_mdp(*reward_bound, *epsilon, initial_weights.len(), initial_weights),
            EnvironmentSpec::Random {
                states,
                actions,
                horizon,
                seed,
                min_gap,
            } => build_random_mdp(*states, *actions, *horizon, *seed, *min_gap),
            EnvironmentSpec::SpecFile { path } => MdpSpec::load(path)?.build(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AlgorithmSpec {
    Bsad {
        name: String,
        #[serde(default)]
        config: BsadConfig,
    },
    Peps {
        name: String,
        visits_per_state: u64,
        #[serde(default)]
        config: BsadConfig,
    },
    QLearning {
        name: String,
        #[serde(default)]
        config: QLearningConfig,
    },
}

impl AlgorithmSpec {
    pub fn name(&self) -> &str {
        match self {
            AlgorithmSpec::Bsad { name, .. } | AlgorithmSpec::Peps { name, .. } | AlgorithmSpec::QLearning { name, .. } => {
                name
            }
        }
    }

    /// Runs one cell; the cell seed overrides the configured seed.
    pub fn run(
        &self,
        mdp: &TabularEpisodicMdp,
        reward: &TrajectoryReward,
        seed: u64,
        budget: u64,
        cadence: u64,
    ) -> Result<AlgorithmTrace> {
        match self {
            AlgorithmSpec::Bsad { config, .. } => {
                let config = BsadConfig {
                    seed,
                    stopping: StoppingRule::Adaptive,
                    ..config.clone()
                };
                bsad_trace(mdp, reward, &config, budget, cadence)
            }
            AlgorithmSpec::Peps {
                visits_per_state,
                config,
                ..
            } => {
                let config = BsadConfig { seed, ..config.clone() };
                peps_fixed_horizon(mdp, reward, *visits_per_state, &config, budget, cadence)
            }
            AlgorithmSpec::QLearning { config, .. } => {
                let config = QLearningConfig { seed, ..config.clone() };
                q_learning_ucb(mdp, reward, budget, cadence, &config)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub environment: EnvironmentSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    pub seeds: Vec<u64>,
    pub budget: u64,
    pub cadence: u64,
    pub output_dir: PathBuf,
    /// Worker threads; `BSAD_PARALLELISM` overrides, default is all cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return invalid("need at least one seed");
        }
        if self.cadence == 0 || self.budget < self.cadence {
            return invalid(format!(
                "need budget >= cadence >= 1 (budget {}, cadence {})",
                self.budget, self.cadence
            ));
        }
        if self.algorithms.is_empty() {
            return invalid("need at least one algorithm");
        }
        let mut seen = std::collections::BTreeSet::new();
        for alg in &self.algorithms {
            let name = alg.name();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return invalid(format!("variant name {name:?} must be non-empty [A-Za-z0-9._-]"));
            }
            if !seen.insert(name) {
                return invalid(format!("duplicate variant name {name:?}"));
            }
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return invalid("duplicate seeds");
        }
        Ok(())
    }

    fn threads(&self) -> Result<usize> {
        if let Ok(v) = std::env::var(PARALLELISM_ENV) {
            return match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => invalid(format!("{PARALLELISM_ENV}={v:?} is not a positive integer")),
            };
        }
        Ok(self.parallelism.unwrap_or(0))
    }
}

/// Row of `cells.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub variant: String,
    pub seed: u64,
    /// `ok`, or `error:<kind>`.
    pub status: String,
    pub termination: String,
    pub episodes_used: u64,
    pub final_value: Option<f64>,
    pub message: String,
}

/// Row of `timing.csv` (wall clock, so not reproducible).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellTiming {
    pub variant: String,
    pub seed: u64,
    pub elapsed_ms: f64,
}

/// Row of `aggregate.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub episode: u64,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

pub fn cell_file_name(variant: &str, seed: u64) -> String {
    format!("{variant}__seed{seed}.csv")
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// 95% percentile bootstrap interval of the mean (nearest-rank quantiles),
/// widened if needed so it contains the sample mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return invalid("bootstrap needs at least one value");
    }
    if resamples == 0 {
        return invalid("bootstrap needs at least one resample");
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let rank = |q: f64| ((q * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    let lo = means[rank(0.025)].min(mean);
    let hi = means[rank(0.975)].max(mean);
    Ok((mean, lo, hi))
}

/// Rebuilds `aggregate.csv` from `cells.csv` and the cell files in `dir`.
/// Failed cells are skipped.
pub fn aggregate_dir(dir: impl AsRef<Path>) -> Result<Vec<AggregateRow>> {
    let dir = dir.as_ref();
    let cells: Vec<CellStatus> = read_rows(&dir.join("cells.csv"))?;
    let mut order: Vec<String> = Vec::new();
    let mut by_variant: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for cell in cells.iter().filter(|c| c.status == "ok") {
        if !order.contains(&cell.variant) {
            order.push(cell.variant.clone());
        }
        let points: Vec<TracePoint> = read_rows(&dir.join("cells").join(cell_file_name(&cell.variant, cell.seed)))?;
        let slot = by_variant.entry(cell.variant.clone()).or_default();
        for p in points {
            slot.entry(p.episode).or_default().push(p.policy_value);
        }
    }
    let mut rows = Vec::new();
    for (vi, variant) in order.iter().enumerate() {
        for (episode, values) in &by_variant[variant] {
            let seed = ((vi as u64) << 40) ^ episode;
            let (mean, ci_low, ci_high) = bootstrap_ci(values, BOOTSTRAP_RESAMPLES, seed)?;
            rows.push(AggregateRow {
                variant: variant.clone(),
                episode: *episode,
                mean,
                ci_low,
                ci_high,
                n: values.len(),
            });
        }
    }
    write_rows(&dir.join("aggregate.csv"), &rows)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub cells: Vec<CellStatus>,
    pub aggregate: Vec<AggregateRow>,
    pub timing: Vec<CellTiming>,
}

/// Runs every (variant, seed) cell on a worker pool, then aggregates.
///
/// Layout of `output_dir`: `config.json`, `cells/<variant>__seed<k>.csv`
/// (`episode,policy_value,queries`), `cells.csv`, `timing.csv`,
/// `aggregate.csv` (`variant,episode,mean,ci_low,ci_high,n`). Everything but
/// `timing.csv` is a deterministic function of the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let (mdp, reward) = config.environment.build()?;
    let out = &config.output_dir;
    fs::create_dir_all(out.join("cells"))?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;

    let jobs: Vec<(&AlgorithmSpec, u64)> = config
        .algorithms
        .iter()
        .flat_map(|a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads()?)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<(CellStatus, CellTiming)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(alg, seed)| {
                let started = Instant::now();
                let outcome = alg.run(&mdp, &reward, seed, config.budget, config.cadence);
                let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
                let status = match outcome {
                    Ok(trace) => {
                        write_rows(&out.join("cells").join(cell_file_name(alg.name(), seed)), &trace.points)?;
                        CellStatus {
                            variant: alg.name().to_string(),
                            seed,
                            status: "ok".into(),
                            termination: trace.termination.clone(),
                            episodes_used: trace.episodes_used,
                            final_value: trace.final_value(),
                            message: String::new(),
                        }
                    }
                    Err(e) => {
                        log::warn!("cell {} seed {seed} failed: {e}", alg.name());
                        CellStatus {
                            variant: alg.name().to_string(),
                            seed,
                            status: format!("error:{}", e.kind()),
                            termination: String::new(),
                            episodes_used: 0,
                            final_value: None,
                            message: e.to_string(),
                        }
                    }
                };
                let timing = CellTiming {
                    variant: alg.name().to_string(),
                    seed,
                    elapsed_ms,
                };
                Ok((status, timing))
            })
            .collect()
    });
    let mut cells = Vec::with_capacity(results.len());
    let mut timing = Vec::with_capacity(results.len());
    for r in results {
        let (c, t) = r?;
        cells.push(c);
        timing.push(t);
    }
    write_rows(&out.join("cells.csv"), &cells)?;
    write_rows(&out.join("timing.csv"), &timing)?;
    let aggregate = aggregate_dir(out)?;
    Ok(ExperimentSummary { cells, aggregate, timing })
}

/// BSAD variants over a list of batch sizes, on one environment.
pub fn batch_sweep_config(
    environment: EnvironmentSpec,
    batch_sizes: &[usize],
    seeds: Vec<u64>,
    budget: u64,
    cadence: u64,
    output_dir: PathBuf,
) -> ExperimentConfig {
    ExperimentConfig {
        environment,
        algorithms: batch_sizes
            .iter()
            .map(|&m| AlgorithmSpec::Bsad {
                name: format!("bsad-M{m}"),
                config: BsadConfig {
                    batch_size: m,
                    ..BsadConfig::default()
                },
            })
            .collect(),
        seeds,
        budget,
        cadence,
        output_dir,
        parallelism: None,
    }
}
