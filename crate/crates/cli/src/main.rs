use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bsad_core::bsad::{run_bsad_episodic, BsadConfig};
use bsad_core::harness::{
    aggregate_dir, batch_sweep_config, run_experiment, EnvironmentSpec, ExperimentConfig, ExperimentSummary,
};
use bsad_core::mdp::spec_file::MdpSpec;
use bsad_core::oracle::{monte_carlo_preference, ExactPreference, PreferenceOracle, TieRule};
use bsad_core::{TabularEpisodicMdp, TrajectoryReward};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "bsad", version, about = "Preference-based best-policy identification on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run { config: PathBuf },
    /// Sweep BSAD over batch sizes on a built-in instance.
    SweepBatch {
        #[arg(long, default_value = "counterexample")]
        env: String,
        /// Comma-separated batch sizes.
        #[arg(long = "M", value_delimiter = ',', default_value = "2,4,8,16,32,64,128")]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 200_000)]
        budget: u64,
        #[arg(long, default_value_t = 5_000)]
        cadence: u64,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Print the exact preference table at one batch size.
    Condorcet {
        /// `counterexample`, `counterexample-skewed` or a path to an MDP spec file.
        #[arg(long)]
        env: String,
        #[arg(long = "M")]
        batch_size: usize,
    },
    /// Compare Monte Carlo preference frequencies with the exact probabilities.
    OracleCheck {
        #[arg(long, default_value = "counterexample")]
        env: String,
        #[arg(long = "M", value_delimiter = ',', default_value = "1,2,4,8")]
        batch_sizes: Vec<usize>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild aggregate.csv from the cell files in an experiment directory.
    PlotData { dir: PathBuf },
    /// Run BSAD once and write trace.csv, policy.json and metadata.json.
    Identify {
        #[arg(long)]
        env: String,
        #[arg(long = "M", default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trace_every: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_env(name: &str) -> Result<(TabularEpisodicMdp, TrajectoryReward, String)> {
    let env = match name {
        "counterexample" => EnvironmentSpec::default(),
        "counterexample-skewed" => EnvironmentSpec::skewed_counterexample(),
        path => {
            let bytes = fs::read(path).with_context(|| format!("reading {path}"))?;
            let spec = MdpSpec::from_json(std::str::from_utf8(&bytes)?)?;
            let (mdp, f) = spec.build()?;
            return Ok((mdp, f, bsad_core::mdp::spec_file::content_hash(&bytes)));
        }
    };
    let (mdp, f) = env.build()?;
    let hash = MdpSpec::from_cumulative(&mdp, &f)?.content_hash()?;
    Ok((mdp, f, hash))
}

fn print_summary(summary: &ExperimentSummary) {
    let mut variants: Vec<&str> = Vec::new();
    for c in &summary.cells {
        if !variants.contains(&c.variant.as_str()) {
            variants.push(&c.variant);
        }
    }
    println!("variant,cells_ok,cells_failed,final_mean,final_ci_low,final_ci_high");
    for v in variants {
        let ok = summary.cells.iter().filter(|c| c.variant == v && c.status == "ok").count();
        let failed = summary.cells.iter().filter(|c| c.variant == v && c.status != "ok").count();
        match summary.aggregate.iter().rev().find(|r| r.variant == v) {
            Some(r) => println!("{v},{ok},{failed},{:.6},{:.6},{:.6}", r.mean, r.ci_low, r.ci_high),
            None => println!("{v},{ok},{failed},,,"),
        }
    }
}

fn condorcet(env: &str, m: usize) -> Result<()> {
    let (mdp, f, _) = load_env(env)?;
    let exact = ExactPreference::new(&mdp, &f)?;
    let table = exact.table(m)?;
    println!("h,s,a,b,p");
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            let n = mdp.actions_at(h, s);
            for a in 0..n {
                for b in (0..n).filter(|&b| b != a) {
                    println!("{h},{s},{a},{b},{:.12}", table.get(h, s, a, b));
                }
            }
        }
    }
    println!();
    println!("h,s,optimal,condorcet_winner");
    for h in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            if mdp.actions_at(h, s) > 1 {
                let winner = table.condorcet_winner(h, s).map_or("none".to_string(), |a| a.to_string());
                println!("{h},{s},{},{winner}", table.optimal().action(h, s)?);
            }
        }
    }
    println!();
    match table.min_gap() {
        Some(g) => println!("min_gap,{g:.12}\ncertifies_optimal,{}", table.certifies_optimal()),
        None => println!("min_gap,\ncertifies_optimal,true"),
    }
    Ok(())
}

fn oracle_check(env: &str, batch_sizes: &[usize], samples: usize, seed: u64) -> Result<()> {
    let (mdp, f, _) = load_env(env)?;
    let exact = ExactPreference::new(&mdp, &f)?;
    let mut oracle = PreferenceOracle::new(&f, TieRule::UniformRandom, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    println!("h,s,a,b,M,exact,monte_carlo,z");
    let mut worst: f64 = 0.0;
    for &m in batch_sizes {
        for h in 0..mdp.horizon() {
            for s in 0..mdp.num_states() {
                let n = mdp.actions_at(h, s);
                for a in 0..n {
                    for b in a + 1..n {
                        let p = exact.probability(h, s, a, b, m)?;
                        let est =
                            monte_carlo_preference(&mdp, &mut oracle, h, s, a, b, exact.optimal(), m, samples, &mut rng)?;
                        let sd = (p * (1.0 - p) / samples as f64).sqrt();
                        let z = if sd > 0.0 { (est - p).abs() / sd } else if est == p { 0.0 } else { f64::INFINITY };
                        worst = worst.max(z);
                        println!("{h},{s},{a},{b},{m},{p:.6},{est:.6},{z:.2}");
                    }
                }
            }
        }
    }
    println!("worst_z,{worst:.2}");
    Ok(())
}

fn identify(
    env: &str,
    batch_size: usize,
    delta: f64,
    seed: u64,
    trace_every: u64,
    out: &Path,
) -> Result<()> {
    let (mdp, f, hash) = load_env(env)?;
    let config = BsadConfig {
        batch_size,
        delta,
        seed,
        ..BsadConfig::default()
    };
    let (_, record) = run_bsad_episodic(&mdp, &f, &config, trace_every)?;
    fs::create_dir_all(out)?;
    record.save_csv(out.join("trace.csv"))?;
    fs::write(out.join("policy.json"), serde_json::to_string_pretty(&record.policy_json())? + "\n")?;
    let meta = record.metadata(&config, Some(&hash));
    fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    println!(
        "termination={} episodes={} queries={} policy={}",
        serde_json::to_value(record.termination)?.as_str().unwrap_or_default(),
        record.total_episodes,
        record.queries,
        serde_json::to_string(&record.policy_json())?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let config = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            print_summary(&run_experiment(&config)?);
        }
        Command::SweepBatch {
            env,
            batch_sizes,
            seeds,
            budget,
            cadence,
            out,
        } => {
            let environment = match env.as_str() {
                "counterexample" => EnvironmentSpec::default(),
                "counterexample-skewed" => EnvironmentSpec::skewed_counterexample(),
                other => bail!("unknown environment {other:?} (expected counterexample or counterexample-skewed)"),
            };
            if batch_sizes.is_empty() {
                bail!("no batch sizes given");
            }
            let config = batch_sweep_config(environment, &batch_sizes, (0..seeds).collect(), budget, cadence, out);
            print_summary(&run_experiment(&config)?);
        }
        Command::Condorcet { env, batch_size } => condorcet(&env, batch_size)?,
        Command::OracleCheck {
            env,
            batch_sizes,
            samples,
            seed,
        } => oracle_check(&env, &batch_sizes, samples, seed)?,
        Command::PlotData { dir } => {
            let rows = aggregate_dir(&dir)?;
            println!("wrote {} rows to {}", rows.len(), dir.join("aggregate.csv").display());
        }
        Command::Identify {
            env,
            batch_size,
            delta,
            seed,
            trace_every,
            out,
        } => identify(&env, batch_size, delta, seed, trace_every, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| {
                    if let Some(e) = c.downcast_ref::<bsad_core::Error>() {
                        Some(e.kind())
                    } else if c.is::<std::io::Error>() {
                        Some("io")
                    } else if c.is::<serde_json::Error>() {
                        Some("json")
                    } else {
                        None
                    }
                })
                .unwrap_or("cli");
            let line = serde_json::json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::from(2)
        }
    }
}
