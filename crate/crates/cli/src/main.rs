//! `rsnoma` command line: Monte Carlo sweeps, CSV summaries and oracle
//! cross-checks.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use rsnoma::experiment::{self, SweepPlan, SweepSpec, WeightScheme};
use rsnoma::{driver, oracle, Mode, ScenarioConfig};

/// Default user count when no configuration file is given.
const DEFAULT_USERS: usize = 4;

#[derive(Parser)]
#[command(name = "rsnoma", version, about = "Hybrid RSMA-NOMA power allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run SCA over channel draws (and optionally a parameter sweep), writing one CSV row per run.
    Simulate {
        /// Scenario TOML; the standard 4-user cell when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::All)]
        mode: ModeArg,
        /// `rth:lo:hi:step` or `pmax:lo:hi:step`.
        #[arg(long)]
        sweep: Option<SweepSpec>,
        #[arg(long, default_value_t = 30)]
        draws: usize,
        /// Channel seed; the configuration's `rng_seed` when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Weight scheme; replaces any weights given in the configuration.
        #[arg(long, default_value_t = WeightScheme::Equal)]
        weights: WeightScheme,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a simulation CSV per mode, weights and sweep point.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare SCA against the exhaustive grid oracle on small instances.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = ModeArg::All)]
        mode: ModeArg,
        /// Grid points per unit of the power budget.
        #[arg(long, default_value_t = 50)]
        density: usize,
        #[arg(long, default_value_t = 0.03)]
        rel_tol: f64,
        /// Fraction of oracle-feasible draws that must pass.
        #[arg(long, default_value_t = 0.9)]
        min_pass: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hybrid,
    Noma,
    Rsma,
    All,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Hybrid => vec![Mode::Hybrid],
            ModeArg::Noma => vec![Mode::NomaOnly],
            ModeArg::Rsma => vec![Mode::RsmaOnly],
            ModeArg::All => Mode::ALL.to_vec(),
        }
    }
}

fn load_config(path: Option<&Path>, default_users: usize) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ScenarioConfig::standard(default_users)),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(
    config: Option<&Path>,
    mode: ModeArg,
    sweep: Option<SweepSpec>,
    draws: usize,
    seed: Option<u64>,
    weights: WeightScheme,
    out: Option<&Path>,
) -> Result<()> {
    let base = load_config(config, DEFAULT_USERS)?;
    let plan = SweepPlan {
        seed: seed.unwrap_or(base.rng_seed),
        base,
        sweep,
        draws,
        modes: mode.modes(),
        scheme: weights,
    };
    let records = experiment::sweep(&plan)?;
    let solved = records.iter().filter(|r| r.is_solved()).count();
    info!("{} runs, {} solved", records.len(), solved);
    let mut w = output(out)?;
    experiment::write_csv(&records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn summarize(input: &Path, out: Option<&Path>) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = experiment::read_csv(BufReader::new(file))?;
    let rows = experiment::summarize(&records);
    let mut w = output(out)?;
    if !rows.is_empty() {
        experiment::write_summary_csv(&rows, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn verify(
    config: Option<&Path>,
    draws: usize,
    seed: Option<u64>,
    mode: ModeArg,
    density: usize,
    rel_tol: f64,
    min_pass: f64,
) -> Result<bool> {
    let base = load_config(config, 2)?;
    if base.num_users > oracle::MAX_ORACLE_USERS {
        bail!(
            "the oracle handles at most {} users, configuration has {}",
            oracle::MAX_ORACLE_USERS,
            base.num_users
        );
    }
    let seed = seed.unwrap_or(base.rng_seed);
    let mut ok = true;
    println!("mode,draw_index,status,sca_objective,oracle_objective,ratio,pass");
    for m in mode.modes() {
        let cfg = base.clone().with_mode(m);
        let (mut feasible, mut passed) = (0usize, 0usize);
        for d in 0..draws {
            let ch = experiment::draw_for(&cfg, seed, d);
            let report = driver::run(&cfg, &ch);
            let Some(sol) = oracle::grid_search(&cfg, &ch, m, density)? else {
                println!("{},{d},{},{},,,", m.as_str(), report.status.as_str(), report.objective());
                continue;
            };
            feasible += 1;
            let pass = oracle::verify(&cfg, &ch, &report, sol.objective, rel_tol);
            passed += pass as usize;
            println!(
                "{},{d},{},{},{},{},{}",
                m.as_str(),
                report.status.as_str(),
                report.objective(),
                sol.objective,
                report.objective() / sol.objective,
                pass
            );
        }
        let rate = if feasible == 0 { 1.0 } else { passed as f64 / feasible as f64 };
        eprintln!("{}: {passed}/{feasible} oracle-feasible draws within {rel_tol}", m.as_str());
        ok &= rate >= min_pass;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, mode, sweep, draws, seed, weights, out } => {
            simulate(config.as_deref(), mode, sweep, draws, seed, weights, out.as_deref()).map(|_| true)
        }
        Command::Summarize { input, out } => summarize(&input, out.as_deref()).map(|_| true),
        Command::Verify { config, draws, seed, mode, density, rel_tol, min_pass } => {
            verify(config.as_deref(), draws, seed, mode, density, rel_tol, min_pass)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
