//! Command-line front end. Exit codes: 0 success, 1 usage or validation
//! error, 2 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{OsaError, Result};
use crate::numerics::RngStream;
use crate::sensor::{energy_roc, sample_energy, threshold_for_pm};
use crate::sim::config::{ExperimentConfig, StrategyKind};
use crate::sim::experiment::{episode_setup, fmt_real, run_experiment, write_csvs, PointResult};
use crate::sim::oracle::run_oracle;

#[derive(Parser, Debug)]
#[command(name = "osa", version, about = "Opportunistic spectrum access toolkit")]
struct Cli {
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configuration's episode count (and enables Monte Carlo columns in `roc`).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment configuration (TOML). Defaults to the bundled independent-channel setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the exact sensing policy and dump its alpha vectors.
    Solve,
    /// Simulate every point of a configuration.
    Simulate,
    /// Tabulate the energy detector's operating points.
    Roc {
        /// Number of rows.
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Run a bundled figure recipe.
    Experiment { figure: Figure },
    /// Check the exact solver against brute force on random instances.
    Oracle {
        #[arg(long, default_value_t = 2)]
        max_n: usize,
        #[arg(long, default_value_t = 3)]
        max_t: usize,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Figure {
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
}

impl Figure {
    fn name(self) -> &'static str {
        match self {
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Fig8 => "fig8",
            Figure::Fig9 => "fig9",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve => solve(cli),
        Command::Simulate => {
            let cfg = load(cli, "independent")?;
            let results = run_experiment(&cfg)?;
            report(&results, &out_dir(cli, "simulate"))
        }
        Command::Roc { points } => roc(cli, *points),
        Command::Experiment { figure } => {
            let cfg = load(cli, figure.name())?;
            let results = run_experiment(&cfg)?;
            report(&results, &out_dir(cli, figure.name()))
        }
        Command::Oracle { max_n, max_t, instances } => {
            if *max_n == 0 || *max_n > 3 || *max_t == 0 || *max_t > 4 {
                return Err(OsaError::Config("oracle needs 1 ≤ max-n ≤ 3 and 1 ≤ max-t ≤ 4".into()));
            }
            let r = run_oracle(*max_n, *max_t, *instances, cli.seed.unwrap_or(1))?;
            let verdict = if r.max_deviation <= 1e-9 { "PASS" } else { "FAIL" };
            println!("{verdict} {} instances, max deviation {:.3e}", r.instances, r.max_deviation);
            if verdict == "FAIL" {
                return Err(OsaError::Solver(format!("deviation {:.3e} exceeds 1e-9", r.max_deviation)));
            }
            Ok(())
        }
    }
}

fn load(cli: &Cli, bundled: &str) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::bundled(bundled)?,
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.run.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, name: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| Path::new("osa-out").join(name))
}

fn report(results: &[PointResult], dir: &Path) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    for r in results {
        let p = &r.point;
        let m = &r.metrics;
        let exact = r.exact_throughput.map(|v| format!(" exact {v:.6}")).unwrap_or_default();
        writeln!(
            stdout,
            "{} zeta={} delta={} M={} mismatch={}: throughput {:.6} ± {:.6}{exact}, collisions {}",
            p.strategy,
            p.zeta,
            p.delta,
            p.samples,
            p.mismatch,
            m.throughput(),
            m.throughput_ci(),
            if m.collisions_within(p.zeta) { "within cap" } else { "OVER CAP" }
        )?;
    }
    let paths = write_csvs(results, dir)?;
    writeln!(stdout, "wrote {}", paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))?;
    Ok(())
}

fn solve(cli: &Cli) -> Result<()> {
    let cfg = load(cli, "independent")?;
    let mut point = cfg.points()[0];
    if point.strategy != StrategyKind::SeparationExact {
        point.strategy = StrategyKind::SeparationExact;
        point.delta = cfg.strategy.delta.unwrap_or(point.zeta);
    }
    if cfg.strategy.set_size != 1 {
        return Err(OsaError::Config("solve handles one sensed channel per slot".into()));
    }
    let setup = episode_setup(&cfg, &point)?;
    let policy = setup.strategy.policy().expect("exact strategy carries a policy");
    let value = policy.evaluate(&setup.initial_belief, 1)?.0;
    let dump = policy.dump();
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("policy.txt");
            std::fs::write(&path, dump)?;
            println!("wrote {}", path.display());
        }
        None => print!("{dump}"),
    }
    let sizes: Vec<String> = policy.stages.iter().map(|s| s.vectors.len().to_string()).collect();
    eprintln!("V1/T = {:.12}, alpha vectors per stage: {}", value / cfg.run.horizon as f64, sizes.join(" "));
    Ok(())
}

fn roc(cli: &Cli, points: usize) -> Result<()> {
    if points < 2 {
        return Err(OsaError::Config("roc needs at least 2 points".into()));
    }
    let cfg = load(cli, "independent")?;
    let params = cfg.channel_params(cfg.detector.samples)?[0];
    let trials = cli.trials;
    let mut rng = RngStream::new(cfg.run.seed, 0x0c);
    let mut out: Box<dyn Write> = match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Box::new(std::fs::File::create(dir.join("roc.csv"))?)
        }
        None => Box::new(std::io::stdout().lock()),
    };
    let mut header = vec!["eta", "epsilon", "delta"];
    if trials.is_some() {
        header.extend(["mc_epsilon", "mc_delta", "trials"]);
    }
    writeln!(out, "{}", header.join(","))?;
    // PM grid from 0.001 to 0.999; thresholds increase with PM
    for i in 0..points {
        let target = 0.001 + 0.998 * i as f64 / (points - 1) as f64;
        let eta = threshold_for_pm(&params, target)?;
        let p = energy_roc(&params, eta)?;
        let mut row = vec![fmt_real(eta), fmt_real(p.epsilon), fmt_real(p.delta)];
        if let Some(n) = trials {
            let fa = (0..n).filter(|_| sample_energy(&params, false, &mut rng) >= eta).count();
            let miss = (0..n).filter(|_| sample_energy(&params, true, &mut rng) < eta).count();
            row.extend([fmt_real(fa as f64 / n as f64), fmt_real(miss as f64 / n as f64), n.to_string()]);
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
