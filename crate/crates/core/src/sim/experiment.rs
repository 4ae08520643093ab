//! Runs every sweep point of a configuration and writes the CSV artifacts.
//!
//! Three files are written per run, each with one header row. Reals are
//! printed with 17 significant digits, and an empty field means "undefined".
//!
//! `summary.csv`: one row per sweep point.
//! `strategy,zeta,delta,samples,mismatch` identify the point.
//! `episodes,throughput,throughput_ci95` hold the Monte Carlo reward per slot
//! and the half-width of its 95% interval.
//! `exact_throughput` is the exact expected reward per slot of the simulated
//! strategy under the true model (single-channel sets only).
//! `planned_throughput` is `V_1/T` as predicted by the solved policy under the
//! assumed model (exact separation only).
//! `epsilon,design_delta,f0,f1` describe channel 1's separation design: its
//! operating point and its transmission probabilities after sensing busy (0)
//! and idle (1).
//! `time_factor` is the data fraction `1 - M·c` of a slot.
//! `max_collision_rate,collisions_ok` give the worst per-channel collision
//! estimate and whether every channel is within `ζ + 3σ`.
//! `sync_violations,resets,cache_hits,cache_misses` are diagnostics.
//!
//! `collisions.csv`: point columns, then
//! `channel,collisions,busy_opportunities,rate,bound`, one row per channel (1-based).
//!
//! `slots.csv`: point columns, then
//! `t,idle_sensed,false_alarms,pfa,busy_sensed,misses,pm,mean_reward`, one row per slot.

use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepPoint};
use super::episode::{run_episode, update_or_reset, EpisodeSetup};
use super::metrics::Metrics;
use super::strategy::{Strategy, StrategySetup};
use crate::error::{OsaError, Result};
use crate::markov::{stationary, Belief, ObservationKernel};
use crate::numerics::mix64;
use crate::pomdp::RewardSpec;

/// Trials per parallel work unit. Fixed, so results do not depend on the thread count.
const CHUNK: usize = 64;

/// Largest number of observation histories the exact evaluation will walk.
const MAX_EXACT_LEAVES: f64 = (1u64 << 20) as f64;

const CALIBRATION_SEED_TAG: u64 = 0xca1b;

#[derive(Clone, Debug)]
pub struct PointResult {
    pub point: SweepPoint,
    pub metrics: Metrics,
    pub exact_throughput: Option<f64>,
    pub planned_throughput: Option<f64>,
    pub epsilon: f64,
    pub design_delta: f64,
    pub f0: f64,
    pub f1: f64,
    pub time_factor: f64,
    pub cache: Option<(u64, u64)>,
}

/// Builds the strategy and episode inputs of one sweep point.
pub fn episode_setup(cfg: &ExperimentConfig, point: &SweepPoint) -> Result<EpisodeSetup> {
    let truth = cfg.true_model()?;
    let assumed = cfg.assumed_model(point.mismatch)?;
    let time_factor = RewardSpec::with_measurement_cost(point.samples, cfg.strategy.measurement_cost)?.time_factor;
    let strategy = Strategy::new(StrategySetup {
        kind: point.strategy,
        set_size: cfg.strategy.set_size,
        assumed: assumed.clone(),
        params: cfg.channel_params(point.samples)?,
        zeta: point.zeta,
        delta: point.delta,
        horizon: cfg.run.horizon,
        time_factor,
        calibration_trials: cfg.strategy.calibration_trials,
        prune_tolerance: cfg.strategy.prune_tolerance,
        seed: mix64(cfg.run.seed ^ CALIBRATION_SEED_TAG),
    })?;
    let (initial_state, initial_belief) = match &cfg.model.initial {
        Some(mass) => (mass.clone(), Belief::new(mass.clone())?),
        None => (stationary(&truth)?.into_mass(), stationary(&assumed)?),
    };
    Ok(EpisodeSetup { truth, strategy, initial_state, initial_belief, horizon: cfg.run.horizon })
}

/// Simulates `trials` episodes, in parallel chunks merged in order.
pub fn run_trials(setup: &EpisodeSetup, seed: u64, trials: usize) -> Result<Metrics> {
    let chunks: Vec<usize> = (0..trials.div_ceil(CHUNK)).collect();
    let parts: Vec<Result<Metrics>> = chunks
        .par_iter()
        .map(|&c| {
            let mut m = Metrics::new(setup.truth.channels(), setup.horizon);
            for trial in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                m.record(&run_episode(setup, seed, trial as u64)?);
            }
            Ok(m)
        })
        .collect();
    let mut total = Metrics::new(setup.truth.channels(), setup.horizon);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

/// Exact expected reward per slot of the strategy, found by walking every
/// acknowledgement history. `None` when there are too many histories.
pub fn expected_throughput(setup: &EpisodeSetup) -> Result<Option<f64>> {
    let width = setup.strategy.setup().set_size as f64;
    if (width * setup.horizon as f64).exp2() > MAX_EXACT_LEAVES {
        return Ok(None);
    }
    let total = walk(setup, 1, &setup.initial_state, &setup.initial_belief)?;
    Ok(Some(total / setup.horizon as f64))
}

fn walk(setup: &EpisodeSetup, t: usize, joint: &[f64], belief: &Belief<f64>) -> Result<f64> {
    let strategy = &setup.strategy;
    let plan = strategy.plan(belief, t)?;
    let predicted = setup.truth.predict_mass(joint);
    let time_factor = strategy.setup().time_factor;
    let mut value = 0.0;
    for k in 0..plan.kernel.num_outcomes() {
        let next: Vec<f64> =
            predicted.iter().enumerate().map(|(s, &p)| p * plan.kernel.likelihood(s, k)).collect();
        let mass: f64 = next.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        let bandwidth: f64 = plan
            .set
            .channels()
            .iter()
            .enumerate()
            .filter(|(j, _)| k >> j & 1 == 1)
            .map(|(_, &c)| setup.truth.bandwidths()[c])
            .sum();
        value += mass * bandwidth * time_factor;
        if t < setup.horizon {
            let mut resets = 0;
            let posterior = update_or_reset(belief, &strategy.setup().assumed, &plan, k, &mut resets)?;
            value += walk(setup, t + 1, &next, &posterior)?;
        }
    }
    Ok(value)
}

/// Simulates one sweep point with the run's trial count and seed.
pub fn run_point(cfg: &ExperimentConfig, point: &SweepPoint) -> Result<PointResult> {
    let setup = episode_setup(cfg, point)?;
    let metrics = run_trials(&setup, cfg.run.seed, cfg.run.trials)?;
    let exact_throughput = expected_throughput(&setup)?;
    let planned_throughput = match setup.strategy.policy() {
        Some(p) => Some(p.evaluate(&setup.initial_belief, 1)?.0 / cfg.run.horizon as f64),
        None => None,
    };
    let (op, rule) = setup.strategy.design(0);
    log::info!(
        "{} zeta={} delta={} M={} mismatch={}: throughput {:.6} ± {:.6}",
        point.strategy,
        point.zeta,
        point.delta,
        point.samples,
        point.mismatch,
        metrics.throughput(),
        metrics.throughput_ci()
    );
    Ok(PointResult {
        point: *point,
        exact_throughput,
        planned_throughput,
        epsilon: op.epsilon,
        design_delta: op.delta,
        f0: rule.f0,
        f1: rule.f1,
        time_factor: setup.strategy.setup().time_factor,
        cache: setup.strategy.cache_stats(),
        metrics,
    })
}

/// Runs every sweep point in order on a pool sized by `OSA_THREADS`
/// (machine parallelism when unset).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PointResult>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("OSA_THREADS") {
        let n: usize = v.parse().map_err(|_| OsaError::Config(format!("OSA_THREADS={v} is not a count")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| OsaError::Config(format!("thread pool: {e}")))?;
    pool.install(|| cfg.points().iter().map(|p| run_point(cfg, p)).collect())
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

fn point_fields(p: &SweepPoint) -> Vec<String> {
    vec![p.strategy.name().to_string(), fmt_real(p.zeta), fmt_real(p.delta), p.samples.to_string(), fmt_real(p.mismatch)]
}

const POINT_HEADER: [&str; 5] = ["strategy", "zeta", "delta", "samples", "mismatch"];

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| OsaError::Io(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> OsaError {
    OsaError::Io(e.to_string())
}

/// Writes `summary.csv`, `collisions.csv` and `slots.csv` into `dir`.
pub fn write_csvs(results: &[PointResult], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| OsaError::Io(format!("{}: {e}", dir.display())))?;
    let paths = [dir.join("summary.csv"), dir.join("collisions.csv"), dir.join("slots.csv")];

    let mut w = writer(&paths[0])?;
    let mut header: Vec<&str> = POINT_HEADER.to_vec();
    header.extend([
        "episodes",
        "throughput",
        "throughput_ci95",
        "exact_throughput",
        "planned_throughput",
        "epsilon",
        "design_delta",
        "f0",
        "f1",
        "time_factor",
        "max_collision_rate",
        "collisions_ok",
        "sync_violations",
        "resets",
        "cache_hits",
        "cache_misses",
    ]);
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let m = &r.metrics;
        let max_rate = (0..m.collisions.len()).filter_map(|c| m.collision_rate(c)).fold(None, |a: Option<f64>, x| {
            Some(a.map_or(x, |a| a.max(x)))
        });
        let mut row = point_fields(&r.point);
        row.extend([
            m.episodes.to_string(),
            fmt_real(m.throughput()),
            fmt_real(m.throughput_ci()),
            fmt_opt(r.exact_throughput),
            fmt_opt(r.planned_throughput),
            fmt_real(r.epsilon),
            fmt_real(r.design_delta),
            fmt_real(r.f0),
            fmt_real(r.f1),
            fmt_real(r.time_factor),
            fmt_opt(max_rate),
            m.collisions_within(r.point.zeta).to_string(),
            m.sync_violations.to_string(),
            m.resets.to_string(),
            r.cache.map(|c| c.0.to_string()).unwrap_or_default(),
            r.cache.map(|c| c.1.to_string()).unwrap_or_default(),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| OsaError::Io(e.to_string()))?;

    let mut w = writer(&paths[1])?;
    let mut header: Vec<&str> = POINT_HEADER.to_vec();
    header.extend(["channel", "collisions", "busy_opportunities", "rate", "bound"]);
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let m = &r.metrics;
        for c in 0..m.collisions.len() {
            let mut row = point_fields(&r.point);
            row.extend([
                (c + 1).to_string(),
                m.collisions[c].to_string(),
                m.busy_opportunities[c].to_string(),
                fmt_opt(m.collision_rate(c)),
                fmt_real(m.collision_bound(c, r.point.zeta)),
            ]);
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| OsaError::Io(e.to_string()))?;

    let mut w = writer(&paths[2])?;
    let mut header: Vec<&str> = POINT_HEADER.to_vec();
    header.extend(["t", "idle_sensed", "false_alarms", "pfa", "busy_sensed", "misses", "pm", "mean_reward"]);
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let m = &r.metrics;
        for t in 1..=m.horizon {
            let mut row = point_fields(&r.point);
            row.extend([
                t.to_string(),
                m.idle_sensed[t - 1].to_string(),
                m.false_alarms[t - 1].to_string(),
                fmt_opt(m.pfa(t)),
                m.busy_sensed[t - 1].to_string(),
                m.misses[t - 1].to_string(),
                fmt_opt(m.pm(t)),
                fmt_real(m.slot_reward[t - 1] / m.episodes as f64),
            ]);
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| OsaError::Io(e.to_string()))?;
    Ok(paths.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[model]
alpha = [0.2, 0.4, 0.6]
beta = [0.8, 0.6, 0.4]

[detector]
signal_db = 5.0
samples = 10

[strategy]
kind = "separation-exact"
zeta = 0.05

[run]
horizon = 5
trials = 300
seed = 11
"#;

    #[test]
    fn exact_evaluation_matches_the_planned_value() {
        let cfg = ExperimentConfig::from_toml(SMALL, None).unwrap();
        let r = run_point(&cfg, &cfg.points()[0]).unwrap();
        let exact = r.exact_throughput.unwrap();
        assert!((exact - r.planned_throughput.unwrap()).abs() < 1e-12, "{exact} vs {:?}", r.planned_throughput);
        assert!((r.metrics.throughput() - exact).abs() < 4.0 * r.metrics.throughput_ci());
        assert_eq!(r.metrics.sync_violations, 0);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let cfg = ExperimentConfig::from_toml(SMALL, None).unwrap();
        let setup = episode_setup(&cfg, &cfg.points()[0]).unwrap();
        let parallel = run_trials(&setup, 5, 150).unwrap();
        let mut serial = Metrics::new(3, 5);
        for trial in 0..150 {
            let mut one = Metrics::new(3, 5);
            one.record(&run_episode(&setup, 5, trial).unwrap());
            serial.merge(&one);
        }
        assert_eq!(parallel.collisions, serial.collisions);
        assert_eq!(parallel.false_alarms, serial.false_alarms);
        assert!((parallel.reward_sum - serial.reward_sum).abs() < 1e-12 * serial.reward_sum);
    }

    #[test]
    fn csvs_have_fixed_headers() {
        let cfg = ExperimentConfig::from_toml(&SMALL.replace("trials = 300", "trials = 20"), None).unwrap();
        let results = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_csvs(&results, dir.path()).unwrap();
        let summary = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(summary.starts_with("strategy,zeta,delta,samples,mismatch,episodes,throughput,"));
        assert_eq!(summary.lines().count(), 2);
        let slots = std::fs::read_to_string(&paths[2]).unwrap();
        assert_eq!(slots.lines().count(), 1 + 5);
        assert!(summary.contains("5.0000000000000003e-2"));
    }
}
