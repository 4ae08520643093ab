//! Composite likelihood-ratio detection when the sensed channels are correlated.
//!
//! For a reference channel `n` inside a sensed set, the test compares
//! `Σ_s h(s|0) f(Y|s)` against `Σ_s h(s|1) f(Y|s)`, where `f(Y|s)` is the
//! Gaussian likelihood of every sensed channel's measurements under the
//! occupancy pattern `s`. Only per-channel energies enter the likelihood.

use std::collections::HashMap;
use std::sync::Arc;

use super::{sample_chi_squared, threshold_for_pm, GaussianChannelParams, OperatingPoint};
use crate::error::{OsaError, Result};
use crate::multichannel::{ChannelSet, ConditionalOccupancy, SensingErrorModel};
use crate::numerics::{mix64, RngStream};

const MIN_CALIBRATION_TRIALS: usize = 10_000;
/// Quantization step for cache keys on conditional occupancy entries.
const KEY_STEP: f64 = 5e-4;
const BANK_NAMESPACE: u64 = 0xb4_4e_4b;

/// Threshold chosen for one reference channel with its estimated error rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    /// `ln τ`; the test declares busy iff the log-likelihood ratio exceeds it.
    pub log_tau: f64,
    pub pm: f64,
    pub pfa: f64,
}

impl Calibration {
    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }
}

/// Sampled error model of a composite detector over a channel set.
pub type ErrorTable = SensingErrorModel<f64>;

#[inline]
fn channel_loglik(params: &GaussianChannelParams<f64>, energy: f64, idle: bool) -> f64 {
    let v = params.variance(!idle);
    -0.5 * params.samples as f64 * v.ln() - energy / (2.0 * v)
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn check_prior(cond: &ConditionalOccupancy<f64>, width: usize) -> Result<()> {
    let np = 1usize << width;
    if cond.h0.len() != np || cond.h1.len() != np {
        return Err(OsaError::Dimension { expected: np, got: cond.h0.len() });
    }
    let bit = 1usize << cond.reference;
    let s0: f64 = cond.h0.iter().sum();
    let s1: f64 = cond.h1.iter().sum();
    if !(s0 > 0.0 && s1 > 0.0) {
        return Err(OsaError::Invalid("conditional occupancy has no mass".into()));
    }
    if cond.h0.iter().enumerate().any(|(s, &p)| s & bit != 0 && p != 0.0)
        || cond.h1.iter().enumerate().any(|(s, &p)| s & bit == 0 && p != 0.0)
    {
        return Err(OsaError::Invalid("conditional occupancy puts mass on the wrong hypothesis".into()));
    }
    Ok(())
}

/// Log-likelihood ratio (busy over idle) of the reference channel given per-channel energies.
pub fn composite_llr(
    energies: &[f64],
    cond: &ConditionalOccupancy<f64>,
    params: &[GaussianChannelParams<f64>],
) -> Result<f64> {
    let width = energies.len();
    if params.len() != width {
        return Err(OsaError::Dimension { expected: width, got: params.len() });
    }
    check_prior(cond, width)?;
    let ll: Vec<[f64; 2]> = (0..width)
        .map(|j| [channel_loglik(&params[j], energies[j], false), channel_loglik(&params[j], energies[j], true)])
        .collect();
    let pattern_ll = |s: usize| (0..width).map(|j| ll[j][s >> j & 1]).sum::<f64>();
    let side = |h: &[f64]| {
        log_sum_exp(h.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, &p)| p.ln() + pattern_ll(s)))
    };
    Ok(side(&cond.h0) - side(&cond.h1))
}

/// Composite test from energies; returns Θ (`true` = declared idle).
pub fn composite_lrt_energies(
    energies: &[f64],
    cond: &ConditionalOccupancy<f64>,
    params: &[GaussianChannelParams<f64>],
    tau: f64,
) -> Result<bool> {
    if !(tau >= 0.0) {
        return Err(OsaError::Domain(format!("threshold {tau} must be nonnegative")));
    }
    Ok(composite_llr(energies, cond, params)? <= tau.ln())
}

/// Composite test on raw measurements (one sample list per sensed channel).
pub fn composite_lrt(
    measurements: &[Vec<f64>],
    cond: &ConditionalOccupancy<f64>,
    params: &[GaussianChannelParams<f64>],
    tau: f64,
) -> Result<bool> {
    for (y, p) in measurements.iter().zip(params) {
        if y.len() != p.samples as usize {
            return Err(OsaError::Dimension { expected: p.samples as usize, got: y.len() });
        }
    }
    let energies: Vec<f64> = measurements.iter().map(|y| y.iter().map(|v| v * v).sum()).collect();
    composite_lrt_energies(&energies, cond, params, tau)
}

/// Common-random-number sample bank: per-sample standard χ² draws for every
/// set position, and the induced pattern log-likelihoods for each true pattern.
pub struct EnergyBank {
    width: usize,
    trials: usize,
    /// `energy[(k * 2^L + s_true) * L + j]`
    energy: Vec<f64>,
    /// `loglik[(k * 2^L + s_true) * 2^L + s_hyp]`
    loglik: Vec<f64>,
    /// Same layout: `exp(loglik - max over s_hyp)`.
    lik: Vec<f64>,
}

impl EnergyBank {
    pub fn new(params: &[GaussianChannelParams<f64>], trials: usize, rng: &mut RngStream) -> Self {
        let width = params.len();
        let np = 1usize << width;
        let base: Vec<f64> = (0..trials * width).map(|i| sample_chi_squared(params[i % width].samples, rng)).collect();
        let mut energy = Vec::with_capacity(trials * np * width);
        let mut loglik = Vec::with_capacity(trials * np * np);
        for k in 0..trials {
            for s in 0..np {
                let e: Vec<f64> =
                    (0..width).map(|j| params[j].variance(s >> j & 1 == 0) * base[k * width + j]).collect();
                let ll: Vec<[f64; 2]> = (0..width)
                    .map(|j| [channel_loglik(&params[j], e[j], false), channel_loglik(&params[j], e[j], true)])
                    .collect();
                for h in 0..np {
                    loglik.push((0..width).map(|j| ll[j][h >> j & 1]).sum());
                }
                energy.extend(e);
            }
        }
        let lik = loglik
            .chunks(np)
            .flat_map(|row| {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.iter().map(move |l| (l - m).exp())
            })
            .collect();
        EnergyBank { width, trials, energy, loglik, lik }
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    fn energy(&self, k: usize, s: usize, j: usize) -> f64 {
        self.energy[((k << self.width) + s) * self.width + j]
    }

    fn llr(&self, k: usize, s: usize, side: &LogPrior) -> f64 {
        let np = 1usize << self.width;
        let row = &self.loglik[((k << self.width) + s) * np..((k << self.width) + s + 1) * np];
        let lse = |terms: &[(usize, f64)]| {
            let m = terms.iter().map(|&(h, lp)| lp + row[h]).fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|&(h, lp)| (lp + row[h] - m).exp()).sum::<f64>().ln()
        };
        lse(&side.busy) - lse(&side.idle)
    }

    /// LLR of every bank sample drawn under true pattern `s`.
    fn llr_column(&self, s: usize, side: &LogPrior) -> Vec<f64> {
        (0..self.trials).map(|k| self.llr(k, s, side)).collect()
    }

    /// LLR columns under true pattern `s` for several priors at once. The
    /// pattern likelihoods are exponentiated once per sample and shared.
    fn llr_columns(&self, s: usize, conds: &[&ConditionalOccupancy<f64>], support: u32) -> Vec<Vec<f64>> {
        let np = 1usize << self.width;
        let hyps: Vec<usize> = (0..np).filter(|h| support >> h & 1 == 1).collect();
        let sides: Vec<LogPrior> = conds.iter().map(|c| LogPrior::new(c)).collect();
        let mut out: Vec<Vec<f64>> = conds.iter().map(|_| Vec::with_capacity(self.trials)).collect();
        for k in 0..self.trials {
            let base = ((k << self.width) + s) * np;
            let w = &self.lik[base..base + np];
            for (i, c) in conds.iter().enumerate() {
                let busy: f64 = hyps.iter().map(|&h| c.h0[h] * w[h]).sum();
                let idle: f64 = hyps.iter().map(|&h| c.h1[h] * w[h]).sum();
                // far tails can underflow the shared scale
                let l = if busy > 1e-280 && idle > 1e-280 { (busy / idle).ln() } else { self.llr(k, s, &sides[i]) };
                out[i].push(l);
            }
        }
        out
    }

    /// Threshold with bank miss rate at most `target_pm` (largest such), and its false-alarm rate.
    pub fn calibrate(&self, cond: &ConditionalOccupancy<f64>, target_pm: f64) -> Result<Calibration> {
        check_prior(cond, self.width)?;
        let side = LogPrior::new(cond);
        let columns: Vec<Option<Vec<f64>>> = (0..1usize << self.width)
            .map(|s| (cond.h0[s] > 0.0 || cond.h1[s] > 0.0).then(|| self.llr_column(s, &side)))
            .collect();
        calibrate_columns(cond, &columns, target_pm)
    }
}

/// Calibration from precomputed LLR columns, indexed by true pattern; every
/// pattern with conditional mass must have a column.
fn calibrate_columns(
    cond: &ConditionalOccupancy<f64>,
    columns: &[Option<Vec<f64>>],
    target_pm: f64,
) -> Result<Calibration> {
    if !(target_pm > 0.0 && target_pm < 1.0) {
        return Err(OsaError::Domain(format!("target miss probability {target_pm} outside (0,1)")));
    }
    let column = |s: usize| columns[s].as_deref().expect("LLR column for a pattern with mass");
    let mass: Vec<(&[f64], f64)> =
        cond.h0.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(s, &w)| (column(s), w)).collect();
    // each column's own target quantile bounds the pooled one from above
    let mut scratch = Vec::new();
    let cap = mass
        .iter()
        .map(|&(col, _)| {
            scratch.clear();
            scratch.extend_from_slice(col);
            let idx = ((target_pm * col.len() as f64).ceil() as usize).clamp(1, col.len()) - 1;
            *scratch.select_nth_unstable_by(idx, f64::total_cmp).1
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut i, mut busy, mut cum, mut total) = weighted_cut(&mass, target_pm, Some(cap));
    if i == busy.len() {
        (i, busy, cum, total) = weighted_cut(&mass, target_pm, None);
    }
    let log_tau = match (i.checked_sub(1).map(|p| busy[p].0), busy.get(i).map(|x| x.0)) {
        (None, _) => f64::NEG_INFINITY,
        (Some(lo), Some(hi)) => 0.5 * (lo + hi),
        (Some(_), None) => f64::INFINITY,
    };
    let pm = cum / total;
    let mut fa = 0.0;
    let mut idle_total = 0.0;
    for (s, &w) in cond.h1.iter().enumerate().filter(|(_, &w)| w > 0.0) {
        let col = column(s);
        let alarms = col.iter().filter(|&&l| l > log_tau).count();
        fa += w * alarms as f64 / col.len() as f64;
        idle_total += w;
    }
    Ok(Calibration { log_tau, pm, pfa: fa / idle_total })
}

/// Sorted busy-side samples up to `cap` (all if `None`) and how far the miss
/// set extends: `(tie-aware cut index, samples, miss weight, total weight)`.
/// A miss is llr ≤ ln τ; the miss set grows by whole tie groups.
fn weighted_cut(mass: &[(&[f64], f64)], target_pm: f64, cap: Option<f64>) -> (usize, Vec<(f64, f64)>, f64, f64) {
    let mut busy: Vec<(f64, f64)> = Vec::new();
    let mut total = 0.0;
    for &(col, w) in mass {
        let weight = w / col.len() as f64;
        total += w;
        match cap {
            Some(c) => busy.extend(col.iter().filter(|&&l| l <= c).map(|&l| (l, weight))),
            None => busy.extend(col.iter().map(|&l| (l, weight))),
        }
    }
    busy.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = 0.0;
    let mut i = 0;
    while i < busy.len() {
        let mut j = i;
        let mut group = 0.0;
        while j < busy.len() && busy[j].0 == busy[i].0 {
            group += busy[j].1;
            j += 1;
        }
        if (cum + group) / total > target_pm {
            break;
        }
        cum += group;
        i = j;
    }
    (i, busy, cum, total)
}

struct LogPrior {
    busy: Vec<(usize, f64)>,
    idle: Vec<(usize, f64)>,
}

impl LogPrior {
    fn new(cond: &ConditionalOccupancy<f64>) -> Self {
        let support = |h: &[f64]| h.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, &p)| (s, p.ln())).collect();
        LogPrior { busy: support(&cond.h0), idle: support(&cond.h1) }
    }
}

/// Picks τ so the composite test's miss probability is `target_pm`, using a
/// stratified common-random-number bank of `trials` samples per occupancy pattern.
pub fn calibrate_composite(
    cond: &ConditionalOccupancy<f64>,
    params: &[GaussianChannelParams<f64>],
    target_pm: f64,
    trials: usize,
    rng: &mut RngStream,
) -> Result<Calibration> {
    if trials < MIN_CALIBRATION_TRIALS {
        return Err(OsaError::Invalid(format!("calibration needs at least {MIN_CALIBRATION_TRIALS} trials")));
    }
    EnergyBank::new(params, trials, rng).calibrate(cond, target_pm)
}

#[derive(Clone, Debug, PartialEq)]
enum ChannelRule {
    /// Plain energy test; exact when the other channels carry no information.
    Energy { eta: f64 },
    Lrt { log_tau: f64, cond: ConditionalOccupancy<f64> },
    /// Occupancy already known: `true` = idle.
    Known(bool),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum RuleKey {
    Energy,
    Known(bool),
    Lrt(Vec<u32>, Vec<u32>),
}

/// Detector for one slot: a rule per sensed channel plus the joint error model it induces.
#[derive(Clone, Debug)]
pub struct SlotDetector {
    pub set: ChannelSet,
    rules: Vec<ChannelRule>,
    params: Vec<GaussianChannelParams<f64>>,
    pub errors: ErrorTable,
    /// Per position: operating point at which each channel's test runs.
    pub points: Vec<OperatingPoint<f64>>,
}

impl SlotDetector {
    /// Sensing outcomes Θ (`true` = idle) for the measured energies of the set.
    pub fn decide(&self, energies: &[f64]) -> Vec<bool> {
        self.rules
            .iter()
            .enumerate()
            .map(|(j, rule)| match rule {
                ChannelRule::Energy { eta } => energies[j] < *eta,
                ChannelRule::Known(idle) => *idle,
                ChannelRule::Lrt { log_tau, cond } => {
                    composite_llr(energies, cond, &self.params).map(|l| l <= *log_tau).unwrap_or(false)
                }
            })
            .collect()
    }

    /// Whether every channel used the plain energy test (or a known state).
    pub fn is_separable(&self) -> bool {
        self.rules.iter().all(|r| !matches!(r, ChannelRule::Lrt { .. }))
    }
}

/// Composite sensing for a slot, with calibration results cached by the
/// (quantized) conditional occupancy of every sensed channel.
pub struct CompositeSensor {
    params: Vec<GaussianChannelParams<f64>>,
    zeta: f64,
    trials: usize,
    seed: u64,
    etas: Vec<Option<(f64, f64)>>,
    banks: HashMap<ChannelSet, Arc<EnergyBank>>,
    cache: HashMap<(ChannelSet, u32, Vec<RuleKey>), Arc<SlotDetector>>,
    hits: u64,
    misses: u64,
}

impl CompositeSensor {
    pub fn new(params: Vec<GaussianChannelParams<f64>>, zeta: f64, trials: usize, seed: u64) -> Result<Self> {
        if trials < MIN_CALIBRATION_TRIALS {
            return Err(OsaError::Invalid(format!("calibration needs at least {MIN_CALIBRATION_TRIALS} trials")));
        }
        if !(zeta > 0.0 && zeta < 1.0) {
            return Err(OsaError::Invalid(format!("collision budget {zeta} outside (0,1)")));
        }
        let n = params.len();
        Ok(CompositeSensor {
            params,
            zeta,
            trials,
            seed,
            etas: vec![None; n],
            banks: HashMap::new(),
            cache: HashMap::new(),
            hits: 0,
            misses: 0,
        })
    }

    /// `(hits, misses)` of the calibration cache.
    pub fn cache_stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }

    /// Energy threshold and false-alarm probability of the plain detector at miss probability ζ.
    pub fn energy_design(&mut self, channel: usize) -> Result<(f64, f64)> {
        if let Some(d) = self.etas[channel] {
            return Ok(d);
        }
        let p = &self.params[channel];
        let eta = threshold_for_pm(p, self.zeta)?;
        let d = (eta, super::energy_roc(p, eta)?.epsilon);
        self.etas[channel] = Some(d);
        Ok(d)
    }

    /// Detector for the set given the predicted pattern PMF `prior` over it.
    pub fn prepare(&mut self, set: &ChannelSet, prior: &[f64]) -> Result<Arc<SlotDetector>> {
        let width = set.len();
        let mut keys = Vec::with_capacity(width);
        for j in 0..width {
            keys.push(match ConditionalOccupancy::from_prior(prior, j) {
                Err(OsaError::ZeroProbabilityCondition(_)) => {
                    RuleKey::Known(prior.iter().enumerate().filter(|(s, _)| s >> j & 1 == 1).map(|x| x.1).sum::<f64>() > 0.5)
                }
                Err(e) => return Err(e),
                Ok(c) if c.shares_marginal(1e-9) => RuleKey::Energy,
                Ok(c) => RuleKey::Lrt(quantize(&c.h0), quantize(&c.h1)),
            });
        }
        let params: Vec<_> = set.channels().iter().map(|&c| self.params[c]).collect();
        let mut rules = Vec::with_capacity(width);
        let mut points = Vec::with_capacity(width);
        if keys.iter().all(|k| !matches!(k, RuleKey::Lrt(..))) {
            for (j, key) in keys.iter().enumerate() {
                let (rule, point) = self.simple_rule(set.channels()[j], key)?;
                rules.push(rule);
                points.push(point);
            }
            return Ok(Arc::new(SlotDetector {
                set: set.clone(),
                rules,
                params,
                errors: SensingErrorModel::independent(&points),
                points,
            }));
        }
        // patterns with zero prior never need error rates; they join the key
        let support = prior.iter().enumerate().fold(0u32, |m, (s, &p)| if p > 0.0 { m | 1 << s } else { m });
        let cache_key = (set.clone(), support, keys);
        if let Some(d) = self.cache.get(&cache_key) {
            self.hits += 1;
            return Ok(d.clone());
        }
        self.misses += 1;
        let bank = self.bank(set, &params);
        let np = set.num_patterns();
        let conds: Vec<Option<ConditionalOccupancy<f64>>> = cache_key
            .2
            .iter()
            .enumerate()
            .map(|(j, key)| match key {
                RuleKey::Lrt(q0, q1) => {
                    Some(ConditionalOccupancy { reference: j, h0: dequantize(q0), h1: dequantize(q1), p_idle: f64::NAN })
                }
                _ => None,
            })
            .collect();
        let lrt: Vec<&ConditionalOccupancy<f64>> = conds.iter().flatten().collect();
        let mut columns: Vec<Vec<Option<Vec<f64>>>> = conds.iter().map(|_| vec![None; np]).collect();
        for s in (0..np).filter(|s| support >> s & 1 == 1) {
            let mut cols = bank.llr_columns(s, &lrt, support).into_iter();
            for (j, c) in conds.iter().enumerate() {
                if c.is_some() {
                    columns[j][s] = cols.next();
                }
            }
        }
        for (j, key) in cache_key.2.iter().enumerate() {
            if let Some(cond) = &conds[j] {
                let cal = calibrate_columns(cond, &columns[j], self.zeta)?;
                rules.push(ChannelRule::Lrt { log_tau: cal.log_tau, cond: cond.clone() });
                points.push(OperatingPoint { epsilon: cal.pfa, delta: cal.pm });
            } else {
                let (rule, point) = self.simple_rule(set.channels()[j], key)?;
                rules.push(rule);
                points.push(point);
            }
        }
        let errors = error_table(&bank, &rules, &columns, support)?;
        let det = Arc::new(SlotDetector { set: set.clone(), rules, params, errors, points });
        self.cache.insert(cache_key, det.clone());
        Ok(det)
    }

    fn simple_rule(&mut self, channel: usize, key: &RuleKey) -> Result<(ChannelRule, OperatingPoint<f64>)> {
        Ok(match key {
            RuleKey::Known(true) => (ChannelRule::Known(true), OperatingPoint { epsilon: 0.0, delta: 1.0 }),
            RuleKey::Known(false) => (ChannelRule::Known(false), OperatingPoint { epsilon: 1.0, delta: 0.0 }),
            _ => {
                let (eta, eps) = self.energy_design(channel)?;
                (ChannelRule::Energy { eta }, OperatingPoint { epsilon: eps, delta: self.zeta })
            }
        })
    }

    fn bank(&mut self, set: &ChannelSet, params: &[GaussianChannelParams<f64>]) -> Arc<EnergyBank> {
        let (seed, trials) = (self.seed, self.trials);
        self.banks
            .entry(set.clone())
            .or_insert_with(|| {
                let tag = set.channels().iter().fold(0u64, |h, &c| mix64(h ^ (c as u64 + 1)));
                let mut rng = RngStream::derive(seed, BANK_NAMESPACE, tag);
                Arc::new(EnergyBank::new(params, trials, &mut rng))
            })
            .clone()
    }
}

fn quantize(h: &[f64]) -> Vec<u32> {
    h.iter().map(|p| (p / KEY_STEP).round() as u32).collect()
}

fn dequantize(q: &[u32]) -> Vec<f64> {
    let total: u32 = q.iter().sum();
    q.iter().map(|&v| v as f64 / total as f64).collect()
}

/// Joint outcome frequencies of all channel rules on the bank, for the
/// patterns in `support`. Rows of other patterns carry no prior mass and are
/// left uniform.
fn error_table(
    bank: &EnergyBank,
    rules: &[ChannelRule],
    columns: &[Vec<Option<Vec<f64>>>],
    support: u32,
) -> Result<ErrorTable> {
    let width = bank.width;
    let np = 1usize << width;
    let mut probs = vec![1.0 / np as f64; np * np];
    let inv = 1.0 / bank.trials as f64;
    for s in (0..np).filter(|s| support >> s & 1 == 1) {
        let row = &mut probs[s * np..(s + 1) * np];
        row.iter_mut().for_each(|p| *p = 0.0);
        for k in 0..bank.trials {
            let mut theta = 0usize;
            for (j, rule) in rules.iter().enumerate() {
                let idle = match rule {
                    ChannelRule::Energy { eta } => bank.energy(k, s, j) < *eta,
                    ChannelRule::Known(b) => *b,
                    ChannelRule::Lrt { log_tau, .. } => {
                        columns[j][s].as_ref().expect("LLR column for a supported pattern")[k] <= *log_tau
                    }
                };
                theta |= (idle as usize) << j;
            }
            row[theta] += inv;
        }
    }
    SensingErrorModel::new(width, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{energy_decision, energy_roc, sample_energy};

    fn params(signal_db: f64, m: u32) -> GaussianChannelParams<f64> {
        GaussianChannelParams::from_db(0.0, signal_db, m).unwrap()
    }

    fn product_prior(idle: &[f64]) -> Vec<f64> {
        (0..1usize << idle.len())
            .map(|s| idle.iter().enumerate().map(|(j, &p)| if s >> j & 1 == 1 { p } else { 1.0 - p }).product())
            .collect()
    }

    #[test]
    fn independent_prior_reduces_to_energy_test() {
        let p = vec![params(5.0, 4); 3];
        let prior = product_prior(&[0.3, 0.6, 0.8]);
        let cond = ConditionalOccupancy::from_prior(&prior, 1).unwrap();
        let eta = threshold_for_pm(&p[1], 0.05).unwrap();
        // matched threshold: llr(E) is monotone in E_1 alone
        let (v0, v1) = (p[1].variance(false), p[1].variance(true));
        let log_tau = -2.0 * (v1 / v0).ln() + eta / 2.0 * (1.0 / v0 - 1.0 / v1);
        let mut rng = RngStream::new(5, 5);
        for _ in 0..100_000 {
            let e: Vec<f64> = (0..3).map(|j| sample_energy(&p[j], rng.bernoulli(0.5), &mut rng)).collect();
            let theta = composite_lrt_energies(&e, &cond, &p, log_tau.exp()).unwrap();
            assert_eq!(theta, energy_decision(e[1], eta));
        }
    }

    #[test]
    fn point_mass_prior_is_a_two_gaussian_test() {
        // h(·|0) = [0 1], h(·|1) = [1 1] on two channels, M = 1
        let p = vec![params(5.0, 1); 2];
        let mut h0 = vec![0.0; 4];
        let mut h1 = vec![0.0; 4];
        h0[0b10] = 1.0;
        h1[0b11] = 1.0;
        let cond = ConditionalOccupancy { reference: 0, h0, h1, p_idle: 0.5 };
        let (v0, v1) = (p[0].variance(false), p[0].variance(true));
        for (y0, y1) in [(0.3, -1.2), (2.5, 0.1), (-0.7, 3.0)] {
            let direct = (-0.5 * v1.ln() - y0 * y0 / (2.0 * v1)) - (-0.5 * v0.ln() - y0 * y0 / (2.0 * v0));
            let llr = composite_llr(&[y0 * y0, y1 * y1], &cond, &p).unwrap();
            assert!((llr - direct).abs() < 1e-12);
            let theta = composite_lrt(&[vec![y0], vec![y1]], &cond, &p, 1.0).unwrap();
            assert_eq!(theta, direct <= 0.0);
        }
    }

    #[test]
    fn zero_threshold_always_declares_busy() {
        let p = vec![params(5.0, 2); 2];
        let cond = ConditionalOccupancy::from_prior(&product_prior(&[0.4, 0.5]), 0).unwrap();
        let mut rng = RngStream::new(1, 2);
        for _ in 0..1000 {
            let e: Vec<f64> = (0..2).map(|j| sample_energy(&p[j], false, &mut rng)).collect();
            assert!(!composite_lrt_energies(&e, &cond, &p, 0.0).unwrap());
        }
    }

    #[test]
    fn rejects_inconsistent_priors() {
        let p = vec![params(5.0, 2); 2];
        let cond = ConditionalOccupancy { reference: 0, h0: vec![0.5, 0.5, 0.0, 0.0], h1: vec![0.0, 0.5, 0.0, 0.5], p_idle: 0.5 };
        assert!(composite_llr(&[1.0, 1.0], &cond, &p).is_err());
        let empty = ConditionalOccupancy { reference: 0, h0: vec![0.0; 4], h1: vec![0.0, 1.0, 0.0, 0.0], p_idle: 0.5 };
        assert!(composite_llr(&[1.0, 1.0], &empty, &p).is_err());
    }

    #[test]
    fn calibration_matches_analytic_point_for_independent_channels() {
        let p = vec![params(5.0, 4); 2];
        let cond = ConditionalOccupancy::from_prior(&product_prior(&[0.3, 0.7]), 0).unwrap();
        let trials = 40_000;
        let cal = calibrate_composite(&cond, &p, 0.05, trials, &mut RngStream::new(11, 0)).unwrap();
        let sd_pm = (0.05f64 * 0.95 / trials as f64).sqrt();
        assert!((cal.pm - 0.05).abs() <= 2.0 * sd_pm + 1.0 / trials as f64);
        // the calibrated τ is an energy threshold here; its analytic point must match the bank estimates
        let (v0, v1) = (p[0].variance(false), p[0].variance(true));
        let eta = (cal.log_tau + 2.0 * (v1 / v0).ln()) * 2.0 / (1.0 / v0 - 1.0 / v1);
        let exact = energy_roc(&p[0], eta).unwrap();
        assert!((cal.pm - exact.delta).abs() <= 3.0 * sd_pm);
        let sd_fa = (exact.epsilon * (1.0 - exact.epsilon) / trials as f64).sqrt();
        assert!((cal.pfa - exact.epsilon).abs() <= 3.0 * sd_fa, "{} vs {}", cal.pfa, exact.epsilon);
        let eps = energy_roc(&p[0], threshold_for_pm(&p[0], 0.05).unwrap()).unwrap().epsilon;
        assert!((cal.pfa - eps).abs() < 0.03);
        let again = calibrate_composite(&cond, &p, 0.05, trials, &mut RngStream::new(11, 0)).unwrap();
        assert_eq!(cal, again);
        assert!(calibrate_composite(&cond, &p, 0.05, 100, &mut RngStream::new(11, 0)).is_err());
    }

    #[test]
    fn separable_signals_have_no_false_alarms() {
        let p = vec![GaussianChannelParams::new(1.0, 1e6, 1).unwrap(); 2];
        let mut prior = vec![0.0; 4];
        prior[0b01] = 0.5;
        prior[0b10] = 0.3;
        prior[0b11] = 0.2;
        let cond = ConditionalOccupancy::from_prior(&prior, 0).unwrap();
        let cal = calibrate_composite(&cond, &p, 0.05, 10_000, &mut RngStream::new(2, 0)).unwrap();
        assert!(cal.pfa < 1e-3);
    }

    #[test]
    fn correlation_lowers_false_alarms() {
        // channels are either (busy, idle) or (idle, busy): the other channel is informative
        let p = vec![params(10.0, 1); 2];
        let mut prior = vec![0.0; 4];
        prior[0b01] = 0.5;
        prior[0b10] = 0.5;
        let cond = ConditionalOccupancy::from_prior(&prior, 0).unwrap();
        let cal = calibrate_composite(&cond, &p, 0.05, 20_000, &mut RngStream::new(4, 0)).unwrap();
        let eps = energy_roc(&p[0], threshold_for_pm(&p[0], 0.05).unwrap()).unwrap().epsilon;
        assert!(cal.pfa < eps - 0.1, "{} vs {eps}", cal.pfa);
    }

    #[test]
    fn sensor_cache_and_fast_paths() {
        let p = vec![params(10.0, 1); 3];
        let mut sensor = CompositeSensor::new(p.clone(), 0.05, 10_000, 7).unwrap();
        let set = ChannelSet::new(vec![0, 1, 2], 3).unwrap();

        let indep = product_prior(&[0.3, 0.6, 0.8]);
        let d = sensor.prepare(&set, &indep).unwrap();
        assert!(d.is_separable());
        let (eta, eps) = sensor.energy_design(0).unwrap();
        assert_eq!(d.decide(&[eta * 0.99, eta * 1.01, 0.0]), vec![true, false, true]);
        assert!((d.points[0].epsilon - eps).abs() < 1e-15);

        let mut corr = vec![0.0; 8];
        corr[0b110] = 0.4;
        corr[0b101] = 0.35;
        corr[0b000] = 0.25;
        let d1 = sensor.prepare(&set, &corr).unwrap();
        assert!(!d1.is_separable());
        let mut nudged = corr.clone();
        nudged[0b110] += 1e-6;
        nudged[0b101] -= 1e-6;
        let d2 = sensor.prepare(&set, &nudged).unwrap();
        assert!(Arc::ptr_eq(&d1, &d2));
        assert_eq!(sensor.cache_stats(), (1, 1));
        for s in 0..8 {
            let row: f64 = d1.errors.row(s).iter().sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
        for (j, pt) in d1.points.iter().enumerate() {
            assert!(pt.delta <= 0.05 + 1e-12, "channel {j}: {pt:?}");
        }

        let mut known = vec![0.0; 8];
        known[0b011] = 1.0;
        let d3 = sensor.prepare(&set, &known).unwrap();
        assert_eq!(d3.decide(&[100.0, 100.0, 0.0]), vec![true, true, false]);
    }
}
