//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [model]                      # per-channel chain ...
//! alpha = [0.2, 0.4, 0.6]      # P(busy -> idle)
//! beta = [0.8, 0.6, 0.4]       # P(idle -> idle)
//! bandwidths = [1.0, 1.0, 1.0] # optional, default 1
//! # ... or a joint chain over bit-string states ("[0111]": channel 1 busy)
//! # channels = 4
//! # transitions = [{ from = "[0000]", to = "[0111]", p = 0.6 }, ...]
//! # unlisted = "[0000]"        # successor of states with no listed row
//! # initial = [...]            # optional initial belief, default stationary
//! # file = "model.toml"        # or read the whole block from another file
//!
//! [detector]
//! noise_db = 0.0
//! signal_db = 5.0
//! samples = 10
//!
//! [strategy]
//! kind = "separation-exact"    # separation-myopic | sp | phy | mac
//! set_size = 1
//! zeta = 0.05
//! delta = 0.05                 # separation strategies only, default zeta
//! measurement_cost = 0.0       # slot fraction per measurement
//! calibration_trials = 20000   # phy: bank draws per occupancy pattern
//! prune_tolerance = 1e-9
//!
//! [run]
//! horizon = 10
//! trials = 20000
//! seed = 1
//! mismatch = 0.0               # relative α/β error of the assumed model
//!
//! [sweep]                      # optional; the cartesian product is run
//! delta = [0.01, 0.02]
//! samples = [1, 2, 3]
//! zeta = [0.01, 0.05]
//! mismatch = [0.0, 0.1]
//! strategies = ["sp", "phy"]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{OsaError, Result};
use crate::markov::{Belief, Sos, TransitionModel};
use crate::pomdp::DEFAULT_PRUNE_TOLERANCE;
use crate::sensor::GaussianChannelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    SeparationExact,
    SeparationMyopic,
    Sp,
    Phy,
    Mac,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SeparationExact => "separation-exact",
            StrategyKind::SeparationMyopic => "separation-myopic",
            StrategyKind::Sp => "sp",
            StrategyKind::Phy => "phy",
            StrategyKind::Mac => "mac",
        }
    }

    /// Whether the strategy runs the single-channel separation design at a chosen PM.
    pub fn is_separation(self) -> bool {
        matches!(self, StrategyKind::SeparationExact | StrategyKind::SeparationMyopic)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub from: String,
    pub to: String,
    pub p: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub file: Option<PathBuf>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub channels: Option<usize>,
    #[serde(default)]
    pub transitions: Vec<TransitionEntry>,
    pub unlisted: Option<String>,
    pub bandwidths: Option<Vec<f64>>,
    pub initial: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default)]
    pub noise_db: f64,
    pub signal_db: f64,
    pub samples: u32,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    #[serde(default = "one")]
    pub set_size: usize,
    pub zeta: f64,
    pub delta: Option<f64>,
    #[serde(default)]
    pub measurement_cost: f64,
    #[serde(default = "default_calibration_trials")]
    pub calibration_trials: usize,
    #[serde(default = "default_prune_tolerance")]
    pub prune_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: usize,
    pub trials: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default)]
    pub mismatch: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub delta: Option<Vec<f64>>,
    pub samples: Option<Vec<u32>>,
    pub zeta: Option<Vec<f64>>,
    pub mismatch: Option<Vec<f64>>,
    pub strategies: Option<Vec<StrategyKind>>,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

fn default_calibration_trials() -> usize {
    20_000
}

fn default_prune_tolerance() -> f64 {
    DEFAULT_PRUNE_TOLERANCE
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub detector: DetectorSpec,
    pub strategy: StrategySpec,
    pub run: RunSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

/// One combination of swept values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub strategy: StrategyKind,
    pub zeta: f64,
    /// Operating PM of the separation design; `zeta` for the other strategies.
    pub delta: f64,
    pub samples: u32,
    pub mismatch: f64,
}

/// Configurations shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 7] = [
    ("independent", include_str!("../../configs/independent.toml")),
    ("correlated", include_str!("../../configs/correlated.toml")),
    ("fig5", include_str!("../../configs/fig5.toml")),
    ("fig6", include_str!("../../configs/fig6.toml")),
    ("fig7", include_str!("../../configs/fig7.toml")),
    ("fig8", include_str!("../../configs/fig8.toml")),
    ("fig9", include_str!("../../configs/fig9.toml")),
];

/// Lower/upper clip applied to perturbed transition probabilities.
pub const MISMATCH_CLIP: (f64, f64) = (0.001, 0.999);

impl ExperimentConfig {
    /// Parses and validates; `base` resolves a relative `model.file`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| OsaError::Config(e.to_string()))?;
        if let Some(file) = cfg.model.file.take() {
            let path = match base {
                Some(dir) if file.is_relative() => dir.join(&file),
                _ => file,
            };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| OsaError::Config(format!("model file {}: {e}", path.display())))?;
            let inner: ModelSpec = toml::from_str(&text).map_err(|e| OsaError::Config(e.to_string()))?;
            if inner.file.is_some() {
                return Err(OsaError::Config("model files cannot reference further files".into()));
            }
            cfg.model = inner;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// One of the [`BUNDLED`] configurations.
    pub fn bundled(name: &str) -> Result<Self> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| OsaError::Config(format!("no bundled configuration named {name}")))?;
        Self::from_toml(text, None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OsaError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.true_model()?;
        let n = model.channels();
        if let Some(init) = &self.model.initial {
            Belief::new(init.clone())?;
        }
        let s = &self.strategy;
        if s.set_size == 0 || s.set_size > n {
            return Err(OsaError::Config(format!("set_size {} outside 1..={n}", s.set_size)));
        }
        if !(s.measurement_cost >= 0.0 && s.measurement_cost < 1.0) {
            return Err(OsaError::Config("measurement_cost must lie in [0,1)".into()));
        }
        if !(s.prune_tolerance > 0.0 && s.prune_tolerance < 1e-2) {
            return Err(OsaError::Config("prune_tolerance must lie in (0, 0.01)".into()));
        }
        if self.run.horizon == 0 {
            return Err(OsaError::Config("horizon must be at least 1".into()));
        }
        if self.run.trials == 0 {
            return Err(OsaError::Config("trials must be at least 1".into()));
        }
        for p in self.points() {
            check_open_unit("zeta", p.zeta)?;
            check_open_unit("delta", p.delta)?;
            if p.samples == 0 {
                return Err(OsaError::Config("samples must be at least 1".into()));
            }
            if s.measurement_cost * p.samples as f64 >= 1.0 {
                return Err(OsaError::Config(format!("{} measurements fill the whole slot", p.samples)));
            }
            if !(p.mismatch > -1.0 && p.mismatch.is_finite()) {
                return Err(OsaError::Config(format!("mismatch {} must exceed -1", p.mismatch)));
            }
            if p.mismatch != 0.0 && self.model.alpha.is_none() {
                return Err(OsaError::Config("mismatch needs a per-channel (alpha/beta) model".into()));
            }
            if p.strategy.is_separation() && s.set_size != 1 {
                return Err(OsaError::Config(format!("{} senses one channel per slot", p.strategy)));
            }
            if p.strategy == StrategyKind::Phy && s.calibration_trials < 10_000 {
                return Err(OsaError::Config("calibration_trials must be at least 10000".into()));
            }
        }
        Ok(())
    }

    /// The model that drives the primary network.
    pub fn true_model(&self) -> Result<TransitionModel<f64>> {
        build_model(&self.model)
    }

    /// The model the secondary user believes in at relative error `mismatch`.
    pub fn assumed_model(&self, mismatch: f64) -> Result<TransitionModel<f64>> {
        let m = self.true_model()?;
        if mismatch == 0.0 {
            return Ok(m);
        }
        m.perturbed(mismatch, MISMATCH_CLIP.0, MISMATCH_CLIP.1)
    }

    /// Gaussian parameters for every channel at `samples` measurements.
    pub fn channel_params(&self, samples: u32) -> Result<Vec<GaussianChannelParams<f64>>> {
        let p = GaussianChannelParams::from_db(self.detector.noise_db, self.detector.signal_db, samples)?;
        Ok(vec![p; self.true_model()?.channels()])
    }

    /// Sweep points in a fixed order: strategy, zeta, samples, delta, mismatch.
    pub fn points(&self) -> Vec<SweepPoint> {
        let sw = &self.sweep;
        let strategies = sw.strategies.clone().unwrap_or_else(|| vec![self.strategy.kind]);
        let zetas = sw.zeta.clone().unwrap_or_else(|| vec![self.strategy.zeta]);
        let samples = sw.samples.clone().unwrap_or_else(|| vec![self.detector.samples]);
        let mismatches = sw.mismatch.clone().unwrap_or_else(|| vec![self.run.mismatch]);
        let mut out = Vec::new();
        for &strategy in &strategies {
            for &zeta in &zetas {
                for &m in &samples {
                    let deltas: Vec<f64> = if strategy.is_separation() {
                        sw.delta.clone().unwrap_or_else(|| vec![self.strategy.delta.unwrap_or(zeta)])
                    } else {
                        vec![zeta]
                    };
                    for &delta in &deltas {
                        for &mismatch in &mismatches {
                            out.push(SweepPoint { strategy, zeta, delta, samples: m, mismatch });
                        }
                    }
                }
            }
        }
        out
    }
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(OsaError::Config(format!("{name} = {v} outside (0,1)")))
    }
}

fn build_model(spec: &ModelSpec) -> Result<TransitionModel<f64>> {
    match (&spec.alpha, &spec.beta, spec.channels) {
        (Some(alpha), Some(beta), None) => {
            if !spec.transitions.is_empty() || spec.unlisted.is_some() {
                return Err(OsaError::Config("alpha/beta and transitions are exclusive".into()));
            }
            let n = alpha.len();
            let bw = spec.bandwidths.clone().unwrap_or_else(|| vec![1.0; n]);
            TransitionModel::factored(alpha.clone(), beta.clone(), bw)
        }
        (None, None, Some(n)) => {
            let ns = 1usize << n;
            let mut matrix = vec![0.0; ns * ns];
            let mut listed = vec![false; ns];
            for e in &spec.transitions {
                let from = parse_state(&e.from, n)?;
                let to = parse_state(&e.to, n)?;
                if !(0.0..=1.0).contains(&e.p) {
                    return Err(OsaError::Config(format!("transition {} -> {} has p = {}", e.from, e.to, e.p)));
                }
                matrix[from * ns + to] += e.p;
                listed[from] = true;
            }
            let fallback = spec.unlisted.as_deref().map(|s| parse_state(s, n)).transpose()?;
            for (s, _) in listed.iter().enumerate().filter(|(_, l)| !**l) {
                match fallback {
                    Some(t) => matrix[s * ns + t] = 1.0,
                    None => {
                        return Err(OsaError::Config(format!(
                            "state {} has no transitions and no `unlisted` successor",
                            Sos::from_index(s, n)
                        )))
                    }
                }
            }
            let bw = spec.bandwidths.clone().unwrap_or_else(|| vec![1.0; n]);
            TransitionModel::full(n, matrix, bw)
        }
        _ => Err(OsaError::Config("model needs either alpha and beta, or channels and transitions".into())),
    }
}

fn parse_state(text: &str, n: usize) -> Result<usize> {
    let s = Sos::parse(text)?;
    if s.channels() != n {
        return Err(OsaError::Config(format!("state {text} does not have {n} channels")));
    }
    Ok(s.index())
}
