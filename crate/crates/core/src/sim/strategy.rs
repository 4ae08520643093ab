//! Per-slot decisions of the secondary user: which channels to sense, how to
//! turn measurements into sensing outcomes, and how outcomes map to access.

use std::sync::{Arc, Mutex};

use super::config::StrategyKind;
use crate::error::{OsaError, Result};
use crate::markov::{Belief, TransitionModel};
use crate::multichannel::{
    mac_lp_from_prior, marginalize, myopic_from_predicted, ChannelSet, JointAccessRule, MultiChannelAction,
    SensingErrorModel,
};
use crate::pomdp::{ExactPolicy, RewardSpec, SensingPomdp, SolveOptions};
use crate::sensor::{energy_roc, threshold_for_pm, CompositeSensor, GaussianChannelParams, OperatingPoint, SlotDetector};
use crate::separation::{optimal_access_given_delta, AccessRule};

/// Everything a strategy needs to know about its setting.
#[derive(Clone, Debug)]
pub struct StrategySetup {
    pub kind: StrategyKind,
    pub set_size: usize,
    /// Model used for prediction, belief updates and planning.
    pub assumed: TransitionModel<f64>,
    pub params: Vec<GaussianChannelParams<f64>>,
    pub zeta: f64,
    /// Operating PM of the separation design.
    pub delta: f64,
    pub horizon: usize,
    /// Fraction of the slot left for data.
    pub time_factor: f64,
    pub calibration_trials: usize,
    pub prune_tolerance: f64,
    pub seed: u64,
}

/// Maps the sensed channels' energies to sensing outcomes (`true` = idle).
#[derive(Clone, Debug)]
pub enum SlotSensor {
    /// Per-position energy thresholds.
    Threshold(Vec<f64>),
    Composite(Arc<SlotDetector>),
}

impl SlotSensor {
    pub fn decide(&self, energies: &[f64]) -> Vec<bool> {
        match self {
            SlotSensor::Threshold(etas) => energies.iter().zip(etas).map(|(&e, &eta)| e < eta).collect(),
            SlotSensor::Composite(d) => d.decide(energies),
        }
    }
}

/// Decisions for one slot.
#[derive(Clone, Debug)]
pub struct SlotPlan {
    pub set: ChannelSet,
    pub sensor: SlotSensor,
    pub errors: SensingErrorModel<f64>,
    pub rule: JointAccessRule<f64>,
    /// Ack-pattern likelihoods used for the belief update.
    pub kernel: MultiChannelAction<f64>,
}

/// A constructed strategy. Cloning is cheap and clones share the solved policy
/// and the composite calibration cache.
#[derive(Clone)]
pub struct Strategy {
    setup: StrategySetup,
    thresholds: Vec<f64>,
    designs: Vec<(OperatingPoint<f64>, AccessRule<f64>)>,
    policy: Option<Arc<ExactPolicy<f64>>>,
    composite: Option<Arc<Mutex<CompositeSensor>>>,
}

impl Strategy {
    pub fn new(setup: StrategySetup) -> Result<Self> {
        let n = setup.assumed.channels();
        if setup.params.len() != n {
            return Err(OsaError::Dimension { expected: n, got: setup.params.len() });
        }
        if setup.set_size == 0 || setup.set_size > n {
            return Err(OsaError::Invalid(format!("set size {} outside 1..={n}", setup.set_size)));
        }
        if setup.kind.is_separation() && setup.set_size != 1 {
            return Err(OsaError::Invalid(format!("{} senses one channel per slot", setup.kind)));
        }
        let pm = if setup.kind.is_separation() { setup.delta } else { setup.zeta };
        let mut thresholds = Vec::with_capacity(n);
        let mut designs = Vec::with_capacity(n);
        for p in &setup.params {
            let eta = threshold_for_pm(p, pm)?;
            let point = energy_roc(p, eta)?;
            // the access rule is chosen for the nominal PM, not the root-finder's residual
            let point = OperatingPoint::new(point.epsilon, pm)?;
            thresholds.push(eta);
            designs.push((point, optimal_access_given_delta(pm, setup.zeta)));
        }
        let policy = if setup.kind == StrategyKind::SeparationExact {
            let reward = RewardSpec { time_factor: setup.time_factor };
            let pomdp = SensingPomdp::single_channel(setup.assumed.clone(), &designs, reward)?;
            let options = SolveOptions::default().with_tolerance(setup.prune_tolerance);
            Some(Arc::new(pomdp.solve(setup.horizon, &options)?))
        } else {
            None
        };
        let composite = if setup.kind == StrategyKind::Phy {
            let sensor = CompositeSensor::new(setup.params.clone(), setup.zeta, setup.calibration_trials, setup.seed)?;
            Some(Arc::new(Mutex::new(sensor)))
        } else {
            None
        };
        Ok(Strategy { setup, thresholds, designs, policy, composite })
    }

    pub fn setup(&self) -> &StrategySetup {
        &self.setup
    }

    pub fn policy(&self) -> Option<&ExactPolicy<f64>> {
        self.policy.as_deref()
    }

    /// Operating point and access rule used on `channel` by the separable strategies.
    pub fn design(&self, channel: usize) -> (OperatingPoint<f64>, AccessRule<f64>) {
        self.designs[channel]
    }

    /// `(hits, misses)` of the composite calibration cache, if any.
    pub fn cache_stats(&self) -> Option<(u64, u64)> {
        self.composite.as_ref().map(|c| c.lock().expect("calibration cache poisoned").cache_stats())
    }

    /// Decisions for slot `t` (1-based) given the belief carried into it.
    pub fn plan(&self, belief: &Belief<f64>, t: usize) -> Result<SlotPlan> {
        let model = &self.setup.assumed;
        let predicted = model.predict_mass(belief.mass());
        let set = match &self.policy {
            Some(p) => p.evaluate(belief, t)?.1,
            None => myopic_from_predicted(&predicted, model.bandwidths(), self.setup.set_size)?,
        };
        let width = set.len();
        let (sensor, errors, rule) = match self.setup.kind {
            StrategyKind::Phy => {
                let prior = marginalize(&predicted, &set);
                let det = self
                    .composite
                    .as_ref()
                    .expect("phy strategy owns a composite sensor")
                    .lock()
                    .expect("calibration cache poisoned")
                    .prepare(&set, &prior)?;
                let errors = det.errors.clone();
                (SlotSensor::Composite(det), errors, JointAccessRule::follow_sensing(width))
            }
            kind => {
                let etas = set.channels().iter().map(|&c| self.thresholds[c]).collect();
                let points: Vec<_> = set.channels().iter().map(|&c| self.designs[c].0).collect();
                let errors = SensingErrorModel::independent(&points);
                let rule = if kind == StrategyKind::Mac {
                    let prior = marginalize(&predicted, &set);
                    mac_lp_from_prior(&prior, &set, model.bandwidths(), &errors, self.setup.zeta)?.rule
                } else {
                    let rules: Vec<_> = set.channels().iter().map(|&c| self.designs[c].1).collect();
                    JointAccessRule::independent(&rules)
                };
                (SlotSensor::Threshold(etas), errors, pin_known(rule, &predicted, &set)?)
            }
        };
        let kernel = MultiChannelAction::new(set.clone(), &errors, &rule)?;
        Ok(SlotPlan { set, sensor, errors, rule, kernel })
    }
}

/// Channels whose predicted state is certain skip the detector: access is
/// always on a sure-idle channel and never on a sure-busy one.
fn pin_known(rule: JointAccessRule<f64>, predicted: &[f64], set: &ChannelSet) -> Result<JointAccessRule<f64>> {
    let width = set.len();
    let np = set.num_patterns();
    let mut table: Option<Vec<f64>> = None;
    for (j, &c) in set.channels().iter().enumerate() {
        let idle = crate::markov::idle_marginal(predicted, c);
        let fixed = if idle <= KNOWN_STATE_TOL {
            0.0
        } else if 1.0 - idle <= KNOWN_STATE_TOL {
            1.0
        } else {
            continue;
        };
        let t = table.get_or_insert_with(|| rule.table().to_vec());
        t[j * np..(j + 1) * np].iter_mut().for_each(|f| *f = fixed);
    }
    match table {
        Some(t) => JointAccessRule::new(width, t),
        None => Ok(rule),
    }
}

const KNOWN_STATE_TOL: f64 = 1e-12;
