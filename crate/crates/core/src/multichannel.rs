//! Sensing several channels per slot: channel sets, joint error and access
//! models, the LP access rule and the joint acknowledgement kernel.
//!
//! Within a channel set of size `L`, a pattern is an `L`-bit integer whose
//! bit `j` refers to the `j`-th channel of the (sorted) set; 1 means idle
//! for occupancy patterns and "declared idle" for sensing outcomes.

use crate::error::{OsaError, Result};
use crate::markov::{Belief, ObservationKernel, TransitionModel};
use crate::numerics::{lp_solve, LpProblem, LpStatus, Relation, Scalar};
use crate::sensor::{OperatingPoint, RocCurve};
use crate::separation::{optimal_design, AccessRule};

pub const MAX_SET_SIZE: usize = 6;

/// Sorted, duplicate-free set of 0-based channel indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelSet {
    channels: Vec<usize>,
}

impl ChannelSet {
    pub fn new(mut channels: Vec<usize>, num_channels: usize) -> Result<Self> {
        channels.sort_unstable();
        if channels.is_empty() || channels.len() > num_channels.min(MAX_SET_SIZE) {
            return Err(OsaError::Invalid(format!(
                "channel set size {} outside 1..={}",
                channels.len(),
                num_channels.min(MAX_SET_SIZE)
            )));
        }
        if channels.windows(2).any(|w| w[0] == w[1]) {
            return Err(OsaError::Invalid("duplicate channel in set".into()));
        }
        if channels[channels.len() - 1] >= num_channels {
            return Err(OsaError::Invalid(format!("channel {} out of range", channels[channels.len() - 1] + 1)));
        }
        Ok(ChannelSet { channels })
    }

    pub fn single(channel: usize) -> Self {
        ChannelSet { channels: vec![channel] }
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn num_patterns(&self) -> usize {
        1 << self.channels.len()
    }

    pub fn position(&self, channel: usize) -> Option<usize> {
        self.channels.iter().position(|&c| c == channel)
    }

    /// Occupancy pattern of the set within a joint state.
    pub fn pattern(&self, state: usize) -> usize {
        self.channels.iter().enumerate().fold(0, |acc, (j, &c)| acc | ((state >> c & 1) << j))
    }
}

/// Predicted PMF of the set's occupancy pattern, `Pr{S_𝒜 = s}`.
pub fn hypothesis_priors<S: Scalar>(
    belief: &Belief<S>,
    model: &TransitionModel<S>,
    set: &ChannelSet,
) -> Result<Vec<S>> {
    if belief.num_states() != model.num_states() {
        return Err(OsaError::Dimension { expected: model.num_states(), got: belief.num_states() });
    }
    check_set(set, model.channels())?;
    Ok(marginalize(&model.predict_mass(belief.mass()), set))
}

pub(crate) fn marginalize<S: Scalar>(mass: &[S], set: &ChannelSet) -> Vec<S> {
    let mut out = vec![S::zero(); set.num_patterns()];
    for (s, &p) in mass.iter().enumerate() {
        let q = set.pattern(s);
        out[q] = out[q] + p;
    }
    out
}

fn check_set(set: &ChannelSet, n: usize) -> Result<()> {
    match set.channels.last() {
        Some(&c) if c < n => Ok(()),
        _ => Err(OsaError::Invalid("channel set does not fit the model".into())),
    }
}

/// Occupancy of the set conditioned on the reference channel being busy (`h0`) or idle (`h1`).
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalOccupancy<S> {
    /// Position of the reference channel inside the set.
    pub reference: usize,
    pub h0: Vec<S>,
    pub h1: Vec<S>,
    /// `Pr{S_n = 1}`.
    pub p_idle: S,
}

impl<S: Scalar> ConditionalOccupancy<S> {
    /// Builds both conditionals from the pattern PMF; fails if either branch has probability below 1e-12.
    pub fn from_prior(prior: &[S], reference: usize) -> Result<Self> {
        let bit = 1usize << reference;
        if !prior.len().is_power_of_two() || bit >= prior.len() {
            return Err(OsaError::Invalid(format!("reference position {reference} out of range")));
        }
        let p_idle: S = prior.iter().enumerate().filter(|(s, _)| s & bit != 0).map(|(_, &p)| p).sum();
        let p_busy: S = prior.iter().enumerate().filter(|(s, _)| s & bit == 0).map(|(_, &p)| p).sum();
        let floor = S::lit(1e-12);
        if p_idle < floor || p_busy < floor {
            return Err(OsaError::ZeroProbabilityCondition(format!(
                "reference channel has Pr{{idle}} = {}",
                p_idle / (p_idle + p_busy)
            )));
        }
        let cond = |want: usize, norm: S| -> Vec<S> {
            prior.iter().enumerate().map(|(s, &p)| if s & bit == want { p / norm } else { S::zero() }).collect()
        };
        Ok(ConditionalOccupancy {
            reference,
            h0: cond(0, p_busy),
            h1: cond(bit, p_idle),
            p_idle: p_idle / (p_idle + p_busy),
        })
    }

    /// True when the other channels have the same distribution under both hypotheses.
    pub fn shares_marginal(&self, tol: S) -> bool {
        let bit = 1usize << self.reference;
        (0..self.h0.len()).filter(|s| s & bit == 0).all(|s| (self.h0[s] - self.h1[s | bit]).abs() <= tol)
    }
}

pub fn conditional_occupancy<S: Scalar>(
    belief: &Belief<S>,
    model: &TransitionModel<S>,
    set: &ChannelSet,
    channel: usize,
) -> Result<ConditionalOccupancy<S>> {
    let pos = set
        .position(channel)
        .ok_or_else(|| OsaError::Invalid(format!("channel {} is not in the set", channel + 1)))?;
    ConditionalOccupancy::from_prior(&hypothesis_priors(belief, model, set)?, pos)
}

/// Joint sensing-outcome distribution `l(θ | s)` over a channel set.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingErrorModel<S> {
    width: usize,
    /// Row-major: `probs[s * 2^L + θ]`.
    probs: Vec<S>,
}

impl<S: Scalar> SensingErrorModel<S> {
    pub fn new(width: usize, probs: Vec<S>) -> Result<Self> {
        let np = 1usize << width;
        if probs.len() != np * np {
            return Err(OsaError::Dimension { expected: np * np, got: probs.len() });
        }
        for row in probs.chunks(np) {
            let sum: S = row.iter().copied().sum();
            if row.iter().any(|&p| p < S::zero()) || (sum - S::one()).abs() > S::tol() {
                return Err(OsaError::Invalid("sensing error rows must be distributions".into()));
            }
        }
        Ok(SensingErrorModel { width, probs })
    }

    /// Channels sensed independently with the given operating points.
    pub fn independent(points: &[OperatingPoint<S>]) -> Self {
        let width = points.len();
        let np = 1usize << width;
        let mut probs = Vec::with_capacity(np * np);
        for s in 0..np {
            for theta in 0..np {
                probs.push(points.iter().enumerate().fold(S::one(), |acc, (j, pt)| {
                    let idle = s >> j & 1 == 1;
                    let says_idle = theta >> j & 1 == 1;
                    acc * match (idle, says_idle) {
                        (true, true) => S::one() - pt.epsilon,
                        (true, false) => pt.epsilon,
                        (false, true) => pt.delta,
                        (false, false) => S::one() - pt.delta,
                    }
                }));
            }
        }
        SensingErrorModel { width, probs }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn prob(&self, state_pattern: usize, theta: usize) -> S {
        self.probs[state_pattern * (1 << self.width) + theta]
    }

    pub fn row(&self, state_pattern: usize) -> &[S] {
        let np = 1 << self.width;
        &self.probs[state_pattern * np..(state_pattern + 1) * np]
    }
}

/// Transmission probability `f_j(θ)` for each set position `j` and outcome pattern θ.
#[derive(Clone, Debug, PartialEq)]
pub struct JointAccessRule<S> {
    width: usize,
    /// `table[j * 2^L + θ]`.
    table: Vec<S>,
}

impl<S: Scalar> JointAccessRule<S> {
    pub fn new(width: usize, table: Vec<S>) -> Result<Self> {
        if table.len() != width << width {
            return Err(OsaError::Dimension { expected: width << width, got: table.len() });
        }
        if table.iter().any(|&f| !(f >= S::zero() && f <= S::one())) {
            return Err(OsaError::Invalid("transmission probabilities must lie in [0,1]".into()));
        }
        Ok(JointAccessRule { width, table })
    }

    /// Each channel uses its own single-channel rule.
    pub fn independent(rules: &[AccessRule<S>]) -> Self {
        let width = rules.len();
        let table = (0..width)
            .flat_map(|j| (0..1usize << width).map(move |theta| rules[j].given(theta >> j & 1 == 1)))
            .collect();
        JointAccessRule { width, table }
    }

    /// `f_j(θ) = θ_j`.
    pub fn follow_sensing(width: usize) -> Self {
        Self::independent(&vec![AccessRule::follow_sensing(); width])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn prob(&self, position: usize, theta: usize) -> S {
        self.table[(position << self.width) + theta]
    }

    pub fn table(&self) -> &[S] {
        &self.table
    }
}

/// `Pr{K_𝒜 = k | S_𝒜 = s}` for sensing errors `errors` and access rule `rule`.
pub fn joint_observation_kernel<S: Scalar>(
    state_pattern: usize,
    errors: &SensingErrorModel<S>,
    rule: &JointAccessRule<S>,
    ack: usize,
) -> S {
    let width = errors.width();
    let mut total = S::zero();
    for (theta, &l) in errors.row(state_pattern).iter().enumerate() {
        if l == S::zero() {
            continue;
        }
        let mut prod = l;
        for j in 0..width {
            let sf = if state_pattern >> j & 1 == 1 { rule.prob(j, theta) } else { S::zero() };
            prod = prod * if ack >> j & 1 == 1 { sf } else { S::one() - sf };
        }
        total = total + prod;
    }
    total
}

/// Sensing several channels with a joint error model and access rule; outcomes are ack patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelAction<S> {
    pub set: ChannelSet,
    kernel: Vec<S>,
}

impl<S: Scalar> MultiChannelAction<S> {
    pub fn new(set: ChannelSet, errors: &SensingErrorModel<S>, rule: &JointAccessRule<S>) -> Result<Self> {
        if errors.width() != set.len() || rule.width() != set.len() {
            return Err(OsaError::Dimension { expected: set.len(), got: errors.width().min(rule.width()) });
        }
        let np = set.num_patterns();
        let mut kernel = Vec::with_capacity(np * np);
        for s in 0..np {
            for k in 0..np {
                kernel.push(joint_observation_kernel(s, errors, rule, k));
            }
        }
        Ok(MultiChannelAction { set, kernel })
    }
}

impl<S: Scalar> ObservationKernel<S> for MultiChannelAction<S> {
    fn num_outcomes(&self) -> usize {
        self.set.num_patterns()
    }

    fn likelihood(&self, state: usize, outcome: usize) -> S {
        self.kernel[self.set.pattern(state) * self.set.num_patterns() + outcome]
    }
}

/// Per-channel optimal designs for the set; `curves` is indexed by global channel.
pub fn sp_strategy<S: Scalar>(
    set: &ChannelSet,
    zeta: S,
    curves: &[RocCurve<S>],
) -> Result<Vec<(OperatingPoint<S>, AccessRule<S>)>> {
    check_set(set, curves.len())?;
    set.channels().iter().map(|&c| optimal_design(&curves[c], zeta)).collect()
}

/// Expected reward of independent per-channel access with the given sensing errors.
pub fn independent_objective<S: Scalar>(
    prior: &[S],
    set: &ChannelSet,
    bandwidths: &[S],
    points: &[OperatingPoint<S>],
    rules: &[AccessRule<S>],
) -> S {
    (0..set.len())
        .map(|j| {
            let p_idle: S = prior.iter().enumerate().filter(|(s, _)| s >> j & 1 == 1).map(|(_, &p)| p).sum();
            let factor = points[j].epsilon * rules[j].f0 + (S::one() - points[j].epsilon) * rules[j].f1;
            bandwidths[set.channels()[j]] * p_idle * factor
        })
        .sum()
}

/// Result of the joint access program.
#[derive(Clone, Debug, PartialEq)]
pub struct MacAccess<S> {
    pub rule: JointAccessRule<S>,
    pub objective: S,
}

/// Access rule maximizing expected reward subject to every channel's collision cap.
pub fn mac_lp_access<S: Scalar>(
    belief: &Belief<S>,
    model: &TransitionModel<S>,
    set: &ChannelSet,
    points: &[OperatingPoint<S>],
    zeta: S,
) -> Result<MacAccess<S>> {
    if points.len() != set.len() {
        return Err(OsaError::Dimension { expected: set.len(), got: points.len() });
    }
    let prior = hypothesis_priors(belief, model, set)?;
    mac_lp_from_prior(&prior, set, model.bandwidths(), &SensingErrorModel::independent(points), zeta)
}

/// [`mac_lp_access`] from an already marginalized pattern PMF and any joint error model.
pub fn mac_lp_from_prior<S: Scalar>(
    prior: &[S],
    set: &ChannelSet,
    bandwidths: &[S],
    errors: &SensingErrorModel<S>,
    zeta: S,
) -> Result<MacAccess<S>> {
    let width = set.len();
    let np = set.num_patterns();
    if prior.len() != np || errors.width() != width {
        return Err(OsaError::Dimension { expected: np, got: prior.len() });
    }
    let nv = width * np;
    let mut objective = vec![S::zero(); nv];
    let mut problem_rows = Vec::new();
    for j in 0..width {
        let bit = 1usize << j;
        let b = bandwidths[set.channels()[j]];
        let p_busy: S = (0..np).filter(|s| s & bit == 0).map(|s| prior[s]).sum();
        let mut row = vec![S::zero(); nv];
        for theta in 0..np {
            let mut gain = S::zero();
            let mut risk = S::zero();
            for (s, &ps) in prior.iter().enumerate() {
                let w = ps * errors.prob(s, theta);
                if s & bit != 0 {
                    gain = gain + w;
                } else {
                    risk = risk + w;
                }
            }
            objective[j * np + theta] = b * gain;
            if p_busy >= S::lit(1e-12) {
                row[j * np + theta] = risk / p_busy;
            }
        }
        if p_busy >= S::lit(1e-12) {
            problem_rows.push(row);
        }
    }
    let mut lp = LpProblem::maximize(objective);
    for row in problem_rows {
        lp.add_constraint(row, Relation::Le, zeta);
    }
    for v in 0..nv {
        lp.set_bounds(v, S::zero(), S::one());
    }
    let sol = lp_solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(OsaError::Solver(format!("access program returned {:?}", sol.status)));
    }
    let table = sol.x.iter().map(|&f| f.max(S::zero()).min(S::one())).collect();
    Ok(MacAccess { rule: JointAccessRule { width, table }, objective: sol.objective })
}

/// The `size` channels with the largest `B_n · Pr{S_n = 1}`; ties go to the lower index.
pub fn myopic_channel_set<S: Scalar>(
    belief: &Belief<S>,
    model: &TransitionModel<S>,
    size: usize,
) -> Result<ChannelSet> {
    let predicted = model.predict_mass(belief.mass());
    myopic_from_predicted(&predicted, model.bandwidths(), size)
}

pub(crate) fn myopic_from_predicted<S: Scalar>(predicted: &[S], bandwidths: &[S], size: usize) -> Result<ChannelSet> {
    let n = bandwidths.len();
    let mut scored: Vec<(usize, S)> =
        (0..n).map(|c| (c, bandwidths[c] * crate::markov::idle_marginal(predicted, c))).collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    ChannelSet::new(scored.into_iter().take(size).map(|(c, _)| c).collect(), n)
}
