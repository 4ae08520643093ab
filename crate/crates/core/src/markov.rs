//! Spectrum-occupancy dynamics, beliefs, prediction and Bayesian update.
//!
//! A joint occupancy state of `N` channels is a bit pattern with bit `n`
//! set when channel `n` (0-based) is idle. Textual keys such as `[0111]`
//! list channel 1 first. Beliefs always live on the full `2^N` state space,
//! including for per-channel (factored) models.

use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{OsaError, Result};
use crate::numerics::{RngStream, Scalar};
use crate::separation::AccessRule;
use crate::sensor::OperatingPoint;

pub const MAX_CHANNELS: usize = 12;

/// Joint spectrum occupancy state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sos {
    bits: u32,
    channels: u8,
}

impl Sos {
    pub fn new(bits: u32, channels: usize) -> Result<Self> {
        check_channels(channels)?;
        if (bits as usize) >= (1usize << channels) {
            return Err(OsaError::Invalid(format!("state {bits} out of range for {channels} channels")));
        }
        Ok(Sos { bits, channels: channels as u8 })
    }

    pub fn from_index(index: usize, channels: usize) -> Self {
        debug_assert!(index < (1 << channels));
        Sos { bits: index as u32, channels: channels as u8 }
    }

    /// Parses `[0111]` (or `0111`); the first digit is channel 1.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let t = t.strip_prefix('[').unwrap_or(t);
        let t = t.strip_suffix(']').unwrap_or(t);
        let channels = t.chars().count();
        check_channels(channels)?;
        let mut bits = 0u32;
        for (n, ch) in t.chars().enumerate() {
            match ch {
                '1' => bits |= 1 << n,
                '0' => {}
                _ => return Err(OsaError::Invalid(format!("bad state key {text:?}"))),
            }
        }
        Ok(Sos { bits, channels: channels as u8 })
    }

    pub fn index(self) -> usize {
        self.bits as usize
    }

    pub fn channels(self) -> usize {
        self.channels as usize
    }

    pub fn is_idle(self, channel: usize) -> bool {
        self.bits >> channel & 1 == 1
    }
}

impl fmt::Display for Sos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for n in 0..self.channels() {
            write!(f, "{}", if self.is_idle(n) { '1' } else { '0' })?;
        }
        write!(f, "]")
    }
}

fn check_channels(channels: usize) -> Result<()> {
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(OsaError::Limit(format!("channel count must be in 1..={MAX_CHANNELS}, got {channels}")));
    }
    Ok(())
}

#[inline]
fn is_idle(state: usize, channel: usize) -> bool {
    state >> channel & 1 == 1
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics<S> {
    /// Row-major `2^N × 2^N` matrix, `P[from][to]`.
    Full(Vec<S>),
    /// Independent two-state channels: `alpha` is P(busy → idle), `beta` is P(idle → idle).
    Factored { alpha: Vec<S>, beta: Vec<S> },
}

/// Markov occupancy model plus per-channel bandwidths.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionModel<S> {
    channels: usize,
    dynamics: Dynamics<S>,
    bandwidths: Vec<S>,
}

impl<S: Scalar> TransitionModel<S> {
    pub fn factored(alpha: Vec<S>, beta: Vec<S>, bandwidths: Vec<S>) -> Result<Self> {
        let n = alpha.len();
        check_channels(n)?;
        for v in [&beta, &bandwidths] {
            if v.len() != n {
                return Err(OsaError::Dimension { expected: n, got: v.len() });
            }
        }
        for &p in alpha.iter().chain(&beta) {
            if !(p >= S::zero() && p <= S::one()) {
                return Err(OsaError::Invalid(format!("transition probability {p} outside [0,1]")));
            }
        }
        check_bandwidths(&bandwidths)?;
        Ok(TransitionModel { channels: n, dynamics: Dynamics::Factored { alpha, beta }, bandwidths })
    }

    pub fn full(channels: usize, matrix: Vec<S>, bandwidths: Vec<S>) -> Result<Self> {
        check_channels(channels)?;
        let ns = 1usize << channels;
        if matrix.len() != ns * ns {
            return Err(OsaError::Dimension { expected: ns * ns, got: matrix.len() });
        }
        if bandwidths.len() != channels {
            return Err(OsaError::Dimension { expected: channels, got: bandwidths.len() });
        }
        check_bandwidths(&bandwidths)?;
        for (i, row) in matrix.chunks(ns).enumerate() {
            if row.iter().any(|&p| !(p >= S::zero() && p <= S::one())) {
                return Err(OsaError::Invalid(format!("row {} has entries outside [0,1]", Sos::from_index(i, channels))));
            }
            let sum: S = row.iter().copied().sum();
            if (sum - S::one()).abs() > S::sum_tol() {
                return Err(OsaError::Invalid(format!(
                    "row {} sums to {sum}, not 1",
                    Sos::from_index(i, channels)
                )));
            }
        }
        Ok(TransitionModel { channels, dynamics: Dynamics::Full(matrix), bandwidths })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_states(&self) -> usize {
        1 << self.channels
    }

    pub fn bandwidths(&self) -> &[S] {
        &self.bandwidths
    }

    pub fn dynamics(&self) -> &Dynamics<S> {
        &self.dynamics
    }

    pub fn with_bandwidths(mut self, bandwidths: Vec<S>) -> Result<Self> {
        if bandwidths.len() != self.channels {
            return Err(OsaError::Dimension { expected: self.channels, got: bandwidths.len() });
        }
        check_bandwidths(&bandwidths)?;
        self.bandwidths = bandwidths;
        Ok(self)
    }

    /// `P(from → to)`.
    pub fn prob(&self, from: usize, to: usize) -> S {
        match &self.dynamics {
            Dynamics::Full(m) => m[from * self.num_states() + to],
            Dynamics::Factored { alpha, beta } => {
                let mut p = S::one();
                for n in 0..self.channels {
                    let (a, b) = (alpha[n], beta[n]);
                    p = p * match (is_idle(from, n), is_idle(to, n)) {
                        (false, false) => S::one() - a,
                        (false, true) => a,
                        (true, false) => S::one() - b,
                        (true, true) => b,
                    };
                }
                p
            }
        }
    }

    /// Row-vector product `λP`.
    pub fn predict_mass(&self, mass: &[S]) -> Vec<S> {
        let ns = self.num_states();
        match &self.dynamics {
            Dynamics::Full(m) => {
                let mut out = vec![S::zero(); ns];
                for (from, &w) in mass.iter().enumerate() {
                    if w == S::zero() {
                        continue;
                    }
                    let row = &m[from * ns..(from + 1) * ns];
                    for (o, &p) in out.iter_mut().zip(row) {
                        *o = *o + w * p;
                    }
                }
                out
            }
            Dynamics::Factored { alpha, beta } => {
                let mut v = mass.to_vec();
                for n in 0..self.channels {
                    let (a, b) = (alpha[n], beta[n]);
                    let bit = 1 << n;
                    for i in (0..ns).filter(|i| i & bit == 0) {
                        let (busy, idle) = (v[i], v[i | bit]);
                        v[i] = busy * (S::one() - a) + idle * (S::one() - b);
                        v[i | bit] = busy * a + idle * b;
                    }
                }
                v
            }
        }
    }

    /// Column-vector product `P g`: `(P g)(s') = Σ_s P(s' → s) g(s)`.
    pub fn back_project(&self, g: &[S]) -> Vec<S> {
        let ns = self.num_states();
        match &self.dynamics {
            Dynamics::Full(m) => (0..ns)
                .map(|from| {
                    m[from * ns..(from + 1) * ns].iter().zip(g).fold(S::zero(), |acc, (&p, &x)| acc + p * x)
                })
                .collect(),
            Dynamics::Factored { alpha, beta } => {
                let mut v = g.to_vec();
                for n in 0..self.channels {
                    let (a, b) = (alpha[n], beta[n]);
                    let bit = 1 << n;
                    for i in (0..ns).filter(|i| i & bit == 0) {
                        let (busy, idle) = (v[i], v[i | bit]);
                        v[i] = (S::one() - a) * busy + a * idle;
                        v[i | bit] = (S::one() - b) * busy + b * idle;
                    }
                }
                v
            }
        }
    }

    /// Same chain as an explicit matrix.
    pub fn to_full(&self) -> Self {
        let ns = self.num_states();
        let mut m = Vec::with_capacity(ns * ns);
        for from in 0..ns {
            for to in 0..ns {
                m.push(self.prob(from, to));
            }
        }
        TransitionModel { channels: self.channels, dynamics: Dynamics::Full(m), bandwidths: self.bandwidths.clone() }
    }

    /// Scales every α and β by `1 + psi`, clipping to `[lo, hi]`.
    pub fn perturbed(&self, psi: S, lo: S, hi: S) -> Result<Self> {
        match &self.dynamics {
            Dynamics::Factored { alpha, beta } => {
                let f = |p: &S| (*p * (S::one() + psi)).max(lo).min(hi);
                TransitionModel::factored(
                    alpha.iter().map(f).collect(),
                    beta.iter().map(f).collect(),
                    self.bandwidths.clone(),
                )
            }
            Dynamics::Full(_) => {
                Err(OsaError::Invalid("relative α/β perturbation needs a per-channel model".into()))
            }
        }
    }

    /// Draws the successor of `from`.
    pub fn sample_next(&self, from: usize, rng: &mut RngStream) -> usize {
        match &self.dynamics {
            Dynamics::Full(m) => {
                let ns = self.num_states();
                let row: Vec<f64> = m[from * ns..(from + 1) * ns].iter().map(|p| p.as_f64()).collect();
                rng.categorical(&row)
            }
            Dynamics::Factored { alpha, beta } => {
                let mut to = 0usize;
                for n in 0..self.channels {
                    let p_idle = if is_idle(from, n) { beta[n] } else { alpha[n] };
                    if rng.bernoulli(p_idle.as_f64()) {
                        to |= 1 << n;
                    }
                }
                to
            }
        }
    }

    /// Draws a state from a distribution over states.
    pub fn sample_state(&self, mass: &[S], rng: &mut RngStream) -> usize {
        let w: Vec<f64> = mass.iter().map(|p| p.as_f64()).collect();
        rng.categorical(&w)
    }
}

fn check_bandwidths<S: Scalar>(b: &[S]) -> Result<()> {
    if b.iter().any(|&x| !(x > S::zero()) || !x.is_finite()) {
        return Err(OsaError::Invalid("bandwidths must be positive and finite".into()));
    }
    Ok(())
}

/// Probability mass over the `2^N` joint states.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief<S> {
    mass: Vec<S>,
}

impl<S: Scalar> Belief<S> {
    /// Validates (entries in `[0,1]`, sum within 1e-9 of one) and renormalizes.
    pub fn new(mass: Vec<S>) -> Result<Self> {
        let ns = mass.len();
        if ns < 2 || !ns.is_power_of_two() || ns > 1 << MAX_CHANNELS {
            return Err(OsaError::Invalid(format!("belief length {ns} is not 2^N for N in 1..={MAX_CHANNELS}")));
        }
        if mass.iter().any(|&p| !(p >= S::zero() && p <= S::one() + S::tol())) {
            return Err(OsaError::Invalid("belief entries must lie in [0,1]".into()));
        }
        let sum: S = mass.iter().copied().sum();
        if (sum - S::one()).abs() > S::tol() {
            return Err(OsaError::Invalid(format!("belief sums to {sum}")));
        }
        Ok(Belief { mass: mass.into_iter().map(|p| p / sum).collect() })
    }

    pub fn uniform(channels: usize) -> Result<Self> {
        check_channels(channels)?;
        let ns = 1 << channels;
        Ok(Belief { mass: vec![S::one() / S::lit(ns as f64); ns] })
    }

    pub fn point(state: Sos) -> Self {
        let mut mass = vec![S::zero(); 1 << state.channels()];
        mass[state.index()] = S::one();
        Belief { mass }
    }

    pub fn mass(&self) -> &[S] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<S> {
        self.mass
    }

    pub fn num_states(&self) -> usize {
        self.mass.len()
    }

    pub fn channels(&self) -> usize {
        self.mass.len().trailing_zeros() as usize
    }

    pub fn max_abs_diff(&self, other: &Belief<S>) -> S {
        self.mass.iter().zip(&other.mass).fold(S::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Convex combination `w·self + (1-w)·other`.
    pub fn mix(&self, other: &Belief<S>, w: S) -> Belief<S> {
        Belief {
            mass: self.mass.iter().zip(&other.mass).map(|(&a, &b)| w * a + (S::one() - w) * b).collect(),
        }
    }
}

fn check_dims<S: Scalar>(belief: &Belief<S>, model: &TransitionModel<S>) -> Result<()> {
    if belief.num_states() != model.num_states() {
        return Err(OsaError::Dimension { expected: model.num_states(), got: belief.num_states() });
    }
    Ok(())
}

/// Distribution of the state after one transition.
pub fn predict<S: Scalar>(belief: &Belief<S>, model: &TransitionModel<S>) -> Result<Belief<S>> {
    check_dims(belief, model)?;
    let mut mass = model.predict_mass(belief.mass());
    normalize(&mut mass);
    Ok(Belief { mass })
}

fn normalize<S: Scalar>(mass: &mut [S]) {
    let sum: S = mass.iter().copied().sum();
    if sum > S::zero() {
        for p in mass.iter_mut() {
            *p = (*p / sum).max(S::zero());
        }
    }
}

/// Unique stationary distribution of an ergodic (single closed class, aperiodic) chain.
pub fn stationary<S: Scalar>(model: &TransitionModel<S>) -> Result<Belief<S>> {
    match &model.dynamics {
        Dynamics::Factored { alpha, beta } => {
            let mut idle = Vec::with_capacity(model.channels);
            for (n, (&a, &b)) in alpha.iter().zip(beta).enumerate() {
                if a == S::zero() && b == S::one() {
                    return Err(OsaError::NonErgodic(format!("channel {} has two absorbing states", n + 1)));
                }
                if a == S::one() && b == S::zero() {
                    return Err(OsaError::NonErgodic(format!("channel {} alternates with period 2", n + 1)));
                }
                idle.push(a / (a + S::one() - b));
            }
            let ns = model.num_states();
            let mass = (0..ns)
                .map(|s| {
                    (0..model.channels)
                        .fold(S::one(), |acc, n| acc * if is_idle(s, n) { idle[n] } else { S::one() - idle[n] })
                })
                .collect();
            Ok(Belief { mass })
        }
        Dynamics::Full(m) => {
            check_single_aperiodic_class(model.num_states(), |i, j| m[i * model.num_states() + j] > S::zero())?;
            let ns = model.num_states();
            let mut pi = vec![S::one() / S::lit(ns as f64); ns];
            let tol = S::sum_tol() * S::lit(0.1);
            for _ in 0..1_000_000 {
                let next = model.predict_mass(&pi);
                let diff = next.iter().zip(&pi).fold(S::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
                pi = next;
                normalize(&mut pi);
                if diff <= tol {
                    return Ok(Belief { mass: pi });
                }
            }
            Err(OsaError::NonErgodic("power iteration did not converge".into()))
        }
    }
}

fn check_single_aperiodic_class(ns: usize, edge: impl Fn(usize, usize) -> bool) -> Result<()> {
    let mut g = DiGraph::<(), ()>::with_capacity(ns, ns * 2);
    let nodes: Vec<_> = (0..ns).map(|_| g.add_node(())).collect();
    for i in 0..ns {
        for j in 0..ns {
            if edge(i, j) {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; ns];
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            comp[v.index()] = c;
        }
    }
    let closed: Vec<usize> = (0..sccs.len())
        .filter(|&c| sccs[c].iter().all(|v| g.neighbors(*v).all(|w| comp[w.index()] == c)))
        .collect();
    if closed.len() != 1 {
        return Err(OsaError::NonErgodic(format!("{} closed communicating classes", closed.len())));
    }
    // period = gcd of (level(u) + 1 - level(v)) over edges inside the class
    let class = &sccs[closed[0]];
    let mut level = vec![usize::MAX; ns];
    let start = class[0].index();
    level[start] = 0;
    let mut queue = std::collections::VecDeque::from([start]);
    let mut period = 0usize;
    while let Some(u) = queue.pop_front() {
        for w in g.neighbors(nodes[u]) {
            let w = w.index();
            if level[w] == usize::MAX {
                level[w] = level[u] + 1;
                queue.push_back(w);
            } else {
                let d = (level[u] + 1).abs_diff(level[w]);
                period = gcd(period, d);
            }
        }
    }
    if period != 1 {
        return Err(OsaError::NonErgodic(format!("recurrent class has period {period}")));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Predicted probability that channel `channel` (0-based) is idle in the coming slot.
pub fn channel_idle_prob<S: Scalar>(belief: &Belief<S>, model: &TransitionModel<S>, channel: usize) -> Result<S> {
    if channel >= model.channels() {
        return Err(OsaError::Invalid(format!("channel {channel} out of range")));
    }
    let p = predict(belief, model)?;
    Ok(idle_marginal(p.mass(), channel))
}

pub(crate) fn idle_marginal<S: Scalar>(mass: &[S], channel: usize) -> S {
    mass.iter().enumerate().filter(|(s, _)| is_idle(*s, channel)).map(|(_, &p)| p).sum()
}

/// Conditional distribution of the acknowledgement outcome given the
/// post-transition state, `U_{s,k}` for the action taken in the slot.
pub trait ObservationKernel<S> {
    fn num_outcomes(&self) -> usize;
    fn likelihood(&self, state: usize, outcome: usize) -> S;
}

/// One sensed channel with its operating point and access rule.
/// Outcome 1 is an ACK, outcome 0 none.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleChannelAction<S> {
    pub channel: usize,
    pub point: OperatingPoint<S>,
    pub rule: AccessRule<S>,
}

impl<S: Scalar> SingleChannelAction<S> {
    /// Probability of transmitting given the channel is idle.
    pub fn access_given_idle(&self) -> S {
        self.point.epsilon * self.rule.f0 + (S::one() - self.point.epsilon) * self.rule.f1
    }
}

impl<S: Scalar> ObservationKernel<S> for SingleChannelAction<S> {
    fn num_outcomes(&self) -> usize {
        2
    }

    fn likelihood(&self, state: usize, outcome: usize) -> S {
        let ack = if is_idle(state, self.channel) { self.access_given_idle() } else { S::zero() };
        if outcome == 1 {
            ack
        } else {
            S::one() - ack
        }
    }
}

/// Posterior belief after observing `outcome` under `kernel`.
pub fn bayes_update<S: Scalar, K: ObservationKernel<S> + ?Sized>(
    belief: &Belief<S>,
    model: &TransitionModel<S>,
    kernel: &K,
    outcome: usize,
) -> Result<Belief<S>> {
    check_dims(belief, model)?;
    if outcome >= kernel.num_outcomes() {
        return Err(OsaError::Invalid(format!("observation {outcome} out of range")));
    }
    let mut mass = model.predict_mass(belief.mass());
    for (s, p) in mass.iter_mut().enumerate() {
        *p = *p * kernel.likelihood(s, outcome);
    }
    let total: S = mass.iter().copied().sum();
    if !(total.as_f64() >= 1e-300) {
        return Err(OsaError::ZeroProbabilityObservation);
    }
    for p in mass.iter_mut() {
        *p = (*p / total).max(S::zero());
    }
    Ok(Belief { mass })
}

/// Probability of observing `outcome` next slot.
pub fn observation_prob<S: Scalar, K: ObservationKernel<S> + ?Sized>(
    belief: &Belief<S>,
    model: &TransitionModel<S>,
    kernel: &K,
    outcome: usize,
) -> S {
    model
        .predict_mass(belief.mass())
        .iter()
        .enumerate()
        .map(|(s, &p)| p * kernel.likelihood(s, outcome))
        .sum()
}
