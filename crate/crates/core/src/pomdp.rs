//! Finite-horizon channel-selection POMDP: exact alpha-vector solution,
//! the myopic rule and a belief-tree oracle.
//!
//! Alpha vectors are indexed over the state at the *start* of a slot (before
//! the transition), so `V_t(λ) = max_α Σ_s' λ_s' α(s')` for the belief `λ`
//! carried into slot `t`.

use std::fmt::Write as _;

use crate::error::{OsaError, Result};
use crate::markov::{Belief, TransitionModel};
use crate::multichannel::{ChannelSet, JointAccessRule, MultiChannelAction, SensingErrorModel};
use crate::numerics::{lp_solve, LpProblem, LpStatus, Relation, RngStream, Scalar};
use crate::markov::ObservationKernel;
use crate::sensor::OperatingPoint;
use crate::separation::{instantaneous_throughput_factor, AccessRule};

pub const DEFAULT_ALPHA_CAP: usize = 50_000;
pub const DEFAULT_PRUNE_TOLERANCE: f64 = 1e-9;

/// Reward scaling for the fraction of the slot left for data after sensing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardSpec<S> {
    pub time_factor: S,
}

impl<S: Scalar> RewardSpec<S> {
    pub fn full_slot() -> Self {
        RewardSpec { time_factor: S::one() }
    }

    /// `1 - M·c` for `M` measurements each costing fraction `c` of the slot.
    pub fn with_measurement_cost(samples: u32, cost: S) -> Result<Self> {
        let f = S::one() - S::lit(samples as f64) * cost;
        if !(cost >= S::zero() && f >= S::zero()) {
            return Err(OsaError::Invalid(format!("{samples} measurements at cost {cost} exceed the slot")));
        }
        Ok(RewardSpec { time_factor: f })
    }
}

/// One sensing action: which channels, how acknowledgements arise, and what they pay.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionModel<S> {
    pub set: ChannelSet,
    /// `kernel[s * outcomes + k]`: probability of ack pattern `k` in (post-transition) state `s`.
    kernel: Vec<S>,
    /// Reward of ack pattern `k`.
    reward: Vec<S>,
}

impl<S: Scalar> ActionModel<S> {
    pub fn outcomes(&self) -> usize {
        self.reward.len()
    }

    pub fn likelihood(&self, state: usize, outcome: usize) -> S {
        self.kernel[state * self.outcomes() + outcome]
    }

    /// Expected reward in each post-transition state.
    pub fn expected_reward(&self) -> Vec<S> {
        let no = self.outcomes();
        self.kernel
            .chunks(no)
            .map(|row| row.iter().zip(&self.reward).fold(S::zero(), |a, (&u, &r)| a + u * r))
            .collect()
    }
}

impl<S: Scalar> ObservationKernel<S> for ActionModel<S> {
    fn num_outcomes(&self) -> usize {
        self.outcomes()
    }

    fn likelihood(&self, state: usize, outcome: usize) -> S {
        ActionModel::likelihood(self, state, outcome)
    }
}

/// Channel-selection problem: a model and the available actions.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingPomdp<S> {
    pub model: TransitionModel<S>,
    pub actions: Vec<ActionModel<S>>,
}

impl<S: Scalar> SensingPomdp<S> {
    /// One action per channel, each using its own (operating point, access rule).
    pub fn single_channel(
        model: TransitionModel<S>,
        designs: &[(OperatingPoint<S>, AccessRule<S>)],
        reward: RewardSpec<S>,
    ) -> Result<Self> {
        let n = model.channels();
        if designs.len() != n {
            return Err(OsaError::Dimension { expected: n, got: designs.len() });
        }
        let ns = model.num_states();
        let actions = (0..n)
            .map(|c| {
                let access = instantaneous_throughput_factor(&designs[c].0, &designs[c].1);
                let mut kernel = Vec::with_capacity(ns * 2);
                for s in 0..ns {
                    let ack = if s >> c & 1 == 1 { access } else { S::zero() };
                    kernel.push(S::one() - ack);
                    kernel.push(ack);
                }
                ActionModel {
                    set: ChannelSet::single(c),
                    kernel,
                    reward: vec![S::zero(), model.bandwidths()[c] * reward.time_factor],
                }
            })
            .collect();
        Ok(SensingPomdp { model, actions })
    }

    /// Actions on channel sets with joint sensing-error models and access rules.
    pub fn multi_channel(
        model: TransitionModel<S>,
        actions: Vec<(ChannelSet, SensingErrorModel<S>, JointAccessRule<S>)>,
        reward: RewardSpec<S>,
    ) -> Result<Self> {
        if actions.is_empty() {
            return Err(OsaError::Invalid("at least one action is required".into()));
        }
        let ns = model.num_states();
        let mut out = Vec::with_capacity(actions.len());
        for (set, errors, rule) in actions {
            let act = MultiChannelAction::new(set.clone(), &errors, &rule)?;
            let no = set.num_patterns();
            let mut kernel = Vec::with_capacity(ns * no);
            for s in 0..ns {
                for k in 0..no {
                    kernel.push(act.likelihood(s, k));
                }
            }
            let reward = (0..no)
                .map(|k| {
                    (0..set.len())
                        .filter(|j| k >> j & 1 == 1)
                        .fold(S::zero(), |a, j| a + model.bandwidths()[set.channels()[j]])
                        * reward.time_factor
                })
                .collect();
            out.push(ActionModel { set, kernel, reward });
        }
        Ok(SensingPomdp { model, actions: out })
    }

    /// Exact value functions for stages `1..=horizon`.
    pub fn solve(&self, horizon: usize, options: &SolveOptions) -> Result<ExactPolicy<S>> {
        if horizon == 0 {
            return Err(OsaError::Invalid("horizon must be at least 1".into()));
        }
        let ns = self.model.num_states();
        let mut stages: Vec<ValueFunction<S>> = Vec::with_capacity(horizon);
        let mut next: Vec<AlphaVector<S>> = vec![AlphaVector { coefficients: vec![S::zero(); ns], action: usize::MAX }];
        for t in (1..=horizon).rev() {
            let mut stage: Vec<AlphaVector<S>> = Vec::new();
            for (ai, act) in self.actions.iter().enumerate() {
                let no = act.outcomes();
                let mut sum: Option<Vec<Vec<S>>> = None;
                for k in 0..no {
                    let mut proj: Vec<Vec<S>> = next
                        .iter()
                        .map(|alpha| {
                            let g: Vec<S> = (0..ns)
                                .map(|s| act.likelihood(s, k) * (act.reward[k] + alpha.coefficients[s]))
                                .collect();
                            self.model.back_project(&g)
                        })
                        .collect();
                    proj = options.prune_plain(proj)?;
                    sum = Some(match sum {
                        None => proj,
                        Some(acc) => {
                            if acc.len().saturating_mul(proj.len()) > options.alpha_cap {
                                return Err(alpha_limit(acc.len() * proj.len(), t));
                            }
                            let mut cross = Vec::with_capacity(acc.len() * proj.len());
                            for a in &acc {
                                for b in &proj {
                                    cross.push(a.iter().zip(b).map(|(&x, &y)| x + y).collect());
                                }
                            }
                            options.prune_plain(cross)?
                        }
                    });
                }
                stage.extend(sum.unwrap_or_default().into_iter().map(|c| AlphaVector { coefficients: c, action: ai }));
                if stage.len() > options.alpha_cap {
                    return Err(alpha_limit(stage.len(), t));
                }
            }
            let pruned = options.prune(stage)?;
            log::debug!("stage {t}: {} alpha vectors", pruned.len());
            stages.push(ValueFunction { stage: t, vectors: pruned.clone() });
            next = pruned;
        }
        stages.reverse();
        Ok(ExactPolicy { actions: self.actions.iter().map(|a| a.set.clone()).collect(), stages })
    }

    /// Optimal expected reward over `horizon` slots by exhaustive belief-tree search.
    pub fn brute_force_value(&self, belief: &Belief<S>, horizon: usize) -> Result<S> {
        if self.model.channels() > 3 || horizon > 4 {
            return Err(OsaError::Limit("brute force is limited to N ≤ 3 and T ≤ 4".into()));
        }
        if belief.num_states() != self.model.num_states() {
            return Err(OsaError::Dimension { expected: self.model.num_states(), got: belief.num_states() });
        }
        Ok(self.tree_value(belief.mass(), horizon))
    }

    fn tree_value(&self, mass: &[S], remaining: usize) -> S {
        if remaining == 0 {
            return S::zero();
        }
        let predicted = self.model.predict_mass(mass);
        let mut best = S::neg_infinity();
        for act in &self.actions {
            let mut total = S::zero();
            for k in 0..act.outcomes() {
                let joint: Vec<S> =
                    predicted.iter().enumerate().map(|(s, &p)| p * act.likelihood(s, k)).collect();
                let pk: S = joint.iter().copied().sum();
                if pk <= S::zero() {
                    continue;
                }
                let post: Vec<S> = joint.iter().map(|&p| p / pk).collect();
                total = total + pk * (act.reward[k] + self.tree_value(&post, remaining - 1));
            }
            best = best.max(total);
        }
        best
    }
}

fn alpha_limit(size: usize, stage: usize) -> OsaError {
    OsaError::Limit(format!(
        "{size} alpha vectors at stage {stage} exceed the cap; use the myopic policy instead"
    ))
}

/// Pruning switches, the pruning slack and the alpha-set size cap.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub pointwise: bool,
    pub lp: bool,
    /// A vector is dropped when it improves the envelope by at most this much
    /// anywhere. Each prune loses at most this amount, so a `T`-stage solve is
    /// within `4·T·tolerance` of the exact value.
    pub tolerance: f64,
    pub alpha_cap: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { pointwise: true, lp: true, tolerance: DEFAULT_PRUNE_TOLERANCE, alpha_cap: DEFAULT_ALPHA_CAP }
    }
}

impl SolveOptions {
    pub fn unpruned() -> Self {
        SolveOptions { pointwise: false, lp: false, ..Self::default() }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn prune_plain<S: Scalar>(&self, vs: Vec<Vec<S>>) -> Result<Vec<Vec<S>>> {
        let tagged = vs.into_iter().map(|c| AlphaVector { coefficients: c, action: 0 }).collect();
        Ok(self.prune(tagged)?.into_iter().map(|a| a.coefficients).collect())
    }

    fn prune<S: Scalar>(&self, vs: Vec<AlphaVector<S>>) -> Result<Vec<AlphaVector<S>>> {
        let mut vs = vs;
        let tol = S::lit(self.tolerance).max(S::tol());
        if self.pointwise || self.lp {
            vs = dedup(vs, tol);
        }
        if self.pointwise {
            vs = prune_pointwise(vs, tol);
        }
        if self.lp {
            vs = prune_lp(vs, tol)?;
        }
        Ok(vs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaVector<S> {
    pub coefficients: Vec<S>,
    /// Index into the policy's action list.
    pub action: usize,
}

impl<S: Scalar> AlphaVector<S> {
    pub fn value(&self, mass: &[S]) -> S {
        self.coefficients.iter().zip(mass).fold(S::zero(), |a, (&c, &p)| a + c * p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction<S> {
    pub stage: usize,
    pub vectors: Vec<AlphaVector<S>>,
}

impl<S: Scalar> ValueFunction<S> {
    /// Maximum value and the maximizing vector; near-ties go to the lower action index.
    pub fn best(&self, mass: &[S]) -> Option<(S, &AlphaVector<S>)> {
        let max = self.vectors.iter().map(|a| a.value(mass)).fold(S::neg_infinity(), S::max);
        let slack = S::tol() * S::lit(1e-3) * (S::one() + max.abs());
        self.vectors
            .iter()
            .filter(|a| a.value(mass) >= max - slack)
            .min_by_key(|a| a.action)
            .map(|a| (max, a))
    }
}

fn dedup<S: Scalar>(mut vs: Vec<AlphaVector<S>>, tol: S) -> Vec<AlphaVector<S>> {
    vs.sort_by_key(|a| a.action);
    let mut out: Vec<AlphaVector<S>> = Vec::with_capacity(vs.len());
    for v in vs {
        if !out.iter().any(|o| o.coefficients.iter().zip(&v.coefficients).all(|(&a, &b)| (a - b).abs() <= tol)) {
            out.push(v);
        }
    }
    out
}

fn prune_pointwise<S: Scalar>(vs: Vec<AlphaVector<S>>, tol: S) -> Vec<AlphaVector<S>> {
    let dominated = |i: usize| {
        vs.iter().enumerate().any(|(j, q)| {
            j != i && q.coefficients.iter().zip(&vs[i].coefficients).all(|(&a, &b)| a >= b - tol)
        })
    };
    let keep: Vec<bool> = (0..vs.len()).map(|i| !dominated(i)).collect();
    vs.into_iter().zip(keep).filter(|(_, k)| *k).map(|(v, _)| v).collect()
}

/// Keeps the vectors that are best somewhere on the simplex.
///
/// Vectors that win at a sampled belief are kept outright. The rest are offered
/// one at a time to an LP against the kept set; those it accepts are checked
/// once more against the final set, since a later vector may cover them.
fn prune_lp<S: Scalar>(vs: Vec<AlphaVector<S>>, tol: S) -> Result<Vec<AlphaVector<S>>> {
    if vs.len() <= 1 {
        return Ok(vs);
    }
    let ns = vs[0].coefficients.len();
    let mut proven = vec![false; vs.len()];
    for b in probe_beliefs::<S>(ns) {
        if let Some(i) = best_index(&vs, &b) {
            proven[i] = true;
        }
    }
    let centroid = vec![S::one() / S::lit(ns as f64); ns];
    let mut clean: Vec<AlphaVector<S>> = Vec::new();
    let mut rest: Vec<(S, AlphaVector<S>)> = Vec::new();
    for (v, p) in vs.into_iter().zip(proven) {
        if p {
            clean.push(v);
        } else {
            rest.push((v.value(&centroid), v));
        }
    }
    let settled = clean.len();
    rest.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    for (_, w) in rest {
        if is_useful(&w, &clean, tol) {
            clean.push(w);
        }
    }
    let mut i = settled;
    while i < clean.len() {
        let w = clean.remove(i);
        if is_useful(&w, &clean, tol) {
            clean.insert(i, w);
            i += 1;
        }
    }
    clean.sort_by(|a, b| {
        a.action.cmp(&b.action).then_with(|| {
            a.coefficients
                .iter()
                .zip(&b.coefficients)
                .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(clean)
}

/// Corners, the centroid and a fixed pseudo-random spread of interior beliefs.
fn probe_beliefs<S: Scalar>(ns: usize) -> Vec<Vec<S>> {
    let mut out = Vec::with_capacity(PROBES_PER_STATE * ns + ns + 1);
    for s in 0..ns {
        let mut corner = vec![S::zero(); ns];
        corner[s] = S::one();
        out.push(corner);
    }
    out.push(vec![S::one() / S::lit(ns as f64); ns]);
    let mut rng = RngStream::new(PROBE_SEED, ns as u64);
    for _ in 0..PROBES_PER_STATE * ns {
        let w: Vec<f64> = (0..ns).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let total: f64 = w.iter().sum();
        out.push(w.iter().map(|&x| S::lit(x / total)).collect());
    }
    out
}

const PROBE_SEED: u64 = 0x5eed_a1fa;
const PROBES_PER_STATE: usize = 64;

/// Whether `w` beats the upper envelope of `set` somewhere by more than the tolerance.
/// A failed program counts as useful: keeping a vector never changes the value.
fn is_useful<S: Scalar>(w: &AlphaVector<S>, set: &[AlphaVector<S>], tol: S) -> bool {
    match envelope_gap(w, set) {
        Ok(gap) => gap > tol,
        Err(e) => {
            log::debug!("keeping alpha vector after failed pruning program: {e}");
            true
        }
    }
}

/// `max_b min_q (w - q)·b` over the belief simplex, solved in its dual form
/// `min_λ max_s (w - Σ λ_q q)_s`, which has one row per state.
fn envelope_gap<S: Scalar>(w: &AlphaVector<S>, set: &[AlphaVector<S>]) -> Result<S> {
    if set.is_empty() {
        return Ok(S::infinity());
    }
    let ns = w.coefficients.len();
    // The gap is scale invariant, so differences are normalized to unit max entry.
    let scale = set
        .iter()
        .flat_map(|q| q.coefficients.iter().zip(&w.coefficients).map(|(&a, &b)| (a - b).abs()))
        .fold(S::zero(), |m, v| m.max(v));
    if scale <= S::zero() {
        return Ok(S::zero());
    }
    // variables: λ_q ≥ 0 for each q, then μ ≥ -2; maximize -μ
    let nq = set.len();
    let two = S::one() + S::one();
    let mut objective = vec![S::zero(); nq + 1];
    objective[nq] = -S::one();
    let mut lp = LpProblem::maximize(objective);
    lp.set_bounds(nq, -two, S::infinity());
    for s in 0..ns {
        let mut row: Vec<S> = set.iter().map(|q| snap((q.coefficients[s] - w.coefficients[s]) / scale)).collect();
        row.push(S::one());
        lp.add_constraint(row, Relation::Ge, S::zero());
    }
    let mut simplex = vec![S::one(); nq];
    simplex.push(S::zero());
    lp.add_constraint(simplex, Relation::Eq, S::one());
    let sol = lp_solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(-sol.objective * scale),
        other => Err(OsaError::Solver(format!("pruning program returned {other:?}"))),
    }
}

/// Best vector at `b`; ties broken lexicographically so the winner is a genuine facet.
fn best_index<S: Scalar>(vs: &[AlphaVector<S>], b: &[S]) -> Option<usize> {
    let tol = S::tol();
    let mut best: Option<(usize, S)> = None;
    for (i, v) in vs.iter().enumerate() {
        let val = v.value(b);
        best = match best {
            None => Some((i, val)),
            Some((j, bv)) => {
                if val > bv + tol || ((val - bv).abs() <= tol && lex_greater(&v.coefficients, &vs[j].coefficients)) {
                    Some((i, val))
                } else {
                    Some((j, bv))
                }
            }
        };
    }
    best.map(|x| x.0)
}

fn lex_greater<S: Scalar>(a: &[S], b: &[S]) -> bool {
    for (&x, &y) in a.iter().zip(b) {
        if x > y {
            return true;
        }
        if x < y {
            return false;
        }
    }
    false
}

fn snap<S: Scalar>(v: S) -> S {
    if v.abs() < S::sum_tol() {
        S::zero()
    } else {
        v
    }
}

/// Stage-indexed alpha sets with the action list they refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPolicy<S> {
    pub actions: Vec<ChannelSet>,
    /// `stages[t-1]` holds `V_t`.
    pub stages: Vec<ValueFunction<S>>,
}

impl<S: Scalar> ExactPolicy<S> {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn value_function(&self, stage: usize) -> Result<&ValueFunction<S>> {
        if stage == 0 || stage > self.stages.len() {
            return Err(OsaError::Invalid(format!("stage {stage} outside 1..={}", self.stages.len())));
        }
        Ok(&self.stages[stage - 1])
    }

    pub fn evaluate(&self, belief: &Belief<S>, stage: usize) -> Result<(S, ChannelSet)> {
        let vf = self.value_function(stage)?;
        if belief.num_states() != vf.vectors[0].coefficients.len() {
            return Err(OsaError::Dimension { expected: vf.vectors[0].coefficients.len(), got: belief.num_states() });
        }
        let (v, a) = vf.best(belief.mass()).expect("value functions are nonempty");
        Ok((v, self.actions[a.action].clone()))
    }

    /// Text dump: one line per alpha vector, `stage action c_0 … c_{2^N-1}`,
    /// where `action` lists 1-based channels joined by `+`.
    pub fn dump(&self) -> String {
        let mut out = String::from("# stage action coefficients...\n");
        for vf in &self.stages {
            for a in &vf.vectors {
                let act: Vec<String> = self.actions[a.action].channels().iter().map(|c| (c + 1).to_string()).collect();
                let _ = write!(out, "{} {}", vf.stage, act.join("+"));
                for c in &a.coefficients {
                    let _ = write!(out, " {:.16e}", c.as_f64());
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses [`ExactPolicy::dump`] output for a model with `channels` channels.
    pub fn load(text: &str, channels: usize) -> Result<Self> {
        let mut actions: Vec<ChannelSet> = Vec::new();
        let mut rows: Vec<(usize, usize, Vec<S>)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| OsaError::Config(format!("policy line {}: {what}", ln + 1));
            let mut it = line.split_whitespace();
            let stage: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad stage"))?;
            let act = it.next().ok_or_else(|| bad("missing action"))?;
            let chans = act
                .split('+')
                .map(|c| c.parse::<usize>().ok().filter(|&c| c >= 1).map(|c| c - 1))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("bad action"))?;
            let set = ChannelSet::new(chans, channels)?;
            let ai = match actions.iter().position(|a| a == &set) {
                Some(i) => i,
                None => {
                    actions.push(set);
                    actions.len() - 1
                }
            };
            let coeffs = it
                .map(|c| c.parse::<f64>().map(S::lit))
                .collect::<std::result::Result<Vec<S>, _>>()
                .map_err(|_| bad("bad coefficient"))?;
            if coeffs.len() != 1 << channels {
                return Err(bad("wrong coefficient count"));
            }
            rows.push((stage, ai, coeffs));
        }
        let horizon = rows.iter().map(|r| r.0).max().unwrap_or(0);
        if horizon == 0 {
            return Err(OsaError::Config("policy has no alpha vectors".into()));
        }
        let mut stages: Vec<ValueFunction<S>> =
            (1..=horizon).map(|t| ValueFunction { stage: t, vectors: Vec::new() }).collect();
        for (t, a, c) in rows {
            if t == 0 {
                return Err(OsaError::Config("stages start at 1".into()));
            }
            stages[t - 1].vectors.push(AlphaVector { coefficients: c, action: a });
        }
        if stages.iter().any(|s| s.vectors.is_empty()) {
            return Err(OsaError::Config("every stage needs at least one alpha vector".into()));
        }
        Ok(ExactPolicy { actions, stages })
    }
}

/// Picks the channel(s) with the largest `B_n · Pr{S_n = 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MyopicPolicy<S> {
    pub model: TransitionModel<S>,
    pub set_size: usize,
}

impl<S: Scalar> MyopicPolicy<S> {
    /// Score `Σ B_n Pr{S_n = 1}` of the chosen set and the set itself.
    pub fn evaluate(&self, belief: &Belief<S>) -> Result<(S, ChannelSet)> {
        if belief.num_states() != self.model.num_states() {
            return Err(OsaError::Dimension { expected: self.model.num_states(), got: belief.num_states() });
        }
        let predicted = self.model.predict_mass(belief.mass());
        let set = crate::multichannel::myopic_from_predicted(&predicted, self.model.bandwidths(), self.set_size)?;
        let score = set
            .channels()
            .iter()
            .map(|&c| self.model.bandwidths()[c] * crate::markov::idle_marginal(&predicted, c))
            .fold(S::zero(), |a, b| a + b);
        Ok((score, set))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SensingPolicy<S> {
    Exact(ExactPolicy<S>),
    Myopic(MyopicPolicy<S>),
}

impl<S: Scalar> SensingPolicy<S> {
    /// Value (exact) or myopic score, and the channels to sense in `stage`.
    pub fn evaluate(&self, belief: &Belief<S>, stage: usize) -> Result<(S, ChannelSet)> {
        match self {
            SensingPolicy::Exact(p) => p.evaluate(belief, stage),
            SensingPolicy::Myopic(p) => p.evaluate(belief),
        }
    }
}

/// Exact single-channel-per-slot policy for the given per-channel designs.
pub fn solve_exact<S: Scalar>(
    model: &TransitionModel<S>,
    designs: &[(OperatingPoint<S>, AccessRule<S>)],
    horizon: usize,
    reward: RewardSpec<S>,
) -> Result<ExactPolicy<S>> {
    SensingPomdp::single_channel(model.clone(), designs, reward)?.solve(horizon, &SolveOptions::default())
}

/// Belief-tree optimum for the single-channel-per-slot problem.
pub fn brute_force_value<S: Scalar>(
    model: &TransitionModel<S>,
    designs: &[(OperatingPoint<S>, AccessRule<S>)],
    horizon: usize,
    initial: &Belief<S>,
) -> Result<S> {
    SensingPomdp::single_channel(model.clone(), designs, RewardSpec::full_slot())?.brute_force_value(initial, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{bayes_update, predict, SingleChannelAction};
    use crate::numerics::RngStream;

    fn design(eps: f64) -> (OperatingPoint<f64>, AccessRule<f64>) {
        (OperatingPoint::new(eps, 0.05).unwrap(), AccessRule::follow_sensing())
    }

    fn identity(n: usize) -> TransitionModel<f64> {
        let ns = 1 << n;
        let mut m = vec![0.0; ns * ns];
        for i in 0..ns {
            m[i * ns + i] = 1.0;
        }
        TransitionModel::full(n, m, vec![1.0; n]).unwrap()
    }

    fn random_model(rng: &mut RngStream, n: usize) -> TransitionModel<f64> {
        let a = (0..n).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
        let b = (0..n).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
        let bw = (0..n).map(|_| 0.5 + rng.uniform()).collect();
        TransitionModel::factored(a, b, bw).unwrap()
    }

    fn random_belief(rng: &mut RngStream, ns: usize) -> Belief<f64> {
        let w: Vec<f64> = (0..ns).map(|_| -rng.uniform().max(1e-12).ln()).collect();
        let t: f64 = w.iter().sum();
        Belief::new(w.iter().map(|x| x / t).collect()).unwrap()
    }

    #[test]
    fn one_slot_value() {
        // predicted idle probabilities (0.3, 0.7) under identity dynamics
        let m = identity(2);
        let (p1, p2) = (0.3, 0.7);
        let mass: Vec<f64> = (0..4)
            .map(|s| (if s & 1 == 1 { p1 } else { 1.0 - p1 }) * (if s & 2 == 2 { p2 } else { 1.0 - p2 }))
            .collect();
        let b = Belief::new(mass).unwrap();
        let policy = solve_exact(&m, &[design(0.2), design(0.2)], 1, RewardSpec::full_slot()).unwrap();
        let (v, a) = policy.evaluate(&b, 1).unwrap();
        assert!((v - 0.56).abs() < 1e-12);
        assert_eq!(a.channels(), &[1]);
        let bf = brute_force_value(&m, &[design(0.2), design(0.2)], 1, &b).unwrap();
        assert!((bf - 0.56).abs() < 1e-12);
    }

    #[test]
    fn single_channel_matches_forward_recursion() {
        let m = TransitionModel::factored(vec![0.3f64], vec![0.7], vec![2.0]).unwrap();
        let perfect = (OperatingPoint::new(0.0, 0.0).unwrap(), AccessRule::follow_sensing());
        let b = Belief::new(vec![0.9, 0.1]).unwrap();
        for t in 1..=6 {
            let policy = solve_exact(&m, &[perfect], t, RewardSpec::full_slot()).unwrap();
            let (v, _) = policy.evaluate(&b, 1).unwrap();
            let mut lam = b.clone();
            let mut expected = 0.0;
            for _ in 0..t {
                lam = predict(&lam, &m).unwrap();
                expected += 2.0 * lam.mass()[1];
            }
            assert!((v - expected).abs() < 1e-12, "T={t}: {v} vs {expected}");
            if t <= 4 {
                assert!((m_bf(&m, perfect, t, &b) - v).abs() < 1e-12);
            }
        }
    }

    fn m_bf(m: &TransitionModel<f64>, d: (OperatingPoint<f64>, AccessRule<f64>), t: usize, b: &Belief<f64>) -> f64 {
        brute_force_value(m, &[d], t, b).unwrap()
    }

    #[test]
    fn exact_matches_brute_force_on_random_instances() {
        let mut rng = RngStream::new(42, 0);
        for _ in 0..20 {
            let n = 2;
            let m = random_model(&mut rng, n);
            let designs: Vec<_> = (0..n).map(|_| design(0.6 * rng.uniform())).collect();
            for t in 1..=3 {
                let policy = solve_exact(&m, &designs, t, RewardSpec::full_slot()).unwrap();
                for _ in 0..5 {
                    let b = random_belief(&mut rng, 1 << n);
                    let exact = policy.evaluate(&b, 1).unwrap().0;
                    let bf = brute_force_value(&m, &designs, t, &b).unwrap();
                    assert!((exact - bf).abs() < 1e-9, "{exact} vs {bf}");
                }
            }
        }
    }

    #[test]
    fn pruning_preserves_values() {
        let mut rng = RngStream::new(7, 0);
        let m = random_model(&mut rng, 2);
        let designs = vec![design(0.3), design(0.5)];
        let pomdp = SensingPomdp::single_channel(m, &designs, RewardSpec::full_slot()).unwrap();
        let pruned = pomdp.solve(3, &SolveOptions::default()).unwrap();
        let full = pomdp.solve(3, &SolveOptions::unpruned()).unwrap();
        assert!(pruned.stages[0].vectors.len() < full.stages[0].vectors.len());
        for _ in 0..10_000 {
            let b = random_belief(&mut rng, 4);
            let a = pruned.evaluate(&b, 1).unwrap().0;
            let c = full.evaluate(&b, 1).unwrap().0;
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn loose_pruning_stays_within_its_bound() {
        let mut rng = RngStream::new(11, 0);
        let m = random_model(&mut rng, 3);
        let designs = vec![design(0.6), design(0.8), design(0.7)];
        let pomdp = SensingPomdp::single_channel(m, &designs, RewardSpec::full_slot()).unwrap();
        let (t, tol) = (6, 1e-5);
        let strict = pomdp.solve(t, &SolveOptions::default()).unwrap();
        let loose = pomdp.solve(t, &SolveOptions::default().with_tolerance(tol)).unwrap();
        assert!(loose.stages[0].vectors.len() <= strict.stages[0].vectors.len());
        for _ in 0..2_000 {
            let b = random_belief(&mut rng, 8);
            let gap = strict.evaluate(&b, 1).unwrap().0 - loose.evaluate(&b, 1).unwrap().0;
            assert!((-1e-12..=4.0 * t as f64 * tol).contains(&gap), "gap {gap}");
        }
    }

    #[test]
    fn value_is_convex_and_shrinks_with_stage() {
        let mut rng = RngStream::new(8, 0);
        let m = random_model(&mut rng, 3);
        let designs = vec![design(0.3), design(0.2), design(0.4)];
        let policy = solve_exact(&m, &designs, 4, RewardSpec::full_slot()).unwrap();
        for _ in 0..500 {
            let b1 = random_belief(&mut rng, 8);
            let b2 = random_belief(&mut rng, 8);
            let tau = rng.uniform();
            for t in 1..=4 {
                let v = |b: &Belief<f64>| policy.evaluate(b, t).unwrap().0;
                assert!(v(&b1.mix(&b2, tau)) <= tau * v(&b1) + (1.0 - tau) * v(&b2) + 1e-9);
                if t < 4 {
                    assert!(policy.evaluate(&b1, t).unwrap().0 >= policy.evaluate(&b1, t + 1).unwrap().0 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn stage_one_action_is_consistent_with_the_belief_update() {
        // the exact policy's continuation value equals the expectation over acks
        let mut rng = RngStream::new(9, 0);
        let m = random_model(&mut rng, 2);
        let designs = vec![design(0.3), design(0.1)];
        let policy = solve_exact(&m, &designs, 3, RewardSpec::full_slot()).unwrap();
        let b = random_belief(&mut rng, 4);
        let (v, set) = policy.evaluate(&b, 1).unwrap();
        let c = set.channels()[0];
        let act = SingleChannelAction { channel: c, point: designs[c].0, rule: designs[c].1 };
        let pred = predict(&b, &m).unwrap();
        let p_ack = pred.mass().iter().enumerate().filter(|(s, _)| s >> c & 1 == 1).map(|x| x.1).sum::<f64>()
            * (1.0 - designs[c].0.epsilon);
        let mut total = p_ack * m.bandwidths()[c];
        for (k, pk) in [(0, 1.0 - p_ack), (1, p_ack)] {
            if pk > 0.0 {
                let post = bayes_update(&b, &m, &act, k).unwrap();
                total += pk * policy.evaluate(&post, 2).unwrap().0;
            }
        }
        assert!((v - total).abs() < 1e-9);
    }

    #[test]
    fn myopic_examples() {
        let m = identity(3);
        let mut mass = vec![0.0; 8];
        mass[0b011] = 0.4;
        mass[0b110] = 0.2;
        mass[0b000] = 0.3;
        mass[0b001] = 0.1;
        let b = Belief::new(mass).unwrap();
        let p = SensingPolicy::Myopic(MyopicPolicy { model: m, set_size: 1 });
        assert_eq!(p.evaluate(&b, 1).unwrap().1.channels(), &[1]);

        let m2 = identity(2).with_bandwidths(vec![2.0, 1.0]).unwrap();
        let b2 = Belief::new(vec![0.35, 0.15, 0.35, 0.15]).unwrap();
        // idle probabilities (0.3, 0.5)
        let (score, set) = MyopicPolicy { model: m2, set_size: 1 }.evaluate(&b2).unwrap();
        assert_eq!(set.channels(), &[0]);
        assert!((score - 0.6).abs() < 1e-12);
    }

    #[test]
    fn dump_round_trips_exactly() {
        let mut rng = RngStream::new(10, 0);
        let m = random_model(&mut rng, 3);
        let designs = vec![design(0.3), design(0.2), design(0.4)];
        let policy = solve_exact(&m, &designs, 3, RewardSpec::with_measurement_cost(4, 0.05).unwrap()).unwrap();
        let text = policy.dump();
        let back = ExactPolicy::<f64>::load(&text, 3).unwrap();
        for t in 1..=3 {
            for _ in 0..50 {
                let b = random_belief(&mut rng, 8);
                assert_eq!(policy.evaluate(&b, t).unwrap(), back.evaluate(&b, t).unwrap());
            }
        }
        assert_eq!(back.dump(), text);
        assert!(ExactPolicy::<f64>::load("1 4 0.0 0.0", 1).is_err());
    }

    #[test]
    fn stage_and_size_errors() {
        let m = identity(1);
        let policy = solve_exact(&m, &[design(0.2)], 2, RewardSpec::full_slot()).unwrap();
        assert!(policy.evaluate(&Belief::uniform(1).unwrap(), 0).is_err());
        assert!(policy.evaluate(&Belief::uniform(1).unwrap(), 3).is_err());
        let big = TransitionModel::factored(vec![0.5; 4], vec![0.5; 4], vec![1.0; 4]).unwrap();
        let designs = vec![design(0.2); 4];
        assert!(brute_force_value(&big, &designs, 2, &Belief::uniform(4).unwrap()).is_err());
        let tiny_cap = SolveOptions { alpha_cap: 3, ..SolveOptions::unpruned() };
        let pomdp = SensingPomdp::single_channel(identity(2), &[design(0.2), design(0.2)], RewardSpec::full_slot()).unwrap();
        assert!(matches!(pomdp.solve(4, &tiny_cap), Err(OsaError::Limit(_))));
        assert!(RewardSpec::with_measurement_cost(30, 0.05f64).is_err());
    }

    #[test]
    fn single_precision_solve() {
        let m = TransitionModel::factored(vec![0.2f32, 0.4], vec![0.8, 0.6], vec![1.0, 1.0]).unwrap();
        let d = (OperatingPoint::new(0.3f32, 0.05).unwrap(), AccessRule::follow_sensing());
        let policy = solve_exact(&m, &[d, d], 3, RewardSpec::full_slot()).unwrap();
        let b = Belief::uniform(2).unwrap();
        let bf = brute_force_value(&m, &[d, d], 3, &b).unwrap();
        assert!((policy.evaluate(&b, 1).unwrap().0 - bf).abs() < 1e-4);
    }
}
