//! Detectors: operating points, ROC curves, the Gaussian energy detector
//! and the composite multichannel likelihood-ratio test.

mod composite;

pub use composite::{
    calibrate_composite, composite_llr, composite_lrt, composite_lrt_energies, Calibration, CompositeSensor, SlotDetector,
    EnergyBank, ErrorTable,
};

use rand_distr::{ChiSquared, Distribution};

use crate::error::{OsaError, Result};
use crate::numerics::{invert_monotone, reg_gamma_lower, reg_gamma_upper, RngStream, Scalar};

/// False-alarm probability ε (declare busy | idle) and miss probability δ (declare idle | busy).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint<S> {
    pub epsilon: S,
    pub delta: S,
}

impl<S: Scalar> OperatingPoint<S> {
    /// Requires `0 ≤ ε ≤ 1-δ` (up to `S::tol()`).
    pub fn new(epsilon: S, delta: S) -> Result<Self> {
        for p in [epsilon, delta] {
            if !(p >= S::zero() && p <= S::one()) {
                return Err(OsaError::Invalid(format!("error probability {p} outside [0,1]")));
            }
        }
        if epsilon > S::one() - delta + S::tol() {
            return Err(OsaError::InfeasiblePoint(format!("ε={epsilon} exceeds 1-δ={}", S::one() - delta)));
        }
        Ok(OperatingPoint { epsilon, delta })
    }

    pub fn detection(&self) -> S {
        S::one() - self.delta
    }
}

/// Noise power σ0², primary signal power σ1² (both linear) and samples per slot M.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianChannelParams<S> {
    pub noise: S,
    pub signal: S,
    pub samples: u32,
}

impl<S: Scalar> GaussianChannelParams<S> {
    pub fn new(noise: S, signal: S, samples: u32) -> Result<Self> {
        if !(noise > S::zero() && signal > S::zero() && noise.is_finite() && signal.is_finite()) {
            return Err(OsaError::Invalid("noise and signal powers must be positive".into()));
        }
        if samples == 0 {
            return Err(OsaError::Invalid("at least one measurement per slot is required".into()));
        }
        Ok(GaussianChannelParams { noise, signal, samples })
    }

    pub fn from_db(noise_db: S, signal_db: S, samples: u32) -> Result<Self> {
        Self::new(db_to_linear(noise_db), db_to_linear(signal_db), samples)
    }

    fn half_m(&self) -> S {
        S::lit(self.samples as f64 * 0.5)
    }

    /// Per-sample variance when the channel is idle or busy.
    pub fn variance(&self, busy: bool) -> S {
        if busy {
            self.noise + self.signal
        } else {
            self.noise
        }
    }
}

pub fn db_to_linear<S: Scalar>(db: S) -> S {
    S::lit(10.0).powf(db / S::lit(10.0))
}

/// Operating point of the test "busy iff ‖Y‖² ≥ η".
pub fn energy_roc<S: Scalar>(params: &GaussianChannelParams<S>, eta: S) -> Result<OperatingPoint<S>> {
    if !(eta >= S::zero()) {
        return Err(OsaError::Domain(format!("threshold {eta} must be nonnegative")));
    }
    let two = S::lit(2.0);
    let delta = reg_gamma_lower(params.half_m(), eta / (two * params.variance(true)))?;
    let epsilon = reg_gamma_upper(params.half_m(), eta / (two * params.noise))?;
    Ok(OperatingPoint { epsilon, delta })
}

/// Threshold η with miss probability `target_pm`.
pub fn threshold_for_pm<S: Scalar>(params: &GaussianChannelParams<S>, target_pm: S) -> Result<S> {
    if !(target_pm > S::zero() && target_pm < S::one()) {
        return Err(OsaError::Domain(format!("target miss probability {target_pm} outside (0,1)")));
    }
    let pm = |eta: S| energy_roc(params, eta).map(|p| p.delta).unwrap_or(S::nan());
    let hi = grow_bracket(params, |eta| pm(eta) >= target_pm)?;
    invert_monotone(pm, target_pm, S::zero(), hi)
}

/// Threshold η with false-alarm probability `target_pfa`.
pub fn threshold_for_pfa<S: Scalar>(params: &GaussianChannelParams<S>, target_pfa: S) -> Result<S> {
    if !(target_pfa > S::zero() && target_pfa < S::one()) {
        return Err(OsaError::Domain(format!("target false-alarm probability {target_pfa} outside (0,1)")));
    }
    let pfa = |eta: S| energy_roc(params, eta).map(|p| p.epsilon).unwrap_or(S::nan());
    let hi = grow_bracket(params, |eta| pfa(eta) <= target_pfa)?;
    invert_monotone(pfa, target_pfa, S::zero(), hi)
}

fn grow_bracket<S: Scalar>(params: &GaussianChannelParams<S>, done: impl Fn(S) -> bool) -> Result<S> {
    let mut hi = S::lit(8.0) * params.variance(true) * S::lit(params.samples as f64);
    for _ in 0..2000 {
        if done(hi) {
            return Ok(hi);
        }
        hi = hi * S::lit(2.0);
        if !hi.is_finite() {
            break;
        }
    }
    Err(OsaError::Bracket { target: f64::NAN, f_lo: 0.0, f_hi: hi.as_f64() })
}

/// Best achievable detection-versus-false-alarm frontier.
#[derive(Clone, Debug, PartialEq)]
pub enum RocCurve<S> {
    EnergyDetector(GaussianChannelParams<S>),
    /// Knots `(ε, P_D)` of the upper concave hull, sorted, from `(0, ·)` to `(1, 1)`.
    PiecewiseLinear(Vec<(S, S)>),
}

impl<S: Scalar> RocCurve<S> {
    pub fn energy(params: GaussianChannelParams<S>) -> Self {
        RocCurve::EnergyDetector(params)
    }

    /// Upper concave hull of the knots together with `(0,0)` and `(1,1)`.
    /// Knots falling strictly under the hull are dropped with a warning.
    pub fn piecewise_linear(knots: Vec<(S, S)>) -> Result<Self> {
        for &(e, d) in &knots {
            if !(e >= S::zero() && e <= S::one() && d >= S::zero() && d <= S::one()) {
                return Err(OsaError::Invalid(format!("ROC knot ({e}, {d}) outside the unit square")));
            }
        }
        let mut pts = knots.clone();
        pts.push((S::zero(), S::zero()));
        pts.push((S::one(), S::one()));
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.partial_cmp(&a.1).unwrap()));
        pts.dedup_by(|b, a| a.0 == b.0);
        let mut hull: Vec<(S, S)> = Vec::with_capacity(pts.len());
        for p in pts {
            while hull.len() >= 2 {
                let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                // drop b unless it lies strictly above the chord a→p
                let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
                if cross >= S::zero() {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        let dropped = knots
            .iter()
            .filter(|k| {
                let on = hull.iter().any(|h| h.0 == k.0 && h.1 == k.1);
                !on && piecewise_eval(&hull, k.0) > k.1 + S::tol()
            })
            .count();
        if dropped > 0 {
            log::warn!("ROC knots are not concave; {dropped} knot(s) replaced by the concave hull");
        }
        Ok(RocCurve::PiecewiseLinear(hull))
    }

    /// `P_D,max(ε)`.
    pub fn pd_max(&self, epsilon: S) -> S {
        if epsilon <= S::zero() {
            return match self {
                RocCurve::EnergyDetector(_) => S::zero(),
                RocCurve::PiecewiseLinear(k) => k[0].1,
            };
        }
        if epsilon >= S::one() {
            return S::one();
        }
        match self {
            RocCurve::EnergyDetector(p) => match threshold_for_pfa(p, epsilon).and_then(|eta| energy_roc(p, eta)) {
                Ok(pt) => pt.detection(),
                Err(_) => S::nan(),
            },
            RocCurve::PiecewiseLinear(k) => piecewise_eval(k, epsilon),
        }
    }

    /// Smallest ε whose curve point has miss probability at most δ.
    pub fn epsilon_for_pm(&self, delta: S) -> Result<S> {
        if !(delta >= S::zero() && delta <= S::one()) {
            return Err(OsaError::Domain(format!("miss probability {delta} outside [0,1]")));
        }
        if delta == S::one() {
            return Ok(S::zero());
        }
        match self {
            RocCurve::EnergyDetector(p) => {
                if delta == S::zero() {
                    return Ok(S::one());
                }
                let eta = threshold_for_pm(p, delta)?;
                Ok(energy_roc(p, eta)?.epsilon)
            }
            RocCurve::PiecewiseLinear(k) => {
                let target = S::one() - delta;
                if k[0].1 >= target {
                    return Ok(S::zero());
                }
                for w in k.windows(2) {
                    let ((e0, d0), (e1, d1)) = (w[0], w[1]);
                    if d1 >= target {
                        if d1 == target {
                            return Ok(e1);
                        }
                        return Ok(e0 + (e1 - e0) * (target - d0) / (d1 - d0));
                    }
                }
                Ok(S::one())
            }
        }
    }

    /// Whether `(ε, 1-δ)` lies between the diagonal and the curve.
    pub fn is_feasible(&self, point: &OperatingPoint<S>) -> bool {
        let pd = point.detection();
        pd >= point.epsilon - S::tol() && pd <= self.pd_max(point.epsilon) + S::tol()
    }
}

fn piecewise_eval<S: Scalar>(knots: &[(S, S)], x: S) -> S {
    for w in knots.windows(2) {
        let ((e0, d0), (e1, d1)) = (w[0], w[1]);
        if x <= e1 {
            if e1 == e0 {
                return d1;
            }
            return d0 + (d1 - d0) * (x - e0) / (e1 - e0);
        }
    }
    knots[knots.len() - 1].1
}

/// Use detector `first` with probability `p` and `second` otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Randomization<S> {
    pub first: OperatingPoint<S>,
    pub second: OperatingPoint<S>,
    pub p: S,
}

/// Expresses an operating point under the curve as a mixture of two boundary detectors.
///
/// Points on the curve are returned as themselves (`p = 1`), except that a
/// point inside a piecewise-linear segment mixes the two bracketing knots.
/// Interior points mix a curve point with the always-busy detector `(1, 1)`;
/// when that chord would leave the region they mix a curve point with the
/// always-idle detector `(0, 0)` instead.
pub fn randomized_point<S: Scalar>(curve: &RocCurve<S>, point: &OperatingPoint<S>) -> Result<Randomization<S>> {
    if !curve.is_feasible(point) {
        return Err(OsaError::InfeasiblePoint(format!(
            "(ε={}, δ={}) is outside the achievable region",
            point.epsilon, point.delta
        )));
    }
    let (x, y) = (point.epsilon, point.detection());
    let on = |e: S| OperatingPoint { epsilon: e, delta: S::one() - curve.pd_max(e) };
    let lin_tol = S::lit(1e-12).max(S::epsilon() * S::lit(16.0));
    if y >= curve.pd_max(x) - lin_tol {
        if let RocCurve::PiecewiseLinear(k) = curve {
            if let Some(w) = k.windows(2).find(|w| w[0].0 < x && x < w[1].0) {
                let (a, b) = (w[0], w[1]);
                return Ok(Randomization {
                    first: OperatingPoint { epsilon: a.0, delta: S::one() - a.1 },
                    second: OperatingPoint { epsilon: b.0, delta: S::one() - b.1 },
                    p: (x - b.0) / (a.0 - b.0),
                });
            }
        }
        return Ok(Randomization { first: *point, second: *point, p: S::one() });
    }
    let one = S::one();
    // chord through (1,1)
    let slope = (one - y) / (one - x);
    let line = |e: S| one - slope * (one - e);
    if curve.pd_max(S::zero()) < line(S::zero()) {
        let e1 = invert_monotone(|e| curve.pd_max(e) - line(e), S::zero(), S::zero(), x)?;
        return Ok(Randomization {
            first: on(e1),
            second: OperatingPoint { epsilon: one, delta: S::zero() },
            p: (x - one) / (e1 - one),
        });
    }
    let origin = OperatingPoint { epsilon: S::zero(), delta: one };
    if x <= S::zero() {
        let top = on(S::zero());
        return Ok(Randomization { first: top, second: origin, p: y / top.detection() });
    }
    // chord through (0,0)
    let slope = y / x;
    let g = |e: S| curve.pd_max(e) - slope * e;
    let e2 = if g(one) >= S::zero() { one } else { invert_monotone(g, S::zero(), x, one)? };
    Ok(Randomization { first: origin, second: on(e2), p: (x - e2) / (S::zero() - e2) })
}

/// Draws a sensing outcome Θ (`true` = declared idle) for a channel in the given state.
pub fn sense_single<S: Scalar>(idle: bool, point: &OperatingPoint<S>, rng: &mut RngStream) -> bool {
    if idle {
        !rng.bernoulli(point.epsilon.as_f64())
    } else {
        rng.bernoulli(point.delta.as_f64())
    }
}

/// Draws the slot energy ‖Y‖² of `params.samples` zero-mean Gaussian measurements.
pub fn sample_energy(params: &GaussianChannelParams<f64>, busy: bool, rng: &mut RngStream) -> f64 {
    params.variance(busy) * sample_chi_squared(params.samples, rng)
}

/// Standard χ² draw with `dof` degrees of freedom.
pub fn sample_chi_squared(dof: u32, rng: &mut RngStream) -> f64 {
    if dof <= 4 {
        (0..dof).map(|_| rng.standard_normal().powi(2)).sum()
    } else {
        ChiSquared::new(dof as f64).expect("positive degrees of freedom").sample(rng)
    }
}

/// Energy test outcome Θ: `true` (idle) iff ‖Y‖² < η.
pub fn energy_decision(energy: f64, eta: f64) -> bool {
    energy < eta
}
