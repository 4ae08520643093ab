//! Closed-form sensor/access design for a single sensed channel.

use crate::error::{OsaError, Result};
use crate::numerics::Scalar;
use crate::sensor::{OperatingPoint, RocCurve};

/// Transmission probabilities `(f0, f1)` given the sensing outcome Θ = 0 (busy) or 1 (idle).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccessRule<S> {
    pub f0: S,
    pub f1: S,
}

impl<S: Scalar> AccessRule<S> {
    pub fn new(f0: S, f1: S) -> Result<Self> {
        for f in [f0, f1] {
            if !(f >= S::zero() && f <= S::one()) {
                return Err(OsaError::Invalid(format!("transmission probability {f} outside [0,1]")));
            }
        }
        Ok(AccessRule { f0, f1 })
    }

    /// Transmit exactly when the channel is declared idle.
    pub fn follow_sensing() -> Self {
        AccessRule { f0: S::zero(), f1: S::one() }
    }

    /// Transmit probability after outcome `theta`.
    pub fn given(&self, theta: bool) -> S {
        if theta {
            self.f1
        } else {
            self.f0
        }
    }
}

/// Maximum allowed conditional collision probability ζ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionBudget<S> {
    zeta: S,
}

impl<S: Scalar> CollisionBudget<S> {
    pub fn new(zeta: S) -> Result<Self> {
        if !(zeta > S::zero() && zeta < S::one()) {
            return Err(OsaError::Invalid(format!("collision budget {zeta} outside (0,1)")));
        }
        Ok(CollisionBudget { zeta })
    }

    pub fn zeta(&self) -> S {
        self.zeta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Aggressive,
    Boundary,
    Conservative,
}

fn boundary_tol<S: Scalar>() -> S {
    S::lit(1e-12).max(S::epsilon() * S::lit(4.0))
}

pub fn classify_region<S: Scalar>(delta: S, zeta: S) -> Region {
    if (delta - zeta).abs() <= boundary_tol() {
        Region::Boundary
    } else if delta < zeta {
        Region::Aggressive
    } else {
        Region::Conservative
    }
}

/// Best access rule for a fixed miss probability δ under budget ζ.
pub fn optimal_access_given_delta<S: Scalar>(delta: S, zeta: S) -> AccessRule<S> {
    match classify_region(delta, zeta) {
        Region::Boundary => AccessRule::follow_sensing(),
        Region::Aggressive => AccessRule { f0: (zeta - delta) / (S::one() - delta), f1: S::one() },
        Region::Conservative => AccessRule { f0: S::zero(), f1: zeta / delta },
    }
}

/// Conditional collision probability `(1-δ) f0 + δ f1`.
pub fn collision_probability<S: Scalar>(point: &OperatingPoint<S>, rule: &AccessRule<S>) -> S {
    (S::one() - point.delta) * rule.f0 + point.delta * rule.f1
}

/// Transmission probability given the channel is idle, `ε f0 + (1-ε) f1`.
pub fn instantaneous_throughput_factor<S: Scalar>(point: &OperatingPoint<S>, rule: &AccessRule<S>) -> S {
    point.epsilon * rule.f0 + (S::one() - point.epsilon) * rule.f1
}

/// Jointly optimal operating point and access rule: the curve point with δ = ζ and rule (0, 1).
///
/// The result depends only on the curve and ζ. When the curve already
/// reaches `P_D ≥ 1-ζ` at ε = 0 the point `(0, ζ)` is returned; it is a
/// randomization of the ε = 0 detector with the trivial one.
pub fn optimal_design<S: Scalar>(curve: &RocCurve<S>, zeta: S) -> Result<(OperatingPoint<S>, AccessRule<S>)> {
    CollisionBudget::new(zeta)?;
    let eps = curve.epsilon_for_pm(zeta)?;
    let point = OperatingPoint::new(eps, zeta)
        .map_err(|_| OsaError::InfeasiblePoint(format!("curve cannot reach miss probability {zeta}")))?;
    Ok((point, AccessRule::follow_sensing()))
}
