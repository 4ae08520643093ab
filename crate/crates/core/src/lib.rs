//! Opportunistic spectrum access: Markov occupancy models, detector design
//! under a collision constraint, finite-horizon sensing policies, multichannel
//! strategies and a Monte Carlo harness.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`. Sampling-based code (composite detection,
//! simulation) is `f64` only.

// NaN-rejecting range checks read best as `!(x > 0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod markov;
pub mod multichannel;
pub mod numerics;
pub mod pomdp;
pub mod sensor;
pub mod separation;
pub mod sim;

pub use error::{OsaError, Result};
pub use numerics::Scalar;

pub type Belief = markov::Belief<f64>;
pub type TransitionModel = markov::TransitionModel<f64>;
pub type OperatingPoint = sensor::OperatingPoint<f64>;
pub type RocCurve = sensor::RocCurve<f64>;
pub type GaussianChannelParams = sensor::GaussianChannelParams<f64>;
pub type AccessRule = separation::AccessRule<f64>;
pub type CollisionBudget = separation::CollisionBudget<f64>;
pub type SingleChannelAction = markov::SingleChannelAction<f64>;
pub type JointAccessRule = multichannel::JointAccessRule<f64>;
pub type ConditionalOccupancy = multichannel::ConditionalOccupancy<f64>;
pub type SensingErrorModel = multichannel::SensingErrorModel<f64>;
pub type MultiChannelAction = multichannel::MultiChannelAction<f64>;
pub type RewardSpec = pomdp::RewardSpec<f64>;
pub type SensingPomdp = pomdp::SensingPomdp<f64>;
pub type ValueFunction = pomdp::ValueFunction<f64>;
pub type ExactPolicy = pomdp::ExactPolicy<f64>;
pub type SensingPolicy = pomdp::SensingPolicy<f64>;
