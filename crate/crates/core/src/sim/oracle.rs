//! Randomized cross-check of the exact solver against belief-tree search.

use crate::error::Result;
use crate::markov::{Belief, TransitionModel};
use crate::numerics::RngStream;
use crate::pomdp::{brute_force_value, solve_exact, RewardSpec};
use crate::sensor::OperatingPoint;
use crate::separation::AccessRule;

const ORACLE_STREAM: u64 = 0x0ac1e;

/// Model, per-channel designs and initial belief of one random problem.
pub type Instance = (TransitionModel<f64>, Vec<(OperatingPoint<f64>, AccessRule<f64>)>, Belief<f64>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    pub max_deviation: f64,
}

/// Random model (factored or joint), designs and initial belief for `n` channels.
pub fn random_instance(
    rng: &mut RngStream,
    n: usize,
) -> Result<Instance> {
    let bandwidths: Vec<f64> = (0..n).map(|_| 0.5 + rng.uniform()).collect();
    let ns = 1usize << n;
    let model = if rng.bernoulli(0.5) {
        let alpha = (0..n).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
        let beta = (0..n).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
        TransitionModel::factored(alpha, beta, bandwidths)?
    } else {
        let mut m = Vec::with_capacity(ns * ns);
        for _ in 0..ns {
            let row: Vec<f64> = (0..ns).map(|_| 0.05 + rng.uniform()).collect();
            let total: f64 = row.iter().sum();
            m.extend(row.iter().map(|p| p / total));
        }
        TransitionModel::full(n, m, bandwidths)?
    };
    let designs = (0..n)
        .map(|_| {
            let point = OperatingPoint::new(0.5 * rng.uniform(), 0.3 * rng.uniform())?;
            let rule = AccessRule::new(rng.uniform(), rng.uniform())?;
            Ok((point, rule))
        })
        .collect::<Result<Vec<_>>>()?;
    let w: Vec<f64> = (0..ns).map(|_| rng.uniform() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    let belief = Belief::new(w.iter().map(|x| x / total).collect())?;
    Ok((model, designs, belief))
}

/// Solves `instances` random problems with `N ≤ max_n`, `T ≤ max_t` and
/// reports the largest gap between the solver's value and brute force.
pub fn run_oracle(max_n: usize, max_t: usize, instances: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = RngStream::derive(seed, ORACLE_STREAM, 0);
    let mut max_deviation: f64 = 0.0;
    for i in 0..instances {
        let n = 1 + i % max_n.max(1);
        let horizon = 1 + (i / max_n.max(1)) % max_t.max(1);
        let (model, designs, belief) = random_instance(&mut rng, n)?;
        let policy = solve_exact(&model, &designs, horizon, RewardSpec::full_slot())?;
        let exact = policy.evaluate(&belief, 1)?.0;
        let brute = brute_force_value(&model, &designs, horizon, &belief)?;
        max_deviation = max_deviation.max((exact - brute).abs());
    }
    Ok(OracleReport { instances, max_deviation })
}
