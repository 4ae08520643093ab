//! One episode of `T` slots: the primary network evolves under the true model
//! while the secondary user senses, transmits and tracks its belief under the
//! assumed one.

use super::strategy::{SlotPlan, Strategy};
use crate::error::Result;
use crate::markov::{bayes_update, stationary, Belief, Sos, TransitionModel};
use crate::multichannel::ChannelSet;
use crate::numerics::RngStream;
use crate::sensor::sample_energy;

const STATE_STREAM: u64 = 0x51a7e;
const MEASUREMENT_STREAM: u64 = 0xe4e6;
const ACCESS_STREAM: u64 = 0xacce55;

/// Largest belief discrepancy tolerated between transmitter and receiver.
pub const SYNC_TOLERANCE: f64 = 1e-12;

/// What happened in one slot. Per-channel vectors follow the order of `chosen`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotTrace {
    pub t: usize,
    pub true_state: Sos,
    pub chosen: ChannelSet,
    /// Sensing outcomes Θ (`true` = sensed idle).
    pub theta: Vec<bool>,
    /// Transmission decisions Φ.
    pub access: Vec<bool>,
    /// Acknowledgements K = SΦ.
    pub acks: Vec<bool>,
    /// Transmissions on a busy channel.
    pub collisions: Vec<bool>,
    pub reward: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Episode {
    pub slots: Vec<SlotTrace>,
    /// Slots where the receiver's belief drifted from the transmitter's.
    pub sync_violations: u64,
    /// Zero-probability acknowledgements that forced a belief reset.
    pub resets: u64,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.slots.iter().map(|s| s.reward).sum()
    }
}

/// Fixed inputs shared by every episode of a run.
#[derive(Clone)]
pub struct EpisodeSetup {
    pub truth: TransitionModel<f64>,
    pub strategy: Strategy,
    /// Distribution of the state preceding slot 1.
    pub initial_state: Vec<f64>,
    /// Belief carried into slot 1.
    pub initial_belief: Belief<f64>,
    pub horizon: usize,
}

impl EpisodeSetup {
    /// Stationary defaults: the true chain for the initial state, the assumed
    /// chain for the initial belief.
    pub fn stationary(truth: TransitionModel<f64>, strategy: Strategy, horizon: usize) -> Result<Self> {
        let initial_state = stationary(&truth)?.into_mass();
        let initial_belief = stationary(&strategy.setup().assumed)?;
        Ok(EpisodeSetup { truth, strategy, initial_state, initial_belief, horizon })
    }
}

/// Simulates trial number `trial`. Each trial draws from its own streams, and
/// the measurement stream produces every channel's energy every slot, so
/// strategies run with the same `(seed, trial)` see identical randomness.
pub fn run_episode(setup: &EpisodeSetup, seed: u64, trial: u64) -> Result<Episode> {
    let mut state_rng = RngStream::derive(seed, STATE_STREAM, trial);
    let mut meas_rng = RngStream::derive(seed, MEASUREMENT_STREAM, trial);
    let mut access_rng = RngStream::derive(seed, ACCESS_STREAM, trial);
    let truth = &setup.truth;
    let strategy = &setup.strategy;
    let assumed = &strategy.setup().assumed;
    let params = &strategy.setup().params;
    let n = truth.channels();
    let time_factor = strategy.setup().time_factor;

    let mut state = truth.sample_state(&setup.initial_state, &mut state_rng);
    let mut belief = setup.initial_belief.clone();
    let mut receiver = setup.initial_belief.clone();
    let mut episode = Episode { slots: Vec::with_capacity(setup.horizon), ..Default::default() };
    let mut energies = vec![0.0; n];

    for t in 1..=setup.horizon {
        let plan = strategy.plan(&belief, t)?;
        state = truth.sample_next(state, &mut state_rng);
        let sos = Sos::from_index(state, n);
        for (c, e) in energies.iter_mut().enumerate() {
            *e = sample_energy(&params[c], !sos.is_idle(c), &mut meas_rng);
        }
        let sensed: Vec<f64> = plan.set.channels().iter().map(|&c| energies[c]).collect();
        let theta = plan.sensor.decide(&sensed);
        let pattern = theta.iter().enumerate().fold(0usize, |acc, (j, &idle)| acc | (idle as usize) << j);

        let width = plan.set.len();
        let mut access = Vec::with_capacity(width);
        let mut acks = Vec::with_capacity(width);
        let mut collisions = Vec::with_capacity(width);
        let mut ack_pattern = 0usize;
        let mut reward = 0.0;
        for (j, &c) in plan.set.channels().iter().enumerate() {
            let phi = access_rng.uniform() < plan.rule.prob(j, pattern);
            let idle = sos.is_idle(c);
            let ack = phi && idle;
            if ack {
                ack_pattern |= 1 << j;
                reward += truth.bandwidths()[c] * time_factor;
            }
            access.push(phi);
            acks.push(ack);
            collisions.push(phi && !idle);
        }

        if t < setup.horizon {
            belief = update_or_reset(&belief, assumed, &plan, ack_pattern, &mut episode.resets)?;
            let mut ignored = 0;
            let receiver_plan = strategy.plan(&receiver, t)?;
            receiver = update_or_reset(&receiver, assumed, &receiver_plan, ack_pattern, &mut ignored)?;
            if receiver_plan.set != plan.set || receiver.max_abs_diff(&belief) > SYNC_TOLERANCE {
                episode.sync_violations += 1;
            }
        }

        episode.slots.push(SlotTrace { t, true_state: sos, chosen: plan.set, theta, access, acks, collisions, reward });
    }
    Ok(episode)
}

pub(crate) fn update_or_reset(
    belief: &Belief<f64>,
    assumed: &TransitionModel<f64>,
    plan: &SlotPlan,
    ack_pattern: usize,
    resets: &mut u64,
) -> Result<Belief<f64>> {
    match bayes_update(belief, assumed, &plan.kernel, ack_pattern) {
        Ok(b) => Ok(b),
        Err(crate::OsaError::ZeroProbabilityObservation) => {
            log::warn!("acknowledgement impossible under the assumed model; resetting belief");
            *resets += 1;
            stationary(assumed)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::GaussianChannelParams;
    use crate::sim::config::StrategyKind;
    use crate::sim::strategy::StrategySetup;

    fn base_setup(kind: StrategyKind, set_size: usize, horizon: usize) -> EpisodeSetup {
        let truth = TransitionModel::factored(vec![0.2, 0.4, 0.6], vec![0.8, 0.6, 0.4], vec![1.0; 3]).unwrap();
        let strategy = Strategy::new(StrategySetup {
            kind,
            set_size,
            assumed: truth.clone(),
            params: vec![GaussianChannelParams::from_db(0.0, 5.0, 10).unwrap(); 3],
            zeta: 0.05,
            delta: 0.05,
            horizon,
            time_factor: 1.0,
            calibration_trials: 10_000,
            prune_tolerance: 1e-9,
            seed: 3,
        })
        .unwrap();
        EpisodeSetup::stationary(truth, strategy, horizon).unwrap()
    }

    #[test]
    fn acks_are_idle_transmissions() {
        let setup = base_setup(StrategyKind::SeparationExact, 1, 10);
        for trial in 0..50 {
            let ep = run_episode(&setup, 9, trial).unwrap();
            assert_eq!(ep.slots.len(), 10);
            assert_eq!(ep.sync_violations, 0);
            assert_eq!(ep.resets, 0);
            for s in &ep.slots {
                for (j, &c) in s.chosen.channels().iter().enumerate() {
                    let idle = s.true_state.is_idle(c);
                    assert_eq!(s.acks[j], idle && s.access[j]);
                    assert_eq!(s.collisions[j], !idle && s.access[j]);
                }
                let earned = s.acks.iter().filter(|&&k| k).count() as f64;
                assert_eq!(s.reward, earned);
            }
        }
    }

    #[test]
    fn episodes_are_reproducible() {
        let setup = base_setup(StrategyKind::Mac, 2, 6);
        let a = run_episode(&setup, 4, 17).unwrap();
        let b = run_episode(&setup, 4, 17).unwrap();
        let c = run_episode(&setup, 4, 18).unwrap();
        assert_eq!(a.slots, b.slots);
        assert_ne!(a.slots, c.slots);
    }

    #[test]
    fn always_idle_channel_pays_every_slot() {
        // β = 1 from an idle start keeps the channel idle forever; sensing then
        // never fires the degenerate fast path wrongly and every slot earns B.
        let truth = TransitionModel::factored(vec![0.5], vec![1.0], vec![2.0]).unwrap();
        let strategy = Strategy::new(StrategySetup {
            kind: StrategyKind::SeparationMyopic,
            set_size: 1,
            assumed: truth.clone(),
            params: vec![GaussianChannelParams::from_db(0.0, 5.0, 10).unwrap()],
            zeta: 0.05,
            delta: 0.05,
            horizon: 8,
            time_factor: 1.0,
            calibration_trials: 10_000,
            prune_tolerance: 1e-9,
            seed: 1,
        })
        .unwrap();
        let setup = EpisodeSetup {
            truth,
            strategy,
            initial_state: vec![0.0, 1.0],
            initial_belief: Belief::new(vec![0.0, 1.0]).unwrap(),
            horizon: 8,
        };
        for trial in 0..20 {
            let ep = run_episode(&setup, 1, trial).unwrap();
            assert!(ep.slots.iter().all(|s| s.reward == 2.0));
        }
    }
}
