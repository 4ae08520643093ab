//! Aggregated statistics of a batch of episodes.

use super::episode::Episode;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Running totals over episodes. Counts are exact, and reals are sums, so
/// merging batches in a fixed order reproduces a serial run.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub horizon: usize,
    pub episodes: u64,
    /// Sum and sum of squares of per-episode total reward.
    pub reward_sum: f64,
    pub reward_sq_sum: f64,
    /// Per channel: transmissions on a busy channel, and slots the channel was sensed busy.
    pub collisions: Vec<u64>,
    pub busy_opportunities: Vec<u64>,
    /// Per slot, pooled over sensed channels.
    pub idle_sensed: Vec<u64>,
    pub false_alarms: Vec<u64>,
    pub busy_sensed: Vec<u64>,
    pub misses: Vec<u64>,
    pub slot_reward: Vec<f64>,
    pub sync_violations: u64,
    pub resets: u64,
}

impl Metrics {
    pub fn new(channels: usize, horizon: usize) -> Self {
        Metrics {
            horizon,
            episodes: 0,
            reward_sum: 0.0,
            reward_sq_sum: 0.0,
            collisions: vec![0; channels],
            busy_opportunities: vec![0; channels],
            idle_sensed: vec![0; horizon],
            false_alarms: vec![0; horizon],
            busy_sensed: vec![0; horizon],
            misses: vec![0; horizon],
            slot_reward: vec![0.0; horizon],
            sync_violations: 0,
            resets: 0,
        }
    }

    pub fn record(&mut self, episode: &Episode) {
        let total = episode.total_reward();
        self.episodes += 1;
        self.reward_sum += total;
        self.reward_sq_sum += total * total;
        self.sync_violations += episode.sync_violations;
        self.resets += episode.resets;
        for slot in &episode.slots {
            let i = slot.t - 1;
            self.slot_reward[i] += slot.reward;
            for (j, &c) in slot.chosen.channels().iter().enumerate() {
                if slot.true_state.is_idle(c) {
                    self.idle_sensed[i] += 1;
                    self.false_alarms[i] += !slot.theta[j] as u64;
                } else {
                    self.busy_sensed[i] += 1;
                    self.misses[i] += slot.theta[j] as u64;
                    self.busy_opportunities[c] += 1;
                    self.collisions[c] += slot.collisions[j] as u64;
                }
            }
        }
    }

    /// Adds `other`'s totals. Merging in a fixed order keeps results reproducible.
    pub fn merge(&mut self, other: &Metrics) {
        assert_eq!(self.horizon, other.horizon, "merging metrics of different horizons");
        self.episodes += other.episodes;
        self.reward_sum += other.reward_sum;
        self.reward_sq_sum += other.reward_sq_sum;
        add(&mut self.collisions, &other.collisions);
        add(&mut self.busy_opportunities, &other.busy_opportunities);
        add(&mut self.idle_sensed, &other.idle_sensed);
        add(&mut self.false_alarms, &other.false_alarms);
        add(&mut self.busy_sensed, &other.busy_sensed);
        add(&mut self.misses, &other.misses);
        for (a, b) in self.slot_reward.iter_mut().zip(&other.slot_reward) {
            *a += b;
        }
        self.sync_violations += other.sync_violations;
        self.resets += other.resets;
    }

    /// Reward per slot, the Monte Carlo estimate of `V_1/T`.
    pub fn throughput(&self) -> f64 {
        self.reward_sum / (self.episodes as f64 * self.horizon as f64)
    }

    /// Half-width of the 95% confidence interval on [`throughput`](Self::throughput).
    pub fn throughput_ci(&self) -> f64 {
        let n = self.episodes as f64;
        if n < 2.0 {
            return f64::INFINITY;
        }
        let mean = self.reward_sum / n;
        let var = ((self.reward_sq_sum - n * mean * mean) / (n - 1.0)).max(0.0);
        Z95 * (var / n).sqrt() / self.horizon as f64
    }

    /// Collision estimate for `channel`, or `None` if it was never sensed busy.
    pub fn collision_rate(&self, channel: usize) -> Option<f64> {
        rate(self.collisions[channel], self.busy_opportunities[channel])
    }

    /// `ζ + 3σ` with the binomial σ of the channel's estimate at probability ζ.
    pub fn collision_bound(&self, channel: usize, zeta: f64) -> f64 {
        let n = self.busy_opportunities[channel].max(1) as f64;
        zeta + 3.0 * (zeta * (1.0 - zeta) / n).sqrt()
    }

    /// Whether every channel's collision estimate respects `ζ + 3σ`.
    pub fn collisions_within(&self, zeta: f64) -> bool {
        (0..self.collisions.len()).all(|c| self.collision_rate(c).is_none_or(|r| r <= self.collision_bound(c, zeta)))
    }

    /// Estimated false-alarm probability in slot `t` (1-based).
    pub fn pfa(&self, t: usize) -> Option<f64> {
        rate(self.false_alarms[t - 1], self.idle_sensed[t - 1])
    }

    /// Estimated miss probability in slot `t` (1-based).
    pub fn pm(&self, t: usize) -> Option<f64> {
        rate(self.misses[t - 1], self.busy_sensed[t - 1])
    }

    /// Half-width of the 95% interval on [`pfa`](Self::pfa).
    pub fn pfa_ci(&self, t: usize) -> Option<f64> {
        let n = self.idle_sensed[t - 1];
        self.pfa(t).map(|p| Z95 * (p * (1.0 - p) / n as f64).sqrt())
    }
}

fn add(a: &mut [u64], b: &[u64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn rate(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::Sos;
    use crate::multichannel::ChannelSet;
    use crate::sim::episode::SlotTrace;

    fn slot(t: usize, state: &str, channel: usize, theta: bool, access: bool) -> SlotTrace {
        let true_state = Sos::parse(state).unwrap();
        let idle = true_state.is_idle(channel);
        SlotTrace {
            t,
            true_state,
            chosen: ChannelSet::single(channel),
            theta: vec![theta],
            access: vec![access],
            acks: vec![access && idle],
            collisions: vec![access && !idle],
            reward: (access && idle) as u8 as f64,
        }
    }

    #[test]
    fn counts_and_rates() {
        let a = Episode { slots: vec![slot(1, "[10]", 0, true, true), slot(2, "[10]", 1, true, true)], ..Default::default() };
        let b = Episode { slots: vec![slot(1, "[01]", 0, false, false), slot(2, "[11]", 1, false, false)], ..Default::default() };
        let mut m = Metrics::new(2, 2);
        m.record(&a);
        let mut other = Metrics::new(2, 2);
        other.record(&b);
        m.merge(&other);
        assert_eq!(m.episodes, 2);
        assert_eq!(m.throughput(), 0.25);
        assert_eq!(m.collision_rate(0), Some(0.0));
        assert_eq!(m.collision_rate(1), Some(1.0));
        assert_eq!(m.pfa(1), Some(0.0));
        assert_eq!(m.pm(1), Some(0.0));
        assert_eq!(m.pfa(2), Some(1.0));
        assert_eq!(m.pm(2), Some(1.0));
        assert!(!m.collisions_within(0.05));
        assert!((m.throughput_ci() - Z95 * (0.5f64 / 2.0).sqrt() / 2.0).abs() < 1e-15);
    }
}
