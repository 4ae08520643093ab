use osa::markov::{Belief, Sos, TransitionModel};
use osa::multichannel::{
    hypothesis_priors, independent_objective, mac_lp_access, myopic_channel_set, sp_strategy, ChannelSet,
};
use osa::numerics::RngStream;
use osa::sensor::{GaussianChannelParams, RocCurve};
use osa::sim::config::ExperimentConfig;

fn correlated_model() -> TransitionModel<f64> {
    ExperimentConfig::bundled("correlated").unwrap().true_model().unwrap()
}

fn random_belief(rng: &mut RngStream, states: usize) -> Belief<f64> {
    let w: Vec<f64> = (0..states).map(|_| rng.uniform().powi(3)).collect();
    let total: f64 = w.iter().sum();
    Belief::new(w.iter().map(|x| x / total).collect()).unwrap()
}

fn all_sets(n: usize, size: usize) -> Vec<ChannelSet> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| ChannelSet::new((0..n).filter(|c| m >> c & 1 == 1).collect(), n).unwrap())
        .collect()
}

#[test]
fn correlated_chain_rows() {
    let model = correlated_model();
    let idx = |s: &str| Sos::parse(s).unwrap().index();
    assert!((model.prob(idx("[0000]"), idx("[0111]")) - 0.6).abs() < 1e-15);
    assert!((model.prob(idx("[0111]"), idx("[1011]")) - 0.8).abs() < 1e-15);
    assert!((model.prob(idx("[1110]"), idx("[0111]")) - 0.8).abs() < 1e-15);
    assert_eq!(model.prob(idx("[1111]"), idx("[0000]")), 1.0);
    for from in 0..16 {
        let row: f64 = (0..16).map(|to| model.prob(from, to)).sum();
        assert!((row - 1.0).abs() < 1e-12);
    }
}

#[test]
fn hypothesis_priors_match_exhaustive_summation() {
    let model = correlated_model();
    let mut rng = RngStream::new(5, 0);
    for _ in 0..50 {
        let belief = random_belief(&mut rng, 16);
        for size in 1..=4 {
            for set in all_sets(4, size) {
                let prior = hypothesis_priors(&belief, &model, &set).unwrap();
                let mut brute = vec![0.0; set.num_patterns()];
                for from in 0..16 {
                    for to in 0..16 {
                        let s = Sos::from_index(to, 4);
                        let pattern =
                            set.channels().iter().enumerate().fold(0, |acc, (j, &c)| acc | (s.is_idle(c) as usize) << j);
                        brute[pattern] += belief.mass()[from] * model.prob(from, to);
                    }
                }
                for (a, b) in prior.iter().zip(&brute) {
                    assert!((a - b).abs() < 1e-12, "{set:?}: {prior:?} vs {brute:?}");
                }
            }
        }
    }
}

#[test]
fn mac_never_loses_to_sp_on_correlated_beliefs() {
    let model = correlated_model();
    let params = GaussianChannelParams::from_db(0.0, 10.0, 1).unwrap();
    let curves = vec![RocCurve::energy(params); 4];
    let mut rng = RngStream::new(6, 0);
    for _ in 0..40 {
        let belief = random_belief(&mut rng, 16);
        for set in all_sets(4, 3) {
            let designs = sp_strategy(&set, 0.05, &curves).unwrap();
            let points: Vec<_> = designs.iter().map(|d| d.0).collect();
            let rules: Vec<_> = designs.iter().map(|d| d.1).collect();
            let prior = hypothesis_priors(&belief, &model, &set).unwrap();
            let sp = independent_objective(&prior, &set, model.bandwidths(), &points, &rules);
            let mac = mac_lp_access(&belief, &model, &set, &points, 0.05).unwrap();
            assert!(mac.objective >= sp - 1e-9, "{set:?}: MAC {} < SP {sp}", mac.objective);
        }
    }
}

#[test]
fn myopic_set_from_the_all_busy_state() {
    // from [0000] the chain moves to [0111] w.p. 0.6, so channels 2..4 are most likely idle
    let model = correlated_model();
    let belief = Belief::point(Sos::parse("[0000]").unwrap());
    let set = myopic_channel_set(&belief, &model, 3).unwrap();
    assert_eq!(set.channels(), &[1, 2, 3]);
}
