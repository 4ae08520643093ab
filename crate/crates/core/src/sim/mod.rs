//! Monte Carlo harness: experiment configuration, strategies, episode
//! simulation and metric collection.

pub mod config;
pub mod episode;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod strategy;

pub use config::{ExperimentConfig, StrategyKind, SweepPoint};
pub use episode::{run_episode, Episode, EpisodeSetup, SlotTrace};
pub use experiment::{run_experiment, run_point, write_csvs, PointResult};
pub use metrics::Metrics;
pub use oracle::{run_oracle, OracleReport};
pub use strategy::{SlotPlan, SlotSensor, Strategy, StrategySetup};
