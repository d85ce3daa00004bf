//! Deterministic synthetic multi-task benchmark.

pub mod config;
pub mod data;
pub mod mlp;
pub mod rng;
pub mod suite;

pub use config::{BenchConfig, SamplesPerClass};
pub use data::{generate_tasks, Sample, TaskDataset};
pub use mlp::{evaluate, fine_tune, pretrain, Mlp};
pub use rng::BenchRng;
pub use suite::{adr, run_suite, BenchReport, PairRow, PartnerRow, StrategyResult, SweepRow, UnseenReport};
