//! Fairness-aware dynamic recommendation: data preparation, a matrix
//! factorization recommender with BPR training, a differentiable ranking
//! relaxation, a disparity regularizer, incremental training strategies,
//! top-K evaluation and closed-form generalization bound calculators.

pub mod bounds;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fairness;
pub mod model;
pub mod ranking;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use bounds::{BoundInputs, BoundReport, CoefficientVector};
pub use checkpoint::{Checkpoint, RngCursor};
pub use data::{AttributeMapping, InputFormat, InteractionLog, InteractionRecord, PeriodDataset};
pub use error::{Error, Result};
pub use eval::{EvalConfig, Metrics, PeriodMetrics, Task};
pub use fairness::{DpdResult, FairnessBatch, FairnessLoss};
pub use model::{Adam, GradientSet, ModelParams, OptimizerState, Scorer, Side};
pub use ranking::{CandidateSet, RankingWorkspace};
pub use trainer::{BaseStrategy, HyperParams, Strategy, TrainingTrajectory};
pub use experiment::{DataSource, ExperimentConfig, OutputFormat, RunReport};
pub use synthetic::SyntheticConfig;
