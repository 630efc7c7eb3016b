//! Training, evaluation, verification and timing workflows.

pub mod cost;
pub mod evaluate;
pub mod gradcheck;
pub mod oracle;
pub mod report;
pub mod run;
pub mod tradeoff;
pub mod train;
pub mod windows;

pub use cost::{cost_ratio, polyfit, CostModel, Fit};
pub use evaluate::{evaluate, Dataset, EvalSummary, RegionWeights};
pub use gradcheck::{blend_gradient_check, BlendGradcheck, GradcheckSpec};
pub use oracle::{oracle_check, OracleReport};
pub use run::{OracleSpec, RunConfig, RunManifest};
pub use tradeoff::{tradeoff_sweep, RunRecord, TradeoffReport, TradeoffSpec};
pub use train::{train, train_from, LossPoint, TrainOutcome, TrainSpec};
