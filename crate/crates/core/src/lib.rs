//! Execution-based metrics and verifiable rewards for Text-to-SQL.
//!
//! The crate is layered bottom-up:
//!
//! * [`table`]: result tables and the canonical cell order.
//! * [`executor`]: read-only SQLite execution with deadlines and a cache.
//! * [`metrics`]: classic and refined execution accuracy, cell precision,
//!   cell recall and tuple cardinality.
//! * [`rewards`]: format reward, SQL extraction and composite rewards.
//! * [`advantage`]: group, batch and unscaled advantage normalization.
//! * [`dataset`]: benchmark and prediction files, schemas and prompts.
//! * [`eval`]: batch evaluation reports and metric-disagreement analysis.
//! * [`service`]: the HTTP scoring service.

pub mod advantage;
pub mod dataset;
pub mod eval;
pub mod executor;
pub mod metrics;
pub mod rewards;
pub mod service;
pub mod table;

pub use executor::{DatabaseHandle, ErrorClass, ExecCache, ExecLimits, ExecOutcome, ExecStatus};
pub use metrics::{CompareOptions, MetricVector};
pub use rewards::{score_completion, CompositeKind, RewardBreakdown, ScoreOptions};
pub use table::{Cell, ResultTable, Row};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tables.md")]
    mod tables {}
    #[doc = include_str!("../../../book/src/execution.md")]
    mod execution {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/advantages.md")]
    mod advantages {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
