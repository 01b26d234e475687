use thiserror::Error;

/// Errors reported by the selection toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("node count must be at least 1")]
    EmptyNodeSet,
    #[error("contention load must be positive (got {0})")]
    NonPositiveContentionLoad(f64),
    #[error("contention load {p_e} exceeds node count {n}")]
    ContentionLoadTooLarge { p_e: f64, n: u64 },
    #[error("collision size k must be at least 1")]
    ZeroCollisionSize,
    #[error("selection count Q must be at least {min} (got {q})")]
    SelectionCountTooSmall { q: u32, min: u32 },
    #[error("cannot select {q} nodes out of {n}")]
    SelectionExceedsNodes { q: u32, n: u64 },
    #[error("tangent point k0 must be at least e/2 (got {0})")]
    TangentPointTooSmall(f64),
    #[error("series tolerance must be positive (got {0})")]
    NonPositiveTolerance(f64),
    #[error("series term cap must be at least 10 (got {0})")]
    TermCapTooSmall(usize),
    #[error("metric level {level} outside 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("pmf entries must all be positive")]
    NonPositivePmfEntry,
    #[error("pmf must sum to 1 within 1e-12 (got {0})")]
    PmfNotNormalized(f64),
    #[error("normalized metric {value} outside [0, {n}]")]
    MetricOutOfRange { value: f64, n: u64 },
    #[error("bracket ({low}, {high}) is degenerate")]
    DegenerateBracket { low: f64, high: f64 },
    #[error("trial count must be at least 1")]
    ZeroTrials,
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("state update on a terminating Success feedback")]
    UpdateAfterSuccess,
    #[error("run exceeded slot budget of {budget} (degenerate metrics?)")]
    SlotBudgetExceeded { budget: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;
