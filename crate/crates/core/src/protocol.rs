//! Executable state machines for splitting-based selection.
//!
//! Two machines, both driven solely by the sink's per-slot feedback:
//!
//! * the single-selection machine keeps metric-domain thresholds
//!   `(H_L, H_H, H_min)` and stops at the first success;
//! * the Q-selection machine sweeps the normalized domain with a threshold
//!   interval `(T, T + alpha)`, halving on collisions, and stops at the Q-th
//!   success.
//!
//! Runs are deterministic given the metrics: identical inputs produce an
//! identical transcript of (interval, feedback) pairs.

use crate::error::{Error, Result};
use crate::metrics::{ContinuousMetricModel, NormalizedMetrics};

/// Sink feedback for one slot, broadcast to every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    Idle,
    Success,
    Collision,
}

impl std::fmt::Display for Feedback {
    /// Two-bit wire encoding: 0 = idle, 1 = success, e = collision.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Feedback::Idle => "0",
            Feedback::Success => "1",
            Feedback::Collision => "e",
        })
    }
}

/// Feedback is a pure function of how many nodes transmitted in the slot.
pub fn sink_feedback(transmit_count: usize) -> Feedback {
    match transmit_count {
        0 => Feedback::Idle,
        1 => Feedback::Success,
        _ => Feedback::Collision,
    }
}

/// Which half of the last split the current threshold interval is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Left,
    Right,
}

impl std::fmt::Display for Half {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Half::Left => "L",
            Half::Right => "R",
        })
    }
}

/// Threshold state of the single-selection machine (metric domain).
///
/// A node transmits in the current slot iff `h_low < u < h_high`; `h_min`
/// tracks the largest metric value the best node is known to exceed.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleSelectState {
    pub h_low: f64,
    pub h_high: f64,
    pub h_min: f64,
    /// Current slot number, starting at 1.
    pub slot_index: u64,
    /// Whether any collision has occurred yet (idle phase vs collision phase).
    pub collision_seen: bool,
}

impl SingleSelectState {
    pub fn initial(model: &dyn ContinuousMetricModel, n: u64, p_e: f64) -> Self {
        Self {
            h_low: model.inverse_ccdf((p_e / n as f64).min(1.0)),
            h_high: f64::INFINITY,
            h_min: model.infimum(),
            slot_index: 1,
            collision_seen: false,
        }
    }
}

/// Threshold midpoint in probability space:
/// `split(a, b) = F_c^{-1}((F_c(a) + F_c(b)) / 2)`, so on average half of the
/// last slot's transmitters retry.
fn split(model: &dyn ContinuousMetricModel, a: f64, b: f64) -> f64 {
    model.inverse_ccdf(0.5 * (model.ccdf(a) + model.ccdf(b)))
}

/// One feedback response of the single-selection machine. `Success`
/// terminates the algorithm and is not a valid input here.
///
/// The three rules: an idle before any collision lowers the sweep window by
/// one contention quantum (clamped at the metric infimum once the sweep has
/// covered the whole population); a collision splits the current window and
/// records the old lower threshold in `h_min`; an idle after a collision
/// moves to the left half of the untested region above the window.
pub fn single_update(
    state: &SingleSelectState,
    fb: Feedback,
    model: &dyn ContinuousMetricModel,
    n: u64,
    p_e: f64,
) -> Result<SingleSelectState> {
    let mut next = state.clone();
    next.slot_index += 1;
    match fb {
        Feedback::Success => return Err(Error::UpdateAfterSuccess),
        Feedback::Collision => {
            next.h_min = state.h_low;
            next.h_low = split(model, state.h_low, state.h_high);
            next.collision_seen = true;
        }
        Feedback::Idle if !state.collision_seen => {
            next.h_high = state.h_low;
            let p = ((state.slot_index + 1) as f64 * p_e / n as f64).min(1.0);
            next.h_low = model.inverse_ccdf(p);
        }
        Feedback::Idle => {
            next.h_high = state.h_low;
            next.h_low = split(model, state.h_min, state.h_low);
        }
    }
    Ok(next)
}

/// State of the Q-selection machine: selected count, threshold interval
/// `(T, T + alpha)` in the normalized domain, which half of the last split
/// the interval is, and the identities selected so far (best first).
#[derive(Debug, Clone, PartialEq)]
pub struct QSelectState {
    pub selected_count: u32,
    pub interval_start: f64,
    pub interval_width: f64,
    pub half: Half,
    /// Slots completed so far.
    pub slot_index: u64,
    pub selected: Vec<usize>,
}

impl QSelectState {
    pub fn initial(p_e: f64) -> Self {
        Self {
            selected_count: 0,
            interval_start: 0.0,
            interval_width: p_e,
            half: Half::Right,
            slot_index: 0,
            selected: Vec::new(),
        }
    }
}

/// One feedback response of the Q-selection machine.
///
/// Collision: keep `T`, halve the interval, move to its left half. Success
/// in a left half: the right sibling (known non-empty) is next. Idle in a
/// left half: every collider sits in the right sibling, so split it and test
/// its left half. Otherwise the resolved region is done and the sweep moves
/// to the adjacent fresh interval of width `p_e`. A success also increments
/// the selected count; the caller records the node identity and terminates
/// once it reaches Q.
pub fn q_update(state: &QSelectState, fb: Feedback, p_e: f64) -> QSelectState {
    let mut next = state.clone();
    next.slot_index += 1;
    if fb == Feedback::Success {
        next.selected_count += 1;
    }
    match (fb, state.half) {
        (Feedback::Collision, _) => {
            next.interval_width = 0.5 * state.interval_width;
            next.half = Half::Left;
        }
        (Feedback::Success, Half::Left) => {
            next.interval_start = state.interval_start + state.interval_width;
            next.half = Half::Right;
        }
        (Feedback::Idle, Half::Left) => {
            next.interval_start = state.interval_start + state.interval_width;
            next.interval_width = 0.5 * state.interval_width;
        }
        (_, Half::Right) => {
            next.interval_start = state.interval_start + state.interval_width;
            next.interval_width = p_e;
        }
    }
    next
}

/// Outcome of a single-selection run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleOutcome {
    pub winner: usize,
    pub slots: u64,
}

/// Outcome of a Q-selection run: the best-Q node identities in increasing
/// normalized-metric order (best first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QSelectOutcome {
    pub selected: Vec<usize>,
    pub slots: u64,
}

/// One transcript line per slot: the interval tested, the feedback, and the
/// selected count after the slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub slot: u64,
    pub interval_start: f64,
    pub interval_width: f64,
    pub half: Half,
    pub feedback: Feedback,
    pub selected_count: u32,
}

/// Ample slot allowance: the idle sweep takes at most ceil(n/p_e) slots and
/// each collision resolves within the f64 resolution of the metric gaps.
/// Only degenerate (tied) metrics can exhaust it.
fn slot_budget(n: usize, p_e: f64) -> u64 {
    64 * n as u64 + 64 * (n as f64 / p_e).ceil() as u64 + 64
}

fn validate_run(n: usize, p_e: f64) -> Result<()> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    if p_e > n as f64 {
        return Err(Error::ContentionLoadTooLarge { p_e, n: n as u64 });
    }
    Ok(())
}

/// Transmitter count in the open interval `(lo, hi)`, plus the index of the
/// last transmitter seen (the winner when the count is 1).
fn transmitters(y: &[f64], lo: f64, hi: f64) -> (usize, usize) {
    let mut count = 0;
    let mut last = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > lo && v < hi {
            count += 1;
            last = i;
        }
    }
    (count, last)
}

/// Run the single-selection algorithm on normalized metrics. Deterministic;
/// returns the index of the best (minimum-y) node and the number of slots
/// including the terminating success.
pub fn run_single(metrics: &NormalizedMetrics, p_e: f64) -> Result<SingleOutcome> {
    let n = metrics.n();
    validate_run(n, p_e)?;
    let y = metrics.values();
    let nf = n as f64;
    let budget = slot_budget(n, p_e);
    let mut lo = 0.0;
    let mut hi = p_e.min(nf);
    let mut cap = nf;
    let mut collision_seen = false;
    let mut slots: u64 = 0;
    loop {
        slots += 1;
        if slots > budget {
            return Err(Error::SlotBudgetExceeded { budget });
        }
        let (count, last) = transmitters(y, lo, hi);
        match sink_feedback(count) {
            Feedback::Success => {
                return Ok(SingleOutcome {
                    winner: last,
                    slots,
                })
            }
            Feedback::Collision => {
                cap = hi;
                hi = 0.5 * (lo + hi);
                collision_seen = true;
            }
            Feedback::Idle if !collision_seen => {
                lo = hi;
                hi = ((slots + 1) as f64 * p_e).min(nf);
            }
            Feedback::Idle => {
                lo = hi;
                hi = 0.5 * (hi + cap);
            }
        }
    }
}

fn run_qselect_inner(
    metrics: &NormalizedMetrics,
    p_e: f64,
    q: u32,
    mut transcript: Option<&mut Vec<TranscriptEntry>>,
) -> Result<QSelectOutcome> {
    let n = metrics.n();
    validate_run(n, p_e)?;
    if q < 1 {
        return Err(Error::SelectionCountTooSmall { q, min: 1 });
    }
    if q as usize > n {
        return Err(Error::SelectionExceedsNodes { q, n: n as u64 });
    }
    let y = metrics.values();
    let budget = slot_budget(n, p_e);
    let mut state = QSelectState::initial(p_e);
    loop {
        let (count, last) = transmitters(
            y,
            state.interval_start,
            state.interval_start + state.interval_width,
        );
        let fb = sink_feedback(count);
        let prev = (state.interval_start, state.interval_width, state.half);
        state = q_update(&state, fb, p_e);
        if fb == Feedback::Success {
            state.selected.push(last);
        }
        if let Some(t) = transcript.as_deref_mut() {
            t.push(TranscriptEntry {
                slot: state.slot_index,
                interval_start: prev.0,
                interval_width: prev.1,
                half: prev.2,
                feedback: fb,
                selected_count: state.selected_count,
            });
        }
        if state.selected_count == q {
            return Ok(QSelectOutcome {
                selected: state.selected,
                slots: state.slot_index,
            });
        }
        if state.slot_index >= budget {
            return Err(Error::SlotBudgetExceeded { budget });
        }
    }
}

/// Run the Q-selection algorithm on normalized metrics. Deterministic;
/// returns the indices of the best Q nodes in increasing-y order and the
/// slot count including the Q-th success. Equivalent to `run_single` when
/// `q = 1`.
pub fn run_qselect(metrics: &NormalizedMetrics, p_e: f64, q: u32) -> Result<QSelectOutcome> {
    run_qselect_inner(metrics, p_e, q, None)
}

/// As `run_qselect`, but also records the per-slot transcript.
pub fn run_qselect_traced(
    metrics: &NormalizedMetrics,
    p_e: f64,
    q: u32,
) -> Result<(QSelectOutcome, Vec<TranscriptEntry>)> {
    let mut transcript = Vec::new();
    let outcome = run_qselect_inner(metrics, p_e, q, Some(&mut transcript))?;
    Ok((outcome, transcript))
}
