//! Monte Carlo trial engine for validating the slot-count analysis.
//!
//! Every trial owns an independent random stream derived from
//! `(seed, trial_index)`, so results are bit-reproducible for a fixed seed
//! and trial count no matter how trials are scheduled. Aggregation uses
//! exact integer sums of the (integer) slot counts, which makes it
//! order-insensitive as well.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{avg_slots_finite, avg_slots_q_recursive, SeriesControl};
use crate::error::{Error, Result};
use crate::metrics::{ContinuousMetricModel, DiscreteMetricModel, NormalizedMetrics};
use crate::protocol::{run_qselect, run_qselect_traced, QSelectOutcome, TranscriptEntry};

/// Where a trial's normalized metrics come from.
#[derive(Clone, Copy)]
pub enum MetricSource<'a> {
    /// Direct uniform draws on (0, n) - the distribution every continuous
    /// model normalizes to, with no CCDF round trip in the loop.
    Uniform,
    /// Draw physical metrics from a named model and normalize through its
    /// CCDF (distribution-identical to `Uniform`, for demonstrating
    /// arbitrary models).
    Model(&'a dyn ContinuousMetricModel),
    /// Draw discrete levels from a pmf and expand them proportionally.
    Discrete(&'a DiscreteMetricModel),
}

impl MetricSource<'_> {
    fn fill(&self, metrics: &mut NormalizedMetrics, rng: &mut ChaCha8Rng) -> Result<()> {
        match self {
            MetricSource::Uniform => metrics.resample_uniform(rng),
            MetricSource::Model(model) => metrics.resample_from_model(*model, rng),
            MetricSource::Discrete(pmf) => metrics.resample_from_pmf(pmf, rng)?,
        }
        Ok(())
    }
}

/// Statistically qualified estimate of the average slot count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean_slots: f64,
    pub std_error: f64,
    /// `1.96 * std_error` (normal approximation).
    pub ci95_half_width: f64,
    pub trials: u64,
    pub seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based per-trial stream: the full (seed, trial) pair goes into the
/// 256-bit state, so streams never collide and never depend on scheduling.
fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&trial.to_le_bytes());
    bytes[16..24].copy_from_slice(&splitmix64(seed ^ 0xA076_1D64_78BD_642F).to_le_bytes());
    bytes[24..32].copy_from_slice(&splitmix64(trial ^ 0xE703_7ED1_A0B4_28DB).to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

fn validate(n: u64, q: u32, trials: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyNodeSet);
    }
    if trials == 0 {
        return Err(Error::ZeroTrials);
    }
    if q as u64 > n {
        return Err(Error::SelectionExceedsNodes { q, n });
    }
    Ok(())
}

fn summarize(sum: u64, sum_sq: u128, trials: u64, seed: u64) -> SummaryStats {
    let t = trials as f64;
    let mean = sum as f64 / t;
    let std_error = if trials > 1 {
        let var = ((sum_sq as f64 - (sum as f64) * (sum as f64) / t) / (t - 1.0)).max(0.0);
        (var / t).sqrt()
    } else {
        0.0
    };
    SummaryStats {
        mean_slots: mean,
        std_error,
        ci95_half_width: 1.96 * std_error,
        trials,
        seed,
    }
}

fn run_trials(
    source: MetricSource<'_>,
    n: u64,
    q: u32,
    p_e: f64,
    trials: u64,
    seed: u64,
) -> Result<SummaryStats> {
    validate(n, q, trials)?;
    let mut sum = 0u64;
    let mut sum_sq = 0u128;
    let mut metrics = NormalizedMetrics::new(vec![0.0; n as usize])?;
    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial);
        source.fill(&mut metrics, &mut rng)?;
        let slots = run_qselect(&metrics, p_e, q)?.slots;
        sum += slots;
        sum_sq += (slots as u128) * (slots as u128);
    }
    Ok(summarize(sum, sum_sq, trials, seed))
}

/// Estimate the average slots to select the best `q` of `n` nodes at load
/// `p_e`, over `trials` independent runs on fresh uniform normalized
/// metrics.
pub fn estimate(n: u64, q: u32, p_e: f64, trials: u64, seed: u64) -> Result<SummaryStats> {
    run_trials(MetricSource::Uniform, n, q, p_e, trials, seed)
}

/// As `estimate`, but metrics are drawn from an explicit continuous model
/// and normalized through its CCDF each trial.
pub fn estimate_model(
    model: &dyn ContinuousMetricModel,
    n: u64,
    q: u32,
    p_e: f64,
    trials: u64,
    seed: u64,
) -> Result<SummaryStats> {
    run_trials(MetricSource::Model(model), n, q, p_e, trials, seed)
}

/// As `estimate`, but nodes draw i.i.d. discrete levels from `pmf` and make
/// them continuous by proportional expansion before the normalized run.
pub fn estimate_discrete(
    pmf: &DiscreteMetricModel,
    n: u64,
    q: u32,
    p_e: f64,
    trials: u64,
    seed: u64,
) -> Result<SummaryStats> {
    run_trials(MetricSource::Discrete(pmf), n, q, p_e, trials, seed)
}

/// One traced run on a fresh instance drawn from the trial-0 stream of
/// `seed`.
pub fn trace_run(
    source: MetricSource<'_>,
    n: u64,
    q: u32,
    p_e: f64,
    seed: u64,
) -> Result<(QSelectOutcome, Vec<TranscriptEntry>)> {
    validate(n, q, 1)?;
    let mut rng = trial_rng(seed, 0);
    let mut metrics = NormalizedMetrics::new(vec![0.0; n as usize])?;
    source.fill(&mut metrics, &mut rng)?;
    run_qselect_traced(&metrics, p_e, q)
}

/// One grid point of a sweep; `n = None` means the asymptotic regime
/// (analysis only, nothing to simulate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub n: Option<u64>,
    pub q: u32,
    pub p_e: f64,
}

/// A sweep result row: the simulated estimate (when `n` is finite) paired
/// with the matching analytic value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub stats: Option<SummaryStats>,
    /// Finite-n law for `q = 1` at finite `n`; the asymptotic expression
    /// otherwise (no finite-n closed form exists for `q >= 2`).
    pub analytic: f64,
}

/// Run `estimate` over a parameter grid, pairing each point with its
/// analytic counterpart.
pub fn sweep(
    grid: &[SweepPoint],
    trials: u64,
    seed: u64,
    ctl: &SeriesControl,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    grid.iter()
        .map(|&point| {
            let analytic = match (point.n, point.q) {
                (Some(n), 1) => avg_slots_finite(n, point.p_e)?,
                _ => avg_slots_q_recursive(point.q, point.p_e, ctl)?,
            };
            let stats = point
                .n
                .map(|n| estimate(n, point.q, point.p_e, trials, seed))
                .transpose()?;
            Ok(SweepRow {
                point,
                stats,
                analytic,
            })
        })
        .collect()
}
