//! Contention-load optimization: locate the load `p_e*` minimizing the
//! average selection time for each Q, and the derived comparison table.

use crate::analysis::{avg_slots_q_recursive, SeriesControl};
use crate::error::{Error, Result};

/// Default search bracket for the optimal contention load. The optimum never
/// exceeds 2: with more than two expected transmitters per slot, collisions
/// cost more than they reveal.
pub const DEFAULT_BRACKET: (f64, f64) = (0.5, 2.0);
pub const DEFAULT_XTOL: f64 = 1e-4;

/// An optimum row: the minimizing load, the minimal average slot count, and
/// the fractional improvement over running the single-selection algorithm Q
/// times at its own optimum (absent for Q = 1 by definition).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimumRow {
    pub q: u32,
    pub p_e_star: f64,
    pub m_star: f64,
    pub improvement: Option<f64>,
    /// True when the coarse scan found the objective non-unimodal on the
    /// bracket and the result came from a fine grid scan instead of
    /// golden-section refinement.
    pub scan_fallback: bool,
}

/// Derivative-free scalar minimization: a coarse scan establishes
/// unimodality and brackets the minimum, then golden-section search refines
/// it to `xtol`. If the scan sees a non-unimodal shape (or a boundary
/// minimum) the result falls back to a fine grid scan at step `xtol`.
fn minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, xtol: f64) -> (f64, f64, bool) {
    const COARSE: usize = 33;
    let step = (hi - lo) / (COARSE - 1) as f64;
    let xs: Vec<f64> = (0..COARSE).map(|i| lo + i as f64 * step).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let best = vs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    let slack = 1e-9;
    let unimodal = best > 0
        && best + 1 < COARSE
        && (0..best).all(|i| vs[i + 1] <= vs[i] + slack)
        && (best..COARSE - 1).all(|i| vs[i + 1] >= vs[i] - slack);

    if !unimodal {
        let mut x_best = lo;
        let mut v_best = f(lo);
        let mut x = lo + xtol;
        while x < hi {
            let v = f(x);
            if v < v_best {
                v_best = v;
                x_best = x;
            }
            x += xtol;
        }
        return (x_best, v_best, false);
    }

    let (mut a, mut b) = (xs[best - 1], xs[best + 1]);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > xtol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1, true)
    } else {
        (x2, f2, true)
    }
}

fn minimize_avg_slots(
    q: u32,
    bracket: (f64, f64),
    xtol: f64,
    ctl: &SeriesControl,
) -> (f64, f64, bool) {
    minimize(
        |p_e| avg_slots_q_recursive(q, p_e, ctl).expect("positive load within bracket"),
        bracket.0,
        bracket.1,
        xtol,
    )
}

fn validate_bracket(bracket: (f64, f64), xtol: f64) -> Result<()> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::DegenerateBracket { low: lo, high: hi });
    }
    if !(xtol > 0.0) {
        return Err(Error::NonPositiveTolerance(xtol));
    }
    Ok(())
}

/// Locate the optimal contention load for selecting the best `q` nodes.
pub fn optimal_pe(
    q: u32,
    bracket: (f64, f64),
    xtol: f64,
    ctl: &SeriesControl,
) -> Result<OptimumRow> {
    if q < 1 {
        return Err(Error::SelectionCountTooSmall { q, min: 1 });
    }
    validate_bracket(bracket, xtol)?;
    let (p_e_star, m_star, refined) = minimize_avg_slots(q, bracket, xtol, ctl);
    let improvement = if q >= 2 {
        let (_, m1_star, _) = minimize_avg_slots(1, bracket, xtol, ctl);
        Some(1.0 - m_star / (q as f64 * m1_star))
    } else {
        None
    };
    Ok(OptimumRow {
        q,
        p_e_star,
        m_star,
        improvement,
        scan_fallback: !refined,
    })
}

/// Optima for Q = 1..=q_max with the default bracket. Improvements are
/// measured against this run's own computed Q = 1 optimum, not a rounded
/// reference value.
pub fn table1(q_max: u32) -> Result<Vec<OptimumRow>> {
    table1_with(
        q_max,
        DEFAULT_BRACKET,
        DEFAULT_XTOL,
        &SeriesControl::default(),
    )
}

pub fn table1_with(
    q_max: u32,
    bracket: (f64, f64),
    xtol: f64,
    ctl: &SeriesControl,
) -> Result<Vec<OptimumRow>> {
    if q_max < 1 {
        return Err(Error::SelectionCountTooSmall { q: q_max, min: 1 });
    }
    validate_bracket(bracket, xtol)?;
    let mut rows = Vec::with_capacity(q_max as usize);
    let (p1, m1, refined1) = minimize_avg_slots(1, bracket, xtol, ctl);
    rows.push(OptimumRow {
        q: 1,
        p_e_star: p1,
        m_star: m1,
        improvement: None,
        scan_fallback: !refined1,
    });
    for q in 2..=q_max {
        let (p_e_star, m_star, refined) = minimize_avg_slots(q, bracket, xtol, ctl);
        rows.push(OptimumRow {
            q,
            p_e_star,
            m_star,
            improvement: Some(1.0 - m_star / (q as f64 * m1)),
            scan_fallback: !refined,
        });
    }
    Ok(rows)
}

/// Relative slot-count penalty of the greedy setting `p_e = 1` (the value
/// that merely maximizes per-slot success probability) against the optimum:
/// `(m(1) - m(p_e*)) / m(p_e*)`.
pub fn greedy_gap(q: u32, ctl: &SeriesControl) -> Result<f64> {
    let row = optimal_pe(q, DEFAULT_BRACKET, DEFAULT_XTOL, ctl)?;
    let at_one = avg_slots_q_recursive(q, 1.0, ctl)?;
    Ok((at_one - row.m_star) / row.m_star)
}
