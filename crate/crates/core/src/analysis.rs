//! Exact slot-count analysis for splitting-based selection.
//!
//! Everything here evaluates closed forms in the normalized metric domain,
//! where the node population behaves (as n grows) like a unit-rate Poisson
//! process swept in contention intervals of length `p_e`:
//!
//! * `collision_slots_q1` / `avg_slots_finite` - the finite-n law: expected
//!   slots to resolve a k-node collision, and the exact average selection
//!   time for n nodes at contention load `p_e`.
//! * `avg_slots_asym_recursive` / `avg_slots_asym_markov` - two equivalent
//!   asymptotic expressions for single-node selection, one summing over the
//!   collision multiplicity, one over the split-chain states.
//! * `upper_bound` - a closed-form convex upper bound (no infinite series).
//! * `collision_slots_q` / `avg_slots_q_recursive` / `avg_slots_q2_markov` -
//!   the best-Q generalization, plus the Q = 2 chain form.
//!
//! All series have positive terms; truncation always produces a lower bound,
//! and the default controls certify the truncation error instead of guessing
//! at it.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};

/// Truncation controls for the infinite series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesControl {
    tol: f64,
    k_max: usize,
}

impl SeriesControl {
    pub const DEFAULT_TOL: f64 = 1e-12;
    pub const DEFAULT_K_MAX: usize = 200;

    pub fn new(tol: f64, k_max: usize) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::NonPositiveTolerance(tol));
        }
        if k_max < 10 {
            return Err(Error::TermCapTooSmall(k_max));
        }
        Ok(Self { tol, k_max })
    }

    pub fn with_tol(tol: f64) -> Result<Self> {
        Self::new(tol, Self::DEFAULT_K_MAX)
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            tol: Self::DEFAULT_TOL,
            k_max: Self::DEFAULT_K_MAX,
        }
    }
}

/// Expected slots spent before and including the first non-idle slot,
/// `1 / (1 - e^{-p_e})`, computed without cancellation.
fn idle_term(p_e: f64) -> f64 {
    1.0 / -(-p_e).exp_m1()
}

/// First-slot success probability `P_0 = p_e e^{-p_e} / (1 - e^{-p_e})`.
fn first_success(p_e: f64) -> f64 {
    p_e * (-p_e).exp() * idle_term(p_e)
}

/// Success probability of a left-half state with interval length `x`:
/// `x e^{-x} (1 - e^{-x}) / (1 - (1 + 2x) e^{-2x})`.
///
/// The denominator loses all precision once `x` is tiny (it is `2x^2` to
/// leading order), so below 1e-3 both numerator and denominator switch to
/// their series expansions.
fn success_left(x: f64) -> f64 {
    if x < 1e-3 {
        let num = 1.0 + x * (-1.5 + x * (7.0 / 6.0 - x * 0.625));
        let den = 2.0 * (1.0 + x * (-4.0 / 3.0 + x * (1.0 - x * (8.0 / 15.0))));
        num / den
    } else {
        let num = x * (-x).exp() * -(-x).exp_m1();
        let den = -(-2.0 * x).exp_m1() - 2.0 * x * (-2.0 * x).exp();
        num / den
    }
}

/// Success probability of a right-half state with interval length `x`:
/// `x e^{-x} / (1 - e^{-x})` (at least one node is known to be present).
fn success_right(x: f64) -> f64 {
    x * (-x).exp() / -(-x).exp_m1()
}

/// Running binomial weights `C(k, l) * 2^{-k}` for l = 2, 3, ...
/// Mantissa and exponent are tracked separately so the walk never underflows
/// even when `2^{-k}` itself would.
struct HalvingWeights {
    mant: f64,
    exp2: i32,
    k: usize,
    l: usize,
}

impl HalvingWeights {
    fn new(k: usize) -> Self {
        Self {
            mant: 0.5 * k as f64 * (k as f64 - 1.0),
            exp2: -(k.min(1_000_000) as i32),
            k,
            l: 2,
        }
    }

    fn value(&self) -> f64 {
        self.mant * 2f64.powi(self.exp2)
    }

    fn advance(&mut self) {
        self.mant *= (self.k - self.l) as f64 / (self.l as f64 + 1.0);
        self.l += 1;
        if self.mant > 1e300 {
            self.mant *= 2f64.powi(-512);
            self.exp2 += 512;
        }
    }
}

static EXK: OnceLock<Mutex<Vec<f64>>> = OnceLock::new();

/// First `len` values of the k-node collision-resolution expectation,
/// extending the shared memo table as needed. Index `k - 1` holds `E[X_k]`.
fn exk_prefix(len: usize) -> Vec<f64> {
    let lock = EXK.get_or_init(|| Mutex::new(vec![0.0]));
    let mut table = lock.lock().expect("collision table lock");
    while table.len() < len {
        let k = table.len() + 1;
        let mut weights = HalvingWeights::new(k);
        let mut acc = 0.0;
        for l in 2..k {
            acc += weights.value() * table[l - 1];
            weights.advance();
        }
        let denom = 1.0 - 2f64.powi(-((k - 1).min(1100) as i32));
        table.push((acc + 1.0) / denom);
    }
    table[..len].to_vec()
}

fn exk_value(k: usize) -> f64 {
    let lock = EXK.get_or_init(|| Mutex::new(vec![0.0]));
    {
        let table = lock.lock().expect("collision table lock");
        if table.len() >= k {
            return table[k - 1];
        }
    }
    exk_prefix(k)[k - 1]
}

/// Expected slots to resolve a collision among `k` nodes and select the best
/// one, not counting the colliding slot itself. Follows the fair-splitting
/// recursion with `E[X_1] = 0`; binomial weights are maintained by iterative
/// update so k well past 10^3 evaluates without overflow.
pub fn collision_slots_q1(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroCollisionSize);
    }
    Ok(exk_value(k))
}

/// Exact average number of slots to select the best of `n` nodes at
/// contention load `p_e`: the idle-phase sweep lasts at most
/// `q = ceil(n / p_e) - 1` slots, and the first non-idle slot leaves a
/// k-node collision costing `E[X_k]` more.
pub fn avg_slots_finite(n: u64, p_e: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyNodeSet);
    }
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let nf = n as f64;
    if p_e > nf {
        return Err(Error::ContentionLoadTooLarge { p_e, n });
    }
    let q = (nf / p_e).ceil() as u64 - 1;
    let exk = exk_prefix(n as usize);
    let a = p_e / nf;
    let mut total = 0.0;
    for i in 1..=q {
        let b = 1.0 - i as f64 * p_e / nf;
        if b <= 0.0 {
            continue;
        }
        // Ascending k with a running weight C(n,k) a^k b^{n-k}; once the
        // weight underflows past the mass the rest of the row is negligible.
        let mut w = nf * a * b.powf(nf - 1.0);
        if w == 0.0 {
            continue;
        }
        let step = a / b;
        let mut row = 0.0;
        for k in 1..=n {
            row += w * (exk[(k - 1) as usize] + i as f64);
            if k < n {
                w *= (n - k) as f64 / (k + 1) as f64 * step;
                if w == 0.0 {
                    break;
                }
            }
        }
        total += row;
    }
    // Residual slot q+1: every metric is past the swept range, so all n
    // nodes transmit and collide.
    let c = (1.0 - q as f64 * p_e / nf).max(0.0);
    total += c.powf(nf) * (exk[(n - 1) as usize] + q as f64 + 1.0);
    Ok(total)
}

/// Series sum `idle + (1/(e^{p_e}-1)) * sum_k E[X_k] p_e^k / k!` with a
/// certified tail: `E[X_k] <= log2(k) + 1 <= k` caps the remainder by a
/// geometric Poisson tail.
fn asym_recursive_q1(p_e: f64, ctl: &SeriesControl) -> f64 {
    if p_e < 1e-6 {
        // Idle-dominated limit; the collision terms are O(p_e).
        return idle_term(p_e);
    }
    let exk = exk_prefix(ctl.k_max);
    let denom = p_e.exp_m1();
    let mut w = p_e;
    let mut sum = exk[0] * w;
    let mut k = 1usize;
    while k < ctl.k_max {
        k += 1;
        w *= p_e / k as f64;
        let term = exk[k - 1] * w;
        sum += term;
        let r = p_e / (k as f64 + 1.0);
        if r < 0.5 {
            let tail = p_e * w / (1.0 - r);
            if term / denom < ctl.tol && tail / denom < ctl.tol {
                break;
            }
        }
    }
    idle_term(p_e) + sum / denom
}

/// Average slots to select the best node as n -> infinity, by the recursive
/// (collision-multiplicity) expression.
pub fn avg_slots_asym_recursive(p_e: f64, ctl: &SeriesControl) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    Ok(asym_recursive_q1(p_e, ctl))
}

/// Partial sum of the recursive expression using exactly `terms` series
/// terms: a lower bound on the full value (all terms are positive).
pub fn avg_slots_asym_recursive_truncated(p_e: f64, terms: usize) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let exk = exk_prefix(terms.max(1));
    let denom = p_e.exp_m1();
    let mut w = p_e;
    let mut sum = exk[0] * w;
    for k in 2..=terms {
        w *= p_e / k as f64;
        sum += exk[k - 1] * w;
    }
    Ok(idle_term(p_e) + sum / denom)
}

/// Per-state success and visit probabilities of the post-collision split
/// chains.
///
/// For the single-node chain only `p0`, `p_left` (the per-split success
/// probabilities) and `visit` (`p(i)`) are populated. For the pair chain,
/// `p_right` holds the success probabilities of the right-sibling states,
/// `visit_prime` the probability that the first success lands exactly at
/// depth i (`p'(i)`), and `visit_double_prime` the probability of reaching
/// depth i with the first success already banked (`p''(i)`, zero at i = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainProbabilities {
    pub p_e: f64,
    pub p0: f64,
    pub p_left: Vec<f64>,
    pub p_right: Vec<f64>,
    pub visit: Vec<f64>,
    pub visit_prime: Vec<f64>,
    pub visit_double_prime: Vec<f64>,
}

struct SingleChain {
    x: f64,
    visit: f64,
}

impl SingleChain {
    fn new(p_e: f64) -> Self {
        Self {
            x: 0.5 * p_e,
            visit: 1.0 - first_success(p_e),
        }
    }

    /// Yields `(p(i), P_i)` and advances to depth i + 1.
    fn step(&mut self) -> (f64, f64) {
        let p = self.visit;
        let p_l = success_left(self.x);
        self.visit *= 1.0 - p_l;
        self.x *= 0.5;
        (p, p_l)
    }
}

struct PairStep {
    p: f64,
    p_prime: f64,
    pp: f64,
    pp_next: f64,
    p_l: f64,
    p_r: f64,
}

struct PairChain {
    x: f64,
    p: f64,
    pp: f64,
}

impl PairChain {
    fn new(p_e: f64) -> Self {
        Self {
            x: 0.5 * p_e,
            p: 1.0 - first_success(p_e),
            pp: 0.0,
        }
    }

    fn step(&mut self) -> PairStep {
        let p_l = success_left(self.x);
        let p_r = success_right(self.x);
        let p = self.p;
        let pp = self.pp;
        let p_prime = p * p_l;
        let pp_next = p_prime * (1.0 - p_r) + pp * (1.0 - p_l);
        self.p = p * (1.0 - p_l);
        self.pp = pp_next;
        self.x *= 0.5;
        PairStep {
            p,
            p_prime,
            pp,
            pp_next,
            p_l,
            p_r,
        }
    }
}

/// Success and visit probabilities of the single-node chain, generated until
/// the visit probability drops below `ctl.tol`.
pub fn chain_probabilities_q1(p_e: f64, ctl: &SeriesControl) -> Result<ChainProbabilities> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let mut chain = SingleChain::new(p_e);
    let mut p_left = Vec::new();
    let mut visit = Vec::new();
    for _ in 0..ctl.k_max {
        let (p, p_l) = chain.step();
        visit.push(p);
        p_left.push(p_l);
        if p < ctl.tol {
            break;
        }
    }
    Ok(ChainProbabilities {
        p_e,
        p0: first_success(p_e),
        p_left,
        p_right: Vec::new(),
        visit,
        visit_prime: Vec::new(),
        visit_double_prime: Vec::new(),
    })
}

/// Chain probabilities for the best-two selection chain, generated until
/// `p(i) + p'(i) + p''(i)` drops below `ctl.tol`.
pub fn chain_probabilities_q2(p_e: f64, ctl: &SeriesControl) -> Result<ChainProbabilities> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let mut chain = PairChain::new(p_e);
    let mut out = ChainProbabilities {
        p_e,
        p0: first_success(p_e),
        p_left: Vec::new(),
        p_right: Vec::new(),
        visit: Vec::new(),
        visit_prime: Vec::new(),
        visit_double_prime: Vec::new(),
    };
    for _ in 0..ctl.k_max {
        let s = chain.step();
        out.p_left.push(s.p_l);
        out.p_right.push(s.p_r);
        out.visit.push(s.p);
        out.visit_prime.push(s.p_prime);
        out.visit_double_prime.push(s.pp);
        if s.p + s.p_prime + s.pp < ctl.tol {
            break;
        }
    }
    Ok(out)
}

/// Average slots to select the best node as n -> infinity, by the
/// non-recursive (chain) expression `idle + sum_i p(i)`.
pub fn avg_slots_asym_markov(p_e: f64, ctl: &SeriesControl) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    if p_e < 1e-6 {
        return Ok(idle_term(p_e));
    }
    let mut chain = SingleChain::new(p_e);
    let mut sum = 0.0;
    for _ in 0..ctl.k_max {
        let (p, _) = chain.step();
        sum += p;
        if p < ctl.tol {
            break;
        }
    }
    Ok(idle_term(p_e) + sum)
}

/// Partial sum of the chain expression using exactly `terms` states.
pub fn avg_slots_asym_markov_truncated(p_e: f64, terms: usize) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let mut chain = SingleChain::new(p_e);
    let sum: f64 = (0..terms).map(|_| chain.step().0).sum();
    Ok(idle_term(p_e) + sum)
}

/// Closed-form upper bound on the asymptotic single-node average, from the
/// tangent to `log2` at `k0`:
/// `p_e / (k0 ln 2) + log2(2 k0 / e) + 1 / (1 - e^{-p_e})`, valid for any
/// `k0 >= e/2`.
pub fn upper_bound(p_e: f64, k0: f64) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    if !(k0 >= std::f64::consts::E / 2.0) {
        return Err(Error::TangentPointTooSmall(k0));
    }
    Ok(p_e / (k0 * std::f64::consts::LN_2)
        + (2.0 * k0 / std::f64::consts::E).log2()
        + idle_term(p_e))
}

type MemoKey = (u32, u64, u64, u32);

static M_MEMO: OnceLock<Mutex<HashMap<MemoKey, f64>>> = OnceLock::new();

fn memo_key(q: u32, p_e: f64, ctl: &SeriesControl) -> MemoKey {
    (q, p_e.to_bits(), ctl.tol.to_bits(), ctl.k_max as u32)
}

fn memo_get(q: u32, p_e: f64, ctl: &SeriesControl) -> Option<f64> {
    M_MEMO
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .expect("memo lock")
        .get(&memo_key(q, p_e, ctl))
        .copied()
}

fn memo_put(q: u32, p_e: f64, ctl: &SeriesControl, value: f64) {
    M_MEMO
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .expect("memo lock")
        .insert(memo_key(q, p_e, ctl), value);
}

/// One level of the post-collision table: `E_k^{[level]}` for k = 1..=len.
///
/// Base cases: `E_1 = m^{[level-1]}(p_e)` (the success restarts a smaller
/// selection) and `E_2 = m^{[level-2]}(p_e) + 3` (two colliders resolve in 3
/// expected slots, then the remainder restarts). For k >= 3 the k-th entry
/// couples to the level below through the success branch, where the next
/// slot holds the k-1 remaining colliders.
fn build_level_table(level: u32, means: &[f64], below: &[f64], len: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(len);
    table.push(means[level as usize - 1]);
    if len >= 2 {
        table.push(means[level as usize - 2] + 3.0);
    }
    for k in 3..=len {
        let mut weights = HalvingWeights::new(k);
        let mut acc = 0.0;
        for i in 2..k {
            acc += weights.value() * table[i - 1];
            weights.advance();
        }
        let unit = 2f64.powi(-(k.min(1100) as i32));
        let cross = below[k - 2];
        let numer = acc + k as f64 * unit * (1.0 + cross) + 1.0;
        table.push(numer / (1.0 - 2.0 * unit));
    }
    table
}

/// Poisson-weighted series over a precomputed `E_k` table, with the same
/// certified-tail truncation as the single-node series. The growth of
/// `E_k` is extrapolated from the last increment, which is non-increasing
/// for these recursions.
fn q_series_sum(table: &[f64], p_e: f64, ctl: &SeriesControl) -> f64 {
    let denom = p_e.exp_m1();
    let mut w = p_e;
    let mut sum = table[0] * w;
    let mut k = 1usize;
    while k < table.len() {
        k += 1;
        w *= p_e / k as f64;
        let term = table[k - 1] * w;
        sum += term;
        let r = p_e / (k as f64 + 1.0);
        if r < 0.5 && k >= 3 {
            let delta = (table[k - 1] - table[k - 2]).max(0.0);
            let tail = (table[k - 1] * r / (1.0 - r) + delta * r / (1.0 - r).powi(2)) * w;
            if term / denom < ctl.tol && tail / denom < ctl.tol {
                break;
            }
        }
    }
    idle_term(p_e) + sum / denom
}

/// Builds the `E_k^{[level]}` tables bottom-up for level = 2..=q and returns
/// the level-q table (length >= `min_len`) together with the means
/// m^{[0]}..m^{[q]} computed along the way. Intermediate means are memoized.
fn q_tables(q: u32, p_e: f64, ctl: &SeriesControl, min_len: usize) -> (Vec<f64>, Vec<f64>) {
    let len = min_len.max(ctl.k_max).max(2);
    let mut means = vec![0.0, asym_recursive_q1(p_e, ctl)];
    memo_put(1, p_e, ctl, means[1]);
    let mut below = exk_prefix(len);
    let mut table = below.clone();
    for level in 2..=q {
        table = build_level_table(level, &means, &below, len);
        let m = q_series_sum(&table, p_e, ctl);
        memo_put(level, p_e, ctl, m);
        means.push(m);
        below = table.clone();
    }
    (table, means)
}

fn m_q(q: u32, p_e: f64, ctl: &SeriesControl) -> f64 {
    if q == 0 {
        return 0.0;
    }
    if let Some(v) = memo_get(q, p_e, ctl) {
        return v;
    }
    if q == 1 {
        let v = asym_recursive_q1(p_e, ctl);
        memo_put(1, p_e, ctl, v);
        return v;
    }
    let (_, means) = q_tables(q, p_e, ctl, ctl.k_max);
    means[q as usize]
}

/// Expected slots to finish selecting the best `q` nodes after `k` nodes
/// collide, not counting the colliding slot. Mutual recursion over the
/// selection count; the pair base case is exactly 3 slots.
pub fn collision_slots_q(k: usize, q: u32, p_e: f64, ctl: &SeriesControl) -> Result<f64> {
    if k == 0 {
        return Err(Error::ZeroCollisionSize);
    }
    if q < 2 {
        return Err(Error::SelectionCountTooSmall { q, min: 2 });
    }
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let (table, _) = q_tables(q, p_e, ctl, k);
    Ok(table[k - 1])
}

/// Average slots to select the best `q` nodes as n -> infinity, recursive
/// form. `q = 1` reduces to `avg_slots_asym_recursive`.
pub fn avg_slots_q_recursive(q: u32, p_e: f64, ctl: &SeriesControl) -> Result<f64> {
    if q < 1 {
        return Err(Error::SelectionCountTooSmall { q, min: 1 });
    }
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    Ok(m_q(q, p_e, ctl))
}

/// Average slots to select the best two nodes as n -> infinity, chain form:
/// `idle + P_0 m^{[1]} + sum_i (p(i) + p'(i) + p''(i+1))`.
pub fn avg_slots_q2_markov(p_e: f64, ctl: &SeriesControl) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let m1 = avg_slots_asym_markov(p_e, ctl)?;
    let mut chain = PairChain::new(p_e);
    let mut sum = 0.0;
    for _ in 0..ctl.k_max {
        let s = chain.step();
        sum += s.p + s.p_prime + s.pp_next;
        if s.p + s.p_prime + s.pp < ctl.tol {
            break;
        }
    }
    Ok(idle_term(p_e) + first_success(p_e) * m1 + sum)
}

/// Partial sum of the pair-chain expression using exactly `terms` states.
pub fn avg_slots_q2_markov_truncated(p_e: f64, terms: usize) -> Result<f64> {
    if !(p_e > 0.0) {
        return Err(Error::NonPositiveContentionLoad(p_e));
    }
    let m1 = avg_slots_asym_markov(p_e, &SeriesControl::default())?;
    let mut chain = PairChain::new(p_e);
    let sum: f64 = (0..terms)
        .map(|_| {
            let s = chain.step();
            s.p + s.p_prime + s.pp_next
        })
        .sum();
    Ok(idle_term(p_e) + first_success(p_e) * m1 + sum)
}

/// Average number of nodes selected per slot: `Q / m^{[Q]}(p_e)`.
pub fn throughput(q: u32, p_e: f64, ctl: &SeriesControl) -> Result<f64> {
    Ok(q as f64 / avg_slots_q_recursive(q, p_e, ctl)?)
}

/// Post-collision expectations `E_k^{[Q]}` for k = 1..=K, either the
/// contention-load-free single-selection column (`q = 1`) or a Q-level table
/// at a given load.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionTable {
    q: u32,
    p_e: Option<f64>,
    values: Vec<f64>,
}

impl CollisionTable {
    /// Single-selection column from the fair-splitting recursion;
    /// independent of the load.
    pub fn single(k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::ZeroCollisionSize);
        }
        Ok(Self {
            q: 1,
            p_e: None,
            values: exk_prefix(k_max),
        })
    }

    /// Table for selecting the best `q >= 2` nodes at load `p_e`.
    pub fn multi(q: u32, p_e: f64, ctl: &SeriesControl) -> Result<Self> {
        if q < 2 {
            return Err(Error::SelectionCountTooSmall { q, min: 2 });
        }
        if !(p_e > 0.0) {
            return Err(Error::NonPositiveContentionLoad(p_e));
        }
        let (values, _) = q_tables(q, p_e, ctl, ctl.k_max);
        Ok(Self {
            q,
            p_e: Some(p_e),
            values,
        })
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn p_e(&self) -> Option<f64> {
        self.p_e
    }

    /// `E_k^{[Q]}`, if `k` is within the table.
    pub fn get(&self, k: usize) -> Option<f64> {
        if k == 0 {
            None
        } else {
            self.values.get(k - 1).copied()
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CTL: SeriesControl = SeriesControl {
        tol: 1e-12,
        k_max: 200,
    };

    /// Independent splitting oracle: points collided in (lo, hi); count
    /// slots until the first success, exploring left halves first.
    fn resolve_best_oracle(points: &[f64], lo: f64, hi: f64) -> u64 {
        let mid = 0.5 * (lo + hi);
        let left = points.iter().filter(|&&y| y > lo && y < mid).count();
        match left {
            1 => 1,
            0 => 1 + resolve_best_oracle(points, mid, hi),
            _ => {
                let inner: Vec<f64> = points
                    .iter()
                    .copied()
                    .filter(|&y| y > lo && y < mid)
                    .collect();
                1 + resolve_best_oracle(&inner, lo, mid)
            }
        }
    }

    fn mc_collision_slots(k: usize, trials: u64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0u64;
        for _ in 0..trials {
            let pts: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            total += resolve_best_oracle(&pts, 0.0, 1.0);
        }
        total as f64 / trials as f64
    }

    #[test]
    fn collision_slots_base_cases() {
        assert_eq!(collision_slots_q1(1).unwrap(), 0.0);
        assert_eq!(collision_slots_q1(2).unwrap(), 2.0);
        assert!((collision_slots_q1(3).unwrap() - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(collision_slots_q1(0), Err(Error::ZeroCollisionSize));
    }

    #[test]
    fn collision_slots_match_splitting_oracle() {
        // Brute-force fair-splitting simulation, 10^6 independent trials.
        let sim2 = mc_collision_slots(2, 1_000_000, 11);
        assert!((sim2 - 2.0).abs() < 0.01, "E[X_2] oracle gave {sim2}");
        let sim3 = mc_collision_slots(3, 1_000_000, 12);
        assert!((sim3 - 7.0 / 3.0).abs() < 0.01, "E[X_3] oracle gave {sim3}");
    }

    #[test]
    fn collision_slots_growth_bound() {
        let table = exk_prefix(1000);
        for k in 2..=1000usize {
            assert!(
                table[k - 1] <= (k as f64).log2() + 1.0,
                "E[X_{k}] = {} above log2(k)+1",
                table[k - 1]
            );
        }
    }

    #[test]
    fn finite_single_node_is_one_slot() {
        assert_eq!(avg_slots_finite(1, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn finite_with_no_idle_phase_is_pure_resolution() {
        // p_e = n empties the idle sweep: every node transmits in slot 1 and
        // collides, so the average is exactly E[X_n] + 1.
        let v = avg_slots_finite(5, 5.0).unwrap();
        assert_eq!(v, collision_slots_q1(5).unwrap() + 1.0);
    }

    #[test]
    fn finite_rejects_bad_arguments() {
        assert_eq!(avg_slots_finite(0, 1.0), Err(Error::EmptyNodeSet));
        assert!(matches!(
            avg_slots_finite(10, 0.0),
            Err(Error::NonPositiveContentionLoad(_))
        ));
        assert!(matches!(
            avg_slots_finite(10, 10.5),
            Err(Error::ContentionLoadTooLarge { .. })
        ));
    }

    #[test]
    fn finite_value_at_desk_scale() {
        // m_10(1.088) = 2.3956, cross-checked against a 2*10^6-trial
        // protocol simulation (2.3946 +/- 0.0012). The asymptote 2.4665 sits
        // 0.072 above it; ten nodes select a little faster than infinitely
        // many.
        let v = avg_slots_finite(10, 1.088).unwrap();
        assert!((v - 2.3956).abs() < 2e-3, "m_10(1.088) = {v}");
        let asym = avg_slots_asym_recursive(1.088, &CTL).unwrap();
        assert!((asym - v).abs() < 0.08 && asym > v);
    }

    #[test]
    fn finite_converges_to_asymptotic() {
        for p_e in [0.5, 1.0, 1.5, 2.0] {
            let finite = avg_slots_finite(1000, p_e).unwrap();
            let asym = avg_slots_asym_recursive(p_e, &CTL).unwrap();
            assert!(
                (finite - asym).abs() < 0.01,
                "n=1000 p_e={p_e}: {finite} vs {asym}"
            );
        }
    }

    #[test]
    fn recursive_hits_reported_optimum() {
        let v = avg_slots_asym_recursive(1.088, &CTL).unwrap();
        assert!((v - 2.467).abs() < 1e-3, "m(1.088) = {v}");
    }

    #[test]
    fn recursive_small_load_is_idle_dominated() {
        let v = avg_slots_asym_recursive(0.01, &CTL).unwrap();
        let idle = 1.0 / -(-0.01f64).exp_m1();
        assert!(
            (v - idle).abs() / idle < 0.01,
            "m(0.01) = {v} vs idle {idle}"
        );
    }

    #[test]
    fn two_asymptotic_forms_agree() {
        for p_e in [0.3, 1.088, 2.0, 2.9] {
            let a = avg_slots_asym_recursive(p_e, &CTL).unwrap();
            let b = avg_slots_asym_markov(p_e, &CTL).unwrap();
            assert!((a - b).abs() < 1e-9, "p_e={p_e}: {a} vs {b}");
        }
    }

    #[test]
    fn chain_q1_first_success_probability() {
        let chain = chain_probabilities_q1(1.0, &CTL).unwrap();
        assert!((chain.p0 - 0.581_976_706_9).abs() < 1e-8);
        for (&p_l, &p) in chain.p_left.iter().zip(&chain.visit) {
            assert!(p_l > 0.0 && p_l < 1.0);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn chain_q2_probabilities_are_consistent() {
        let chain = chain_probabilities_q2(1.221, &CTL).unwrap();
        // First right-sibling success probability straight from its formula.
        let x: f64 = 1.221 / 2.0;
        let pr1 = x * (-x).exp() / -(-x).exp_m1();
        assert!((chain.p_right[0] - pr1).abs() < 1e-14);
        assert_eq!(chain.visit_double_prime[0], 0.0);
        for i in 0..chain.visit.len() {
            assert!((0.0..=1.0).contains(&chain.p_left[i]));
            assert!((0.0..=1.0).contains(&chain.p_right[i]));
            assert!((chain.visit_prime[i] - chain.visit[i] * chain.p_left[i]).abs() < 1e-15);
        }
        // p''(2) = p'(1) (1 - P_R1).
        assert!(
            (chain.visit_double_prime[1] - chain.visit_prime[0] * (1.0 - chain.p_right[0])).abs()
                < 1e-15
        );
    }

    #[test]
    fn forms_agree_at_tiny_load() {
        // Exercises the series branch of the split-chain probabilities.
        let a = avg_slots_asym_recursive(0.01, &CTL).unwrap();
        let b = avg_slots_asym_markov(0.01, &CTL).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn chain_q1_visits_decrease() {
        let chain = chain_probabilities_q1(1.088, &CTL).unwrap();
        for w in chain.visit.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let total: f64 = chain.visit.iter().sum();
        assert!(total.is_finite());
    }

    #[test]
    fn truncated_forms_are_lower_bounds() {
        for p_e in [0.5, 1.088, 3.0] {
            let full_rec = avg_slots_asym_recursive(p_e, &CTL).unwrap();
            let full_mar = avg_slots_asym_markov(p_e, &CTL).unwrap();
            let mut prev_rec = 0.0;
            let mut prev_mar = 0.0;
            for terms in 1..=10 {
                let t_rec = avg_slots_asym_recursive_truncated(p_e, terms).unwrap();
                let t_mar = avg_slots_asym_markov_truncated(p_e, terms).unwrap();
                assert!(t_rec <= full_rec + 1e-12);
                assert!(t_mar <= full_mar + 1e-12);
                assert!(t_rec >= prev_rec && t_mar >= prev_mar);
                prev_rec = t_rec;
                prev_mar = t_mar;
            }
        }
    }

    #[test]
    fn upper_bound_at_reference_point() {
        let v = upper_bound(1.088, 2.0).unwrap();
        assert!((v - 2.8502).abs() < 1e-3, "bound = {v}");
    }

    #[test]
    fn upper_bound_tangent_edge() {
        let k0 = std::f64::consts::E / 2.0;
        let p_e = 0.9;
        let v = upper_bound(p_e, k0).unwrap();
        let expected =
            2.0 * p_e / (std::f64::consts::E * std::f64::consts::LN_2) + 1.0 / -(-p_e).exp_m1();
        assert!((v - expected).abs() < 1e-12);
        assert!(matches!(
            upper_bound(1.0, 1.0),
            Err(Error::TangentPointTooSmall(_))
        ));
    }

    #[test]
    fn pair_collision_base_case() {
        assert_eq!(collision_slots_q(2, 2, 1.0, &CTL).unwrap(), 3.0);
        assert_eq!(collision_slots_q(2, 2, 2.2, &CTL).unwrap(), 3.0);
    }

    #[test]
    fn pair_collision_among_two_for_three_selections() {
        let v = collision_slots_q(2, 3, 1.214, &CTL).unwrap();
        assert!((v - 5.48).abs() < 0.02, "E_2^[3](1.214) = {v}");
    }

    #[test]
    fn triple_collision_closed_form_and_oracle() {
        // E_3^{[2]} from the recursion: (3*3 + 3*(1+2) + 8) / 6 = 26/6,
        // independent of the load.
        let v = collision_slots_q(3, 2, 1.221, &CTL).unwrap();
        assert!((v - 26.0 / 6.0).abs() < 1e-12, "E_3^[2] = {v}");
        assert!((collision_slots_q(3, 2, 0.7, &CTL).unwrap() - v).abs() < 1e-12);

        // Conditioned Monte Carlo: three uniform points collide in (0, 1),
        // then the pair-selection machine runs until its second success.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 400_000u64;
        let mut total = 0u64;
        for _ in 0..trials {
            let pts: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let mut state = crate::protocol::QSelectState::initial(1.0);
            state = crate::protocol::q_update(&state, crate::protocol::Feedback::Collision, 1.0);
            let mut selected = 0u32;
            let mut slots = 0u64;
            while selected < 2 {
                let count = pts
                    .iter()
                    .filter(|&&y| {
                        y > state.interval_start && y < state.interval_start + state.interval_width
                    })
                    .count();
                let fb = crate::protocol::sink_feedback(count);
                slots += 1;
                if fb == crate::protocol::Feedback::Success {
                    selected += 1;
                    if selected == 2 {
                        break;
                    }
                }
                state = crate::protocol::q_update(&state, fb, 1.0);
                assert!(slots < 10_000);
            }
            total += slots;
        }
        let sim = total as f64 / trials as f64;
        assert!(
            (sim - 26.0 / 6.0).abs() < 0.02,
            "conditioned oracle gave {sim}"
        );
    }

    #[test]
    fn collision_slots_q_rejects_bad_arguments() {
        assert_eq!(
            collision_slots_q(0, 2, 1.0, &CTL),
            Err(Error::ZeroCollisionSize)
        );
        assert!(matches!(
            collision_slots_q(2, 1, 1.0, &CTL),
            Err(Error::SelectionCountTooSmall { .. })
        ));
        assert!(matches!(
            collision_slots_q(2, 2, -1.0, &CTL),
            Err(Error::NonPositiveContentionLoad(_))
        ));
    }

    #[test]
    fn q_recursive_matches_reported_optima() {
        let cases = [
            (2u32, 1.221, 4.406, 2e-3),
            (3, 1.214, 6.491, 2e-3),
            (6, 1.241, 12.645, 5e-3),
        ];
        for (q, p_e, expected, tol) in cases {
            let v = avg_slots_q_recursive(q, p_e, &CTL).unwrap();
            assert!((v - expected).abs() < tol, "m^[{q}]({p_e}) = {v}");
        }
    }

    #[test]
    fn q2_chain_form_agrees_with_recursive() {
        for p_e in [0.4, 1.221, 2.5] {
            let a = avg_slots_q_recursive(2, p_e, &CTL).unwrap();
            let b = avg_slots_q2_markov(p_e, &CTL).unwrap();
            assert!((a - b).abs() < 1e-9, "p_e={p_e}: {a} vs {b}");
        }
    }

    #[test]
    fn pair_table_depends_on_load_only_through_first_entry() {
        // For Q = 2 every post-collision entry past k = 1 is load-free: the
        // load enters only through E_1 = m^{[1]}(p_e).
        let low = CollisionTable::multi(2, 0.9, &CTL).unwrap();
        let high = CollisionTable::multi(2, 1.7, &CTL).unwrap();
        assert_ne!(low.get(1), high.get(1));
        for k in 2..=12 {
            let (a, b) = (low.get(k).unwrap(), high.get(k).unwrap());
            assert!((a - b).abs() < 1e-12, "E_{k}^[2] drifted: {a} vs {b}");
        }
    }

    #[test]
    fn q2_truncation_is_lower_bound() {
        let full = avg_slots_q2_markov(1.221, &CTL).unwrap();
        let mut prev = 0.0;
        for terms in 1..=8 {
            let t = avg_slots_q2_markov_truncated(1.221, terms).unwrap();
            assert!(t <= full + 1e-12 && t >= prev);
            prev = t;
        }
    }

    #[test]
    fn running_twice_is_slower_than_pair_selection() {
        let twice = 2.0 * avg_slots_asym_recursive(1.088, &CTL).unwrap();
        let pair = avg_slots_q_recursive(2, 1.221, &CTL).unwrap();
        assert!(pair < twice);
    }

    #[test]
    fn throughput_reference_points() {
        let t1 = throughput(1, 1.088, &CTL).unwrap();
        assert!((t1 - 1.0 / 2.467).abs() < 1e-3);
        let t2 = throughput(2, 1.221, &CTL).unwrap();
        assert!((t2 - 2.0 / 4.406).abs() < 1e-3);
    }

    #[test]
    fn collision_table_views() {
        let single = CollisionTable::single(32).unwrap();
        assert_eq!(single.q(), 1);
        assert_eq!(single.p_e(), None);
        assert_eq!(single.get(1), Some(0.0));
        assert_eq!(single.get(2), Some(2.0));
        assert_eq!(single.get(0), None);
        assert_eq!(single.get(33), None);

        let pair = CollisionTable::multi(2, 1.221, &CTL).unwrap();
        assert_eq!(pair.q(), 2);
        assert_eq!(pair.get(2), Some(3.0));
        let m1 = avg_slots_asym_recursive(1.221, &CTL).unwrap();
        assert!((pair.get(1).unwrap() - m1).abs() < 1e-12);
    }

    #[test]
    fn series_control_validation() {
        assert!(SeriesControl::new(1e-10, 50).is_ok());
        assert!(matches!(
            SeriesControl::new(0.0, 50),
            Err(Error::NonPositiveTolerance(_))
        ));
        assert!(matches!(
            SeriesControl::new(1e-10, 5),
            Err(Error::TermCapTooSmall(5))
        ));
    }

    #[test]
    fn memoized_values_are_stable() {
        let a = avg_slots_q_recursive(4, 1.3, &CTL).unwrap();
        let b = avg_slots_q_recursive(4, 1.3, &CTL).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
