//! Metric models and the normalized-metric transform.
//!
//! Every node carries a suitability metric with complementary CDF `F_c`.
//! The selection machinery never works on raw metrics: it maps node `i` to
//! the normalized value `y_i = n * F_c(u_i)`, which is uniform on `[0, n]`
//! whatever the metric distribution, and reverses the order (the best metric
//! has the smallest `y`). Discrete metrics are first made continuous by
//! proportional expansion, which draws a replacement metric uniformly from a
//! bin whose length is the probability mass of the original level.

use rand::Rng;

use crate::error::{Error, Result};

/// A continuous metric distribution, described by its complementary CDF.
///
/// `ccdf` must be strictly decreasing on the support and `inverse_ccdf` its
/// inverse: `ccdf(inverse_ccdf(p)) == p` for `p` in `(0, 1)`.
pub trait ContinuousMetricModel {
    fn ccdf(&self, u: f64) -> f64;
    fn inverse_ccdf(&self, p: f64) -> f64;

    /// Infimum of the metric support, i.e. `inverse_ccdf(1)`.
    fn infimum(&self) -> f64 {
        self.inverse_ccdf(1.0)
    }
}

/// Metric uniform on (0, 1): `F_c(u) = 1 - u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformMetric;

impl ContinuousMetricModel for UniformMetric {
    fn ccdf(&self, u: f64) -> f64 {
        (1.0 - u).clamp(0.0, 1.0)
    }

    fn inverse_ccdf(&self, p: f64) -> f64 {
        1.0 - p.clamp(0.0, 1.0)
    }
}

/// Exponential-tail metric on (0, inf): `F_c(u) = e^{-u}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExponentialTailMetric;

impl ContinuousMetricModel for ExponentialTailMetric {
    fn ccdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            1.0
        } else {
            (-u).exp()
        }
    }

    fn inverse_ccdf(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        if p == 0.0 {
            f64::INFINITY
        } else {
            -p.ln()
        }
    }
}

/// Built-in model registry for the CLI. The analysis is distribution-free
/// after normalization, so two shapes are plenty for demonstration.
pub fn metric_model(name: &str) -> Option<Box<dyn ContinuousMetricModel>> {
    match name {
        "uniform" => Some(Box::new(UniformMetric)),
        "exponential" | "exponential-tail" => Some(Box::new(ExponentialTailMetric)),
        _ => None,
    }
}

/// Normalized metrics `y_i = n * F_c(u_i)` for one contention instance.
///
/// Selecting the minimum `y` is equivalent to selecting the maximum raw
/// metric, because the CCDF is decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMetrics {
    y: Vec<f64>,
}

impl NormalizedMetrics {
    /// Wrap precomputed normalized values, checking `0 <= y_i <= n`.
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyNodeSet);
        }
        let n = y.len() as u64;
        for &v in &y {
            if !(0.0..=n as f64).contains(&v) {
                return Err(Error::MetricOutOfRange { value: v, n });
            }
        }
        Ok(Self { y })
    }

    /// Draw `n` i.i.d. values uniform on (0, n), the distribution of
    /// `n * F_c(u)` for any continuous model. This is the hot path used by
    /// the Monte Carlo engine; it skips the CCDF round-trip entirely.
    pub fn sample_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyNodeSet);
        }
        let mut m = Self { y: vec![0.0; n] };
        m.resample_uniform(rng);
        Ok(m)
    }

    /// Refill in place with fresh uniform draws (buffer reuse across trials).
    pub fn resample_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.y.len() as f64;
        for v in &mut self.y {
            *v = n * open_unit_draw(rng);
        }
    }

    /// Refill by drawing physical metrics from `model` and normalizing
    /// through its CCDF. Distribution-identical to `resample_uniform`;
    /// exercises an arbitrary metric model end to end.
    pub fn resample_from_model<R: Rng + ?Sized>(
        &mut self,
        model: &dyn ContinuousMetricModel,
        rng: &mut R,
    ) {
        let n = self.y.len() as f64;
        for v in &mut self.y {
            let u = model.inverse_ccdf(open_unit_draw(rng));
            *v = (n * model.ccdf(u)).clamp(0.0, n);
        }
    }

    /// Refill from i.i.d. discrete levels of `pmf`, made continuous by
    /// proportional expansion. Higher levels map to smaller values.
    pub fn resample_from_pmf<R: Rng + ?Sized>(
        &mut self,
        pmf: &DiscreteMetricModel,
        rng: &mut R,
    ) -> Result<()> {
        let n = self.y.len() as f64;
        for v in &mut self.y {
            let level = pmf.sample_level(rng);
            *v = n * (1.0 - proportional_expand(level, pmf, rng)?);
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }
}

/// Uniform draw on the open interval (0, 1); exact endpoint draws are
/// rejected and redrawn (measure-zero event).
fn open_unit_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 && v < 1.0 {
            return v;
        }
    }
}

/// Sample `n` nodes from `model` and normalize: draws the physical metric by
/// inverse transform and maps it through the CCDF, exercising the full
/// `u -> y` round trip. Each `y_i` comes out uniform on (0, n).
pub fn sample_continuous<R: Rng + ?Sized>(
    n: usize,
    model: &dyn ContinuousMetricModel,
    rng: &mut R,
) -> Result<NormalizedMetrics> {
    if n == 0 {
        return Err(Error::EmptyNodeSet);
    }
    let y = (0..n)
        .map(|_| {
            let u = model.inverse_ccdf(open_unit_draw(rng));
            (n as f64 * model.ccdf(u)).clamp(0.0, n as f64)
        })
        .collect();
    NormalizedMetrics::new(y)
}

/// An omega-valued discrete metric: level `j` in `1..=omega` has probability
/// `pmf[j-1]`. Higher levels are better. Cumulative sums are precomputed at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMetricModel {
    pmf: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DiscreteMetricModel {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::NonPositivePmfEntry);
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::PmfNotNormalized(total));
        }
        let mut cumulative = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cumulative.push(acc);
        }
        // Pin the final edge so the top bin always closes at exactly 1.
        *cumulative.last_mut().expect("non-empty pmf") = 1.0;
        Ok(Self { pmf, cumulative })
    }

    /// Number of levels (omega).
    pub fn levels(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Bin `(lo, hi)` that level `j` expands into.
    pub fn bin(&self, level: usize) -> Result<(f64, f64)> {
        if level < 1 || level > self.levels() {
            return Err(Error::LevelOutOfRange {
                level,
                levels: self.levels(),
            });
        }
        let lo = if level == 1 {
            0.0
        } else {
            self.cumulative[level - 2]
        };
        Ok((lo, self.cumulative[level - 1]))
    }

    /// Draw a level `1..=omega` from the pmf.
    pub fn sample_level<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let v = open_unit_draw(rng);
        self.cumulative.partition_point(|&c| c < v) + 1
    }
}

/// Proportional expansion: map discrete level `j` to a continuous metric
/// drawn uniformly from the open bin
/// `(sum of pmf below j, sum of pmf through j)`.
///
/// Distinct levels keep their order (every output for a higher level exceeds
/// every output for a lower one), and across nodes the expanded metric is
/// uniform on (0, 1), so the continuous selection machinery applies
/// unchanged.
pub fn proportional_expand<R: Rng + ?Sized>(
    level: usize,
    model: &DiscreteMetricModel,
    rng: &mut R,
) -> Result<f64> {
    let (lo, hi) = model.bin(level)?;
    loop {
        let v = lo + (hi - lo) * open_unit_draw(rng);
        if v > lo && v < hi {
            return Ok(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Kolmogorov distance between sorted samples in [0,1] and uniform(0,1).
    fn ks_distance(sorted: &[f64]) -> f64 {
        let n = sorted.len() as f64;
        sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let hi = (i as f64 + 1.0) / n - x;
                let lo = x - i as f64 / n;
                hi.max(lo)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_node_sample_in_unit_range() {
        let mut r = rng(1);
        let m = sample_continuous(1, &UniformMetric, &mut r).unwrap();
        assert!(m.values()[0] > 0.0 && m.values()[0] < 1.0);
    }

    #[test]
    fn normalized_draws_are_uniform() {
        let mut r = rng(42);
        let n = 10usize;
        let mut scaled = Vec::with_capacity(100_000);
        for _ in 0..10_000 {
            let m = sample_continuous(n, &ExponentialTailMetric, &mut r).unwrap();
            scaled.extend(m.values().iter().map(|y| y / n as f64));
        }
        scaled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(ks_distance(&scaled) < 0.01);
    }

    #[test]
    fn normalization_reverses_order() {
        // u = (5.0, 1.0) under any strictly decreasing CCDF gives y_1 < y_2.
        let model = ExponentialTailMetric;
        let y1 = 2.0 * model.ccdf(5.0);
        let y2 = 2.0 * model.ccdf(1.0);
        assert!(y1 < y2);
    }

    #[test]
    fn normalize_then_rank_equals_reverse_rank() {
        let model = ExponentialTailMetric;
        let raw = [0.3, 2.7, 1.1, 0.9, 4.2, 0.05];
        let n = raw.len() as f64;
        let y: Vec<f64> = raw.iter().map(|&u| n * model.ccdf(u)).collect();
        let mut by_metric: Vec<usize> = (0..raw.len()).collect();
        by_metric.sort_by(|&a, &b| raw[b].partial_cmp(&raw[a]).unwrap());
        let mut by_y: Vec<usize> = (0..raw.len()).collect();
        by_y.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap());
        assert_eq!(by_metric, by_y);
    }

    #[test]
    fn ccdf_inverse_round_trip() {
        for model in [
            metric_model("uniform").unwrap(),
            metric_model("exponential").unwrap(),
        ] {
            for p in [1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
                assert!((model.ccdf(model.inverse_ccdf(p)) - p).abs() < 1e-12);
            }
        }
        assert!(metric_model("cauchy").is_none());
    }

    #[test]
    fn rejects_empty_sample() {
        let mut r = rng(3);
        assert_eq!(
            sample_continuous(0, &UniformMetric, &mut r),
            Err(Error::EmptyNodeSet)
        );
        assert!(NormalizedMetrics::new(vec![]).is_err());
        assert!(NormalizedMetrics::new(vec![3.5]).is_err()); // above n = 1
    }

    #[test]
    fn pmf_validation() {
        assert!(DiscreteMetricModel::new(vec![]).is_err());
        assert!(DiscreteMetricModel::new(vec![0.5, 0.0, 0.5]).is_err());
        assert!(DiscreteMetricModel::new(vec![0.5, 0.4]).is_err());
        assert!(DiscreteMetricModel::new(vec![0.2, 0.5, 0.3]).is_ok());
        assert!(DiscreteMetricModel::new(vec![1.0]).is_ok());
    }

    #[test]
    fn expand_lands_in_level_bin() {
        let model = DiscreteMetricModel::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut r = rng(7);
        for _ in 0..1000 {
            let v = proportional_expand(1, &model, &mut r).unwrap();
            assert!(v > 0.0 && v < 0.2);
            let v = proportional_expand(2, &model, &mut r).unwrap();
            assert!(v > 0.2 && v < 0.7);
            let v = proportional_expand(3, &model, &mut r).unwrap();
            assert!(v > 0.7 && v < 1.0);
        }
        assert_eq!(
            proportional_expand(4, &model, &mut r),
            Err(Error::LevelOutOfRange {
                level: 4,
                levels: 3
            })
        );
        assert!(proportional_expand(0, &model, &mut r).is_err());
    }

    #[test]
    fn single_bin_spans_unit_interval() {
        let model = DiscreteMetricModel::new(vec![1.0]).unwrap();
        let mut r = rng(11);
        for _ in 0..100 {
            let v = proportional_expand(1, &model, &mut r).unwrap();
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn expanded_population_is_uniform() {
        // Levels sampled from the pmf, then expanded: the mixture is uniform.
        let model = DiscreteMetricModel::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut r = rng(13);
        let mut vs: Vec<f64> = (0..100_000)
            .map(|_| {
                let level = model.sample_level(&mut r);
                proportional_expand(level, &model, &mut r).unwrap()
            })
            .collect();
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(ks_distance(&vs) < 0.01);
    }

    #[test]
    fn expanded_draws_distinct_at_scale() {
        let model = DiscreteMetricModel::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut r = rng(17);
        let mut vs: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let level = model.sample_level(&mut r);
                proportional_expand(level, &model, &mut r).unwrap()
            })
            .collect();
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(vs.windows(2).all(|w| w[0] < w[1]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn expansion_preserves_level_order(
                weights in proptest::collection::vec(0.05f64..1.0, 2..6),
                seed in 0u64..1000,
            ) {
                let total: f64 = weights.iter().sum();
                let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let model = DiscreteMetricModel::new(pmf);
                prop_assume!(model.is_ok());
                let model = model.unwrap();
                let mut r = rng(seed);
                let levels: Vec<usize> = (1..=model.levels()).collect();
                let expanded: Vec<f64> = levels
                    .iter()
                    .map(|&l| proportional_expand(l, &model, &mut r).unwrap())
                    .collect();
                for w in expanded.windows(2) {
                    prop_assert!(w[0] < w[1]);
                }
            }

            #[test]
            fn uniform_samples_stay_in_range(n in 1usize..50, seed in 0u64..1000) {
                let mut r = rng(seed);
                let m = NormalizedMetrics::sample_uniform(n, &mut r).unwrap();
                for &y in m.values() {
                    prop_assert!(y > 0.0 && y < n as f64);
                }
            }
        }
    }
}
