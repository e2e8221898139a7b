//! Reproducible replica execution and streaming moment accumulation.
//!
//! Every replica draws from its own counter-based stream keyed by
//! `(seed, stream_id)`, so a replica's randomness never depends on which
//! thread ran it. Results are gathered in replica-id order and folded with a
//! fixed pairwise reduction tree, which keeps the output bit-identical for
//! any degree of parallelism.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counter-based random stream. `(seed, stream_id)` determines the sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position of the underlying block counter, in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an experiment-specific seed from a master seed and a label, so that
/// independent experiments launched from one seed do not share streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(seed ^ mix64(h))
}

/// Welford accumulator with exact pairwise merge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    pub n: u64,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut acc = Self::new();
        for &v in values {
            acc.push(v);
        }
        acc
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    /// Chan et al. parallel combination.
    pub fn merge(&self, other: &Self) -> Self {
        if other.n == 0 {
            return *self;
        }
        if self.n == 0 {
            return *other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let nf = n as f64;
        let mean = self.mean + delta * (other.n as f64 / nf);
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64 / nf);
        Self {
            n,
            mean,
            m2,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// Unbiased sample variance; NaN when `n < 2`.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean; NaN when `n < 2` (the "n<2" sentinel).
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            (self.m2 / (self.n as f64 * (self.n - 1) as f64)).sqrt()
        }
    }

    pub fn estimate(&self) -> EstimateCI {
        EstimateCI {
            mean: self.mean,
            stderr: self.stderr(),
            n: self.n,
        }
    }
}

/// Fold accumulators with a fixed pairwise tree over their order.
pub fn reduce_ordered(mut accs: Vec<MomentAccumulator>) -> MomentAccumulator {
    if accs.is_empty() {
        return MomentAccumulator::new();
    }
    while accs.len() > 1 {
        accs = accs
            .chunks(2)
            .map(|c| if c.len() == 2 { c[0].merge(&c[1]) } else { c[0] })
            .collect();
    }
    accs[0]
}

/// Mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCI {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl EstimateCI {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n: 1,
        }
    }

    /// Distance to `target` in units of the standard error. An exact match
    /// with zero stderr gives 0; any mismatch with zero stderr gives infinity.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }

    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            mean: self.mean * c,
            stderr: self.stderr * c.abs(),
            n: self.n,
        }
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_stderr(&self, other: &Self) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiLevel {
    P95,
    P99,
    ThreeSigma,
}

impl CiLevel {
    pub fn z(self) -> f64 {
        match self {
            CiLevel::P95 => 1.959_963_984_540_054,
            CiLevel::P99 => 2.575_829_303_548_901,
            CiLevel::ThreeSigma => 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: EstimateCI,
    pub half_width: f64,
    pub level: CiLevel,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.estimate.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.estimate.mean + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

pub fn ci(acc: &MomentAccumulator, level: CiLevel) -> Result<ConfidenceInterval> {
    if acc.n < 2 {
        return Err(Error::TooFewSamples(acc.n));
    }
    let estimate = acc.estimate();
    Ok(ConfidenceInterval {
        estimate,
        half_width: level.z() * estimate.stderr,
        level,
    })
}

/// Execution settings shared by every replicated experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Replication {
    pub replicas: usize,
    /// Worker threads; 0 means one per available core.
    pub parallelism: usize,
    pub seed: u64,
}

impl Replication {
    pub fn new(replicas: usize, parallelism: usize, seed: u64) -> Self {
        Self {
            replicas,
            parallelism,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_replicas(self, replicas: usize) -> Self {
        Self { replicas, ..self }
    }

    /// Same settings, seed derived from `label`.
    pub fn derive(self, label: &str) -> Self {
        self.with_seed(derive_seed(self.seed, label))
    }
}

/// Run `task` once per replica id and return the results in id order.
///
/// Replica `i` receives `RngStream::new(seed, i)`. The first failing replica
/// (lowest id) is reported together with the total failure count.
pub fn map_replicas<T, F>(rep: Replication, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut RngStream) -> Result<T> + Sync + Send,
{
    if rep.replicas == 0 {
        return Err(Error::Domain("replicas must be at least 1".into()));
    }
    let run = |i: usize| {
        let id = i as u64;
        let mut rng = RngStream::new(rep.seed, id);
        task(id, &mut rng)
    };
    let results: Vec<Result<T>> = if rep.parallelism == 1 {
        (0..rep.replicas).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(rep.parallelism)
            .build()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
        pool.install(|| (0..rep.replicas).into_par_iter().map(run).collect())
    };
    let failures = results.iter().filter(|r| r.is_err()).count();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                return Err(Error::Replica {
                    replica: i as u64,
                    failures,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

/// Run a scalar-valued task per replica and accumulate its moments.
pub fn run_replicated<F>(rep: Replication, task: F) -> Result<MomentAccumulator>
where
    F: Fn(u64, &mut RngStream) -> Result<f64> + Sync + Send,
{
    let values = map_replicas(rep, task)?;
    Ok(reduce_ordered(
        values
            .into_iter()
            .map(|v| MomentAccumulator::from_slice(&[v]))
            .collect(),
    ))
}

/// Smooth function of sample means, e.g. a ratio of means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    /// Plug-in value at the sample means.
    pub naive: f64,
    /// Jackknife bias-corrected value.
    pub jackknife: f64,
    /// Jackknife standard error.
    pub stderr: f64,
    pub n: u64,
}

impl RatioEstimate {
    pub fn estimate(&self) -> EstimateCI {
        EstimateCI {
            mean: self.jackknife,
            stderr: self.stderr,
            n: self.n,
        }
    }
}

/// Delete-one-group jackknife for a smooth function of several sample
/// means. `columns[j][i]` is the `i`-th paired sample of quantity `j`;
/// samples are grouped into at most `groups` contiguous blocks.
pub fn jackknife<F>(columns: &[&[f64]], groups: usize, f: F) -> Result<RatioEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    let q = columns.len();
    let n = columns.first().map_or(0, |c| c.len());
    assert!(
        columns.iter().all(|c| c.len() == n),
        "paired samples must have equal length"
    );
    if n < 2 {
        return Err(Error::TooFewSamples(n as u64));
    }
    let g = groups.clamp(2, n);
    let mut sums = vec![vec![0.0; q]; g];
    let mut counts = vec![0usize; g];
    for i in 0..n {
        let k = i * g / n;
        counts[k] += 1;
        for j in 0..q {
            sums[k][j] += columns[j][i];
        }
    }
    let total: Vec<f64> = (0..q).map(|j| sums.iter().map(|s| s[j]).sum()).collect();
    let means: Vec<f64> = total.iter().map(|t| t / n as f64).collect();
    let naive = f(&means);
    let loo: Vec<f64> = (0..g)
        .map(|k| {
            let rest = (n - counts[k]) as f64;
            let m: Vec<f64> = (0..q).map(|j| (total[j] - sums[k][j]) / rest).collect();
            f(&m)
        })
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / g as f64;
    let gf = g as f64;
    let var = (gf - 1.0) / gf * loo.iter().map(|x| (x - loo_mean).powi(2)).sum::<f64>();
    Ok(RatioEstimate {
        naive,
        jackknife: gf * naive - (gf - 1.0) * loo_mean,
        stderr: var.sqrt(),
        n: n as u64,
    })
}

/// Jackknifed ratio of means of paired samples.
pub fn ratio_of_means(num: &[f64], den: &[f64], groups: usize) -> Result<RatioEstimate> {
    jackknife(&[num, den], groups, |m| m[0] / m[1])
}

/// Mean and standard error of per-batch means. Used where samples inside a
/// replica share a random environment and only the replicas are independent.
pub fn batch_estimate(batch_means: &[f64]) -> EstimateCI {
    MomentAccumulator::from_slice(batch_means).estimate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn constant_task_has_zero_spread() {
        let acc = run_replicated(Replication::new(16, 1, 5), |_, _| Ok(1.0)).unwrap();
        assert_eq!(acc.n, 16);
        assert_eq!(acc.mean, 1.0);
        assert_eq!(acc.m2, 0.0);
    }

    #[test]
    fn single_replica_reports_nan_stderr() {
        let acc = run_replicated(Replication::new(1, 1, 5), |_, r| Ok(r.random::<f64>())).unwrap();
        assert_eq!(acc.n, 1);
        assert!(acc.stderr().is_nan());
        assert_eq!(ci(&acc, CiLevel::P95), Err(Error::TooFewSamples(1)));
    }

    #[test]
    fn parallelism_does_not_change_bits() {
        let task = |_: u64, r: &mut RngStream| {
            let mut s = 0.0;
            for _ in 0..100 {
                s += r.random::<f64>();
            }
            Ok(s)
        };
        let a = run_replicated(Replication::new(257, 1, 42), task).unwrap();
        let b = run_replicated(Replication::new(257, 8, 42), task).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.m2.to_bits(), b.m2.to_bits());
    }

    #[test]
    fn ci_examples() {
        let acc = MomentAccumulator::from_slice(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(ci(&acc, CiLevel::P95).unwrap().estimate.stderr, 0.0);

        let acc = MomentAccumulator::from_slice(&[0.0, 2.0]);
        let c = ci(&acc, CiLevel::ThreeSigma).unwrap();
        assert_eq!(c.estimate.mean, 1.0);
        assert!((c.estimate.stderr - 1.0).abs() < 1e-15);
        assert!((c.half_width - 3.0).abs() < 1e-15);
    }

    #[test]
    fn replica_errors_carry_the_lowest_id() {
        let err = map_replicas(Replication::new(10, 4, 1), |i, _| {
            if i == 3 || i == 7 {
                Err(Error::PathTooShort)
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        match err {
            Error::Replica {
                replica, failures, ..
            } => {
                assert_eq!(replica, 3);
                assert_eq!(failures, 2);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn streams_are_uncorrelated() {
        // Lag-1 correlation between first outputs of adjacent streams.
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| RngStream::new(9, i).random::<f64>() - 0.5)
            .collect();
        let num: f64 = xs.windows(2).map(|w| w[0] * w[1]).sum();
        let den: f64 = xs.iter().map(|x| x * x).sum();
        let corr = num / den;
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr = {corr}");
    }

    #[test]
    fn ratio_jackknife_matches_naive_for_proportional_samples() {
        let num = [2.0, 4.0, 6.0, 8.0];
        let den = [1.0, 2.0, 3.0, 4.0];
        let r = ratio_of_means(&num, &den, 4).unwrap();
        assert!((r.naive - 2.0).abs() < 1e-15);
        assert!((r.jackknife - 2.0).abs() < 1e-12);
        assert!(r.stderr < 1e-12);
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..200),
            split in 0usize..200,
        ) {
            let k = split.min(xs.len());
            let whole = MomentAccumulator::from_slice(&xs);
            let merged = MomentAccumulator::from_slice(&xs[..k])
                .merge(&MomentAccumulator::from_slice(&xs[k..]));
            prop_assert_eq!(whole.n, merged.n);
            let scale = 1.0 + whole.mean.abs();
            prop_assert!((whole.mean - merged.mean).abs() <= 1e-12 * scale);
            let scale2 = 1.0 + whole.m2.abs();
            prop_assert!((whole.m2 - merged.m2).abs() <= 1e-12 * scale2 * xs.len() as f64);
            prop_assert_eq!(whole.min, merged.min);
            prop_assert_eq!(whole.max, merged.max);
        }
    }
}
