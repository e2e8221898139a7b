//! Offspring laws and the closed-form constants derived from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};

/// Largest supported number of children.
pub const MAX_CHILDREN: usize = 64;

const NORM_TOL: f64 = 1e-12;

/// A validated offspring law `{p_k}` with `p_0 = 0`, finite support and mean > 1.
#[derive(Clone, Debug)]
pub struct OffspringDist {
    /// `probs[k]` is `p_k`; index 0 is always zero.
    probs: Vec<f64>,
    support: Vec<usize>,
    alias: WeightedAliasIndex<f64>,
}

impl PartialEq for OffspringDist {
    fn eq(&self, other: &Self) -> bool {
        self.probs == other.probs
    }
}

/// Constants of the model that depend only on the offspring law.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ModelConstants {
    pub m: f64,
    pub m2: f64,
    /// `E[d(d-1)]`.
    pub edd1: f64,
    /// Second moment of the limiting martingale.
    pub b: f64,
    /// Equilibrium diffusivity.
    pub d0: f64,
    /// `Σ p_k / k`.
    pub c_harmonic: f64,
}

impl ModelConstants {
    /// Limiting slope `D⁰/2` of the velocity in the bias.
    pub fn einstein_slope(&self) -> f64 {
        self.d0 / 2.0
    }

    /// Limit of `E[β]/α`, equal to `D⁰/(2m)`.
    pub fn escape_slope(&self) -> f64 {
        self.m * (self.m - 1.0) / self.edd1
    }
}

impl OffspringDist {
    /// Build from `(k, p_k)` pairs. Entries with `p_k = 0` are allowed and dropped.
    pub fn new<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut probs = vec![0.0; 2];
        let mut seen = Vec::new();
        for (k, p) in pairs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::NegativeProbability { k, p });
            }
            if k > MAX_CHILDREN {
                return Err(Error::SupportTooLarge {
                    k,
                    max: MAX_CHILDREN,
                });
            }
            if seen.contains(&k) {
                return Err(Error::Parse(format!("duplicate entry for k = {k}")));
            }
            seen.push(k);
            if k == 0 {
                if p > 0.0 {
                    return Err(Error::ZeroOffspringMass(p));
                }
                continue;
            }
            if probs.len() <= k {
                probs.resize(k + 1, 0.0);
            }
            probs[k] = p;
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(total));
        }
        let m: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        if m <= 1.0 + 1e-15 {
            return Err(Error::SubcriticalMean(m));
        }
        while probs.len() > 2 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        Ok(Self::from_probs(probs))
    }

    /// Point mass on `d` children.
    pub fn delta(d: usize) -> Result<Self> {
        Self::new([(d, 1.0)])
    }

    fn from_probs(probs: Vec<f64>) -> Self {
        let support: Vec<usize> = (1..probs.len()).filter(|&k| probs[k] > 0.0).collect();
        let weights: Vec<f64> = support.iter().map(|&k| probs[k]).collect();
        let alias = WeightedAliasIndex::new(weights).expect("validated weights");
        Self {
            probs,
            support,
            alias,
        }
    }

    /// `p_k`, zero outside the support.
    pub fn p(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    /// Support in increasing order.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn max_k(&self) -> usize {
        *self.support.last().unwrap()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().map(move |&k| (k, self.probs[k]))
    }

    pub fn is_point_mass(&self) -> bool {
        self.support.len() == 1
    }

    pub fn mean(&self) -> f64 {
        self.pairs().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn constants(&self) -> ModelConstants {
        let m = self.mean();
        let m2: f64 = self.pairs().map(|(k, p)| (k * k) as f64 * p).sum();
        let edd1: f64 = self.pairs().map(|(k, p)| (k * (k - 1)) as f64 * p).sum();
        let c_harmonic: f64 = self.pairs().map(|(k, p)| p / k as f64).sum();
        ModelConstants {
            m,
            m2,
            edd1,
            b: edd1 / (m * (m - 1.0)),
            d0: 2.0 * m * m * (m - 1.0) / edd1,
            c_harmonic,
        }
    }

    /// The size-biased law `k p_k / m`.
    pub fn size_biased(&self) -> OffspringDist {
        let m = self.mean();
        let mut probs: Vec<f64> = self
            .probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p / m)
            .collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Self::from_probs(probs)
    }

    /// Rate of jumps toward the parent, `λ = m e^{-α}`.
    pub fn bias_rate(&self, alpha: f64) -> f64 {
        self.mean() * (-alpha).exp()
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.support[self.alias.sample(rng)]
    }
}

/// Sampler pair for ordinary and size-biased counts of one law.
#[derive(Clone, Debug)]
pub struct OffspringSampler {
    pub ordinary: OffspringDist,
    pub size_biased: OffspringDist,
}

impl OffspringSampler {
    pub fn new(dist: &OffspringDist) -> Self {
        Self {
            ordinary: dist.clone(),
            size_biased: dist.size_biased(),
        }
    }

    #[inline]
    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.ordinary.sample(rng)
    }

    #[inline]
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.size_biased.sample(rng)
    }
}

impl FromStr for OffspringDist {
    type Err = Error;

    /// Parses `"k:p,k:p,..."`, e.g. `"2:0.5,3:0.5"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, p) = item
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("expected k:p, got {item:?}")))?;
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad child count {k:?}")))?;
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad probability {p:?}")))?;
            pairs.push((k, p));
        }
        if pairs.is_empty() {
            return Err(Error::Parse("empty offspring law".into()));
        }
        Self::new(pairs)
    }
}

impl fmt::Display for OffspringDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.pairs().map(|(k, p)| format!("{k}:{p}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::RngStream;
    use proptest::prelude::*;

    fn two_three() -> OffspringDist {
        "2:0.5,3:0.5".parse().unwrap()
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            OffspringDist::new([(1, 1.0)]),
            Err(Error::SubcriticalMean(_))
        ));
        assert!(matches!(
            OffspringDist::new([(0, 0.1), (2, 0.9)]),
            Err(Error::ZeroOffspringMass(_))
        ));
        assert!(matches!(
            OffspringDist::new([(2, 0.5), (3, 0.4)]),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(
            OffspringDist::new([(2, 1.5), (3, -0.5)]),
            Err(Error::NegativeProbability { k: 3, .. })
        ));
        assert!(matches!(
            "2:0.5,2:0.5".parse::<OffspringDist>(),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            OffspringDist::new([(65, 1.0)]),
            Err(Error::SupportTooLarge { .. })
        ));
    }

    #[test]
    fn constants_two_three() {
        let c = two_three().constants();
        assert!((c.m - 2.5).abs() < 1e-15);
        assert!((c.m2 - 6.5).abs() < 1e-15);
        assert!((c.edd1 - 4.0).abs() < 1e-15);
        assert!((c.b - 16.0 / 15.0).abs() < 1e-15);
        assert!((c.d0 - 4.6875).abs() < 1e-15);
        assert!((c.c_harmonic - 5.0 / 12.0).abs() < 1e-15);
        assert!((c.escape_slope() - 0.9375).abs() < 1e-15);
    }

    #[test]
    fn constants_point_masses() {
        let c = OffspringDist::delta(2).unwrap().constants();
        assert_eq!((c.m, c.m2, c.b, c.d0), (2.0, 4.0, 1.0, 4.0));
        for d in 2..10 {
            let c = OffspringDist::delta(d).unwrap().constants();
            assert!((c.d0 - 2.0 * d as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn size_biased_two_three() {
        let sb = two_three().size_biased();
        assert!((sb.p(2) - 0.4).abs() < 1e-15);
        assert!((sb.p(3) - 0.6).abs() < 1e-15);
        let d = OffspringDist::delta(4).unwrap();
        assert_eq!(d.size_biased(), d);
    }

    #[test]
    fn bias_rate_examples() {
        let d = two_three();
        assert_eq!(d.bias_rate(0.0), 2.5);
        assert!((d.bias_rate(0.1) - 2.262_093).abs() < 1e-6);
        assert!((d.bias_rate(2.5f64.ln()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = RngStream::new(1, 0);
        let d = OffspringDist::delta(2).unwrap();
        assert!((0..100).all(|_| d.sample(&mut rng) == 2));

        let s = OffspringSampler::new(&two_three());
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.sample_offspring(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 2.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        let threes = (0..n).filter(|_| s.sample_size_biased(&mut rng) == 3).count() as f64 / n as f64;
        let sd = (0.6f64 * 0.4 / n as f64).sqrt();
        assert!((threes - 0.6).abs() < 3.0 * sd);
    }

    #[test]
    fn display_round_trips() {
        let d = two_three();
        let again: OffspringDist = d.to_string().parse().unwrap();
        assert_eq!(d, again);
    }

    fn arb_dist() -> impl Strategy<Value = OffspringDist> {
        proptest::collection::vec(0.0f64..1.0, 1..8).prop_filter_map("supercritical", |w| {
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return None;
            }
            let pairs: Vec<(usize, f64)> =
                w.iter().enumerate().map(|(i, x)| (i + 1, x / total)).collect();
            // renormalise the last entry to absorb rounding
            let head: f64 = pairs[..pairs.len() - 1].iter().map(|p| p.1).sum();
            let mut pairs = pairs;
            let last = pairs.len() - 1;
            pairs[last].1 = (1.0 - head).max(0.0);
            OffspringDist::new(pairs).ok()
        })
    }

    proptest! {
        #[test]
        fn diffusivity_identity(d in arb_dist()) {
            let c = d.constants();
            let lhs = c.d0 * c.edd1;
            let rhs = 2.0 * c.m * c.m * (c.m - 1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            prop_assert!(c.b > 0.0 && c.d0 > 0.0 && c.edd1 > 0.0);
            prop_assert!((c.d0 / (2.0 * c.m) - c.escape_slope()).abs() < 1e-12);
        }

        #[test]
        fn size_biased_is_normalized(d in arb_dist()) {
            let sb = d.size_biased();
            let total: f64 = sb.pairs().map(|p| p.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            // fixed point only for point masses
            prop_assert_eq!(sb == d, d.is_point_mass());
        }
    }
}
