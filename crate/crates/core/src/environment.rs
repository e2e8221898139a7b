//! The environment seen from the walker, and its explicit invariant density
//! for walks biased toward the root (`α < 0`).
//!
//! An [`EnvView`] is an IGW arena with a movable root. Shifting to a child
//! extends the ray by that child; shifting to the parent removes the old root
//! from the ray. Martingale values are frozen once per view so that every
//! shifted view sees the same tree.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::{map_replicas, EstimateCI, MomentAccumulator, Replication};
use crate::offspring::OffspringDist;
use crate::tree::{
    sample_ray, MeasureKind, NodeId, PopulationSampler, RaySample, TreeArena,
    DEFAULT_MARTINGALE_DEPTH,
};
use crate::walk::{estimate_velocity, TimeMode, VelocityOptions};

/// Cap applied to unbounded test functions.
pub const TEST_FN_CAP: f64 = 1e3;

/// Bias used as a stand-in for `α = ∞`.
pub const LARGE_ALPHA: f64 = 8.0;

fn require_negative(alpha: f64) -> Result<()> {
    if alpha < 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("α = {alpha} must be negative")))
    }
}

/// Default ray truncation `ceil(8/|α|)`.
pub fn default_truncation(alpha: f64) -> usize {
    (8.0 / alpha.abs()).ceil() as usize
}

/// `C_α = b/(1-e^α) + (1-b)/(1-e^α/m)`, the mean of `Z_α` under IGW.
pub fn c_alpha(dist: &OffspringDist, alpha: f64) -> Result<f64> {
    require_negative(alpha)?;
    let c = dist.constants();
    let e = alpha.exp();
    Ok(c.b / (1.0 - e) + (1.0 - c.b) / (1.0 - e / c.m))
}

/// Closed-form velocity `-m e^{-α} / C_α` for `α < 0`.
pub fn v_alpha_closed(dist: &OffspringDist, alpha: f64) -> Result<f64> {
    Ok(-dist.mean() * (-alpha).exp() / c_alpha(dist, alpha)?)
}

/// Upper bound `b e^{α(J+1)}/(1-e^α)` on the mean of the dropped tail of
/// `Z_α` after `J` ancestors.
pub fn truncation_bound(dist: &OffspringDist, alpha: f64, j_max: usize) -> f64 {
    let b = dist.constants().b;
    b * (alpha * (j_max as f64 + 1.0)).exp() / (1.0 - alpha.exp())
}

/// A rooted view of an IGW tree.
#[derive(Clone, Debug)]
pub struct EnvView {
    tree: TreeArena,
    current: NodeId,
    /// Frozen `W(v)` per node, all counted at one absolute level.
    w: Vec<f64>,
    level: i32,
}

impl EnvView {
    pub fn new(tree: TreeArena) -> Result<Self> {
        if tree.kind() != MeasureKind::Igw {
            return Err(Error::Domain("environment views need an IGW tree".into()));
        }
        let current = tree.root();
        Ok(Self {
            tree,
            current,
            w: Vec::new(),
            level: 0,
        })
    }

    /// Fresh IGW tree with its root and the root's children expanded,
    /// `ancestors` ray vertices grown, and martingales frozen `depth`
    /// generations below the root.
    pub fn sample<R: Rng + ?Sized>(
        dist: &OffspringDist,
        ancestors: usize,
        depth: u32,
        rng: &mut R,
    ) -> Result<Self> {
        let mut view = Self::new(TreeArena::new(dist, MeasureKind::Igw))?;
        let o = view.current;
        view.tree.expand(o, rng)?;
        for i in 0..view.tree.degree(o) {
            let x = view.tree.child(o, i);
            view.tree.expand(x, rng)?;
        }
        view.tree.grow_ancestors(ancestors, rng)?;
        view.freeze(depth, rng);
        Ok(view)
    }

    pub fn tree(&self) -> &TreeArena {
        &self.tree
    }

    pub fn current(&self) -> NodeId {
        self.current
    }

    /// Horocycle coordinate relative to the current root.
    pub fn rho(&self, v: NodeId) -> i64 {
        self.tree.depth(v) as i64 - self.tree.depth(self.current) as i64
    }

    /// `j`-th ray ancestor of the current root, if grown.
    pub fn ancestor(&self, j: usize) -> Option<NodeId> {
        let mut v = self.current;
        for _ in 0..j {
            v = self.tree.parent(v)?;
        }
        Some(v)
    }

    /// Move the root to an adjacent vertex.
    pub fn shift(&mut self, x: NodeId) -> Result<()> {
        if self.tree.parent(x) == Some(self.current) {
            self.tree.set_on_ray(x, true);
        } else if self.tree.parent(self.current) == Some(x) {
            self.tree.set_on_ray(self.current, false);
        } else {
            return Err(Error::NotAdjacent(x));
        }
        self.tree.set_root(x);
        self.current = x;
        Ok(())
    }

    /// Copy of the view rooted at `x`.
    pub fn shifted(&self, x: NodeId) -> Result<Self> {
        let mut v = self.clone();
        v.shift(x)?;
        Ok(v)
    }

    /// Sample a completion `W` for every unexpanded vertex and propagate
    /// upward, counting descendants at `depth` generations below the current
    /// root.
    pub fn freeze<R: Rng + ?Sized>(&mut self, depth: u32, rng: &mut R) {
        let pop = PopulationSampler::new(&self.tree.sampler().ordinary);
        let m = self.tree.mean_offspring();
        self.level = self.tree.depth(self.current) + depth as i32;
        let mut order: Vec<NodeId> = (0..self.tree.len() as NodeId).collect();
        order.sort_by_key(|&v| std::cmp::Reverse(self.tree.depth(v)));
        self.w = vec![0.0; self.tree.len()];
        for v in order {
            let d = self.tree.depth(v);
            self.w[v as usize] = if d >= self.level {
                1.0
            } else if self.tree.is_frontier(v) {
                pop.sample_w(1, (self.level - d) as u32, rng)
            } else {
                self.tree.children(v).map(|c| self.w[c as usize]).sum::<f64>() / m
            };
        }
    }

    /// Frozen `W(v)`.
    pub fn w(&self, v: NodeId) -> f64 {
        self.w[v as usize]
    }

    pub fn w_o(&self) -> f64 {
        self.w(self.current)
    }

    pub fn d_o(&self) -> usize {
        self.tree.degree(self.current)
    }

    /// `Σ_{j ≤ J} e^{jα} W_{-j}` over the grown ray.
    pub fn z_alpha(&self, alpha: f64, j_max: usize) -> Result<f64> {
        let mut v = self.current;
        let mut z = self.w(v);
        for j in 1..=j_max {
            v = self.tree.parent(v).ok_or(Error::InsufficientDepth {
                node: self.current,
                required: -(j as i64),
            })?;
            z += (j as f64 * alpha).exp() * self.w(v);
        }
        Ok(z)
    }

    /// `L_α f` at the current root, evaluating `f` on every shifted view.
    pub fn generator<F>(&mut self, lambda: f64, mut f: F) -> Result<f64>
    where
        F: FnMut(&EnvView) -> Result<f64>,
    {
        let o = self.current;
        let f0 = f(self)?;
        let mut acc = 0.0;
        for i in 0..self.tree.degree(o) {
            let x = self.tree.child(o, i);
            self.shift(x)?;
            let fx = f(self);
            self.shift(o)?;
            acc += fx? - f0;
        }
        let p = self.tree.parent(o).ok_or(Error::InsufficientDepth {
            node: o,
            required: -1,
        })?;
        self.shift(p)?;
        let fp = f(self);
        self.shift(o)?;
        Ok(acc + lambda * (fp? - f0))
    }
}

/// `ψ_α` of one view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PsiAlphaEstimate {
    pub z_alpha: f64,
    pub c_alpha: f64,
    pub psi: f64,
    pub truncation_j: usize,
    pub martingale_depth: u32,
    /// Bound on the mean of the dropped tail of `Z_α`.
    pub truncation_bound: f64,
}

/// Truncated `Z_α` and `ψ_α = Z_α/C_α` of the view.
pub fn z_alpha_estimate(
    env: &EnvView,
    dist: &OffspringDist,
    alpha: f64,
    j_max: usize,
) -> Result<PsiAlphaEstimate> {
    let c = c_alpha(dist, alpha)?;
    let z = env.z_alpha(alpha, j_max)?;
    Ok(PsiAlphaEstimate {
        z_alpha: z,
        c_alpha: c,
        psi: z / c,
        truncation_j: j_max,
        martingale_depth: (env.level - env.tree.depth(env.current)) as u32,
        truncation_bound: truncation_bound(dist, alpha, j_max),
    })
}

/// `Σ_{j ≤ J} e^{jα} W_{-j}` of a sampled ray.
pub fn z_alpha_of_ray(ray: &RaySample, alpha: f64, j_max: usize) -> f64 {
    ray.w
        .iter()
        .take(j_max + 1)
        .enumerate()
        .map(|(j, w)| (j as f64 * alpha).exp() * w)
        .sum()
}

/// Monte Carlo moments of the IGW ray.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RayMoments {
    pub alpha: f64,
    pub c_alpha: f64,
    /// `⟨Z_α⟩` truncated at `j_max`.
    pub z_alpha: EstimateCI,
    pub truncation_j: usize,
    pub truncation_bound: f64,
    pub martingale_depth: u32,
    /// `(j, ⟨W_{-j}⟩, (1-b) m^{-j} + b)`.
    pub w_ray: Vec<(usize, EstimateCI, f64)>,
    /// `⟨W_o²⟩`.
    pub w2: EstimateCI,
}

/// Estimate `⟨Z_α⟩` and `⟨W_{-j}⟩` from count-based ray samples.
pub fn ray_moments(
    dist: &OffspringDist,
    alpha: f64,
    j_max: usize,
    js: &[usize],
    depth: u32,
    rep: Replication,
) -> Result<RayMoments> {
    let c = c_alpha(dist, alpha)?;
    let consts = dist.constants();
    let pop = PopulationSampler::new(dist);
    let sb = dist.size_biased();
    let top = js.iter().copied().max().unwrap_or(0).max(j_max);
    let rows = map_replicas(rep, |_, rng| {
        let ray = sample_ray(&pop, &sb, top, depth, rng);
        let z = z_alpha_of_ray(&ray, alpha, j_max);
        let mut row = vec![z, ray.w[0] * ray.w[0]];
        row.extend(js.iter().map(|&j| ray.w[j]));
        Ok(row)
    })?;
    let col = |k: usize| {
        let v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        MomentAccumulator::from_slice(&v).estimate()
    };
    let w_ray = js
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let target = (1.0 - consts.b) * consts.m.powi(-(j as i32)) + consts.b;
            (j, col(2 + i), target)
        })
        .collect();
    Ok(RayMoments {
        alpha,
        c_alpha: c,
        z_alpha: col(0),
        truncation_j: j_max,
        truncation_bound: truncation_bound(dist, alpha, j_max),
        martingale_depth: depth,
        w_ray,
        w2: col(1),
    })
}

/// Mean of `|ψ_α - 1|` for each `α`, all evaluated on the same sampled
/// trees (ray truncated for the smallest `|α|`).
pub fn psi_limit_trend(
    dist: &OffspringDist,
    alphas: &[f64],
    depth: u32,
    rep: Replication,
) -> Result<Vec<(f64, EstimateCI)>> {
    let mut cs = Vec::with_capacity(alphas.len());
    for &a in alphas {
        cs.push(c_alpha(dist, a)?);
    }
    let j_max = alphas
        .iter()
        .map(|&a| default_truncation(a))
        .max()
        .unwrap_or(0);
    let pop = PopulationSampler::new(dist);
    let sb = dist.size_biased();
    let rows = map_replicas(rep, |_, rng| {
        let ray = sample_ray(&pop, &sb, j_max, depth, rng);
        Ok(alphas
            .iter()
            .zip(&cs)
            .map(|(&a, c)| (z_alpha_of_ray(&ray, a, default_truncation(a)) / c - 1.0).abs())
            .collect::<Vec<_>>())
    })?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            (a, MomentAccumulator::from_slice(&v).estimate())
        })
        .collect())
}

/// Test functions for the stationarity check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TestFn {
    Constant(f64),
    /// `d_o`.
    Degree,
    /// `W_o`.
    WRoot,
    /// `min(Z_α, cap)`.
    ZAlphaCapped(f64),
}

impl TestFn {
    pub fn name(&self) -> String {
        match self {
            TestFn::Constant(c) => format!("const({c})"),
            TestFn::Degree => "d_o".into(),
            TestFn::WRoot => "W_o".into(),
            TestFn::ZAlphaCapped(cap) => format!("min(Z_alpha,{cap})"),
        }
    }

    pub fn eval(&self, env: &EnvView, alpha: f64, j_max: usize) -> Result<f64> {
        Ok(match *self {
            TestFn::Constant(c) => c,
            TestFn::Degree => env.d_o() as f64,
            TestFn::WRoot => env.w_o(),
            TestFn::ZAlphaCapped(cap) => env.z_alpha(alpha, j_max)?.min(cap),
        })
    }
}

/// Truncation settings for the environment estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvOptions {
    pub j_max: usize,
    pub depth: u32,
}

impl EnvOptions {
    pub fn for_alpha(alpha: f64) -> Self {
        Self {
            j_max: default_truncation(alpha),
            depth: DEFAULT_MARTINGALE_DEPTH,
        }
    }
}

/// `⟨ψ_α L_α f⟩` under IGW for each test function; zero at stationarity.
pub fn stationarity_residual(
    dist: &OffspringDist,
    alpha: f64,
    test_fns: &[TestFn],
    opts: EnvOptions,
    rep: Replication,
) -> Result<Vec<EstimateCI>> {
    let c = c_alpha(dist, alpha)?;
    let lambda = dist.bias_rate(alpha);
    let j = opts.j_max;
    let rows = map_replicas(rep, |_, rng| {
        // One spare ancestor so the parent-shifted view keeps `j` of them.
        let mut env = EnvView::sample(dist, j + 1, opts.depth, rng)?;
        let psi = env.z_alpha(alpha, j)? / c;
        test_fns
            .iter()
            .map(|f| Ok(psi * env.generator(lambda, |e| f.eval(e, alpha, j))?))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok((0..test_fns.len())
        .map(|k| {
            let v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            MomentAccumulator::from_slice(&v).estimate()
        })
        .collect())
}

/// Which candidate the large-bias velocity matches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MuInfinityMatch {
    HarmonicMean,
    InverseHarmonicMean,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MuInfinity {
    /// `C = Σ p_k / k`.
    pub c_harmonic: f64,
    pub inv_c: f64,
    pub alpha: f64,
    pub v_simulated: EstimateCI,
    /// Monte Carlo `∫ 1/(C d_o) dGW`.
    pub normalization: EstimateCI,
    pub matches: MuInfinityMatch,
}

/// Velocity at `α = 8` compared with `C` and `1/C`.
pub fn mu_infinity_velocity(
    dist: &OffspringDist,
    horizon: f64,
    rep: Replication,
) -> Result<MuInfinity> {
    let c = dist.constants().c_harmonic;
    // Exact holding times: the mean-time clock is deterministic on regular
    // trees and its final partial jump biases ρ/t by O(1/t).
    let opts = VelocityOptions {
        horizon,
        mode: TimeMode::Exact,
    };
    let v = estimate_velocity(dist, LARGE_ALPHA, opts, rep.derive("mu-infinity-walk"))?;
    let norm = map_replicas(rep.derive("mu-infinity-norm"), |_, rng| {
        Ok(1.0 / (c * dist.sample(rng) as f64))
    })?;
    let zc = v.z_score(c);
    let zi = v.z_score(1.0 / c);
    let matches = if zi <= 3.0 && zi <= zc {
        MuInfinityMatch::InverseHarmonicMean
    } else if zc <= 3.0 {
        MuInfinityMatch::HarmonicMean
    } else {
        MuInfinityMatch::Neither
    };
    Ok(MuInfinity {
        c_harmonic: c,
        inv_c: 1.0 / c,
        alpha: LARGE_ALPHA,
        v_simulated: v,
        normalization: MomentAccumulator::from_slice(&norm).estimate(),
        matches,
    })
}

/// Density against ordinary GW: `(1-e^α) Σ_{j=1}^{J} (m e^{-α})^{1-j} ∏_{i<j} d_{-i}`.
pub fn gw_singular_psi<R: Rng + ?Sized>(
    dist: &OffspringDist,
    alpha: f64,
    j_max: usize,
    rng: &mut R,
) -> f64 {
    let rate = dist.bias_rate(alpha);
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 1..=j_max {
        sum += term;
        term *= dist.sample(rng) as f64 / rate;
    }
    (1.0 - alpha.exp()) * sum
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GwSingularCheck {
    pub psi: EstimateCI,
    /// Mean mass dropped by truncating after `j_max` terms: `e^{α J}`.
    pub truncation_bound: f64,
    pub j_max: usize,
}

/// Monte Carlo mean of the GW-singular density; should be 1.
pub fn gw_singular_psi_check(
    dist: &OffspringDist,
    alpha: f64,
    j_max: usize,
    rep: Replication,
) -> Result<GwSingularCheck> {
    require_negative(alpha)?;
    let vals = map_replicas(rep, |_, rng| Ok(gw_singular_psi(dist, alpha, j_max, rng)))?;
    Ok(GwSingularCheck {
        psi: MomentAccumulator::from_slice(&vals).estimate(),
        truncation_bound: (alpha * j_max as f64).exp(),
        j_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::RngStream;
    use crate::tree::w_estimate;

    fn two_three() -> OffspringDist {
        "2:0.5,3:0.5".parse().unwrap()
    }

    fn rep(n: usize, seed: u64) -> Replication {
        Replication::new(n, 1, seed)
    }

    #[test]
    fn closed_forms() {
        let d2 = OffspringDist::delta(2).unwrap();
        let t = two_three();
        assert!((c_alpha(&d2, -0.5).unwrap() - 2.541494).abs() < 1e-6);
        assert!((c_alpha(&t, -0.5).unwrap() - 2.622905).abs() < 1e-6);
        assert!((c_alpha(&t, -40.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((v_alpha_closed(&d2, -0.5).unwrap() + 1.297442).abs() < 1e-6);
        assert!((v_alpha_closed(&d2, -0.5).unwrap() - 2.0 * (1.0 - 0.5f64.exp())).abs() < 1e-12);
        assert!((v_alpha_closed(&t, -0.5).unwrap() + 1.571465).abs() < 1e-6);
        // The quadratic term leaves v/|α| 0.6% above the limit at α = -0.01.
        let slope = v_alpha_closed(&t, -0.01).unwrap() / 0.01;
        assert!((slope + 2.357936).abs() < 1e-6);
        let slope = v_alpha_closed(&t, -0.001).unwrap() / 0.001;
        assert!((slope / -2.34375 - 1.0).abs() < 0.005);
        assert!(matches!(c_alpha(&t, 0.0), Err(Error::Domain(_))));
        assert!(matches!(v_alpha_closed(&t, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn shifts_round_trip_and_rebase() {
        let dist = two_three();
        let mut rng = RngStream::new(1, 0);
        let env = EnvView::sample(&dist, 3, 8, &mut rng).unwrap();
        let o = env.current();
        let x = env.tree().child(o, 1);
        let p = env.ancestor(1).unwrap();

        let up = env.shifted(p).unwrap();
        assert!(!up.tree().on_ray(o));
        assert_eq!(up.rho(p), 0);
        assert_eq!(up.rho(up.ancestor(1).unwrap()), -1);
        let back = up.shifted(o).unwrap();
        assert_eq!(back.tree().dump(), env.tree().dump());
        assert_eq!(back.current(), o);

        let down = env.shifted(x).unwrap();
        assert!(down.tree().on_ray(x));
        assert_eq!(down.rho(o), -1);
        assert_eq!(down.w_o(), env.w(x));
        assert_eq!(down.shifted(o).unwrap().tree().dump(), env.tree().dump());

        let far = env.tree().child(x, 0);
        assert_eq!(env.shifted(far).unwrap_err(), Error::NotAdjacent(far));
    }

    #[test]
    fn root_martingale_moves_with_the_root() {
        let dist = two_three();
        let mut rng = RngStream::new(2, 0);
        let mut tree = crate::tree::sample_igw(&dist, 1, 6, &mut rng).unwrap();
        let o = tree.root();
        let x = tree.child(o, 0);
        let before = w_estimate(&tree, x, 5).unwrap().value;
        tree.set_on_ray(x, true);
        tree.set_root(x);
        assert_eq!(w_estimate(&tree, tree.root(), 5).unwrap().value, before);
    }

    #[test]
    fn regular_tree_z_alpha_is_geometric() {
        let d3 = OffspringDist::delta(3).unwrap();
        let mut rng = RngStream::new(3, 0);
        let alpha = -0.5;
        let j = 60;
        let env = EnvView::sample(&d3, j, 10, &mut rng).unwrap();
        let est = z_alpha_estimate(&env, &d3, alpha, j).unwrap();
        assert!((est.z_alpha - 1.0 / (1.0 - alpha.exp())).abs() <= est.truncation_bound + 1e-12, "{est:?}");
        assert!(est.psi > 0.0);
    }

    #[test]
    fn z_alpha_mean_and_ray_moments() {
        let dist = two_three();
        let alpha = -0.5;
        let r = ray_moments(&dist, alpha, default_truncation(alpha), &[0, 1, 2, 5], 24, rep(20_000, 4))
            .unwrap();
        assert!((r.z_alpha.mean - r.c_alpha).abs() < 3.0 * r.z_alpha.stderr + r.truncation_bound);
        for (j, e, target) in &r.w_ray {
            assert!(e.within_sigmas(*target, 3.0), "j={j}: {e:?} vs {target}");
        }
        assert!((r.w_ray[1].2 - 1.04).abs() < 1e-12);
        assert!(r.w2.within_sigmas(16.0 / 15.0, 3.0));
    }

    #[test]
    fn alpha_z_concentrates_near_b() {
        let dist = two_three();
        let alpha = -0.02;
        let pop = PopulationSampler::new(&dist);
        let sb = dist.size_biased();
        let j = default_truncation(alpha);
        let mut vals: Vec<f64> = map_replicas(rep(400, 5), |_, rng| {
            let ray = sample_ray(&pop, &sb, j, 16, rng);
            Ok(alpha.abs() * z_alpha_of_ray(&ray, alpha, j))
        })
        .unwrap();
        vals.sort_by(f64::total_cmp);
        let median = vals[vals.len() / 2];
        assert!((median / (16.0 / 15.0) - 1.0).abs() < 0.2, "median {median}");
    }

    #[test]
    fn psi_approaches_one() {
        let trend = psi_limit_trend(&two_three(), &[-0.2, -0.1, -0.05], 16, rep(300, 6)).unwrap();
        assert!(trend[2].1.mean < trend[0].1.mean, "{trend:?}");
    }

    #[test]
    fn stationarity() {
        let dist = two_three();
        let alpha = -0.3;
        let fns = [
            TestFn::Constant(2.0),
            TestFn::Degree,
            TestFn::WRoot,
            TestFn::ZAlphaCapped(TEST_FN_CAP),
        ];
        let res =
            stationarity_residual(&dist, alpha, &fns, EnvOptions::for_alpha(alpha), rep(4000, 7))
                .unwrap();
        assert_eq!(res[0].mean, 0.0);
        assert_eq!(res[0].stderr, 0.0);
        for (f, r) in fns.iter().zip(&res).skip(1) {
            assert!(r.within_sigmas(0.0, 3.0), "{}: {r:?}", f.name());
        }
        let d2 = OffspringDist::delta(2).unwrap();
        let res = stationarity_residual(
            &d2,
            alpha,
            &[TestFn::WRoot],
            EnvOptions::for_alpha(alpha),
            rep(50, 8),
        )
        .unwrap();
        assert_eq!(res[0].mean, 0.0);
    }

    #[test]
    fn gw_singular_density() {
        let d2 = OffspringDist::delta(2).unwrap();
        let mut rng = RngStream::new(9, 0);
        let alpha: f64 = -0.5;
        let psi = gw_singular_psi(&d2, alpha, 80, &mut rng);
        assert!((psi - (1.0 - (alpha * 80.0).exp())).abs() < 1e-12);
        let chk = gw_singular_psi_check(&two_three(), alpha, 80, rep(20_000, 10)).unwrap();
        assert!(chk.psi.within_sigmas(1.0, 3.0), "{chk:?}");
        assert!((chk.truncation_bound - (-40.0f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn large_bias_velocity() {
        let d2 = OffspringDist::delta(2).unwrap();
        let r = mu_infinity_velocity(&d2, 100.0, rep(500, 11)).unwrap();
        assert_eq!(r.c_harmonic, 0.5);
        assert!(r.v_simulated.within_sigmas(2.0, 3.0), "{r:?}");
        let r = mu_infinity_velocity(&two_three(), 100.0, rep(2000, 12)).unwrap();
        assert!((r.c_harmonic - 0.416667).abs() < 1e-6);
        assert!(r.normalization.within_sigmas(1.0, 3.0));
        assert_eq!(r.matches, MuInfinityMatch::InverseHarmonicMean, "{r:?}");
    }
}
