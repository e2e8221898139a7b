//! The spine random walk with its random multiplicative potential.
//!
//! `S` is a nearest-neighbor walk on the integers stepping up with
//! probability `λ/(λ+m²)`. Each site `x` carries a potential
//! `f(x) = (m²+λ)/(m(1+λ+λ a_x))`, where `λ a_x` is the total escape
//! probability of the off-spine children of a size-biased vertex.
//!
//! Sites `x ≥ 0` belong to the spine `u*_x` of a tree drawn under `Q`. They
//! share their off-spine children with the spine martingale `M(u*_x)` and
//! the spine escape probability `β(u*_x)`. Sites `x < 0` are independent.
//! With cut `ℓ` a site uses escape probabilities cut `ℓ - x - 1` levels
//! below it. With no cut it uses converged ones.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::{jackknife, map_replicas, EstimateCI, MomentAccumulator, RatioEstimate, Replication};
use crate::offspring::OffspringDist;
use crate::recursion::{converged_depth, converged_pool, ColumnValues, PoolSpec, SubtreePool};

/// `(p_up, p_down) = (λ, m²)/(λ + m²)`.
pub fn spine_step_law(dist: &OffspringDist, alpha: f64) -> (f64, f64) {
    let m = dist.mean();
    let l = dist.bias_rate(alpha);
    (l / (l + m * m), m * m / (l + m * m))
}

/// `f = (m²+λ)/(m(1+λ+λa))`.
pub fn f_value(m: f64, lambda: f64, a: f64) -> f64 {
    (m * m + lambda) / (m * (1.0 + lambda + lambda * a))
}

/// `f` at `a = 0`, an upper bound for every site.
pub fn f_upper_bound(m: f64, lambda: f64) -> f64 {
    f_value(m, lambda, 0.0)
}

/// Smallest `K` with `(λ/m²)^K < 1e-12`.
pub fn default_spine_buffer(dist: &OffspringDist, alpha: f64) -> usize {
    let m = dist.mean();
    let q = dist.bias_rate(alpha) / (m * m);
    if q >= 1.0 {
        return 200;
    }
    ((1e-12f64).ln() / q.ln()).floor() as usize + 1
}

/// Where the potentials are cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Cut {
    /// Boundary at site `ℓ`.
    Finite(usize),
    /// Converged escape probabilities.
    Infinite,
}

/// Lazily sampled potentials of one environment.
#[derive(Clone, Debug)]
pub struct SpineEnv<'p> {
    pool: &'p SubtreePool,
    sb: &'p OffspringDist,
    m: f64,
    lambda: f64,
    cut: Cut,
    /// `a_x` for spine sites `0 ≤ x < X`.
    a_spine: Vec<f64>,
    lf_spine: Vec<f64>,
    /// `β(u*_x)` and `M(u*_x)` for `0 ≤ x ≤ X`.
    beta_spine: Vec<f64>,
    m_spine: Vec<f64>,
    /// `(a_x, ln f(x))` at `x = -1, -2, ...`; NaN until sampled.
    below: Vec<(f64, f64)>,
    /// Same above the spine truncation (no-cut only).
    above: Vec<(f64, f64)>,
}

impl<'p> SpineEnv<'p> {
    /// Sample the spine part. With a finite cut `ℓ` the spine has `ℓ` sites
    /// and `pool` must keep a history at least `ℓ` generations deep. With no
    /// cut the spine is truncated after `spine_depth` sites and `pool`'s
    /// deepest column supplies converged values.
    pub fn sample<R: Rng + ?Sized>(
        pool: &'p SubtreePool,
        sb: &'p OffspringDist,
        cut: Cut,
        spine_depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let x_max = match cut {
            Cut::Finite(l) => {
                if !pool.has_history() || pool.depth() < l {
                    return Err(Error::InsufficientDepth {
                        node: 0,
                        required: l as i64,
                    });
                }
                l
            }
            Cut::Infinite => spine_depth,
        };
        let lambda = pool.lambda();
        let m = pool.mean_offspring();
        let mut env = Self {
            pool,
            sb,
            m,
            lambda,
            cut,
            a_spine: Vec::with_capacity(x_max),
            lf_spine: Vec::with_capacity(x_max),
            beta_spine: vec![1.0; x_max + 1],
            m_spine: vec![1.0; x_max + 1],
            below: Vec::new(),
            above: Vec::new(),
        };
        let mut w_off = Vec::with_capacity(x_max);
        for x in 0..x_max {
            let (sb_, sw) = env.draw_children(x as i64, rng)?;
            let a = sb_ / lambda;
            env.a_spine.push(a);
            env.lf_spine.push(f_value(m, lambda, a).ln());
            w_off.push(sw);
        }
        for x in (0..x_max).rev() {
            let b = env.beta_spine[x + 1];
            let la = lambda * env.a_spine[x];
            env.beta_spine[x] = (b + la) / (lambda + b + la);
            env.m_spine[x] = (w_off[x] + env.m_spine[x + 1]) / m;
        }
        Ok(env)
    }

    fn column(&self, x: i64) -> Result<&'p ColumnValues> {
        match self.cut {
            Cut::Infinite => Ok(self.pool.deepest()),
            Cut::Finite(l) => {
                let g = l as i64 - x - 1;
                if g < 0 {
                    return Err(Error::Domain(format!("site {x} is at or beyond the cut {l}")));
                }
                self.pool
                    .generation(g as usize)
                    .ok_or(Error::InsufficientDepth {
                        node: 0,
                        required: g,
                    })
            }
        }
    }

    /// Off-spine `(Σβ, ΣW)` of a size-biased vertex at site `x`.
    fn draw_children<R: Rng + ?Sized>(&self, x: i64, rng: &mut R) -> Result<(f64, f64)> {
        let col = self.column(x)?;
        let d = self.sb.sample(rng);
        let (mut sb, mut sw) = (0.0, 0.0);
        for _ in 1..d {
            let s = self.pool.draw(rng);
            sb += col.beta[s];
            sw += col.w[s];
        }
        Ok((sb, sw))
    }

    fn lazy_site<R: Rng + ?Sized>(&mut self, x: i64, rng: &mut R) -> Result<(f64, f64)> {
        let (idx, below) = if x < 0 {
            ((-x - 1) as usize, true)
        } else {
            (x as usize - self.a_spine.len(), false)
        };
        let store = if below { &self.below } else { &self.above };
        if let Some(&(a, lf)) = store.get(idx) {
            if !a.is_nan() {
                return Ok((a, lf));
            }
        }
        let (sb, _) = self.draw_children(x, rng)?;
        let a = sb / self.lambda;
        let v = (a, f_value(self.m, self.lambda, a).ln());
        let store = if below {
            &mut self.below
        } else {
            &mut self.above
        };
        if store.len() <= idx {
            store.resize(idx + 1, (f64::NAN, f64::NAN));
        }
        store[idx] = v;
        Ok(v)
    }

    /// `a_x`, sampling the site if needed.
    pub fn a<R: Rng + ?Sized>(&mut self, x: i64, rng: &mut R) -> Result<f64> {
        if x >= 0 && (x as usize) < self.a_spine.len() {
            return Ok(self.a_spine[x as usize]);
        }
        Ok(self.lazy_site(x, rng)?.0)
    }

    /// `ln f(x)`, sampling the site if needed.
    #[inline]
    pub fn log_f<R: Rng + ?Sized>(&mut self, x: i64, rng: &mut R) -> Result<f64> {
        if x >= 0 && (x as usize) < self.lf_spine.len() {
            return Ok(self.lf_spine[x as usize]);
        }
        Ok(self.lazy_site(x, rng)?.1)
    }

    pub fn f_potential<R: Rng + ?Sized>(&mut self, x: i64, rng: &mut R) -> Result<f64> {
        Ok(self.log_f(x, rng)?.exp())
    }

    /// `β(u*_x)` for `0 ≤ x ≤ X`.
    pub fn beta_spine(&self, x: usize) -> f64 {
        self.beta_spine[x]
    }

    /// `M(u*_x)` for `0 ≤ x ≤ X`.
    pub fn m_spine(&self, x: usize) -> f64 {
        self.m_spine[x]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mean_offspring(&self) -> f64 {
        self.m
    }

    pub fn cut(&self) -> Cut {
        self.cut
    }

    /// `p_up = λ/(λ+m²)`.
    pub fn p_up(&self) -> f64 {
        self.lambda / (self.lambda + self.m * self.m)
    }

    /// Exact value of the walk functional from `0` to `-r` before the cut:
    /// `(m/λ)^r ∏_{x=-r+1}^{0} (1 - β(x))` with `β` obtained by the backward
    /// recursion over all sites below the cut.
    pub fn z_exact<R: Rng + ?Sized>(&mut self, r: usize, rng: &mut R) -> Result<f64> {
        let Cut::Finite(l) = self.cut else {
            return Err(Error::Domain("exact walk functional needs a finite cut".into()));
        };
        let lambda = self.lambda;
        let mut b = 1.0;
        let mut log_prod = 0.0;
        for x in (-(r as i64) + 1..l as i64).rev() {
            let la = lambda * self.a(x, rng)?;
            b = (b + la) / (lambda + b + la);
            if x <= 0 {
                log_prod += (1.0 - b).ln();
            }
        }
        Ok((r as f64 * (self.m / lambda).ln() + log_prod).exp())
    }
}

/// One walk from `0`: `∏ f(S_i)` over `i < τ(target)` if the target is
/// reached before `ceiling`, else 0.
pub fn z_walk<R: Rng + ?Sized>(
    env: &mut SpineEnv<'_>,
    target: i64,
    ceiling: Option<i64>,
    rng: &mut R,
) -> Result<f64> {
    let p = env.p_up();
    let mut x = 0i64;
    let mut log_prod = 0.0f64;
    loop {
        if x == target {
            return Ok(log_prod.exp());
        }
        if Some(x) == ceiling {
            return Ok(0.0);
        }
        log_prod += env.log_f(x, rng)?;
        x += if rng.random::<f64>() < p { 1 } else { -1 };
    }
}

/// One regeneration block of a spine walk path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpineBlock {
    /// Sites `S_{R_{j-1}}, ..., S_{R_j - 1}`.
    pub path: Vec<i64>,
    /// `∏ f` over the block.
    pub zeta: f64,
    /// `S_{R_j} - S_{R_{j-1}}`.
    pub displacement: i64,
}

/// Spine walk path with hindsight detection of regeneration times.
///
/// `R ≥ 1` is a regeneration time when the range of `S_0..S_{R-1}` is
/// disjoint from the range of `S_R, S_{R+1}, ...`. For a nearest-neighbor
/// walk this means `S_R = ℓ` is a fresh minimum and the walk never returns
/// to `ℓ + 1` afterwards, so successive blocks visit disjoint sites. A level
/// is confirmed once the walk is `buffer` levels below it.
#[derive(Clone, Debug, Default)]
pub struct RegenPath {
    /// `S_0, S_1, ...`.
    pub sites: Vec<i64>,
    /// `ln f(S_i)`.
    pub log_f: Vec<f64>,
    /// `Σ_{k<i} ln f(S_k)`, one longer than `sites`.
    pub prefix: Vec<f64>,
    /// First hitting time of level `-k`, `k ≥ 0`.
    first: Vec<usize>,
    /// Last visit time of level `-k`, `k ≥ 0`.
    last: Vec<usize>,
    /// Next level to test.
    candidate: i64,
    /// Confirmed regeneration times `R_1 < R_2 < ...`.
    pub regen: Vec<usize>,
    pub max_site: i64,
}

impl RegenPath {
    pub fn new() -> Self {
        Self {
            sites: vec![0],
            prefix: vec![0.0],
            first: vec![0],
            last: vec![0],
            candidate: -1,
            ..Self::default()
        }
    }

    pub fn position(&self) -> i64 {
        *self.sites.last().unwrap()
    }

    /// Take one step, recording the potential at the current site.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        env: &mut SpineEnv<'_>,
        buffer: usize,
        rng: &mut R,
    ) -> Result<()> {
        let x = self.position();
        let lf = env.log_f(x, rng)?;
        self.log_f.push(lf);
        self.prefix.push(self.prefix.last().unwrap() + lf);
        let y = x + if rng.random::<f64>() < env.p_up() { 1 } else { -1 };
        let t = self.sites.len();
        self.sites.push(y);
        self.max_site = self.max_site.max(y);
        if y <= 0 {
            let k = (-y) as usize;
            if k == self.first.len() {
                self.first.push(t);
                self.last.push(t);
                self.confirm(buffer);
            } else {
                self.last[k] = t;
            }
        }
        Ok(())
    }

    fn confirm(&mut self, buffer: usize) {
        let low = -(self.first.len() as i64 - 1);
        while self.candidate - buffer as i64 >= low {
            let k = (-self.candidate) as usize;
            if self.last[k - 1] < self.first[k] {
                self.regen.push(self.first[k]);
            }
            self.candidate -= 1;
        }
    }

    /// Walk until `count` regenerations are confirmed or `max_steps` taken.
    pub fn run_until<R: Rng + ?Sized>(
        &mut self,
        env: &mut SpineEnv<'_>,
        count: usize,
        buffer: usize,
        max_steps: usize,
        rng: &mut R,
    ) -> Result<()> {
        while self.regen.len() < count {
            if self.log_f.len() >= max_steps {
                return Err(Error::PathTooShort);
            }
            self.step(env, buffer, rng)?;
        }
        Ok(())
    }

    /// `∏ f(S_i)` over `a ≤ i < b`.
    pub fn product(&self, a: usize, b: usize) -> f64 {
        (self.prefix[b] - self.prefix[a]).exp()
    }

    /// Block `j ≥ 1` (block 1 starts at time 0).
    pub fn block(&self, j: usize) -> SpineBlock {
        let start = if j == 1 { 0 } else { self.regen[j - 2] };
        let end = self.regen[j - 1];
        SpineBlock {
            path: self.sites[start..end].to_vec(),
            zeta: self.product(start, end),
            displacement: self.sites[end] - self.sites[start],
        }
    }
}

/// Regeneration decomposition of one path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegenDecomposition {
    /// `ζ_1` and `S_{R_1}`.
    pub leading_zeta: f64,
    pub leading_displacement: i64,
    pub r1: usize,
    /// Blocks `2, 3, ...`.
    pub blocks: Vec<SpineBlock>,
}

/// Decompose a path of `path_length` steps with i.i.d. no-cut potentials.
pub fn regeneration_blocks<R: Rng + ?Sized>(
    env: &mut SpineEnv<'_>,
    path_length: usize,
    buffer: usize,
    rng: &mut R,
) -> Result<RegenDecomposition> {
    if buffer == 0 {
        return Err(Error::BufferTooSmall);
    }
    let mut path = RegenPath::new();
    for _ in 0..path_length {
        path.step(env, buffer, rng)?;
    }
    if path.regen.is_empty() {
        return Err(Error::PathTooShort);
    }
    let lead = path.block(1);
    Ok(RegenDecomposition {
        leading_zeta: lead.zeta,
        leading_displacement: lead.displacement,
        r1: path.regen[0],
        blocks: (2..=path.regen.len()).map(|j| path.block(j)).collect(),
    })
}

/// Common settings of the spine estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpineOptions {
    /// Slots per pool; each replica builds one pool.
    pub pool_size: usize,
    /// Outer samples per replica.
    pub samples: usize,
    /// Inner walks per environment for walk functionals.
    pub inner: usize,
    /// Regeneration confirmation buffer; `None` for the default.
    pub buffer: Option<usize>,
    /// Spine truncation with no cut; `None` for the converged depth.
    pub spine_depth: Option<usize>,
}

impl Default for SpineOptions {
    fn default() -> Self {
        Self {
            pool_size: 4096,
            samples: 1000,
            inner: 8,
            buffer: None,
            spine_depth: None,
        }
    }
}

const MAX_PATH: usize = 1 << 24;

fn replica_means<const K: usize>(rows: &[[f64; K]]) -> [EstimateCI; K] {
    std::array::from_fn(|k| {
        let v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        MomentAccumulator::from_slice(&v).estimate()
    })
}

/// Spine side of `E[Φ_n(r)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhiSpineEstimate {
    pub alpha: f64,
    pub n: u32,
    pub r: u32,
    /// `Q[Z_n(r)/M_{n-r}]` with `Z_n(r)` from inner walks.
    pub phi: EstimateCI,
    /// Same with `Z_n(r)` evaluated exactly per environment.
    pub phi_exact: EstimateCI,
    pub samples: u64,
}

/// `Q[Z_n(r)/M_{n-r}]` by nested Monte Carlo.
pub fn phi_spine_estimate(
    dist: &OffspringDist,
    alpha: f64,
    n: u32,
    r: u32,
    opts: SpineOptions,
    rep: Replication,
) -> Result<PhiSpineEstimate> {
    if r == 0 || r > n {
        return Err(Error::Domain(format!("need 1 ≤ r ≤ n, got r = {r}, n = {n}")));
    }
    let lambda = dist.bias_rate(alpha);
    let sb = dist.size_biased();
    let cut = (n - r) as usize;
    let rows = map_replicas(rep.derive(&format!("phi-spine:{alpha}:{n}:{r}")), |_, rng| {
        if cut == 0 {
            // The last factor is 1 - β_n(u*_n) = 0.
            return Ok([0.0, 0.0]);
        }
        let spec = PoolSpec::new(opts.pool_size, n as usize).with_history();
        let pool = SubtreePool::build(dist, lambda, spec, rng)?;
        let (mut s_mc, mut s_ex) = (0.0, 0.0);
        for _ in 0..opts.samples {
            let mut env = SpineEnv::sample(&pool, &sb, Cut::Finite(cut), 0, rng)?;
            let inv_m = 1.0 / env.m_spine(0);
            let mut z = 0.0;
            for _ in 0..opts.inner {
                z += z_walk(&mut env, -(r as i64), Some(cut as i64), rng)?;
            }
            s_mc += z / opts.inner as f64 * inv_m;
            s_ex += env.z_exact(r as usize, rng)? * inv_m;
        }
        let k = opts.samples as f64;
        Ok([s_mc / k, s_ex / k])
    })?;
    let [phi, phi_exact] = replica_means(&rows);
    Ok(PhiSpineEstimate {
        alpha,
        n,
        r,
        phi,
        phi_exact,
        samples: (rows.len() * opts.samples) as u64,
    })
}

/// Two-sided bound on `E[B_n(o)]` through the walk shifted by `r - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sandwich {
    pub alpha: f64,
    pub n: u32,
    pub r: u32,
    pub lower: EstimateCI,
    pub upper: EstimateCI,
    /// `E[B_n(o)]` from the pool recursion.
    pub big_b: EstimateCI,
}

impl Sandwich {
    /// Both inequalities hold up to `k` combined standard errors.
    pub fn holds(&self, k: f64) -> bool {
        self.lower.mean - self.big_b.mean <= k * self.lower.combined_stderr(&self.big_b)
            && self.big_b.mean - self.upper.mean <= k * self.upper.combined_stderr(&self.big_b)
    }
}

/// `(m/λ) Q[Z a_1/(1+a_1) / M(u*_1)] ≤ E[B_n(o)] ≤ (m/λ) Q[Z / M(u*_1)]`
/// where `Z` is the walk functional to `-(r-1)` with cut `n - r + 1`.
pub fn sandwich(
    dist: &OffspringDist,
    alpha: f64,
    n: u32,
    r: u32,
    opts: SpineOptions,
    rep: Replication,
) -> Result<Sandwich> {
    if r < 2 || r > n {
        return Err(Error::Domain(format!("need 2 ≤ r ≤ n, got r = {r}, n = {n}")));
    }
    let lambda = dist.bias_rate(alpha);
    let m = dist.mean();
    let sb = dist.size_biased();
    let cut = (n - r + 1) as usize;
    let rows = map_replicas(rep.derive(&format!("sandwich:{alpha}:{n}:{r}")), |_, rng| {
        let spec = PoolSpec::new(opts.pool_size, n as usize).with_history();
        let pool = SubtreePool::build(dist, lambda, spec, rng)?;
        let top = pool.deepest();
        let big_b = (0..top.len()).map(|s| top.big_b(s)).sum::<f64>() / top.len() as f64;
        let (mut lo, mut hi) = (0.0, 0.0);
        for _ in 0..opts.samples {
            let mut env = SpineEnv::sample(&pool, &sb, Cut::Finite(cut), 0, rng)?;
            let mut z = 0.0;
            for _ in 0..opts.inner {
                z += z_walk(&mut env, -(r as i64 - 1), Some(cut as i64), rng)?;
            }
            let u = m / lambda * z / opts.inner as f64 / env.m_spine(1);
            let a1 = env.a(1, rng)?;
            hi += u;
            lo += u * a1 / (1.0 + a1);
        }
        let k = opts.samples as f64;
        Ok([lo / k, hi / k, big_b])
    })?;
    let [lower, upper, big_b] = replica_means(&rows);
    Ok(Sandwich {
        alpha,
        n,
        r,
        lower,
        upper,
        big_b,
    })
}

fn infinite_setup<R: Rng + ?Sized>(
    dist: &OffspringDist,
    alpha: f64,
    opts: &SpineOptions,
    rng: &mut R,
) -> Result<(SubtreePool, usize, usize)> {
    let pool = converged_pool(dist, alpha, opts.pool_size, rng)?;
    let depth = opts.spine_depth.unwrap_or_else(|| converged_depth(alpha));
    let buffer = opts.buffer.unwrap_or_else(|| default_spine_buffer(dist, alpha));
    if buffer == 0 {
        return Err(Error::BufferTooSmall);
    }
    Ok((pool, depth, buffer))
}

/// Renewal statistics of the no-cut spine walk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RenewalEstimate {
    pub alpha: f64,
    /// `E[ζ_2]`.
    pub zeta2: EstimateCI,
    /// `E[ζ_2 |S_{R_2} - S_{R_1}|]`.
    pub denominator: EstimateCI,
    /// `E[|S_{R_2} - S_{R_1}|]`.
    pub displacement: EstimateCI,
    /// `E[e^{κ R_1}]` at `κ = 0.1`.
    pub exp_moment_r1: EstimateCI,
    /// Lag-1 sample correlation of successive `ζ_j`, `j ≥ 2`, pooled.
    pub zeta_lag1_corr: f64,
    pub lag_pairs: u64,
    pub buffer: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Lag {
    sx: f64,
    sy: f64,
    sxy: f64,
    sxx: f64,
    syy: f64,
    n: u64,
}

impl Lag {
    fn push(&mut self, x: f64, y: f64) {
        self.sx += x;
        self.sy += y;
        self.sxy += x * y;
        self.sxx += x * x;
        self.syy += y * y;
        self.n += 1;
    }

    fn merge(&mut self, o: &Lag) {
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxy += o.sxy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.n += o.n;
    }

    fn corr(&self) -> f64 {
        let n = self.n as f64;
        let (mx, my) = (self.sx / n, self.sy / n);
        (self.sxy / n - mx * my) / ((self.sxx / n - mx * mx) * (self.syy / n - my * my)).sqrt()
    }
}

/// Blocks `1..=blocks` of independent paths; blocks `j ≥ 2` feed the
/// renewal estimates.
pub fn renewal_denominator(
    dist: &OffspringDist,
    alpha: f64,
    blocks: usize,
    opts: SpineOptions,
    rep: Replication,
) -> Result<RenewalEstimate> {
    if alpha <= 0.0 {
        return Err(Error::Domain(format!("renewal estimates need α > 0, got {alpha}")));
    }
    let blocks = blocks.max(2);
    let sb = dist.size_biased();
    let kappa = 0.1;
    let rows = map_replicas(rep.derive(&format!("renewal:{alpha}")), |_, rng| {
        let (pool, _, buffer) = infinite_setup(dist, alpha, &opts, rng)?;
        let (mut z2, mut den, mut disp, mut er1) = (0.0, 0.0, 0.0, 0.0);
        let mut lag = Lag::default();
        for _ in 0..opts.samples {
            // No tree coupling: every site is an independent draw.
            let mut env = SpineEnv::sample(&pool, &sb, Cut::Infinite, 0, rng)?;
            let mut path = RegenPath::new();
            path.run_until(&mut env, blocks, buffer, MAX_PATH, rng)?;
            let b2 = path.block(2);
            let d = b2.displacement.unsigned_abs() as f64;
            z2 += b2.zeta;
            den += b2.zeta * d;
            disp += d;
            er1 += (kappa * path.regen[0] as f64).exp();
            for j in 2..blocks {
                lag.push(path.block(j).zeta, path.block(j + 1).zeta);
            }
        }
        let k = opts.samples as f64;
        Ok(([z2 / k, den / k, disp / k, er1 / k], lag))
    })?;
    let means: Vec<[f64; 4]> = rows.iter().map(|r| r.0).collect();
    let [zeta2, denominator, displacement, exp_moment_r1] = replica_means(&means);
    let mut lag = Lag::default();
    for (_, l) in &rows {
        lag.merge(l);
    }
    Ok(RenewalEstimate {
        alpha,
        zeta2,
        denominator,
        displacement,
        exp_moment_r1,
        zeta_lag1_corr: lag.corr(),
        lag_pairs: lag.n,
        buffer: opts.buffer.unwrap_or_else(|| default_spine_buffer(dist, alpha)),
    })
}

/// `h(y)` for `y = 1..=y_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HEstimate {
    pub alpha: f64,
    pub h: Vec<EstimateCI>,
    pub sum: EstimateCI,
    /// Share of paths that never reach site 1.
    pub acceptance: f64,
    /// `P(τ(-y) ≤ R_1 | τ(1) = ∞)`.
    pub reach: Vec<f64>,
    /// `f_max^y · reach(y)` with `f_max = (m²+λ)/(m+mλ)`.
    pub bound_y: Vec<f64>,
    /// Mean of `f_max^{τ(-y)} 1(τ(-y) ≤ R_1)` given acceptance, which
    /// dominates `h(y)` path by path.
    pub bound_tau: Vec<f64>,
}

/// Rejection estimate of `h`: paths that reach site 1 before their first
/// regeneration are discarded.
pub fn h_estimate(
    dist: &OffspringDist,
    alpha: f64,
    y_max: usize,
    opts: SpineOptions,
    rep: Replication,
) -> Result<HEstimate> {
    if alpha <= 0.0 {
        return Err(Error::Domain(format!("h needs α > 0, got {alpha}")));
    }
    let sb = dist.size_biased();
    let m = dist.mean();
    let lambda = dist.bias_rate(alpha);
    let log_fmax = f_upper_bound(m, lambda).ln();
    let width = y_max + 1;
    let rows = map_replicas(rep.derive(&format!("h:{alpha}")), |_, rng| {
        let (pool, _, buffer) = infinite_setup(dist, alpha, &opts, rng)?;
        // Per y: Σh, Σreach, Σbound_tau; then Σh_total, accepted count.
        let mut acc = vec![0.0; 3 * width + 2];
        for _ in 0..opts.samples {
            let mut env = SpineEnv::sample(&pool, &sb, Cut::Infinite, 0, rng)?;
            let mut path = RegenPath::new();
            path.run_until(&mut env, 1, buffer, MAX_PATH, rng)?;
            let r1 = path.regen[0];
            if path.sites[..=r1].iter().any(|&s| s >= 1) {
                continue;
            }
            acc[3 * width + 1] += 1.0;
            let mut total = 0.0;
            let depth = (-path.sites[r1]) as usize;
            for y in 1..=depth.min(y_max) {
                let t = path.first[y];
                let v = path.product(0, t);
                acc[y] += v;
                acc[width + y] += 1.0;
                acc[2 * width + y] += (t as f64 * log_fmax).exp();
            }
            for y in 1..=depth {
                total += path.product(0, path.first[y]);
            }
            acc[3 * width] += total;
        }
        let k = acc[3 * width + 1].max(1.0);
        Ok((acc.iter().map(|v| v / k).collect::<Vec<f64>>(), acc[3 * width + 1]))
    })?;
    let col = |i: usize| {
        let v: Vec<f64> = rows.iter().map(|r| r.0[i]).collect();
        MomentAccumulator::from_slice(&v).estimate()
    };
    let accepted: f64 = rows.iter().map(|r| r.1).sum();
    let total = (rows.len() * opts.samples) as f64;
    let reach: Vec<f64> = (1..=y_max).map(|y| col(width + y).mean).collect();
    Ok(HEstimate {
        alpha,
        h: (1..=y_max).map(col).collect(),
        sum: col(3 * width),
        acceptance: accepted / total,
        bound_y: reach
            .iter()
            .enumerate()
            .map(|(i, p)| ((i + 1) as f64 * log_fmax).exp() * p)
            .collect(),
        reach,
        bound_tau: (1..=y_max).map(|y| col(2 * width + y).mean).collect(),
    })
}

/// Velocity from the spine representation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VelocityRep {
    pub alpha: f64,
    /// `m · E[ζ_1 β(u*_1)/M(u*_1)] / E[ζ_1/M(o)]`.
    pub v: RatioEstimate,
    /// `E[ζ_1 β(u*_1)/M(u*_1)]`.
    pub numerator: EstimateCI,
    /// `E[ζ_1/M(o)]`.
    pub denominator: EstimateCI,
    /// `E[β(o)]` of the same pools.
    pub beta: EstimateCI,
    pub samples: u64,
}

pub fn velocity_representation(
    dist: &OffspringDist,
    alpha: f64,
    opts: SpineOptions,
    rep: Replication,
) -> Result<VelocityRep> {
    if alpha <= 0.0 {
        return Err(Error::Domain(format!(
            "the spine representation needs α > 0, got {alpha}"
        )));
    }
    let sb = dist.size_biased();
    let m = dist.mean();
    let rows = map_replicas(rep.derive(&format!("vrep:{alpha}")), |_, rng| {
        let (pool, depth, buffer) = infinite_setup(dist, alpha, &opts, rng)?;
        let beta = pool.deepest().beta.iter().sum::<f64>() / pool.size() as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for _ in 0..opts.samples {
            let mut env = SpineEnv::sample(&pool, &sb, Cut::Infinite, depth, rng)?;
            let mut path = RegenPath::new();
            path.run_until(&mut env, 1, buffer, MAX_PATH, rng)?;
            let z1 = path.product(0, path.regen[0]);
            num += z1 * env.beta_spine(1) / env.m_spine(1);
            den += z1 / env.m_spine(0);
        }
        let k = opts.samples as f64;
        Ok([num / k, den / k, beta])
    })?;
    let num: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let den: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let [numerator, denominator, beta] = replica_means(&rows);
    Ok(VelocityRep {
        alpha,
        v: jackknife(&[&num, &den], num.len(), |x| m * x[0] / x[1])?,
        numerator,
        denominator,
        beta,
        samples: (rows.len() * opts.samples) as u64,
    })
}

/// Both sides of `m E[β]/v = (E[ζ_1/M] / E[ζ_2 |ΔS|]) Σ h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rep1Closure {
    pub lhs: EstimateCI,
    pub rhs: EstimateCI,
    pub sigmas: f64,
}

/// Combine independent estimates; errors propagate to first order.
pub fn rep1_closure(
    m: f64,
    beta: EstimateCI,
    velocity: EstimateCI,
    leading: EstimateCI,
    renewal: EstimateCI,
    sum_h: EstimateCI,
) -> Rep1Closure {
    let rel = |e: &EstimateCI| e.stderr / e.mean;
    let lhs_mean = m * beta.mean / velocity.mean;
    let lhs = EstimateCI {
        mean: lhs_mean,
        stderr: lhs_mean.abs() * (rel(&beta).powi(2) + rel(&velocity).powi(2)).sqrt(),
        n: beta.n.min(velocity.n),
    };
    let rhs_mean = leading.mean / renewal.mean * sum_h.mean;
    let rhs = EstimateCI {
        mean: rhs_mean,
        stderr: rhs_mean.abs()
            * (rel(&leading).powi(2) + rel(&renewal).powi(2) + rel(&sum_h).powi(2)).sqrt(),
        n: leading.n.min(renewal.n).min(sum_h.n),
    };
    Rep1Closure {
        lhs,
        rhs,
        sigmas: (lhs.mean - rhs.mean).abs() / lhs.combined_stderr(&rhs),
    }
}

/// Share of slots with `β_ℓ - β > e^{-cℓ}` per cut `ℓ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutDecay {
    pub alpha: f64,
    /// Fitted rate from the mean excess at the smallest and largest cut.
    pub rate: f64,
    /// `(ℓ, share)`.
    pub shares: Vec<(usize, f64)>,
}

/// Compare cut escape probabilities with converged ones on a shared
/// genealogy. The threshold rate is half the fitted decay rate of the mean
/// excess.
pub fn cut_decay<R: Rng + ?Sized>(
    dist: &OffspringDist,
    alpha: f64,
    cuts: &[usize],
    pool_size: usize,
    rng: &mut R,
) -> Result<CutDecay> {
    if cuts.len() < 2 {
        return Err(Error::Domain("need at least two cuts".into()));
    }
    let depth = converged_depth(alpha);
    let mut spec = PoolSpec::new(pool_size, depth);
    spec.checkpoints = cuts.to_vec();
    let pool = SubtreePool::build(dist, dist.bias_rate(alpha), spec, rng)?;
    let limit = &pool.deepest().beta;
    let excess = |l: usize| -> Result<Vec<f64>> {
        let col = pool.column(l).ok_or(Error::Domain(format!("cut {l} not in pool")))?;
        Ok(col.beta.iter().zip(limit).map(|(b, lim)| b - lim).collect())
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (l0, l1) = (cuts[0], *cuts.last().unwrap());
    let rate = (mean(&excess(l0)?) / mean(&excess(l1)?)).ln() / (l1 - l0) as f64;
    let c = 0.5 * rate;
    let mut shares = Vec::new();
    for &l in cuts {
        let thr = (-c * l as f64).exp();
        let e = excess(l)?;
        shares.push((l, e.iter().filter(|&&x| x > thr).count() as f64 / e.len() as f64));
    }
    Ok(CutDecay {
        alpha,
        rate,
        shares,
    })
}

/// An instance of the weighted birth-death identity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZjbisInstance {
    pub n: usize,
    /// `a_0, ..., a_{n-1}`.
    pub a: Vec<f64>,
    /// `b_1, ..., b_n`.
    pub b: Vec<f64>,
    pub r: usize,
}

impl ZjbisInstance {
    pub fn new(n: usize, a: Vec<f64>, b: Vec<f64>, r: usize) -> Result<Self> {
        if n < 2 || a.len() != n || b.len() != n || r == 0 || r >= n {
            return Err(Error::Domain(format!(
                "invalid instance: n = {n}, |a| = {}, |b| = {}, r = {r}",
                a.len(),
                b.len()
            )));
        }
        if a.iter().any(|&x| !(x >= 0.0)) || b.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain("need a ≥ 0 and b > 0".into()));
        }
        Ok(Self { n, a, b, r })
    }

    /// Uniform `a, b ∈ (0, 2)`, `n ∈ [2, n_max]`, `r ∈ [1, n)`.
    pub fn random<R: Rng + ?Sized>(n_max: usize, rng: &mut R) -> Self {
        let n = rng.random_range(2..=n_max.max(2));
        let a = (0..n).map(|_| 2.0 * rng.random::<f64>()).collect();
        let b = (0..n).map(|_| 2.0 * (1.0 - rng.random::<f64>())).collect();
        let r = rng.random_range(1..n);
        Self { n, a, b, r }
    }

    fn b_at(&self, j: usize) -> f64 {
        self.b[j - 1]
    }
}

/// `∏_{j=1}^r z_j` with `z_n = 0`, `z_j = 1/(1 + a_j + b_{j+1}(1 - z_{j+1}))`.
pub fn zjbis_lhs(inst: &ZjbisInstance) -> f64 {
    let n = inst.n;
    let mut z = vec![0.0; n + 1];
    for j in (0..n).rev() {
        z[j] = 1.0 / (1.0 + inst.a[j] + inst.b_at(j + 1) * (1.0 - z[j + 1]));
    }
    z[1..=inst.r].iter().product()
}

/// Expected weighted functional of the chain on `{0..n}` that steps up from
/// `j` with probability `b_{j+1}/(1+b_{j+1})`, is killed at `n`, stopped at
/// `0`, and pays `(1+b_{j+1})/(1+b_{j+1}+a_j)` per visit to `j`. Solved as a
/// dense linear system.
pub fn zjbis_rhs_oracle(inst: &ZjbisInstance) -> Result<f64> {
    let n = inst.n;
    let k = n - 1;
    // Unknowns u_1..u_{n-1}; u_0 = 1, u_n = 0.
    let mut mat = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for j in 1..n {
        let bj = inst.b_at(j + 1);
        let w = (1.0 + bj) / (1.0 + bj + inst.a[j]);
        let up = bj / (1.0 + bj);
        let down = 1.0 / (1.0 + bj);
        let i = j - 1;
        mat[i][i] = 1.0;
        if j + 1 < n {
            mat[i][i + 1] -= w * up;
        }
        if j > 1 {
            mat[i][i - 1] -= w * down;
        } else {
            rhs[i] += w * down;
        }
    }
    let u = solve_dense(mat, rhs)?;
    Ok(u[inst.r - 1])
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::SingularSystem);
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Worst discrepancy over random instances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZjbisReport {
    pub trials: usize,
    pub n_max: usize,
    pub max_abs_diff: f64,
}

pub fn zjbis_trials<R: Rng + ?Sized>(trials: usize, n_max: usize, rng: &mut R) -> Result<ZjbisReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = ZjbisInstance::random(n_max, rng);
        worst = worst.max((zjbis_lhs(&inst) - zjbis_rhs_oracle(&inst)?).abs());
    }
    Ok(ZjbisReport {
        trials,
        n_max,
        max_abs_diff: worst,
    })
}
