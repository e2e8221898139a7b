//! The continuous-time α-biased walk on a lazily grown tree.
//!
//! From a vertex with `d` children the walk jumps at rate 1 to each child and
//! at rate `λ = m e^{-α}` to the parent. Positions are reported in the
//! horocycle coordinate `ρ`, the signed generation relative to the start.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::{jackknife, map_replicas, EstimateCI, MomentAccumulator, RatioEstimate, Replication};
use crate::offspring::OffspringDist;
use crate::tree::{sample_ray, MeasureKind, NodeId, PopulationSampler, TreeArena};

/// How holding times are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TimeMode {
    /// `Exponential(d + λ)` holding times.
    Exact,
    /// Holding time replaced by its conditional mean `1/(d + λ)`.
    Mean,
}

/// Behavior at a vertex without a parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// Grow an IGW ancestor on demand.
    Grow,
    /// Suppress the parent jump.
    Reflect,
    /// Reflect, and end the walk when it reaches the arena root.
    Absorb,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopRule {
    /// Stop at time `t`; the walk sits where it was at `t`.
    Time(f64),
    /// Stop on first reaching `ρ = n`.
    Level(i64),
    /// Stop after `n` jumps.
    Jumps(u64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkParams {
    pub lambda: f64,
    pub mode: TimeMode,
    pub boundary: Boundary,
    /// Record first-hitting times and visit counts of levels `ρ ≥ 0`.
    pub record_levels: bool,
    /// Confirmation buffer for level regenerations when recording.
    pub regen_buffer: usize,
}

impl WalkParams {
    pub fn new(dist: &OffspringDist, alpha: f64) -> Self {
        Self::with_lambda(dist.bias_rate(alpha), default_regen_buffer(dist, alpha))
    }

    pub fn with_lambda(lambda: f64, regen_buffer: usize) -> Self {
        Self {
            lambda,
            mode: TimeMode::Mean,
            boundary: Boundary::Grow,
            record_levels: false,
            regen_buffer,
        }
    }

    pub fn mode(self, mode: TimeMode) -> Self {
        Self { mode, ..self }
    }

    pub fn boundary(self, boundary: Boundary) -> Self {
        Self { boundary, ..self }
    }

    pub fn recording(self) -> Self {
        Self {
            record_levels: true,
            ..self
        }
    }
}

/// `ceil(40 / ln(m e^α))` clamped to `[20, 200]`. A confirmed level is false
/// with probability about `(m e^α)^{-K}`.
pub fn default_regen_buffer(dist: &OffspringDist, alpha: f64) -> usize {
    let rate = (dist.mean() * alpha.exp()).ln();
    if !(rate > 0.0) {
        return 200;
    }
    (40.0 / rate).ceil().clamp(20.0, 200.0) as usize
}

/// Outcome of one walk.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WalkSummary {
    pub rho_final: i64,
    pub elapsed: f64,
    pub n_jumps: u64,
    /// `tau_levels[n]` = first time at level `n ≥ 0`; only when recording.
    pub tau_levels: Vec<f64>,
    /// Number of entries into level `n ≥ 0`, the start counting as one.
    pub visits: Vec<u32>,
    /// Confirmed `(level, time)` regenerations; only when recording.
    pub regen_levels: Vec<(i64, f64)>,
    /// The walk reached the root of an absorbing tree.
    pub absorbed: bool,
}

impl WalkSummary {
    /// Highest level reached (recording only).
    pub fn max_level(&self) -> i64 {
        self.tau_levels.len() as i64 - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub jump_index: u64,
    pub time: f64,
    pub rho: i64,
    pub node_degree: usize,
}

pub fn write_trace<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "jump_index,time,rho,node_degree")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.jump_index, r.time, r.rho, r.node_degree)?;
    }
    Ok(())
}

/// Probability of jumping to the parent from a vertex with `d` children.
pub fn parent_probability(d: usize, lambda: f64) -> f64 {
    lambda / (d as f64 + lambda)
}

/// One jump from `node`, expanding it first if needed.
pub fn step<R: Rng + ?Sized>(
    tree: &mut TreeArena,
    node: NodeId,
    params: &WalkParams,
    rng: &mut R,
) -> Result<(NodeId, f64)> {
    tree.ensure_expanded(node, rng)?;
    let d = tree.degree(node);
    let up = if tree.parent(node).is_some() || params.boundary == Boundary::Grow {
        params.lambda
    } else {
        0.0
    };
    let total = d as f64 + up;
    let hold = match params.mode {
        TimeMode::Mean => 1.0 / total,
        TimeMode::Exact => rng.sample::<f64, _>(rand_distr::Exp1) / total,
    };
    let u = rng.random::<f64>() * total;
    let next = if u < up {
        tree.ensure_parent(node, rng)?
    } else {
        let i = ((u - up) as usize).min(d - 1);
        tree.child(node, i)
    };
    Ok((next, hold))
}

/// Run the walk from `start` until `stop`.
pub fn run<R: Rng + ?Sized>(
    tree: &mut TreeArena,
    start: NodeId,
    params: &WalkParams,
    stop: StopRule,
    rng: &mut R,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<WalkSummary> {
    let base = tree.depth(start) as i64;
    let absorb_at = (params.boundary == Boundary::Absorb).then(|| tree.root());
    let mut s = WalkSummary::default();
    if params.record_levels {
        s.tau_levels.push(0.0);
        s.visits.push(1);
    }
    let mut v = start;
    let mut rho = 0i64;
    let mut t = 0.0;
    loop {
        match stop {
            StopRule::Level(n) if rho == n => break,
            StopRule::Jumps(n) if s.n_jumps >= n => break,
            _ => {}
        }
        if absorb_at == Some(v) && s.n_jumps > 0 {
            s.absorbed = true;
            break;
        }
        let (next, hold) = step(tree, v, params, rng)?;
        if let StopRule::Time(t_max) = stop {
            if t + hold > t_max {
                t = t_max;
                break;
            }
        }
        t += hold;
        s.n_jumps += 1;
        v = next;
        rho = tree.depth(v) as i64 - base;
        if params.record_levels && rho >= 0 {
            let l = rho as usize;
            if l == s.tau_levels.len() {
                s.tau_levels.push(t);
                s.visits.push(0);
            }
            s.visits[l] += 1;
        }
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                jump_index: s.n_jumps,
                time: t,
                rho,
                node_degree: tree.degree(v),
            });
        }
    }
    s.rho_final = rho;
    s.elapsed = t;
    if params.record_levels && params.regen_buffer > 0 {
        s.regen_levels = level_regenerations(&s, params.regen_buffer)?;
    }
    Ok(s)
}

/// Levels `n ≥ 1` entered exactly once, confirmed by the walk reaching at
/// least `n + buffer`. Later fresh levels are discarded as unconfirmed.
pub fn level_regenerations(summary: &WalkSummary, buffer: usize) -> Result<Vec<(i64, f64)>> {
    if buffer == 0 {
        return Err(Error::BufferTooSmall);
    }
    let top = summary.max_level();
    Ok((1..summary.tau_levels.len())
        .filter(|&l| summary.visits[l] == 1 && l as i64 + buffer as i64 <= top)
        .map(|l| (l as i64, summary.tau_levels[l]))
        .collect())
}

/// Velocity estimator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VelocityOptions {
    pub horizon: f64,
    pub mode: TimeMode,
}

impl Default for VelocityOptions {
    fn default() -> Self {
        Self {
            horizon: 2000.0,
            mode: TimeMode::Mean,
        }
    }
}

/// Mean of `ρ(X_t)/t` over independent walks on IGW trees.
pub fn estimate_velocity(
    dist: &OffspringDist,
    alpha: f64,
    opts: VelocityOptions,
    rep: Replication,
) -> Result<EstimateCI> {
    if !(opts.horizon > 0.0) {
        return Err(Error::Domain(format!("horizon {} must be positive", opts.horizon)));
    }
    let params = WalkParams::new(dist, alpha).mode(opts.mode);
    let values = map_replicas(rep, |_, rng| {
        let mut tree = TreeArena::new(dist, MeasureKind::Igw);
        let root = tree.root();
        let s = run(&mut tree, root, &params, StopRule::Time(opts.horizon), rng, None)?;
        Ok(s.rho_final as f64 / opts.horizon)
    })?;
    Ok(MomentAccumulator::from_slice(&values).estimate())
}

/// Mean of `ρ(X_t)²/t` for the unbiased walk, exact holding times.
pub fn estimate_diffusivity(
    dist: &OffspringDist,
    horizon: f64,
    rep: Replication,
) -> Result<EstimateCI> {
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon {horizon} must be positive")));
    }
    let params = WalkParams::new(dist, 0.0).mode(TimeMode::Exact);
    let values = map_replicas(rep, |_, rng| {
        let mut tree = TreeArena::new(dist, MeasureKind::Igw);
        let root = tree.root();
        let s = run(&mut tree, root, &params, StopRule::Time(horizon), rng, None)?;
        Ok((s.rho_final * s.rho_final) as f64 / horizon)
    })?;
    Ok(MomentAccumulator::from_slice(&values).estimate())
}

/// Diffusivity from martingale moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffusivityW {
    /// `⟨m W_o² + Σ_s W_s²⟩ / ⟨W_o²⟩²` over children `s` of the root.
    pub diffusivity: RatioEstimate,
    /// `⟨W_o²⟩`.
    pub w2: EstimateCI,
    pub depth: u32,
}

/// Diffusivity as a ratio of `W` moments, one tree per replica, every `W`
/// taken at `depth` generations below the root.
pub fn estimate_diffusivity_w(
    dist: &OffspringDist,
    depth: u32,
    rep: Replication,
) -> Result<DiffusivityW> {
    if depth == 0 {
        return Err(Error::Domain("depth must be at least 1".into()));
    }
    let pop = PopulationSampler::new(dist);
    let sb = dist.size_biased();
    let m = dist.mean();
    let pairs = map_replicas(rep, |_, rng| {
        let ray = sample_ray(&pop, &sb, 0, depth, rng);
        let w_o = ray.w[0];
        let s2: f64 = ray.w_children.iter().map(|w| w * w).sum();
        Ok((m * w_o * w_o + s2, w_o * w_o))
    })?;
    let (num, den): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let groups = num.len().min(100);
    Ok(DiffusivityW {
        diffusivity: jackknife(&[&num, &den], groups, |x| x[0] / (x[1] * x[1]))?,
        w2: MomentAccumulator::from_slice(&den).estimate(),
        depth,
    })
}

/// Fraction of walks from a child of a GW root that reach level `n` before
/// the root: an unbiased estimate of `E[β_n]` at a first-generation vertex.
pub fn estimate_beta_mc(
    dist: &OffspringDist,
    alpha: f64,
    n: u32,
    rep: Replication,
) -> Result<EstimateCI> {
    if n == 0 {
        return Err(Error::Domain("level n must be at least 1".into()));
    }
    let params = WalkParams::new(dist, alpha).boundary(Boundary::Absorb);
    let values = map_replicas(rep, |_, rng| {
        let mut tree = TreeArena::new(dist, MeasureKind::Gw);
        let root = tree.root();
        tree.expand(root, rng)?;
        let x = tree.child(root, 0);
        let s = run(&mut tree, x, &params, StopRule::Level(n as i64 - 1), rng, None)?;
        Ok(if s.absorbed { 0.0 } else { 1.0 })
    })?;
    Ok(MomentAccumulator::from_slice(&values).estimate())
}

/// First-passage statistics at level `n` for walks on IGW trees.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HittingStats {
    pub n: u32,
    /// `τ_n / n`.
    pub tau_over_n: EstimateCI,
    /// Gaps between successive confirmed regeneration levels, pooled.
    pub regen_gaps: Vec<i64>,
}

/// Run walks to level `n` and collect `τ_n/n` and regeneration gaps.
pub fn hitting_stats(
    dist: &OffspringDist,
    alpha: f64,
    n: u32,
    mode: TimeMode,
    rep: Replication,
) -> Result<HittingStats> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("α = {alpha} must be positive")));
    }
    let params = WalkParams::new(dist, alpha).mode(mode).recording();
    let runs = map_replicas(rep, |_, rng| {
        let mut tree = TreeArena::new(dist, MeasureKind::Igw);
        let root = tree.root();
        let s = run(&mut tree, root, &params, StopRule::Level(n as i64), rng, None)?;
        let gaps: Vec<i64> = s.regen_levels.windows(2).map(|w| w[1].0 - w[0].0).collect();
        Ok((s.elapsed / n as f64, gaps))
    })?;
    let mut acc = MomentAccumulator::new();
    let mut regen_gaps = Vec::new();
    for (t, g) in runs {
        acc.push(t);
        regen_gaps.extend(g);
    }
    Ok(HittingStats {
        n,
        tau_over_n: acc.estimate(),
        regen_gaps,
    })
}
