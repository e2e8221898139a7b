//! Escape probabilities `β_n` and exit times `γ_n` below a level cut.
//!
//! `solve` evaluates the recursions exactly on an explicit tree. Cuts deeper
//! than a couple of dozen levels go through [`SubtreePool`], and the mixed
//! case (explicit top levels, pooled subtrees below) through
//! [`solve_with_boundary`].

mod pool;

pub use pool::{converged_depth, BetaLimit, ColumnValues, PoolSpec, SubtreePool};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::{map_replicas, EstimateCI, MomentAccumulator, Replication};
use crate::offspring::OffspringDist;
use crate::tree::{sample_gw, w_estimate, NodeId, TreeArena};

/// Default doubling start for convergence reports.
pub const BETA_LIMIT_N0: usize = 16;

/// Per-node `β_n` and `γ_n` for one tree and one cut.
#[derive(Clone, Debug)]
pub struct BetaGammaTable {
    beta: Vec<f64>,
    gamma: Vec<f64>,
    pub root: NodeId,
    pub level_cut: u32,
    pub lambda: f64,
}

impl BetaGammaTable {
    /// NaN for nodes outside the solved region.
    pub fn beta(&self, v: NodeId) -> f64 {
        self.beta[v as usize]
    }

    pub fn gamma(&self, v: NodeId) -> f64 {
        self.gamma[v as usize]
    }

    /// `B_n(v) = (1/λ) Σ β_n(children)`.
    pub fn big_b(&self, tree: &TreeArena, v: NodeId) -> f64 {
        tree.children(v).map(|c| self.beta(c)).sum::<f64>() / self.lambda
    }

    /// `Γ_n(v) = Σ γ_n(children)`.
    pub fn big_gamma(&self, tree: &TreeArena, v: NodeId) -> f64 {
        tree.children(v).map(|c| self.gamma(c)).sum()
    }
}

/// Exact solution with boundary `β = 1`, `γ = 0` at `n` levels below the root.
pub fn solve(tree: &TreeArena, n: u32, lambda: f64) -> Result<BetaGammaTable> {
    solve_with_boundary(tree, n, n, lambda, |_| (1.0, 0.0))
}

/// Solve down to `level` levels below the root, taking `(β, γ)` at that
/// level from `boundary`. `level_cut` is the cut the boundary values belong
/// to and is recorded only. Post-order with an explicit stack.
pub fn solve_with_boundary<F>(
    tree: &TreeArena,
    level: u32,
    level_cut: u32,
    lambda: f64,
    mut boundary: F,
) -> Result<BetaGammaTable>
where
    F: FnMut(NodeId) -> (f64, f64),
{
    let root = tree.root();
    let bottom = tree.depth(root) + level as i32;
    let mut beta = vec![f64::NAN; tree.len()];
    let mut gamma = vec![f64::NAN; tree.len()];
    let mut stack: Vec<(NodeId, bool)> = vec![(root, false)];
    while let Some((v, done)) = stack.pop() {
        let d = tree.depth(v);
        if d == bottom {
            let (b, g) = boundary(v);
            beta[v as usize] = b;
            gamma[v as usize] = g;
            continue;
        }
        if tree.is_frontier(v) {
            return Err(Error::InsufficientDepth {
                node: root,
                required: level as i64,
            });
        }
        if done {
            let (mut sb, mut sg) = (0.0, 0.0);
            for c in tree.children(v) {
                sb += beta[c as usize];
                sg += gamma[c as usize];
            }
            let den = lambda + sb;
            beta[v as usize] = sb / den;
            gamma[v as usize] = (1.0 + sg) / den;
        } else {
            stack.push((v, true));
            stack.extend(tree.children(v).map(|c| (c, false)));
        }
    }
    Ok(BetaGammaTable {
        beta,
        gamma,
        root,
        level_cut,
        lambda,
    })
}

/// `Φ_n(r)` for `r = 1..=r_max`, with `Γ_n(o)` and `B_n(o)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiProfile {
    /// `phi[r - 1] = Φ_n(r)`.
    pub phi: Vec<f64>,
    pub gamma_o: f64,
    pub b_n_o: f64,
}

impl PhiProfile {
    pub fn phi(&self, r: usize) -> f64 {
        self.phi[r - 1]
    }

    pub fn sum(&self) -> f64 {
        self.phi.iter().sum()
    }
}

/// Path-product sums `Φ_n(r) = λ^{-r} Σ_{|u|=r} Π_{i≤r} (1 - β_n(u_i))`,
/// accumulated level by level from the parents' products. `r_max` is
/// clamped to `n - 1` and to the solved region. Products are kept in log
/// space once the cut exceeds 64 levels.
pub fn phi_profile(tree: &TreeArena, table: &BetaGammaTable, r_max: u32) -> Result<PhiProfile> {
    let root = table.root;
    let r_max = r_max.min(table.level_cut.saturating_sub(1)) as usize;
    let log_space = table.level_cut > 64;
    let ln_lambda = table.lambda.ln();
    let mut level: Vec<(NodeId, f64)> = vec![(root, if log_space { 0.0 } else { 1.0 })];
    let mut phi = Vec::with_capacity(r_max);
    for _ in 1..=r_max {
        let mut next = Vec::new();
        for &(v, q) in &level {
            if tree.is_frontier(v) {
                return Err(Error::InsufficientDepth {
                    node: root,
                    required: r_max as i64,
                });
            }
            for c in tree.children(v) {
                let b = table.beta(c);
                if b.is_nan() {
                    return Err(Error::InsufficientDepth {
                        node: root,
                        required: r_max as i64,
                    });
                }
                let qc = if log_space {
                    q + (1.0 - b).ln() - ln_lambda
                } else {
                    q * (1.0 - b) / table.lambda
                };
                next.push((c, qc));
            }
        }
        let total = if log_space {
            let mx = next.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            mx.exp() * next.iter().map(|p| (p.1 - mx).exp()).sum::<f64>()
        } else {
            next.iter().map(|p| p.1).sum()
        };
        phi.push(total);
        level = next;
    }
    Ok(PhiProfile {
        phi,
        gamma_o: table.big_gamma(tree, root),
        b_n_o: table.big_b(tree, root),
    })
}

/// Escape probability limit on one slot of a pool, see
/// [`SubtreePool::beta_limit`]. Rejects `α ≤ 0`.
pub fn beta_limit(pool: &SubtreePool, slot: usize, alpha: f64, tol: f64) -> Result<BetaLimit> {
    if alpha <= 0.0 {
        return Err(Error::Domain(format!(
            "escape probability limit needs α > 0, got {alpha}"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    pool.beta_limit(slot, tol)
}

/// Pool holding converged `β` (and `W`) for bias `α`.
pub fn converged_pool<R: Rng + ?Sized>(
    dist: &OffspringDist,
    alpha: f64,
    size: usize,
    rng: &mut R,
) -> Result<SubtreePool> {
    if alpha <= 0.0 {
        return Err(Error::Domain(format!(
            "converged escape probabilities need α > 0, got {alpha}"
        )));
    }
    SubtreePool::build(
        dist,
        dist.bias_rate(alpha),
        PoolSpec::new(size, converged_depth(alpha)),
        rng,
    )
}

/// Share of slots whose doubling schedule settles within `tol`, and the
/// depth by which a given share has settled.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub alpha: f64,
    pub tol: f64,
    pub cap: usize,
    /// `(depth, share of slots converged by that depth)`.
    pub by_depth: Vec<(usize, f64)>,
    pub unconverged: usize,
}

pub fn convergence_report<R: Rng + ?Sized>(
    dist: &OffspringDist,
    alpha: f64,
    tol: f64,
    size: usize,
    cap: usize,
    rng: &mut R,
) -> Result<ConvergenceReport> {
    let spec = PoolSpec::new(size, cap).with_doubling(BETA_LIMIT_N0);
    let pool = SubtreePool::build(dist, dist.bias_rate(alpha), spec, rng)?;
    let mut depths = Vec::with_capacity(size);
    let mut unconverged = 0;
    for s in 0..size {
        match beta_limit(&pool, s, alpha, tol) {
            Ok(b) => depths.push(b.depth),
            Err(Error::NoConvergence { .. }) => unconverged += 1,
            Err(e) => return Err(e),
        }
    }
    let by_depth = pool.column_depths()[1..]
        .iter()
        .map(|&d| (d, depths.iter().filter(|&&x| x <= d).count() as f64 / size as f64))
        .collect();
    Ok(ConvergenceReport {
        alpha,
        tol,
        cap,
        by_depth,
        unconverged,
    })
}

/// Mean of each column of per-replica rows.
fn column_estimates<const K: usize>(rows: &[[f64; K]]) -> [EstimateCI; K] {
    std::array::from_fn(|k| {
        let v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        MomentAccumulator::from_slice(&v).estimate()
    })
}

/// `E[β(o)]/α` at one bias, with the companion `E[B(o)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EscapeResponse {
    pub alpha: f64,
    /// `E[β(o)]/α`.
    pub ratio: EstimateCI,
    /// `E[B(o)]`.
    pub big_b: EstimateCI,
    /// Limit `m(m-1)/E[d(d-1)]`.
    pub target: f64,
    /// Bounds `(m(m-1)/E[d(d-1)]) (1 - e^{-α}) ≤ E[B] ≤ e^α - 1`.
    pub b_lower: f64,
    pub b_upper: f64,
}

/// Escape-probability linear response. Each replica builds its own pool of
/// `pool_size` slots; replica means are the independent samples.
pub fn escape_linear_response(
    dist: &OffspringDist,
    alphas: &[f64],
    pool_size: usize,
    rep: Replication,
) -> Result<Vec<EscapeResponse>> {
    let c = dist.constants();
    alphas
        .iter()
        .map(|&alpha| {
            let rows = map_replicas(rep.derive(&format!("escape:{alpha}")), |_, rng| {
                let pool = converged_pool(dist, alpha, pool_size, rng)?;
                let col = pool.deepest();
                let n = col.len() as f64;
                let mb = col.beta.iter().sum::<f64>() / n;
                let mbig = (0..col.len()).map(|s| col.big_b(s)).sum::<f64>() / n;
                Ok([mb / alpha, mbig])
            })?;
            let [ratio, big_b] = column_estimates(&rows);
            Ok(EscapeResponse {
                alpha,
                ratio,
                big_b,
                target: c.escape_slope(),
                b_lower: c.escape_slope() * (1.0 - (-alpha).exp()),
                b_upper: alpha.exp() - 1.0,
            })
        })
        .collect()
}

/// Moments of `Y ≈ β/α` against `⟨W²⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct YMoments {
    pub alpha: f64,
    pub ey: EstimateCI,
    pub ey2: EstimateCI,
    pub ew2: EstimateCI,
    /// `EY - EY2`, paired within replicas.
    pub diff_ey_ey2: EstimateCI,
    /// `EY - 1/EW2`, paired within replicas.
    pub diff_ey_inv_ew2: EstimateCI,
}

pub fn y_moment_check(
    dist: &OffspringDist,
    alpha: f64,
    pool_size: usize,
    rep: Replication,
) -> Result<YMoments> {
    let rows = map_replicas(rep.derive(&format!("ymoments:{alpha}")), |_, rng| {
        let pool = converged_pool(dist, alpha, pool_size, rng)?;
        let col = pool.deepest();
        let n = col.len() as f64;
        let ey = col.beta.iter().map(|b| b / alpha).sum::<f64>() / n;
        let ey2 = col.beta.iter().map(|b| (b / alpha).powi(2)).sum::<f64>() / n;
        let ew2 = col.w.iter().map(|w| w * w).sum::<f64>() / n;
        Ok([ey, ey2, ew2, ey - ey2, ey - 1.0 / ew2])
    })?;
    let [ey, ey2, ew2, d1, d2] = column_estimates(&rows);
    Ok(YMoments {
        alpha,
        ey,
        ey2,
        ew2,
        diff_ey_ey2: d1,
        diff_ey_inv_ew2: d2,
    })
}

/// Tree-side `E[Φ_n(r)]` with explicit top `r` levels and pooled subtrees.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiTreeEstimate {
    pub alpha: f64,
    pub n: u32,
    pub r: u32,
    pub phi: EstimateCI,
    /// `E[B_n(o)]` from the same trees.
    pub big_b: EstimateCI,
    pub trees: u64,
    /// Trees on which `Φ_n(r) ≤ e^{αr} W(o,r)` failed.
    pub bound_violations: u64,
    /// Largest observed `Φ_n(r) / (e^{αr} W(o,r))`.
    pub max_bound_ratio: f64,
}

/// `Φ_n(r)` on trees whose top `r` levels are explicit and whose level-`r`
/// vertices take `(β, γ)` from a pool column of cut `n - r`.
pub fn phi_tree_estimate(
    dist: &OffspringDist,
    alpha: f64,
    n: u32,
    r: u32,
    trees_per_replica: usize,
    pool_size: usize,
    rep: Replication,
) -> Result<PhiTreeEstimate> {
    if r == 0 || r >= n {
        return Err(Error::Domain(format!("need 1 ≤ r < n, got r = {r}, n = {n}")));
    }
    let lambda = dist.bias_rate(alpha);
    let bound = (alpha * r as f64).exp();
    let rows = map_replicas(rep.derive(&format!("phi-tree:{alpha}:{n}:{r}")), |_, rng| {
        let spec = PoolSpec::new(pool_size, (n - r) as usize).with_gamma();
        let pool = SubtreePool::build(dist, lambda, spec, rng)?;
        let col = pool.deepest();
        let (mut sp, mut sb) = (0.0, 0.0);
        let mut violations = 0u64;
        let mut worst: f64 = 0.0;
        for _ in 0..trees_per_replica {
            let tree = sample_gw(dist, r, rng)?;
            let table = solve_with_boundary(&tree, r, n, lambda, |_| {
                let s = pool.draw(rng);
                (col.beta[s], col.gamma[s])
            })?;
            let prof = phi_profile(&tree, &table, r)?;
            let phi = prof.phi(r as usize);
            let w = w_estimate(&tree, tree.root(), r)?.value;
            let ratio = phi / (bound * w);
            worst = worst.max(ratio);
            if ratio > 1.0 + 1e-12 {
                violations += 1;
            }
            sp += phi;
            sb += prof.b_n_o;
        }
        let k = trees_per_replica as f64;
        Ok((sp / k, sb / k, violations, worst))
    })?;
    let phis: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let bs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(PhiTreeEstimate {
        alpha,
        n,
        r,
        phi: MomentAccumulator::from_slice(&phis).estimate(),
        big_b: MomentAccumulator::from_slice(&bs).estimate(),
        trees: (rows.len() * trees_per_replica) as u64,
        bound_violations: rows.iter().map(|r| r.2).sum(),
        max_bound_ratio: rows.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}

/// `E[γ_n(o)]`, `E[Γ_n(o)] = m E[γ_{n-1}(o)]` and `E[β_n(o)]` from pools.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExitTimes {
    pub alpha: f64,
    pub n: u32,
    pub gamma_n: EstimateCI,
    pub big_gamma_n: EstimateCI,
    pub beta_n: EstimateCI,
}

pub fn exit_times(
    dist: &OffspringDist,
    alpha: f64,
    n: u32,
    pool_size: usize,
    rep: Replication,
) -> Result<ExitTimes> {
    if n < 2 {
        return Err(Error::Domain("exit times need n ≥ 2".into()));
    }
    let lambda = dist.bias_rate(alpha);
    let m = dist.mean();
    let rows = map_replicas(rep.derive(&format!("exit:{alpha}:{n}")), |_, rng| {
        let spec = PoolSpec::new(pool_size, n as usize).with_gamma().with_history();
        let pool = SubtreePool::build(dist, lambda, spec, rng)?;
        let k = pool_size as f64;
        let top = pool.deepest();
        let below = pool.generation(n as usize - 1).unwrap();
        Ok([
            top.gamma.iter().sum::<f64>() / k,
            m * below.gamma.iter().sum::<f64>() / k,
            top.beta.iter().sum::<f64>() / k,
        ])
    })?;
    let [gamma_n, big_gamma_n, beta_n] = column_estimates(&rows);
    Ok(ExitTimes {
        alpha,
        n,
        gamma_n,
        big_gamma_n,
        beta_n,
    })
}

/// `E[γ_n(o)]/n` against `E[β(o)]/v_α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HittingCrosscheck {
    pub alpha: f64,
    pub n: u32,
    pub lhs: EstimateCI,
    pub rhs: EstimateCI,
    /// `|lhs - rhs|` in combined standard errors.
    pub sigmas: f64,
}

/// Combine exit times with an escape estimate and a velocity estimate.
/// The right side's error is propagated to first order.
pub fn hitting_crosscheck(
    exit: &ExitTimes,
    escape: EstimateCI,
    velocity: EstimateCI,
) -> HittingCrosscheck {
    let n = exit.n as f64;
    let lhs = exit.gamma_n.scale(1.0 / n);
    let ratio = escape.mean / velocity.mean;
    let rel = ((escape.stderr / escape.mean).powi(2) + (velocity.stderr / velocity.mean).powi(2))
        .sqrt();
    let rhs = EstimateCI {
        mean: ratio,
        stderr: ratio.abs() * rel,
        n: escape.n.min(velocity.n),
    };
    let sigmas = (lhs.mean - rhs.mean).abs() / lhs.combined_stderr(&rhs);
    HittingCrosscheck {
        alpha: exit.alpha,
        n: exit.n,
        lhs,
        rhs,
        sigmas,
    }
}
