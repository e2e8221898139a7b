//! Population pool of subtree summaries.
//!
//! Deep cuts (hundreds of levels) cannot be solved on explicit trees, whose
//! size grows like `m^n`. The pool instead holds `size` summaries per
//! generation; generation `g` is built from generation `g-1` by drawing an
//! offspring count for every slot and picking that many children uniformly
//! from the previous generation. Every slot then carries an exact evaluation
//! of the recursion on a tree whose subtrees are drawn from the previous
//! generation's empirical law. Collisions inside one unfolded tree occur with
//! probability `O(d^2/size)` per node.
//!
//! Several columns of different depth can share one genealogy: a column of
//! depth `n` starts from the level-`n` boundary `n` generations before the
//! end. Because the recursion is monotone in the children's values, deeper
//! columns are never larger than shallower ones on the same slot.

use rand::Rng;

use crate::error::{Error, Result};
use crate::offspring::OffspringDist;

/// What a pool keeps track of.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolSpec {
    pub size: usize,
    /// Cut depth of the deepest column.
    pub depth: usize,
    /// Shallower column depths sharing the genealogy of the deepest column.
    pub checkpoints: Vec<usize>,
    pub gamma: bool,
    /// Keep every generation of the deepest column.
    pub history: bool,
}

impl PoolSpec {
    pub fn new(size: usize, depth: usize) -> Self {
        Self {
            size,
            depth,
            checkpoints: Vec::new(),
            gamma: false,
            history: false,
        }
    }

    pub fn with_gamma(mut self) -> Self {
        self.gamma = true;
        self
    }

    pub fn with_history(mut self) -> Self {
        self.history = true;
        self
    }

    /// Add the doubling schedule `n0, 2 n0, ...` below `depth`.
    pub fn with_doubling(mut self, n0: usize) -> Self {
        let mut n = n0.max(1);
        while n < self.depth {
            self.checkpoints.push(n);
            n *= 2;
        }
        self
    }
}

/// Values of one column at one generation, indexed by slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColumnValues {
    /// `β_n(o)` of each slot's tree.
    pub beta: Vec<f64>,
    /// `γ_n(o)`; empty unless requested.
    pub gamma: Vec<f64>,
    /// `W(o, n) = Z_n / m^n`.
    pub w: Vec<f64>,
}

impl ColumnValues {
    fn boundary(size: usize, gamma: bool) -> Self {
        Self {
            beta: vec![1.0; size],
            gamma: if gamma { vec![0.0; size] } else { Vec::new() },
            w: vec![1.0; size],
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// `B = β/(1-β)`, the escape ratio `(1/λ) Σ β(children)`.
    pub fn big_b(&self, slot: usize) -> f64 {
        let b = self.beta[slot];
        b / (1.0 - b)
    }
}

/// Converged escape probability of one slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaLimit {
    pub value: f64,
    pub depth: usize,
}

#[derive(Clone, Debug)]
pub struct SubtreePool {
    lambda: f64,
    m: f64,
    spec: PoolSpec,
    /// Column depths in increasing order; the last is `spec.depth`.
    depths: Vec<usize>,
    columns: Vec<ColumnValues>,
    history: Vec<ColumnValues>,
}

impl SubtreePool {
    pub fn build<R: Rng + ?Sized>(
        dist: &OffspringDist,
        lambda: f64,
        spec: PoolSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.size == 0 {
            return Err(Error::Domain("pool size must be positive".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("rate λ = {lambda} must be positive")));
        }
        let mut depths: Vec<usize> = spec
            .checkpoints
            .iter()
            .copied()
            .filter(|&d| d < spec.depth)
            .collect();
        depths.push(spec.depth);
        depths.sort_unstable();
        depths.dedup();

        let k = spec.size;
        let m = dist.mean();
        let total = spec.depth;
        let starts: Vec<usize> = depths.iter().map(|&d| total - d).collect();
        let mut prev: Vec<ColumnValues> = depths
            .iter()
            .map(|_| ColumnValues::boundary(k, spec.gamma))
            .collect();
        let mut next = prev.clone();
        let mut history = Vec::new();
        if spec.history {
            history.push(prev.last().unwrap().clone());
        }
        let mut kids = [0u32; crate::offspring::MAX_CHILDREN];
        for g in 1..=total {
            let active: Vec<usize> = (0..depths.len()).filter(|&c| starts[c] < g).collect();
            for e in 0..k {
                let d = dist.sample(rng);
                for slot in kids.iter_mut().take(d) {
                    *slot = rng.random_range(0..k as u32);
                }
                for &c in &active {
                    let p = &prev[c];
                    let (mut sb, mut sg, mut sw) = (0.0, 0.0, 0.0);
                    for &i in &kids[..d] {
                        let i = i as usize;
                        sb += p.beta[i];
                        sw += p.w[i];
                        if spec.gamma {
                            sg += p.gamma[i];
                        }
                    }
                    let den = lambda + sb;
                    let n = &mut next[c];
                    n.beta[e] = sb / den;
                    n.w[e] = sw / m;
                    if spec.gamma {
                        n.gamma[e] = (1.0 + sg) / den;
                    }
                }
            }
            for c in 0..depths.len() {
                if starts[c] == g {
                    next[c] = ColumnValues::boundary(k, spec.gamma);
                }
            }
            std::mem::swap(&mut prev, &mut next);
            if spec.history {
                history.push(prev.last().unwrap().clone());
            }
        }
        Ok(Self {
            lambda,
            m,
            spec,
            depths,
            columns: prev,
            history,
        })
    }

    pub fn size(&self) -> usize {
        self.spec.size
    }

    pub fn depth(&self) -> usize {
        self.spec.depth
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mean_offspring(&self) -> f64 {
        self.m
    }

    pub fn column_depths(&self) -> &[usize] {
        &self.depths
    }

    /// Final values of the column with cut `depth`.
    pub fn column(&self, depth: usize) -> Option<&ColumnValues> {
        self.depths
            .iter()
            .position(|&d| d == depth)
            .map(|i| &self.columns[i])
    }

    pub fn deepest(&self) -> &ColumnValues {
        self.columns.last().unwrap()
    }

    /// Generation `g` of the deepest column (requires `history`).
    pub fn generation(&self, g: usize) -> Option<&ColumnValues> {
        self.history.get(g)
    }

    pub fn has_history(&self) -> bool {
        !self.history.is_empty()
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.spec.size)
    }

    /// Walk the doubling schedule of one slot and stop once successive
    /// values differ by less than `tol`.
    pub fn beta_limit(&self, slot: usize, tol: f64) -> Result<BetaLimit> {
        for c in 1..self.depths.len() {
            let a = self.columns[c - 1].beta[slot];
            let b = self.columns[c].beta[slot];
            if (a - b).abs() < tol {
                return Ok(BetaLimit {
                    value: b,
                    depth: self.depths[c],
                });
            }
        }
        Err(Error::NoConvergence {
            depth: self.spec.depth,
        })
    }
}

/// Deepest cut used for converged escape probabilities: a power of two
/// at least `30/α`, between 64 and 4096.
pub fn converged_depth(alpha: f64) -> usize {
    let want = (30.0 / alpha).ceil().clamp(64.0, 4096.0) as usize;
    want.next_power_of_two().min(4096)
}
