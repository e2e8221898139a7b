//! Rooted and marked trees under the GW, IGW and spine (Q) measures.
//!
//! Nodes live in a flat arena and are identified by `u32` ids. Children of a
//! node occupy one contiguous block, except for the single extra child that a
//! lazily created IGW ancestor receives (the vertex it was grown from).

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::offspring::{OffspringDist, OffspringSampler};

pub type NodeId = u32;
pub const NIL: NodeId = u32::MAX;

/// Default hard cap on arena size.
pub const DEFAULT_NODE_CAP: usize = 50_000_000;

/// Default depth at which `W` and `M` stand in for their limits.
pub const DEFAULT_MARTINGALE_DEPTH: u32 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum MeasureKind {
    Gw,
    Igw,
    SpineQ,
}

const EXPANDED: u8 = 1;
const ON_RAY: u8 = 2;
const SIZE_BIASED: u8 = 4;

#[derive(Clone, Copy, Debug)]
struct Node {
    parent: NodeId,
    first_child: NodeId,
    extra_child: NodeId,
    n_block: u32,
    depth: i32,
    flags: u8,
}

impl Node {
    fn new(parent: NodeId, depth: i32, flags: u8) -> Self {
        Self {
            parent,
            first_child: NIL,
            extra_child: NIL,
            n_block: 0,
            depth,
            flags,
        }
    }
}

/// A lazily grown tree.
#[derive(Clone, Debug)]
pub struct TreeArena {
    nodes: Vec<Node>,
    root: NodeId,
    kind: MeasureKind,
    cap: usize,
    sampler: OffspringSampler,
    mean: f64,
}

impl TreeArena {
    /// A single unexpanded root.
    pub fn new(dist: &OffspringDist, kind: MeasureKind) -> Self {
        let root_flags = match kind {
            MeasureKind::Gw => 0,
            MeasureKind::Igw => ON_RAY,
            // Under Q the root is the first spine vertex.
            MeasureKind::SpineQ => ON_RAY | SIZE_BIASED,
        };
        Self {
            nodes: vec![Node::new(NIL, 0, root_flags)],
            root: 0,
            kind,
            cap: DEFAULT_NODE_CAP,
            sampler: OffspringSampler::new(dist),
            mean: dist.mean(),
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mean_offspring(&self) -> f64 {
        self.mean
    }

    pub fn sampler(&self) -> &OffspringSampler {
        &self.sampler
    }

    #[inline]
    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        let p = self.nodes[v as usize].parent;
        (p != NIL).then_some(p)
    }

    /// Stored level coordinate: nonnegative below the original root,
    /// negative on ancestors.
    #[inline]
    pub fn depth(&self, v: NodeId) -> i32 {
        self.nodes[v as usize].depth
    }

    #[inline]
    pub fn is_expanded(&self, v: NodeId) -> bool {
        self.nodes[v as usize].flags & EXPANDED != 0
    }

    #[inline]
    pub fn is_frontier(&self, v: NodeId) -> bool {
        !self.is_expanded(v)
    }

    #[inline]
    pub fn on_ray(&self, v: NodeId) -> bool {
        self.nodes[v as usize].flags & ON_RAY != 0
    }

    pub(crate) fn set_on_ray(&mut self, v: NodeId, on: bool) {
        let f = &mut self.nodes[v as usize].flags;
        if on {
            *f |= ON_RAY;
        } else {
            *f &= !ON_RAY;
        }
    }

    pub fn is_size_biased(&self, v: NodeId) -> bool {
        self.nodes[v as usize].flags & SIZE_BIASED != 0
    }

    /// Number of children; zero for frontier nodes.
    #[inline]
    pub fn degree(&self, v: NodeId) -> usize {
        let n = &self.nodes[v as usize];
        n.n_block as usize + usize::from(n.extra_child != NIL)
    }

    /// The `i`-th child, `i < degree(v)`.
    #[inline]
    pub fn child(&self, v: NodeId, i: usize) -> NodeId {
        let n = &self.nodes[v as usize];
        if n.extra_child != NIL {
            if i == 0 {
                n.extra_child
            } else {
                n.first_child + (i - 1) as u32
            }
        } else {
            n.first_child + i as u32
        }
    }

    pub fn children(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.degree(v)).map(move |i| self.child(v, i))
    }

    pub fn frontier(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as NodeId).filter(move |&v| self.is_frontier(v))
    }

    fn alloc(&mut self, count: usize) -> Result<NodeId> {
        if self.nodes.len() + count > self.cap {
            return Err(Error::ArenaOverflow { cap: self.cap });
        }
        Ok(self.nodes.len() as NodeId)
    }

    /// Give a frontier node its children. Under Q a spine node draws a
    /// size-biased count and passes the spine mark to a uniform child.
    pub fn expand<R: Rng + ?Sized>(&mut self, v: NodeId, rng: &mut R) -> Result<()> {
        if self.is_expanded(v) {
            return Err(Error::NotFrontier(v));
        }
        let sb = self.is_size_biased(v);
        let k = if sb {
            self.sampler.sample_size_biased(rng)
        } else {
            self.sampler.sample_offspring(rng)
        };
        let first = self.alloc(k)?;
        let depth = self.depth(v) + 1;
        self.nodes
            .extend(std::iter::repeat_n(Node::new(v, depth, 0), k));
        let node = &mut self.nodes[v as usize];
        node.first_child = first;
        node.n_block = k as u32;
        node.flags |= EXPANDED;
        if self.kind == MeasureKind::SpineQ && sb {
            let j = rng.random_range(0..k) as u32;
            self.nodes[(first + j) as usize].flags |= ON_RAY | SIZE_BIASED;
        }
        Ok(())
    }

    #[inline]
    pub fn ensure_expanded<R: Rng + ?Sized>(&mut self, v: NodeId, rng: &mut R) -> Result<()> {
        if self.is_frontier(v) {
            self.expand(v, rng)?;
        }
        Ok(())
    }

    /// Parent of `v`, creating an IGW ancestor when `v` is the top of the ray.
    /// The new ancestor has a size-biased number of children, one of which is
    /// `v`; the others are unexpanded ordinary vertices.
    pub fn ensure_parent<R: Rng + ?Sized>(&mut self, v: NodeId, rng: &mut R) -> Result<NodeId> {
        if let Some(p) = self.parent(v) {
            return Ok(p);
        }
        if self.kind != MeasureKind::Igw {
            return Err(Error::Domain(format!(
                "node {v} has no parent and the tree is not IGW"
            )));
        }
        let k = self.sampler.sample_size_biased(rng);
        let p = self.alloc(k)?;
        let depth = self.depth(v) - 1;
        let mut node = Node::new(NIL, depth, EXPANDED | ON_RAY | SIZE_BIASED);
        node.extra_child = v;
        node.first_child = p + 1;
        node.n_block = (k - 1) as u32;
        self.nodes.push(node);
        self.nodes
            .extend(std::iter::repeat_n(Node::new(p, depth + 1, 0), k - 1));
        self.nodes[v as usize].parent = p;
        Ok(p)
    }

    /// Topmost vertex of the explicit ancestor line.
    pub fn top(&self) -> NodeId {
        let mut v = self.root;
        while let Some(p) = self.parent(v) {
            v = p;
        }
        v
    }

    /// Grow ancestors until `j` of them exist above the root.
    pub fn grow_ancestors<R: Rng + ?Sized>(&mut self, j: usize, rng: &mut R) -> Result<()> {
        let mut v = self.root;
        for _ in 0..j {
            v = self.ensure_parent(v, rng)?;
        }
        Ok(())
    }

    /// Expand every frontier node in the subtree of `v` with depth below `level`.
    pub fn expand_below<R: Rng + ?Sized>(
        &mut self,
        v: NodeId,
        level: i32,
        rng: &mut R,
    ) -> Result<()> {
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            if self.depth(u) >= level {
                continue;
            }
            self.ensure_expanded(u, rng)?;
            for i in 0..self.degree(u) {
                stack.push(self.child(u, i));
            }
        }
        Ok(())
    }

    pub(crate) fn set_root(&mut self, v: NodeId) {
        self.root = v;
    }

    /// Vertices of the subtree of `v` at absolute depth `level`.
    pub fn level_set(&self, v: NodeId, level: i32) -> Result<Vec<NodeId>> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            let d = self.depth(u);
            if d == level {
                out.push(u);
                continue;
            }
            if d > level {
                continue;
            }
            if self.is_frontier(u) {
                return Err(Error::InsufficientDepth {
                    node: v,
                    required: level as i64,
                });
            }
            stack.extend(self.children(u));
        }
        Ok(out)
    }

    /// Number of descendants of `v` at absolute depth `level`.
    pub fn count_at(&self, v: NodeId, level: i32) -> Result<u64> {
        let mut count = 0u64;
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            let d = self.depth(u);
            if d == level {
                count += 1;
            } else if d < level {
                if self.is_frontier(u) {
                    return Err(Error::InsufficientDepth {
                        node: v,
                        required: level as i64,
                    });
                }
                let n = &self.nodes[u as usize];
                if d + 1 == level {
                    count += self.degree(u) as u64;
                } else {
                    if n.extra_child != NIL {
                        stack.push(n.extra_child);
                    }
                    stack.extend(n.first_child..n.first_child + n.n_block);
                }
            }
        }
        Ok(count)
    }

    /// Spine vertices `u*_0, u*_1, ...` that are present in the arena.
    pub fn spine(&self) -> Vec<NodeId> {
        let mut out = vec![self.root];
        let mut v = self.root;
        while self.is_expanded(v) {
            match self.children(v).find(|&c| self.on_ray(c)) {
                Some(c) => {
                    out.push(c);
                    v = c;
                }
                None => break,
            }
        }
        out
    }

    /// Line-oriented dump: `id parent depth on_ray n_children`, parent `-`
    /// when absent.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = if n.parent == NIL {
                "-".to_string()
            } else {
                n.parent.to_string()
            };
            let _ = writeln!(
                s,
                "{i} {parent} {} {} {}",
                n.depth,
                u8::from(n.flags & ON_RAY != 0),
                self.degree(i as NodeId)
            );
        }
        s
    }
}

/// Normalized population `W(v,n)` or `M_n(v)` of one sampled tree.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct MartingaleEstimate {
    pub value: f64,
    pub depth_used: u32,
}

/// Full GW tree expanded to `depth`.
pub fn sample_gw<R: Rng + ?Sized>(
    dist: &OffspringDist,
    depth: u32,
    rng: &mut R,
) -> Result<TreeArena> {
    sample_gw_capped(dist, depth, DEFAULT_NODE_CAP, rng)
}

pub fn sample_gw_capped<R: Rng + ?Sized>(
    dist: &OffspringDist,
    depth: u32,
    cap: usize,
    rng: &mut R,
) -> Result<TreeArena> {
    let mut t = TreeArena::new(dist, MeasureKind::Gw).with_cap(cap);
    expand_levels(&mut t, 0, depth as i32, rng)?;
    Ok(t)
}

/// Breadth-first expansion of every node with `depth < level`, starting from
/// arena index `from`. Children are appended in order, so one sweep suffices.
fn expand_levels<R: Rng + ?Sized>(
    t: &mut TreeArena,
    from: usize,
    level: i32,
    rng: &mut R,
) -> Result<()> {
    let mut i = from;
    while i < t.len() {
        let v = i as NodeId;
        if t.depth(v) < level && t.is_frontier(v) {
            t.expand(v, rng)?;
        }
        i += 1;
    }
    Ok(())
}

/// IGW tree: ordinary GW subtree at the root and `ancestor_depth` ray
/// ancestors, every vertex expanded down to absolute depth `subtree_depth`.
pub fn sample_igw<R: Rng + ?Sized>(
    dist: &OffspringDist,
    ancestor_depth: u32,
    subtree_depth: u32,
    rng: &mut R,
) -> Result<TreeArena> {
    let mut t = TreeArena::new(dist, MeasureKind::Igw);
    t.grow_ancestors(ancestor_depth as usize, rng)?;
    expand_levels(&mut t, 0, subtree_depth as i32, rng)?;
    Ok(t)
}

/// Tree under Q with spine `u*_0..u*_depth`, expanded to `depth`.
pub fn sample_spine_q<R: Rng + ?Sized>(
    dist: &OffspringDist,
    depth: u32,
    rng: &mut R,
) -> Result<TreeArena> {
    if depth == 0 {
        return Err(Error::Domain("spine depth must be at least 1".into()));
    }
    let mut t = TreeArena::new(dist, MeasureKind::SpineQ);
    expand_levels(&mut t, 0, depth as i32, rng)?;
    Ok(t)
}

/// `W(v,n) = Z_n(v)/m^n`.
pub fn w_estimate(tree: &TreeArena, v: NodeId, n: u32) -> Result<MartingaleEstimate> {
    let z = tree.count_at(v, tree.depth(v) + n as i32)?;
    Ok(MartingaleEstimate {
        value: z as f64 / tree.mean_offspring().powi(n as i32),
        depth_used: n,
    })
}

/// `M_n(v)`: progeny of `v` at absolute level `n`, normalized by `m^{n-|v|}`.
pub fn m_estimate(tree: &TreeArena, v: NodeId, n: i32) -> Result<MartingaleEstimate> {
    let d = tree.depth(v);
    if d > n {
        return Err(Error::Domain(format!("node {v} lies below level {n}")));
    }
    let z = tree.count_at(v, n)?;
    Ok(MartingaleEstimate {
        value: z as f64 / tree.mean_offspring().powi(n - d),
        depth_used: (n - d) as u32,
    })
}

/// Population above which the remaining generations are drawn from the
/// Gaussian law with the exact first two moments.
pub const GAUSSIAN_SWITCH: f64 = 1e5;

/// Generation-size sampler for `W`: draws `Z_n / m^n` for a GW process that
/// starts from `z0` individuals, without materializing the tree.
#[derive(Clone, Debug)]
pub struct PopulationSampler {
    dist: OffspringDist,
    support: Vec<usize>,
    probs: Vec<f64>,
    m: f64,
    sigma2: f64,
}

impl PopulationSampler {
    pub fn new(dist: &OffspringDist) -> Self {
        let c = dist.constants();
        Self {
            dist: dist.clone(),
            support: dist.support().to_vec(),
            probs: dist.support().iter().map(|&k| dist.p(k)).collect(),
            m: c.m,
            sigma2: c.m2 - c.m * c.m,
        }
    }

    pub fn dist(&self) -> &OffspringDist {
        &self.dist
    }

    pub fn mean(&self) -> f64 {
        self.m
    }

    /// Total offspring of `z` independent individuals.
    pub fn next_generation<R: Rng + ?Sized>(&self, z: u64, rng: &mut R) -> u64 {
        if self.support.len() == 1 {
            return z * self.support[0] as u64;
        }
        if z < 16 {
            return (0..z).map(|_| self.dist.sample(rng) as u64).sum();
        }
        // Multinomial split by sequential binomials.
        let mut left = z;
        let mut mass = 1.0;
        let mut total = 0u64;
        let last = self.support.len() - 1;
        for (i, (&k, &p)) in self.support.iter().zip(&self.probs).enumerate() {
            if left == 0 {
                break;
            }
            let n_k = if i == last {
                left
            } else {
                let q = (p / mass).clamp(0.0, 1.0);
                let b = rand_distr::Binomial::new(left, q).expect("valid binomial");
                rand_distr::Distribution::sample(&b, rng)
            };
            total += n_k * k as u64;
            left -= n_k;
            mass -= p;
        }
        total
    }

    /// `Z_n / m^n` starting from `z0` individuals.
    pub fn sample_w<R: Rng + ?Sized>(&self, z0: u64, n: u32, rng: &mut R) -> f64 {
        if self.support.len() == 1 {
            return z0 as f64;
        }
        let mut z = z0;
        let mut scale = 1.0;
        for g in 0..n {
            if z as f64 > GAUSSIAN_SWITCH && self.sigma2 > 0.0 {
                let k = (n - g) as i32;
                let w = z as f64 * scale;
                let var = z as f64 * scale * scale * self.sigma2 * (1.0 - self.m.powi(-k))
                    / (self.m * (self.m - 1.0));
                let x: f64 = rng.sample(rand_distr::StandardNormal);
                return w + var.sqrt() * x;
            }
            z = self.next_generation(z, rng);
            scale /= self.m;
        }
        z as f64 * scale
    }
}

/// Ray ancestors of an IGW tree summarized by their martingales.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySample {
    /// `w[j] = W_{-j}` with every vertex counted at absolute level `depth`.
    pub w: Vec<f64>,
    /// `deg[j]` = number of children of `v_{-j}`; `deg[0] = d_o`.
    pub deg: Vec<usize>,
    /// `W` of the children of the root, each at `depth - 1` generations.
    pub w_children: Vec<f64>,
    pub depth: u32,
}

/// Draw the root, its children and `j_max` ray ancestors of an IGW tree.
pub fn sample_ray<R: Rng + ?Sized>(
    pop: &PopulationSampler,
    sb: &OffspringDist,
    j_max: usize,
    depth: u32,
    rng: &mut R,
) -> RaySample {
    let m = pop.mean();
    let d_o = pop.dist().sample(rng);
    let w_children: Vec<f64> = (0..d_o)
        .map(|_| pop.sample_w(1, depth.saturating_sub(1), rng))
        .collect();
    let w_o = if depth == 0 {
        1.0
    } else {
        w_children.iter().sum::<f64>() / m
    };
    let mut w = vec![w_o];
    let mut deg = vec![d_o];
    for j in 1..=j_max {
        let d = sb.sample(rng);
        let gens = depth + j as u32 - 1;
        let off: f64 = (1..d).map(|_| pop.sample_w(1, gens, rng)).sum();
        w.push((w[j - 1] + off) / m);
        deg.push(d);
    }
    RaySample {
        w,
        deg,
        w_children,
        depth,
    }
}

/// `M_n(o)` for one tree under Q, from generation counts.
pub fn sample_spine_m<R: Rng + ?Sized>(
    pop: &PopulationSampler,
    sb: &OffspringDist,
    n: u32,
    rng: &mut R,
) -> f64 {
    let m = pop.mean();
    // Backward: M(u*_j) = (Σ_off W_{n-j-1} + M(u*_{j+1})) / m.
    let mut acc = 1.0;
    for j in (0..n).rev() {
        let d = sb.sample(rng);
        let off: f64 = (1..d).map(|_| pop.sample_w(1, n - j - 1, rng)).sum();
        acc = (off + acc) / m;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::{MomentAccumulator, RngStream};

    fn two_three() -> OffspringDist {
        "2:0.5,3:0.5".parse().unwrap()
    }

    #[test]
    fn binary_tree_of_depth_three() {
        let mut rng = RngStream::new(1, 0);
        let t = sample_gw(&OffspringDist::delta(2).unwrap(), 3, &mut rng).unwrap();
        assert_eq!(t.len(), 15);
        assert_eq!(t.frontier().count(), 8);
        assert!(t.frontier().all(|v| t.depth(v) == 3));
    }

    #[test]
    fn depth_zero_is_a_lone_root() {
        let mut rng = RngStream::new(1, 0);
        let t = sample_gw(&two_three(), 0, &mut rng).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.frontier().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn expand_rules() {
        let mut rng = RngStream::new(1, 0);
        let mut t = TreeArena::new(&OffspringDist::delta(3).unwrap(), MeasureKind::Gw);
        t.expand(0, &mut rng).unwrap();
        assert_eq!(t.degree(0), 3);
        assert_eq!(t.expand(0, &mut rng), Err(Error::NotFrontier(0)));
    }

    #[test]
    fn overflow_is_reported() {
        let mut rng = RngStream::new(1, 0);
        let err = sample_gw_capped(&OffspringDist::delta(2).unwrap(), 10, 100, &mut rng);
        assert_eq!(err.unwrap_err(), Error::ArenaOverflow { cap: 100 });
    }

    #[test]
    fn links_are_consistent() {
        let mut rng = RngStream::new(2, 0);
        for t in [
            sample_gw(&two_three(), 5, &mut rng).unwrap(),
            sample_igw(&two_three(), 4, 3, &mut rng).unwrap(),
            sample_spine_q(&two_three(), 5, &mut rng).unwrap(),
        ] {
            let roots = (0..t.len() as NodeId).filter(|&v| t.parent(v).is_none()).count();
            assert_eq!(roots, 1);
            for v in 0..t.len() as NodeId {
                for c in t.children(v) {
                    assert_eq!(t.parent(c), Some(v));
                    assert_eq!(t.depth(c), t.depth(v) + 1);
                }
                if t.is_expanded(v) {
                    assert!(t.degree(v) >= 1);
                }
            }
        }
    }

    #[test]
    fn igw_geometry() {
        let mut rng = RngStream::new(3, 0);
        let t = sample_igw(&two_three(), 3, 2, &mut rng).unwrap();
        let top = t.top();
        assert_eq!(t.depth(top), -3);
        let mut v = t.root();
        let mut ray = 0;
        while let Some(p) = t.parent(v) {
            assert!(t.on_ray(p));
            assert!(t.is_size_biased(p));
            v = p;
            ray += 1;
        }
        assert_eq!(ray, 3);
        assert!(t.frontier().all(|v| t.depth(v) == 2));

        let plain = sample_igw(&two_three(), 0, 2, &mut rng).unwrap();
        assert_eq!(plain.depth(plain.top()), 0);
    }

    #[test]
    fn spine_is_marked_under_q() {
        let mut rng = RngStream::new(4, 0);
        let t = sample_spine_q(&two_three(), 6, &mut rng).unwrap();
        let spine = t.spine();
        assert_eq!(spine.len(), 7);
        for (j, &u) in spine.iter().enumerate() {
            assert_eq!(t.depth(u), j as i32);
        }
        // exactly one marked child per spine vertex
        for &u in &spine[..6] {
            assert_eq!(t.children(u).filter(|&c| t.on_ray(c)).count(), 1);
        }
    }

    #[test]
    fn regular_tree_martingales_are_one() {
        let mut rng = RngStream::new(5, 0);
        let d3 = OffspringDist::delta(3).unwrap();
        let t = sample_igw(&d3, 2, 4, &mut rng).unwrap();
        for v in [t.root(), t.top(), t.child(t.root(), 1)] {
            let n = (4 - t.depth(v)) as u32;
            for k in 0..=n {
                assert_eq!(w_estimate(&t, v, k).unwrap().value, 1.0);
            }
            assert_eq!(m_estimate(&t, v, 4).unwrap().value, 1.0);
        }
    }

    #[test]
    fn martingale_recursion_holds_exactly() {
        let mut rng = RngStream::new(6, 0);
        let t = sample_gw(&two_three(), 7, &mut rng).unwrap();
        let m = t.mean_offspring();
        for v in 0..t.len() as NodeId {
            let d = t.depth(v);
            if d >= 7 {
                continue;
            }
            let n = (7 - d) as u32;
            let lhs = m * w_estimate(&t, v, n).unwrap().value;
            let rhs: f64 = t.children(v).map(|c| w_estimate(&t, c, n - 1).unwrap().value).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.max(1.0));
        }
    }

    #[test]
    fn insufficient_depth() {
        let mut rng = RngStream::new(7, 0);
        let t = sample_gw(&two_three(), 2, &mut rng).unwrap();
        assert!(matches!(
            w_estimate(&t, 0, 3),
            Err(Error::InsufficientDepth { .. })
        ));
        assert_eq!(m_estimate(&t, t.child(t.child(0, 0), 0), 2).unwrap().value, 1.0);
    }

    #[test]
    fn dump_format() {
        let mut rng = RngStream::new(8, 0);
        let t = sample_gw(&OffspringDist::delta(2).unwrap(), 1, &mut rng).unwrap();
        assert_eq!(t.dump(), "0 - 0 0 2\n1 0 1 0 0\n2 0 1 0 0\n");
    }

    #[test]
    fn ancestor_counts_are_size_biased() {
        let mut rng = RngStream::new(9, 0);
        let mut t = TreeArena::new(&two_three(), MeasureKind::Igw);
        let n = 100_000;
        let mut threes = 0;
        let mut v = t.root();
        for _ in 0..n {
            v = t.ensure_parent(v, &mut rng).unwrap();
            threes += usize::from(t.degree(v) == 3);
        }
        let f = threes as f64 / n as f64;
        assert!((f - 0.6).abs() < 3.0 * (0.24f64 / n as f64).sqrt(), "{f}");
    }

    #[test]
    fn population_sampler_regular_and_mean() {
        let mut rng = RngStream::new(10, 0);
        let d2 = OffspringDist::delta(2).unwrap();
        assert_eq!(PopulationSampler::new(&d2).sample_w(1, 24, &mut rng), 1.0);

        let pop = PopulationSampler::new(&two_three());
        let mut acc = MomentAccumulator::new();
        let mut acc2 = MomentAccumulator::new();
        for _ in 0..20_000 {
            let w = pop.sample_w(1, 24, &mut rng);
            acc.push(w);
            acc2.push(w * w);
        }
        assert!(acc.estimate().within_sigmas(1.0, 3.0));
        assert!(acc2.estimate().within_sigmas(16.0 / 15.0, 3.0));
    }
}
