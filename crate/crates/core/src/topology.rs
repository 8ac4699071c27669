//! Buffer networks as small planar graphs.
//!
//! Buffer vertices carry the spin labels `2..=N+1`; the central spin (label 1)
//! couples to every buffer vertex and is not part of the graph.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest buffer network handled by the exact planarity test and canonizer.
pub const MAX_BUFFER_SPINS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("buffer size {0} outside supported range {1}..={2}")]
    UnsupportedSize(usize, usize, usize),
    #[error("edge ({0},{1}) is not a valid buffer pair")]
    InvalidEdge(usize, usize),
    #[error("duplicate edge ({0},{1})")]
    DuplicateEdge(usize, usize),
    #[error("graph is not planar")]
    NotPlanar,
    #[error("graph has {edges} edges, above the planar cap {cap}")]
    TooManyEdges { edges: usize, cap: usize },
    #[error("cannot parse graph `{0}`")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Empty,
    Maximal,
}

impl fmt::Display for Extreme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Extreme::Empty => "empty",
            Extreme::Maximal => "maximal",
        })
    }
}

/// Number of vertex pairs of a complete graph on `n` vertices.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maximum edge count of a planar buffer graph: `3N − 6` for `N ≥ 3`, otherwise every pair.
pub fn planar_edge_cap(n: usize) -> usize {
    if n >= 3 {
        3 * n - 6
    } else {
        pair_count(n)
    }
}

/// Edge index of the 0-based pair `(a, b)`, `a < b`, in lexicographic order.
fn pair_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < n);
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

/// Undirected simple graph on the buffer vertices `2..=N+1`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferGraph {
    n_buffer: usize,
    /// Bit `pair_index(a, b)` set iff 0-based vertices `a` and `b` are adjacent.
    mask: u32,
}

impl BufferGraph {
    pub fn new(
        n_buffer: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        if n_buffer > MAX_BUFFER_SPINS {
            return Err(TopologyError::UnsupportedSize(n_buffer, 0, MAX_BUFFER_SPINS));
        }
        let mut mask = 0u32;
        for (i, j) in edges {
            let (lo, hi) = (i.min(j), i.max(j));
            if lo == hi || lo < 2 || hi > n_buffer + 1 {
                return Err(TopologyError::InvalidEdge(i, j));
            }
            let bit = 1u32 << pair_index(n_buffer, lo - 2, hi - 2);
            if mask & bit != 0 {
                return Err(TopologyError::DuplicateEdge(lo, hi));
            }
            mask |= bit;
        }
        Ok(Self { n_buffer, mask })
    }

    fn from_mask(n_buffer: usize, mask: u32) -> Self {
        Self { n_buffer, mask }
    }

    pub fn empty(n_buffer: usize) -> Result<Self, TopologyError> {
        Self::new(n_buffer, [])
    }

    pub fn complete(n_buffer: usize) -> Result<Self, TopologyError> {
        Self::new(n_buffer, (2..=n_buffer + 1).flat_map(|i| (i + 1..=n_buffer + 1).map(move |j| (i, j))))
    }

    pub fn n_buffer(&self) -> usize {
        self.n_buffer
    }

    /// Edges as spin-label pairs `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        pairs(self.n_buffer)
            .into_iter()
            .enumerate()
            .filter(|(k, _)| self.mask >> k & 1 == 1)
            .map(|(_, (a, b))| (a + 2, b + 2))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn contains_edge(&self, i: usize, j: usize) -> bool {
        let (lo, hi) = (i.min(j), i.max(j));
        lo >= 2 && lo < hi && hi <= self.n_buffer + 1
            && self.mask >> pair_index(self.n_buffer, lo - 2, hi - 2) & 1 == 1
    }

    /// Adjacency bitmasks over 0-based vertices.
    fn adjacency(&self) -> Vec<u8> {
        let mut adj = vec![0u8; self.n_buffer];
        for (k, (a, b)) in pairs(self.n_buffer).into_iter().enumerate() {
            if self.mask >> k & 1 == 1 {
                adj[a] |= 1 << b;
                adj[b] |= 1 << a;
            }
        }
        adj
    }

    pub fn degree(&self, label: usize) -> usize {
        self.adjacency()[label - 2].count_ones() as usize
    }

    pub fn is_planar(&self) -> bool {
        is_planar(self)
    }

    /// Checks the invariants a geometry must meet to be simulated.
    pub fn validate_planar(&self) -> Result<(), TopologyError> {
        let cap = planar_edge_cap(self.n_buffer);
        if self.edge_count() > cap {
            return Err(TopologyError::TooManyEdges {
                edges: self.edge_count(),
                cap,
            });
        }
        if !self.is_planar() {
            return Err(TopologyError::NotPlanar);
        }
        Ok(())
    }

    /// Relabels vertices: buffer label `l` becomes `perm[l − 2] + 2`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_buffer);
        let edges = self
            .edges()
            .into_iter()
            .map(|(i, j)| (perm[i - 2] + 2, perm[j - 2] + 2));
        Self::new(self.n_buffer, edges).expect("permutation preserves simplicity")
    }

    pub fn canonical_form(&self) -> CanonicalForm {
        CanonicalForm {
            n_buffer: self.n_buffer,
            code: canonical_code(self.n_buffer, self.mask),
        }
    }

    pub fn is_isomorphic(&self, other: &Self) -> bool {
        self.n_buffer == other.n_buffer && self.canonical_form() == other.canonical_form()
    }

    /// The graph rebuilt from its canonical code; isomorphic to `self`.
    pub fn canonical_representative(&self) -> Self {
        Self::from_mask(self.n_buffer, self.canonical_form().code)
    }
}

impl fmt::Display for BufferGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self.edges().iter().map(|(i, j)| format!("({i},{j})")).collect();
        write!(f, "N={}; edges={}", self.n_buffer, edges.join(","))
    }
}

impl fmt::Debug for BufferGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BufferGraph({self})")
    }
}

impl FromStr for BufferGraph {
    type Err = TopologyError;

    /// Parses `N=<n>; edges=(i,j),(k,l),...`.
    fn from_str(s: &str) -> Result<Self, TopologyError> {
        let bad = || TopologyError::Parse(s.to_string());
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (n_part, edge_part) = compact.split_once(';').ok_or_else(bad)?;
        let n: usize = n_part
            .strip_prefix("N=")
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        let edge_part = edge_part.strip_prefix("edges=").ok_or_else(bad)?;
        let mut edges = Vec::new();
        let mut rest = edge_part;
        while !rest.is_empty() {
            let body = rest.strip_prefix('(').ok_or_else(bad)?;
            let close = body.find(')').ok_or_else(bad)?;
            let (i, j) = body[..close].split_once(',').ok_or_else(bad)?;
            edges.push((i.parse().map_err(|_| bad())?, j.parse().map_err(|_| bad())?));
            rest = &body[close + 1..];
            if let Some(r) = rest.strip_prefix(',') {
                if r.is_empty() {
                    return Err(bad());
                }
                rest = r;
            } else if !rest.is_empty() {
                return Err(bad());
            }
        }
        Self::new(n, edges)
    }
}

impl Serialize for BufferGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BufferGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Isomorphism-invariant graph key: the minimum edge bitmask over all vertex relabelings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalForm {
    pub n_buffer: usize,
    pub code: u32,
}

/// For each vertex permutation, the image of every edge bit.
fn permutation_edge_maps(n: usize) -> &'static [Vec<u8>] {
    static MAPS: OnceLock<Vec<Vec<Vec<u8>>>> = OnceLock::new();
    let all = MAPS.get_or_init(|| {
        (0..=MAX_BUFFER_SPINS)
            .map(|n| {
                let edge_pairs = pairs(n);
                permutations(n)
                    .into_iter()
                    .map(|p| {
                        edge_pairs
                            .iter()
                            .map(|&(a, b)| {
                                let (x, y) = (p[a].min(p[b]), p[a].max(p[b]));
                                pair_index(n, x, y) as u8
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    });
    &all[n]
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

fn canonical_code(n: usize, mask: u32) -> u32 {
    let bits: Vec<usize> = (0..pair_count(n)).filter(|k| mask >> k & 1 == 1).collect();
    permutation_edge_maps(n)
        .iter()
        .map(|map| bits.iter().fold(0u32, |acc, &k| acc | 1 << map[k]))
        .min()
        .unwrap_or(0)
}

/// Exact planarity for buffer graphs via Kuratowski obstructions.
///
/// With at most six vertices a K₃,₃ subdivision has no spare vertex, so it must
/// be a K₃,₃ subgraph, and a K₅ subdivision subdivides at most one edge once.
pub fn is_planar(g: &BufferGraph) -> bool {
    let n = g.n_buffer;
    if n <= 4 {
        return true;
    }
    let adj = g.adjacency();
    let full = (1u8 << n) - 1;

    // K₅ on five branch vertices, one pair possibly routed through the remaining vertex.
    for spare in 0..=n {
        if n == 5 && spare != 5 {
            continue;
        }
        let branch: u8 = if spare < n { full & !(1 << spare) } else { full };
        if branch.count_ones() != 5 {
            continue;
        }
        let verts: Vec<usize> = (0..n).filter(|v| branch >> v & 1 == 1).collect();
        let mut missing = Vec::new();
        for (x, &a) in verts.iter().enumerate() {
            for &b in &verts[x + 1..] {
                if adj[a] >> b & 1 == 0 {
                    missing.push((a, b));
                }
            }
        }
        match missing.as_slice() {
            [] => return false,
            [(a, b)] if spare < n => {
                if adj[spare] >> a & 1 == 1 && adj[spare] >> b & 1 == 1 {
                    return false;
                }
            }
            _ => {}
        }
    }

    // K₃,₃ needs all six vertices.
    if n == 6 {
        for side in 0u8..(1 << 6) {
            if side.count_ones() != 3 || side & 1 == 0 {
                continue;
            }
            let other = full & !side;
            let complete = (0..6)
                .filter(|v| side >> v & 1 == 1)
                .all(|v| adj[v] & other == other);
            if complete {
                return false;
            }
        }
    }
    true
}

/// `M = Σ_{k=0}^{cap} C(E, k)` with `E = N(N−1)/2` and `cap = 3N − 6` for `N ≥ 3`.
///
/// Counts labeled edge subsets under the edge cap, which for `N ≥ 6` includes
/// some non-planar graphs.
pub fn geometry_count(n_buffer: usize) -> Result<BigUint, TopologyError> {
    if n_buffer < 1 {
        return Err(TopologyError::UnsupportedSize(n_buffer, 1, usize::MAX));
    }
    let e = pair_count(n_buffer);
    let cap = planar_edge_cap(n_buffer).min(e);
    let mut total = BigUint::from(0u32);
    let mut binom = BigUint::from(1u32);
    for k in 0..=cap {
        total += &binom;
        binom = binom * BigUint::from(e - k) / BigUint::from(k + 1);
    }
    Ok(total)
}

pub fn enumerate_buffer_graphs(
    n_buffer: usize,
    planar_filter: bool,
    up_to_isomorphism: bool,
) -> Result<Vec<BufferGraph>, TopologyError> {
    if !(1..=MAX_BUFFER_SPINS).contains(&n_buffer) {
        return Err(TopologyError::UnsupportedSize(n_buffer, 1, MAX_BUFFER_SPINS));
    }
    let e = pair_count(n_buffer);
    let cap = planar_edge_cap(n_buffer);
    let mut masks: Vec<u32> = (0u32..1 << e)
        .into_par_iter()
        .filter(|m| m.count_ones() as usize <= cap)
        .filter(|&m| !planar_filter || is_planar(&BufferGraph::from_mask(n_buffer, m)))
        .collect();
    if up_to_isomorphism {
        let classes: BTreeSet<u32> = masks
            .par_iter()
            .map(|&m| canonical_code(n_buffer, m))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        masks = classes.into_iter().collect();
    }
    masks.sort_by_key(|&m| (m.count_ones(), m));
    Ok(masks
        .into_iter()
        .map(|m| BufferGraph::from_mask(n_buffer, m))
        .collect())
}

/// Position of a graph among the isomorphism classes with the same `(N, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeometryClass {
    pub n_buffer: usize,
    pub k: usize,
    pub index: usize,
}

pub fn classify(g: &BufferGraph) -> Result<GeometryClass, TopologyError> {
    g.validate_planar()?;
    let k = g.edge_count();
    let code = g.canonical_form().code;
    let family = enumerate_buffer_graphs(g.n_buffer, true, true)?;
    let index = family
        .iter()
        .filter(|h| h.edge_count() == k)
        .position(|h| h.mask == code)
        .expect("canonical representative is enumerated");
    Ok(GeometryClass {
        n_buffer: g.n_buffer,
        k,
        index,
    })
}

/// The two geometries compared throughout: no buffer couplings, or a maximal planar network.
///
/// Maximal networks: single edge (N=2), triangle (3), K₄ (4), K₅ minus the
/// edge (2,3) (5), and for N=6 the maximal planar graph with degrees
/// (5,5,4,4,3,3): spins 2 and 3 coupled to everything, 4–5–6–7 a path.
pub fn extreme_geometry(n_buffer: usize, which: Extreme) -> Result<BufferGraph, TopologyError> {
    if !(2..=MAX_BUFFER_SPINS).contains(&n_buffer) {
        return Err(TopologyError::UnsupportedSize(n_buffer, 2, MAX_BUFFER_SPINS));
    }
    match which {
        Extreme::Empty => BufferGraph::empty(n_buffer),
        Extreme::Maximal => {
            let removed: &[(usize, usize)] = match n_buffer {
                5 => &[(2, 3)],
                6 => &[(4, 6), (4, 7), (5, 7)],
                _ => &[],
            };
            let edges = (2..=n_buffer + 1)
                .flat_map(|i| (i + 1..=n_buffer + 1).map(move |j| (i, j)))
                .filter(|e| !removed.contains(e));
            BufferGraph::new(n_buffer, edges)
        }
    }
}
