//! Communication graphs between sub-controllers.
//!
//! `adj[i][j] = 1` means sub-controller `j` sends to sub-controller `i`.
//! Delays are counted in time steps with the convention `Γ^0 = I`.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::boolmat::{offsets, BoolMatrix};
use crate::error::{Error, Result};
use crate::sysmodel::{is_block_diag, markov_params, Block, Partition, PlantModel};

/// Largest edge list accepted by [`enumerate_design_set`].
pub const DESIGN_SET_GUARD: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Graph {
    adj: BoolMatrix,
}

impl Graph {
    pub fn new(adj: BoolMatrix) -> Result<Self> {
        if adj.rows() != adj.cols() || adj.rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "adjacency must be square with n >= 1, got {}x{}",
                adj.rows(),
                adj.cols()
            )));
        }
        Ok(Graph { adj })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let adj = BoolMatrix::from_rows(rows)
            .ok_or_else(|| Error::Malformed("adjacency must be a rectangular 0/1 matrix".into()))?;
        Graph::new(adj)
    }

    pub fn identity(n: usize) -> Self {
        Graph {
            adj: BoolMatrix::identity(n),
        }
    }

    pub fn complete(n: usize) -> Self {
        Graph {
            adj: BoolMatrix::ones(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.adj.rows()
    }

    pub fn adj(&self) -> &BoolMatrix {
        &self.adj
    }

    /// Whether there is a link from `j` to `i`.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.get(i, j)
    }

    pub fn with_edge(&self, i: usize, j: usize) -> Graph {
        let mut adj = self.adj.clone();
        adj.set(i, j, true);
        Graph { adj }
    }

    /// Boolean power `Γ^k` (with `Γ^0 = I`).
    pub fn power(&self, k: usize) -> BoolMatrix {
        let mut p = BoolMatrix::identity(self.n());
        for _ in 0..k {
            p = p.mul(&self.adj);
        }
        p
    }

    /// `Γ^0, Γ^1, ..., Γ^(count-1)`.
    pub fn powers(&self, count: usize) -> Vec<BoolMatrix> {
        let mut out = Vec::with_capacity(count);
        let mut p = BoolMatrix::identity(self.n());
        for _ in 0..count {
            let next = p.mul(&self.adj);
            out.push(p);
            p = next;
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    n: usize,
    adj: Vec<Vec<u8>>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphDoc {
            n: self.n(),
            adj: self.adj.to_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GraphDoc::deserialize(d)?;
        let g = Graph::from_rows(&doc.adj).map_err(serde::de::Error::custom)?;
        if g.n() != doc.n {
            return Err(serde::de::Error::custom(format!(
                "graph declares n = {} but adjacency is {}x{}",
                doc.n,
                g.n(),
                g.n()
            )));
        }
        Ok(g)
    }
}

/// Pairwise delays in time steps; `None` is an infinite delay.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayMatrix {
    n: usize,
    entries: Vec<Option<usize>>,
}

impl DelayMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Option<usize>) -> Self {
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(f(i, j));
            }
        }
        DelayMatrix { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Option<usize>) {
        self.entries[i * self.n + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }

    pub fn max_finite(&self) -> Option<usize> {
        self.entries.iter().flatten().copied().max()
    }

    pub fn to_rows(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

impl fmt::Display for DelayMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| match self.get(i, j) {
                    Some(v) => format!("{v:>3}"),
                    None => "inf".to_string(),
                })
                .collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

/// Candidate links, each `(i, j)` meaning a link from `j` to `i`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Validate a candidate list against a base graph.
    pub fn new(edges: Vec<(usize, usize)>, base: &Graph) -> Result<Self> {
        let set = EdgeSet { edges };
        set.validate(base)?;
        Ok(set)
    }

    pub fn validate(&self, base: &Graph) -> Result<()> {
        let n = base.n();
        let mut seen = HashSet::new();
        for &(i, j) in &self.edges {
            if i >= n || j >= n {
                return Err(Error::InvalidEdge(i, j, format!("out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidEdge(i, j, "self-loops are not candidate links".into()));
            }
            if base.has_edge(i, j) {
                return Err(Error::InvalidEdge(i, j, "already present in the base graph".into()));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidEdge(i, j, "duplicate".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Subset selected by the bits of `mask` in list order.
    pub fn subset(&self, mask: u64) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &e)| e)
            .collect()
    }
}

/// Shortest-path delays: entry `(i,j)` is the length of the shortest path from
/// `j` to `i`, zero on the diagonal.
pub fn comm_delays(g: &Graph) -> DelayMatrix {
    let n = g.n();
    let mut out = DelayMatrix::from_fn(n, |_, _| None);
    let mut queue = VecDeque::new();
    for src in 0..n {
        out.set(src, src, Some(0));
        queue.clear();
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            let dv = out.get(v, src).unwrap();
            for w in 0..n {
                // edge v -> w
                if g.has_edge(w, v) && out.get(w, src).is_none() {
                    out.set(w, src, Some(dv + 1));
                    queue.push_back(w);
                }
            }
        }
    }
    out
}

/// Delay after which every measurement has reached every sub-controller,
/// `None` when the adjacency matrix is not primitive.
pub fn graph_delay(g: &Graph) -> Option<usize> {
    let n = g.n();
    // Wielandt: a primitive n x n matrix has Γ^k > 0 for k >= n^2 - 2n + 2.
    let bound = if n == 1 { 1 } else { n * n - 2 * n + 2 };
    let mut p = BoolMatrix::identity(n);
    let mut last_with_zero = None;
    for k in 0..=bound {
        if !p.all() {
            last_with_zero = Some(k);
        }
        if k < bound {
            p = p.mul(g.adj());
        }
    }
    if !p.all() {
        return None;
    }
    Some(last_with_zero.map_or(0, |k| k + 1))
}

/// `bsupp(A)` with states attributed per the partition.
pub fn base_graph(p: &PlantModel, part: &Partition, tol_zero: f64) -> Result<Graph> {
    let xs = part.state_sizes(p.s())?;
    let total: usize = xs.iter().sum();
    if total != p.s() || xs.len() != part.n {
        return Err(Error::DimensionMismatch {
            field: "partition.x".into(),
            detail: format!("state sizes {xs:?} do not cover {} states", p.s()),
        });
    }
    let off = offsets(&xs);
    let adj = BoolMatrix::from_fn(part.n, part.n, |i, j| {
        let block = p.a.view((off[i], off[j]), (xs[i], xs[j]));
        block.iter().any(|v| v.abs() > tol_zero)
    });
    Graph::new(adj)
}

/// `Γ_base` plus every candidate link.
pub fn max_graph(base: &Graph, edges: &EdgeSet) -> Result<Graph> {
    edges.validate(base)?;
    let mut adj = base.adj().clone();
    for &(i, j) in &edges.edges {
        adj.set(i, j, true);
    }
    Graph::new(adj)
}

pub fn is_physically_built(g: &Graph, gmax: &Graph) -> bool {
    g.n() == gmax.n() && g.adj().is_subset_of(gmax.adj())
}

/// All `2^|E|` augmentations of the base graph, indexed by edge bitmask.
pub fn enumerate_design_set(base: &Graph, edges: &EdgeSet) -> Result<Vec<(u64, Graph)>> {
    if edges.len() > DESIGN_SET_GUARD {
        return Err(Error::GuardExceeded {
            count: edges.len(),
            limit: DESIGN_SET_GUARD,
        });
    }
    edges.validate(base)?;
    Ok((0..1u64 << edges.len())
        .map(|mask| {
            let mut adj = base.adj().clone();
            for (i, j) in edges.subset(mask) {
                adj.set(i, j, true);
            }
            (mask, Graph { adj })
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelayMode {
    Structural,
    Numerical,
}

/// Propagation delays of `G22`. The flag reports whether any entry was
/// left infinite because the numerical search hit `horizon`.
pub fn propagation_delays(
    p: &PlantModel,
    part: &Partition,
    mode: DelayMode,
    tol_zero: f64,
    horizon: usize,
) -> Result<(DelayMatrix, bool)> {
    match mode {
        DelayMode::Structural => {
            let xs = part.state_sizes(p.s())?;
            if !is_block_diag(&p.b2, &xs, &part.u_sizes, tol_zero)
                || !is_block_diag(&p.c2, &part.y_sizes, &xs, tol_zero)
            {
                return Err(Error::InvalidArgument(
                    "structural propagation delays need block-diagonal B2 and C2".into(),
                ));
            }
            let b = comm_delays(&base_graph(p, part, tol_zero)?);
            Ok((
                DelayMatrix::from_fn(part.n, |i, j| b.get(i, j).map(|v| v + 1)),
                false,
            ))
        }
        DelayMode::Numerical => {
            let g22 = markov_params(p, Block::G22, 1, horizon.max(1))?;
            let yo = offsets(&part.y_sizes);
            let uo = offsets(&part.u_sizes);
            let delays = DelayMatrix::from_fn(part.n, |i, j| {
                g22.iter().position(|m| {
                    m.view((yo[i], uo[j]), (part.y_sizes[i], part.u_sizes[j]))
                        .iter()
                        .any(|v| v.abs() > tol_zero)
                })
                .map(|k| k + 1)
            });
            let truncated = !delays.all_finite();
            Ok((delays, truncated))
        }
    }
}
