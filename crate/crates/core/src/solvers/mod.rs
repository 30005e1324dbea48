//! Convex solvers over FIR parameters: the overlapping group-lasso, the
//! support-constrained least-squares polish, and the link-norm evaluator.

mod cg;
mod comm_norm;
mod fista;
mod gap;
mod polish;

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::commgraph::{graph_delay, EdgeSet, Graph};
use crate::error::{Error, Result};
use crate::firmath::{FirTM, ParamLayout};
use crate::qispace::{link_subspace, subspace_masks, LinkSubspace, TemporalMask};
use crate::sysmodel::Partition;

pub use cg::CgOptions;
pub use comm_norm::{comm_link_norm, CommNormOptions};
pub use fista::{group_lasso_fista, lambda_max, support_lipschitz, FistaOptions, TraceRow};
pub use gap::duality_gap;
pub use polish::{polish_qp, polish_qp_report, PolishReport};

/// Converged group norms below this are set to exactly zero.
pub const SNAP_ZERO: f64 = 1e-12;

/// Variable structure of the regularized problem: an unpenalized base block,
/// one penalized block per candidate link, and an unpenalized free tail.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    pub base_mask: TemporalMask,
    pub groups: Vec<LinkSubspace>,
    pub free_tail_from: usize,
    pub n_param: usize,
}

impl GroupSpec {
    pub fn new(
        base_mask: TemporalMask,
        groups: Vec<LinkSubspace>,
        free_tail_from: usize,
        n_param: usize,
    ) -> Result<Self> {
        let d = base_mask.horizon();
        if n_param < d {
            return Err(Error::InvalidArgument(format!(
                "parameter horizon N = {n_param} is below the base graph delay {d}"
            )));
        }
        if free_tail_from <= d {
            return Err(Error::InvalidArgument(format!(
                "free tail must start after the mask horizon {d}, got {free_tail_from}"
            )));
        }
        for g in &groups {
            if g.mask.horizon() != d || g.mask.n() != base_mask.n() {
                return Err(Error::InvalidArgument(format!(
                    "group {:?} does not share the base mask shape",
                    g.edge
                )));
            }
            if !g.mask.is_disjoint_from(&base_mask) {
                return Err(Error::InvalidArgument(format!(
                    "group {:?} overlaps the base mask",
                    g.edge
                )));
            }
        }
        Ok(GroupSpec {
            base_mask,
            groups,
            free_tail_from,
            n_param,
        })
    }

    /// Base mask `F(Γ_base)` with one link subspace per candidate edge.
    pub fn from_graph(base: &Graph, edges: &EdgeSet, part: &Partition, n_param: usize) -> Result<Self> {
        edges.validate(base)?;
        let base_mask = subspace_masks(base, part)?;
        let d = graph_delay(base).ok_or(Error::InfiniteDelay)?;
        let groups = edges
            .edges
            .iter()
            .map(|&e| link_subspace(base, e, part))
            .collect::<Result<Vec<_>>>()?;
        Self::new(base_mask, groups, d + 1, n_param)
    }

    pub fn horizon(&self) -> usize {
        self.base_mask.horizon()
    }

    pub fn union_mask(&self) -> TemporalMask {
        self.groups
            .iter()
            .fold(self.base_mask.clone(), |acc, g| acc.union(&g.mask))
    }

    fn check_layout(&self, layout: &ParamLayout) -> Result<()> {
        let e = self.base_mask.entry(1);
        if (e.rows(), e.cols()) != (layout.rows, layout.cols) || self.n_param != layout.horizon {
            return Err(Error::DimensionMismatch {
                field: "spec".into(),
                detail: format!(
                    "masks are {}x{} over N = {}, parameter is {}x{} over N = {}",
                    e.rows(),
                    e.cols(),
                    self.n_param,
                    layout.rows,
                    layout.cols,
                    layout.horizon
                ),
            });
        }
        Ok(())
    }
}

/// Output of [`group_lasso_fista`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupSolution {
    pub a_base: FirTM,
    pub a_groups: Vec<FirTM>,
    pub tail: FirTM,
    pub r: FirTM,
    pub group_norms: Vec<f64>,
    /// `J(R) + λ Σ ||A_ij||`.
    pub objective: f64,
    /// Absolute duality gap at termination.
    pub gap: f64,
    pub rel_gap: f64,
    pub iters: usize,
    pub converged: bool,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Flat coordinates of a mask over `t = 1..=min(horizon, N)` followed by all
/// coordinates of `t = free_tail_from..=N`.
pub(crate) fn mask_coords(mask: &TemporalMask, free_tail_from: usize, layout: &ParamLayout) -> Vec<usize> {
    let mut idx = Vec::new();
    for t in 1..=mask.horizon().min(layout.horizon) {
        let m = mask.entry(t);
        for r in 0..layout.rows {
            for c in 0..layout.cols {
                if m.get(r, c) {
                    idx.push(layout.index(t, r, c));
                }
            }
        }
    }
    idx.extend(tail_coords(free_tail_from, layout));
    idx
}

fn tail_coords(free_tail_from: usize, layout: &ParamLayout) -> Vec<usize> {
    let per = layout.rows * layout.cols;
    let start = free_tail_from.max(1);
    if start > layout.horizon {
        return Vec::new();
    }
    ((start - 1) * per..layout.len()).collect()
}

/// Latent (duplicated) variables: each latent position maps to one parameter
/// coordinate; several positions may share a coordinate.
#[derive(Clone, Debug)]
pub(crate) struct Latent {
    pub idx: Vec<usize>,
    pub base: Range<usize>,
    pub groups: Vec<Range<usize>>,
    pub tail: Range<usize>,
    pub layout: ParamLayout,
}

impl Latent {
    pub fn new(spec: &GroupSpec, layout: ParamLayout) -> Self {
        let mut idx = mask_coords(&spec.base_mask, usize::MAX, &layout);
        let base = 0..idx.len();
        let mut groups = Vec::with_capacity(spec.groups.len());
        for g in &spec.groups {
            let start = idx.len();
            idx.extend(mask_coords(&g.mask, usize::MAX, &layout));
            groups.push(start..idx.len());
        }
        let start = idx.len();
        idx.extend(tail_coords(spec.free_tail_from, &layout));
        let tail = start..idx.len();
        Latent {
            idx,
            base,
            groups,
            tail,
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    /// Latent positions of the unpenalized blocks.
    pub fn unpenalized(&self) -> Vec<usize> {
        self.base.clone().chain(self.tail.clone()).collect()
    }

    pub fn scatter(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.layout.len()];
        for (k, &i) in self.idx.iter().enumerate() {
            r[i] += x[k];
        }
        r
    }

    pub fn gather(&self, g: &[f64]) -> Vec<f64> {
        self.idx.iter().map(|&i| g[i]).collect()
    }

    pub fn max_coverage(&self) -> usize {
        let mut count = vec![0usize; self.layout.len()];
        for &i in &self.idx {
            count[i] += 1;
        }
        count.into_iter().max().unwrap_or(0)
    }

    pub fn support(&self) -> Vec<bool> {
        let mut s = vec![false; self.layout.len()];
        for &i in &self.idx {
            s[i] = true;
        }
        s
    }

    pub fn group_norms(&self, x: &[f64]) -> Vec<f64> {
        self.groups.iter().map(|g| crate::firmath::norm(&x[g.clone()])).collect()
    }

    pub fn penalty(&self, x: &[f64]) -> f64 {
        self.group_norms(x).iter().sum()
    }

    /// FIR of the latent positions in `range` alone.
    pub fn block_fir(&self, x: &[f64], range: Range<usize>) -> FirTM {
        let mut r = vec![0.0; self.layout.len()];
        for k in range {
            r[self.idx[k]] += x[k];
        }
        self.layout.to_fir(&r)
    }
}

pub(crate) fn seq_axpby(a: f64, x: &[DMatrix<f64>], b: f64, y: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    x.iter().zip(y).map(|(u, v)| u * a + v * b).collect()
}
