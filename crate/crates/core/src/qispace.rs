//! Delay-indexed support masks.
//!
//! Every information constraint generated by a communication graph is a
//! coordinate subspace: at delay `t` the controller coefficient may use block
//! `(i,j)` iff `(Γ^{t-1})_{ij} != 0`. Those subspaces are stored as binary
//! masks, one per delay step, at both block and scalar-entry resolution.

use serde::{Deserialize, Serialize};

use crate::boolmat::BoolMatrix;
use crate::commgraph::{
    graph_delay, propagation_delays, DelayMatrix, DelayMode, Graph,
};
use crate::error::{Error, Result};
use crate::firmath::FirTM;
use crate::sysmodel::{Partition, PlantModel};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemporalMask {
    u_sizes: Vec<usize>,
    y_sizes: Vec<usize>,
    /// Index 0 is delay `t = 1`.
    block_masks: Vec<BoolMatrix>,
    entry_masks: Vec<BoolMatrix>,
}

impl TemporalMask {
    pub fn from_blocks(block_masks: Vec<BoolMatrix>, part: &Partition) -> Self {
        let entry_masks = block_masks
            .iter()
            .map(|b| b.inflate(&part.u_sizes, &part.y_sizes))
            .collect();
        TemporalMask {
            u_sizes: part.u_sizes.clone(),
            y_sizes: part.y_sizes.clone(),
            block_masks,
            entry_masks,
        }
    }

    pub fn empty(horizon: usize, part: &Partition) -> Self {
        Self::from_blocks(vec![BoolMatrix::zeros(part.n, part.n); horizon], part)
    }

    pub fn horizon(&self) -> usize {
        self.block_masks.len()
    }

    pub fn n(&self) -> usize {
        self.u_sizes.len()
    }

    /// Block mask at delay `t` (1-based).
    pub fn block(&self, t: usize) -> &BoolMatrix {
        &self.block_masks[t - 1]
    }

    /// Entry mask at delay `t` (1-based).
    pub fn entry(&self, t: usize) -> &BoolMatrix {
        &self.entry_masks[t - 1]
    }

    pub fn block_masks(&self) -> &[BoolMatrix] {
        &self.block_masks
    }

    pub fn is_empty(&self) -> bool {
        self.block_masks.iter().all(|m| !m.any())
    }

    pub fn entry_count(&self) -> usize {
        self.entry_masks.iter().map(BoolMatrix::count).sum()
    }

    fn zip_with(&self, other: &TemporalMask, f: impl Fn(&BoolMatrix, &BoolMatrix) -> BoolMatrix) -> Self {
        assert_eq!(self.horizon(), other.horizon(), "mask horizons differ");
        let blocks = self
            .block_masks
            .iter()
            .zip(&other.block_masks)
            .map(|(a, b)| f(a, b))
            .collect();
        let entries = self
            .entry_masks
            .iter()
            .zip(&other.entry_masks)
            .map(|(a, b)| f(a, b))
            .collect();
        TemporalMask {
            u_sizes: self.u_sizes.clone(),
            y_sizes: self.y_sizes.clone(),
            block_masks: blocks,
            entry_masks: entries,
        }
    }

    pub fn union(&self, other: &TemporalMask) -> Self {
        self.zip_with(other, BoolMatrix::or)
    }

    pub fn intersect(&self, other: &TemporalMask) -> Self {
        self.zip_with(other, BoolMatrix::and)
    }

    pub fn complement(&self) -> Self {
        TemporalMask {
            u_sizes: self.u_sizes.clone(),
            y_sizes: self.y_sizes.clone(),
            block_masks: self.block_masks.iter().map(BoolMatrix::not).collect(),
            entry_masks: self.entry_masks.iter().map(BoolMatrix::not).collect(),
        }
    }

    /// Entrywise containment over the common horizon.
    pub fn is_subset_of(&self, other: &TemporalMask) -> bool {
        self.block_masks
            .iter()
            .zip(&other.block_masks)
            .all(|(a, b)| a.is_subset_of(b))
    }

    pub fn is_disjoint_from(&self, other: &TemporalMask) -> bool {
        self.block_masks
            .iter()
            .zip(&other.block_masks)
            .all(|(a, b)| !a.and(b).any())
    }

    pub fn dump(&self) -> MaskDump {
        MaskDump {
            d: self.horizon(),
            block_masks: self.block_masks.clone(),
        }
    }
}

/// Golden-file representation of a mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskDump {
    pub d: usize,
    #[serde(rename = "blockMasks")]
    pub block_masks: Vec<BoolMatrix>,
}

/// Masks `supp(Γ^{t-1})` for `t = 1..=horizon`, without regard to `d(Γ)`.
pub fn power_masks(g: &Graph, part: &Partition, horizon: usize) -> TemporalMask {
    TemporalMask::from_blocks(g.powers(horizon), part)
}

/// `F(Γ)` over its natural horizon `d(Γ)`; coefficients beyond `d(Γ)` are
/// unconstrained.
pub fn subspace_masks(g: &Graph, part: &Partition) -> Result<TemporalMask> {
    let d = graph_delay(g).ok_or(Error::InfiniteDelay)?;
    check_part(g, part)?;
    Ok(power_masks(g, part, d))
}

/// Complement of [`subspace_masks`] over `t = 1..=d(Γ)`.
pub fn perp_masks(g: &Graph, part: &Partition) -> Result<TemporalMask> {
    Ok(subspace_masks(g, part)?.complement())
}

fn check_part(g: &Graph, part: &Partition) -> Result<()> {
    if g.n() != part.n {
        return Err(Error::DimensionMismatch {
            field: "graph".into(),
            detail: format!("graph has {} nodes, partition has {}", g.n(), part.n),
        });
    }
    Ok(())
}

/// Entries unlocked relative to the base graph by a single added link.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkSubspace {
    pub edge: (usize, usize),
    pub mask: TemporalMask,
}

impl LinkSubspace {
    pub fn is_degenerate(&self) -> bool {
        self.mask.is_empty()
    }
}

pub fn link_subspace(base: &Graph, edge: (usize, usize), part: &Partition) -> Result<LinkSubspace> {
    let (i, j) = edge;
    if i >= base.n() || j >= base.n() || i == j {
        return Err(Error::InvalidEdge(i, j, "not a valid off-diagonal link".into()));
    }
    if base.has_edge(i, j) {
        return Err(Error::InvalidEdge(i, j, "already present in the base graph".into()));
    }
    let d_base = graph_delay(base).ok_or(Error::InfiniteDelay)?;
    check_part(base, part)?;
    let aug = base.with_edge(i, j);
    let d_aug = graph_delay(&aug).expect("adding a link keeps the graph primitive");
    let base_pows = base.powers(d_base);
    let aug_pows = aug.powers(d_base);
    let blocks = (1..=d_base)
        .map(|t| {
            let allowed = if t <= d_aug {
                aug_pows[t - 1].clone()
            } else {
                BoolMatrix::ones(base.n(), base.n())
            };
            base_pows[t - 1].not().and(&allowed)
        })
        .collect();
    Ok(LinkSubspace {
        edge,
        mask: TemporalMask::from_blocks(blocks, part),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QiViolation {
    /// `c_ij > p_ij + 1`.
    Delay { i: usize, j: usize, c: usize, p: usize },
    /// `c_ki + c_ij < c_kj`.
    Triangle { i: usize, j: usize, k: usize },
}

impl std::fmt::Display for QiViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // 1-indexed for people
        match *self {
            QiViolation::Delay { i, j, c, p } => write!(
                f,
                "delay condition fails at ({},{}): c = {c} > p + 1 = {}",
                i + 1,
                j + 1,
                p + 1
            ),
            QiViolation::Triangle { i, j, k } => write!(
                f,
                "triangle inequality fails: c({},{}) + c({},{}) < c({},{})",
                k + 1,
                i + 1,
                i + 1,
                j + 1,
                k + 1,
                j + 1
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QiCertificate {
    pub ok: bool,
    pub violations: Vec<QiViolation>,
}

/// Sufficient condition for quadratic invariance of a delay pattern.
pub fn qi_delay_check(c: &DelayMatrix, p: &DelayMatrix) -> Result<QiCertificate> {
    let n = c.n();
    if p.n() != n {
        return Err(Error::DimensionMismatch {
            field: "propagation delays".into(),
            detail: format!("{} nodes vs {n}", p.n()),
        });
    }
    if !c.all_finite() {
        return Err(Error::InfiniteDelay);
    }
    let cv = |i, j| c.get(i, j).unwrap();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if let Some(pij) = p.get(i, j) {
                if cv(i, j) > pij + 1 {
                    violations.push(QiViolation::Delay {
                        i,
                        j,
                        c: cv(i, j),
                        p: pij,
                    });
                }
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if cv(k, i) + cv(i, j) < cv(k, j) {
                    violations.push(QiViolation::Triangle { i, j, k });
                }
            }
        }
    }
    Ok(QiCertificate {
        ok: violations.is_empty(),
        violations,
    })
}

/// Structural test of `K G22 K ∈ S` over the constrained horizon.
///
/// Uses `d(Γ)` when finite, otherwise `horizon`. `G22` block `(i,j)` is
/// treated as possibly nonzero at every delay `τ >= p_ij`.
pub fn qi_product_check(
    g: &Graph,
    p: &PlantModel,
    part: &Partition,
    horizon: usize,
    tol_zero: f64,
) -> Result<bool> {
    check_part(g, part)?;
    let d = graph_delay(g).unwrap_or(horizon);
    if d < 3 {
        // K^(a) G22^(τ) K^(b) lands at delay >= 3, past the constrained window.
        return Ok(true);
    }
    let delays = match propagation_delays(p, part, DelayMode::Structural, tol_zero, 0) {
        Ok((dm, _)) => dm,
        Err(_) => propagation_delays(p, part, DelayMode::Numerical, tol_zero, d)?.0,
    };
    let n = g.n();
    let masks = g.powers(d);
    let g22_support: Vec<BoolMatrix> = (0..=d)
        .map(|tau| BoolMatrix::from_fn(n, n, |i, j| delays.get(i, j).is_some_and(|pij| pij <= tau)))
        .collect();
    for a in 1..=d {
        for b in 1..=d {
            for tau in 1..=d {
                let total = a + tau + b;
                if total > d {
                    break;
                }
                let prod = masks[a - 1].mul(&g22_support[tau]).mul(&masks[b - 1]);
                if !prod.is_subset_of(&masks[total - 1]) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Orthogonal projection onto the mask, passing coefficients at
/// `t >= free_tail_from` through unchanged.
pub fn project(x: &FirTM, m: &TemporalMask, free_tail_from: usize) -> Result<FirTM> {
    if free_tail_from <= m.horizon() {
        return Err(Error::InvalidArgument(format!(
            "free tail must start after the mask horizon ({free_tail_from} <= {})",
            m.horizon()
        )));
    }
    if x.t_max() < m.horizon() || x.t_min() > 1 {
        return Err(Error::InvalidArgument(format!(
            "FIR spans t = {}..={}, mask needs 1..={}",
            x.t_min(),
            x.t_max(),
            m.horizon()
        )));
    }
    let mut out = x.clone();
    for t in out.t_min().max(1)..=out.t_max() {
        if t >= free_tail_from {
            continue;
        }
        let c = out.coeff_mut(t);
        if t <= m.horizon() {
            let em = m.entry(t);
            for r in 0..c.nrows() {
                for col in 0..c.ncols() {
                    if !em.get(r, col) {
                        c[(r, col)] = 0.0;
                    }
                }
            }
        } else {
            c.fill(0.0);
        }
    }
    Ok(out)
}
