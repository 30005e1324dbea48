//! Dense reference solvers used to cross-check the matrix-free code.
#![allow(dead_code)]

use commlink::commgraph::{base_graph, EdgeSet, Graph};
use commlink::firmath::{FirTM, ObjectiveOracle, ParamLayout};
use commlink::qispace::TemporalMask;
use commlink::solvers::GroupSpec;
use commlink::sysmodel::{gen_chain_plant, Partition, PlantModel, DEFAULT_TOL_ZERO};
use nalgebra::{DMatrix, DVector};

pub struct Instance {
    pub plant: PlantModel,
    pub part: Partition,
    pub base: Graph,
    pub edges: EdgeSet,
}

/// Chain plant with every distance-2 pair as a candidate link.
pub fn chain_instance(n: usize, couple: f64, seed: u64) -> Instance {
    let (plant, part) = gen_chain_plant(n, couple, seed).unwrap();
    let base = base_graph(&plant, &part, DEFAULT_TOL_ZERO).unwrap();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i.abs_diff(j) == 2 {
                edges.push((i, j));
            }
        }
    }
    let edges = EdgeSet::new(edges, &base).unwrap();
    Instance {
        plant,
        part,
        base,
        edges,
    }
}

/// Impulse-response coefficients `t = 0..=t_max` computed by explicit powers.
fn impulse(c: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, d: Option<&DMatrix<f64>>, t_max: usize) -> Vec<DMatrix<f64>> {
    let mut out = vec![d.cloned().unwrap_or_else(|| DMatrix::zeros(c.nrows(), b.ncols()))];
    let mut pow = DMatrix::<f64>::identity(a.nrows(), a.ncols());
    for _ in 1..=t_max {
        out.push(c * &pow * b);
        pow = &pow * a;
    }
    out
}

/// Dense least-squares form `J(R) = ||c - M vec(R)||^2` of the objective.
pub struct DenseModel {
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
    pub layout: ParamLayout,
}

impl DenseModel {
    pub fn new(p: &PlantModel, n_param: usize, t_max: usize) -> Self {
        let g11 = impulse(&p.c1, &p.a, &p.b1, None, t_max);
        let g12 = impulse(&p.c1, &p.a, &p.b2, Some(&p.d12), t_max);
        let g21 = impulse(&p.c2, &p.a, &p.b1, Some(&p.d21), t_max);
        let (q1, p1, p2, q2) = (p.c1.nrows(), p.b1.ncols(), p.b2.ncols(), p.c2.nrows());
        let per_out = q1 * p1;
        let layout = ParamLayout {
            horizon: n_param,
            rows: p2,
            cols: q2,
        };
        let mut m = DMatrix::<f64>::zeros((t_max + 1) * per_out, layout.len());
        for b in 1..=n_param {
            for i in 0..p2 {
                for j in 0..q2 {
                    let col = layout.index(b, i, j);
                    for t in b..=t_max {
                        let mut w = DMatrix::<f64>::zeros(q1, p1);
                        for a in 0..=(t - b) {
                            let cc = t - b - a;
                            w += g12[a].column(i) * g21[cc].row(j);
                        }
                        for r in 0..q1 {
                            for s in 0..p1 {
                                m[(t * per_out + r * p1 + s, col)] = w[(r, s)];
                            }
                        }
                    }
                }
            }
        }
        let mut c = DVector::<f64>::zeros((t_max + 1) * per_out);
        for (t, g) in g11.iter().enumerate() {
            for r in 0..q1 {
                for s in 0..p1 {
                    c[t * per_out + r * p1 + s] = g[(r, s)];
                }
            }
        }
        DenseModel { m, c, layout }
    }

    pub fn for_oracle(p: &PlantModel, oracle: &ObjectiveOracle) -> Self {
        Self::new(p, oracle.n_param(), oracle.t_max())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (&self.c - &self.m * x).norm_squared()
    }

    /// Least squares over the listed coordinates; the rest stay zero.
    pub fn least_squares(&self, cols: &[usize]) -> DVector<f64> {
        let mut x = DVector::zeros(self.layout.len());
        if cols.is_empty() {
            return x;
        }
        let a = self.m.select_columns(cols);
        let h = a.transpose() * &a;
        let rhs = a.transpose() * &self.c;
        let sol = h.cholesky().expect("restricted Gram matrix is positive definite").solve(&rhs);
        for (k, &i) in cols.iter().enumerate() {
            x[i] = sol[k];
        }
        x
    }

    pub fn to_fir(&self, x: &DVector<f64>) -> FirTM {
        self.layout.to_fir(x.as_slice())
    }

    pub fn gram_eigen_max(&self, cols: &[usize]) -> f64 {
        let a = self.m.select_columns(cols);
        let h = a.transpose() * a;
        h.symmetric_eigenvalues().max()
    }
}

pub fn coords_of(mask: &TemporalMask, layout: &ParamLayout, tail_from: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for t in 1..=mask.horizon().min(layout.horizon) {
        for r in 0..layout.rows {
            for c in 0..layout.cols {
                if mask.entry(t).get(r, c) {
                    out.push(layout.index(t, r, c));
                }
            }
        }
    }
    out.extend(tail_cols(layout, tail_from));
    out
}

pub fn tail_cols(layout: &ParamLayout, from: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for t in from.max(1)..=layout.horizon {
        for r in 0..layout.rows {
            for c in 0..layout.cols {
                out.push(layout.index(t, r, c));
            }
        }
    }
    out
}

/// Exact minimizer of `x'Hx - 2b'x + lam ||x||`.
fn group_step(h: &DMatrix<f64>, b: &DVector<f64>, lam: f64) -> DVector<f64> {
    if b.norm() <= lam / 2.0 {
        return DVector::zeros(b.len());
    }
    let eig = h.clone().symmetric_eigen();
    let bt = eig.eigenvectors.transpose() * b;
    let phi = |mu: f64| -> f64 {
        let s: f64 = bt
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(bi, li)| (bi / (li + mu)).powi(2))
            .sum();
        mu * s.sqrt()
    };
    // phi increases from 0 to ||b||; solve phi(mu) = lam / 2
    let (mut lo, mut hi) = (0.0, 1.0);
    while phi(hi) < lam / 2.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < lam / 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let shifted = h + DMatrix::identity(h.nrows(), h.ncols()) * mu;
    shifted.cholesky().unwrap().solve(b)
}

/// Dense solution of the overlapping group lasso by exact block coordinate
/// descent over the latent blocks.
pub struct DenseGroupLasso {
    pub objective: f64,
    pub blocks: Vec<DVector<f64>>,
    pub r: DVector<f64>,
    pub group_norms: Vec<f64>,
}

pub fn dense_group_lasso(model: &DenseModel, spec: &GroupSpec, lambda: f64) -> DenseGroupLasso {
    let layout = model.layout;
    let mut unpen = coords_of(&spec.base_mask, &layout, usize::MAX);
    unpen.extend(tail_cols(&layout, spec.free_tail_from));
    let mut cols: Vec<Vec<usize>> = vec![unpen];
    for g in &spec.groups {
        cols.push(coords_of(&g.mask, &layout, usize::MAX));
    }
    let mats: Vec<DMatrix<f64>> = cols.iter().map(|c| model.m.select_columns(c)).collect();
    let grams: Vec<DMatrix<f64>> = mats.iter().map(|a| a.transpose() * a).collect();
    let mut blocks: Vec<DVector<f64>> = cols.iter().map(|c| DVector::zeros(c.len())).collect();
    let mut fit = DVector::<f64>::zeros(model.c.len());
    let obj = |fit: &DVector<f64>, blocks: &[DVector<f64>]| {
        (&model.c - fit).norm_squared() + lambda * blocks[1..].iter().map(|b| b.norm()).sum::<f64>()
    };
    let chol0 = (!cols[0].is_empty()).then(|| grams[0].clone().cholesky().unwrap());
    let assemble = |blocks: &[DVector<f64>]| {
        let mut r = DVector::zeros(layout.len());
        for (k, c) in cols.iter().enumerate() {
            for (j, &i) in c.iter().enumerate() {
                r[i] += blocks[k][j];
            }
        }
        r
    };
    let mut prev = obj(&fit, &blocks);
    for sweep in 0..200_000 {
        for k in 0..blocks.len() {
            if cols[k].is_empty() {
                continue;
            }
            fit -= &mats[k] * &blocks[k];
            let b = mats[k].transpose() * (&model.c - &fit);
            blocks[k] = if k == 0 {
                chol0.as_ref().unwrap().solve(&b)
            } else {
                group_step(&grams[k], &b, lambda)
            };
            fit += &mats[k] * &blocks[k];
        }
        let cur = obj(&fit, &blocks);
        let stalled = prev - cur <= 0.0;
        prev = cur;
        if sweep % 10 == 9 || stalled {
            let pen: f64 = blocks[1..].iter().map(|b| b.norm()).sum();
            let gap = dense_gap(model, spec, lambda, &assemble(&blocks), pen);
            if gap <= 1e-13 * cur.abs().max(1e-300) || stalled {
                break;
            }
        }
    }
    let r = assemble(&blocks);
    let group_norms = blocks[1..].iter().map(|b| b.norm()).collect();
    DenseGroupLasso {
        objective: model.objective(&r) + lambda * blocks[1..].iter().map(|b| b.norm()).sum::<f64>(),
        blocks,
        r,
        group_norms,
    }
    .with_objective_check(prev)
}

impl DenseGroupLasso {
    fn with_objective_check(self, tracked: f64) -> Self {
        assert!(
            (self.objective - tracked).abs() <= 1e-8 * tracked.abs().max(1.0),
            "dense solve lost track of its objective"
        );
        self
    }

    /// Latent blocks as FIRs: base+tail first, then one per group.
    pub fn block_firs(&self, model: &DenseModel, spec: &GroupSpec) -> (FirTM, Vec<FirTM>, FirTM) {
        let layout = model.layout;
        let base_cols = coords_of(&spec.base_mask, &layout, usize::MAX);
        let nb = base_cols.len();
        let mut base = vec![0.0; layout.len()];
        let mut tail = vec![0.0; layout.len()];
        let tails = tail_cols(&layout, spec.free_tail_from);
        for (j, &i) in base_cols.iter().enumerate() {
            base[i] = self.blocks[0][j];
        }
        for (j, &i) in tails.iter().enumerate() {
            tail[i] = self.blocks[0][nb + j];
        }
        let groups = spec
            .groups
            .iter()
            .zip(&self.blocks[1..])
            .map(|(g, b)| {
                let mut v = vec![0.0; layout.len()];
                for (j, &i) in coords_of(&g.mask, &layout, usize::MAX).iter().enumerate() {
                    v[i] = b[j];
                }
                layout.to_fir(&v)
            })
            .collect();
        (layout.to_fir(&base), groups, layout.to_fir(&tail))
    }
}

/// Dense duality gap of the regularized problem at `r` built from latent
/// blocks, using the residual scaled into the dual feasible set.
pub fn dense_gap(model: &DenseModel, spec: &GroupSpec, lambda: f64, r: &DVector<f64>, penalty: f64) -> f64 {
    let resid = &model.c - &model.m * r;
    let primal = resid.norm_squared() + lambda * penalty;
    let grad = -2.0 * model.m.transpose() * &resid;
    let gmax = spec
        .groups
        .iter()
        .map(|g| {
            coords_of(&g.mask, &model.layout, usize::MAX)
                .iter()
                .map(|&i| grad[i] * grad[i])
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let s = if gmax > lambda { lambda / gmax } else { 1.0 };
    let theta = resid * (2.0 * s);
    let dual = theta.dot(&model.c) - theta.norm_squared() / 4.0;
    primal - dual
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
