use serde::{Deserialize, Serialize};

use super::{mask_coords, GroupSpec};
use crate::error::{Error, Result};
use crate::firmath::{norm, FirTM, ParamLayout};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CommNormOptions {
    /// Primal and dual residual tolerance, relative to `max(1, ||X||)`.
    pub tol_res: f64,
    /// Entries at or below this magnitude count as zero in the support test.
    pub tol_zero: f64,
    pub max_iters: usize,
    pub rho: f64,
    pub relax: f64,
}

impl Default for CommNormOptions {
    fn default() -> Self {
        CommNormOptions {
            tol_res: 1e-8,
            tol_zero: 1e-9,
            max_iters: 200_000,
            rho: 1.0,
            relax: 1.5,
        }
    }
}

/// Smallest `Σ ||A_ij||_H2` over decompositions `X = A_base + Σ A_ij` with
/// every block inside its mask; `f64::INFINITY` when `X` has support outside
/// the union of the masks.
pub fn comm_link_norm(x: &FirTM, spec: &GroupSpec, opts: &CommNormOptions) -> Result<f64> {
    let d = spec.horizon();
    let e1 = spec.base_mask.entry(1);
    let (rows, cols) = (e1.rows(), e1.cols());
    if (x.rows(), x.cols()) != (rows, cols) {
        return Err(Error::DimensionMismatch {
            field: "X".into(),
            detail: format!("X is {}x{}, masks are {rows}x{cols}", x.rows(), x.cols()),
        });
    }
    let union = spec.union_mask();
    for t in x.t_min()..=x.t_max() {
        let m = x.coeff(t);
        for r in 0..rows {
            for c in 0..cols {
                let inside = t >= 1 && t <= d && union.entry(t).get(r, c);
                if !inside && m[(r, c)].abs() > opts.tol_zero {
                    return Ok(f64::INFINITY);
                }
            }
        }
    }
    if spec.groups.is_empty() {
        return Ok(0.0);
    }

    let layout = ParamLayout { horizon: d, rows, cols };
    let mut target = vec![0.0; layout.len()];
    for t in x.t_min().max(1)..=x.t_max().min(d) {
        let m = x.coeff(t);
        for r in 0..rows {
            for c in 0..cols {
                if union.entry(t).get(r, c) {
                    target[layout.index(t, r, c)] = m[(r, c)];
                }
            }
        }
    }

    let mut idx = mask_coords(&spec.base_mask, usize::MAX, &layout);
    let mut groups = Vec::with_capacity(spec.groups.len());
    for g in &spec.groups {
        let start = idx.len();
        idx.extend(mask_coords(&g.mask, usize::MAX, &layout));
        groups.push(start..idx.len());
    }
    let mut cover: Vec<Vec<usize>> = vec![Vec::new(); layout.len()];
    for (k, &i) in idx.iter().enumerate() {
        cover[i].push(k);
    }
    // Euclidean projection onto { z : Σ_k z_k = X per coordinate }
    let project = |w: &mut [f64]| {
        for (i, ks) in cover.iter().enumerate() {
            if ks.is_empty() {
                continue;
            }
            let s: f64 = ks.iter().map(|&k| w[k]).sum();
            let corr = (s - target[i]) / ks.len() as f64;
            for &k in ks {
                w[k] -= corr;
            }
        }
    };

    let m = idx.len();
    let scale = norm(&target).max(1.0);
    let tol = opts.tol_res * scale;
    let (rho, alpha) = (opts.rho, opts.relax);
    let mut z = vec![0.0; m];
    project(&mut z);
    let mut u = vec![0.0; m];
    let mut xv = vec![0.0; m];
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..opts.max_iters {
        for k in 0..m {
            xv[k] = z[k] - u[k];
        }
        for g in &groups {
            let seg = &mut xv[g.clone()];
            let nv = norm(seg);
            let k = if nv > 1.0 / rho { 1.0 - 1.0 / (rho * nv) } else { 0.0 };
            seg.iter_mut().for_each(|v| *v *= k);
        }
        let xh: Vec<f64> = (0..m).map(|k| alpha * xv[k] + (1.0 - alpha) * z[k]).collect();
        let mut z_new: Vec<f64> = (0..m).map(|k| xh[k] + u[k]).collect();
        project(&mut z_new);
        for k in 0..m {
            u[k] += xh[k] - z_new[k];
        }
        r_norm = (0..m).map(|k| (xv[k] - z_new[k]).powi(2)).sum::<f64>().sqrt();
        s_norm = rho * (0..m).map(|k| (z_new[k] - z[k]).powi(2)).sum::<f64>().sqrt();
        z = z_new;
        if r_norm <= tol && s_norm <= tol {
            return Ok(groups.iter().map(|g| norm(&z[g.clone()])).sum());
        }
    }
    Err(Error::NotConverged {
        iters: opts.max_iters,
        detail: format!("primal residual {r_norm:e}, dual residual {s_norm:e}"),
    })
}
