use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::firmath::{dot, norm, ObjectiveOracle};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct CgOptions {
    /// Relative residual of the normal equations.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iters: 20_000,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CgOutcome {
    pub u: Vec<f64>,
    pub iters: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Least-squares fit over the coordinates `idx` (duplicates allowed), with the
/// rest of the parameter held at `fixed`: minimizes
/// `J(fixed + sum_k u_k e_{idx[k]})` by conjugate gradient on the normal equations.
pub(crate) fn solve_restricted(
    oracle: &ObjectiveOracle,
    idx: &[usize],
    fixed: &[f64],
    u0: &[f64],
    opts: &CgOptions,
) -> Result<CgOutcome> {
    let len = oracle.layout().len();
    let scatter = |u: &[f64]| {
        let mut r = vec![0.0; len];
        for (k, &i) in idx.iter().enumerate() {
            r[i] += u[k];
        }
        r
    };
    let gather = |g: &[f64]| idx.iter().map(|&i| g[i]).collect::<Vec<f64>>();
    let hess = |u: &[f64]| gather(&oracle.convolve_adjoint_flat(&oracle.convolve_flat(&scatter(u))));

    let b = gather(&oracle.convolve_adjoint_flat(&oracle.apply_flat(fixed)));
    let b_norm = norm(&b);
    if idx.is_empty() || b_norm == 0.0 {
        return Ok(CgOutcome {
            u: vec![0.0; idx.len()],
            iters: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }

    let mut u = u0.to_vec();
    let true_residual = |u: &[f64]| -> Vec<f64> {
        let hu = hess(u);
        b.iter().zip(&hu).map(|(x, y)| x - y).collect()
    };
    let mut r = true_residual(&u);
    let mut iters = 0;
    let mut restarts = 0;
    loop {
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        while rr.sqrt() > opts.tol * b_norm && iters < opts.max_iters {
            let hp = hess(&p);
            let php = dot(&p, &hp);
            if !(php > 0.0) {
                return Err(Error::CgBreakdown {
                    iter: iters,
                    detail: format!("p'Hp = {php:e} with |r| = {:e}", rr.sqrt()),
                });
            }
            let alpha = rr / php;
            for k in 0..u.len() {
                u[k] += alpha * p[k];
                r[k] -= alpha * hp[k];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for k in 0..p.len() {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
            iters += 1;
        }
        // the recursive residual drifts; confirm against the true one
        r = true_residual(&u);
        let rel = norm(&r) / b_norm;
        if rel <= opts.tol || iters >= opts.max_iters || restarts >= 3 {
            return Ok(CgOutcome {
                u,
                iters,
                rel_residual: rel,
                converged: rel <= opts.tol,
            });
        }
        restarts += 1;
    }
}
