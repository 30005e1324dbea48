use log::warn;

use super::cg::{solve_restricted, CgOptions};
use super::mask_coords;
use crate::error::{Error, Result};
use crate::firmath::{FirTM, ObjectiveOracle};
use crate::qispace::TemporalMask;

#[derive(Clone, Debug, PartialEq)]
pub struct PolishReport {
    pub r: FirTM,
    /// `sqrt(J(R))`.
    pub nu: f64,
    pub iters: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Minimize `J` over parameters supported in `mask` for `t <= mask.horizon()`
/// and unconstrained for `t >= free_tail_from`.
pub fn polish_qp_report(
    oracle: &ObjectiveOracle,
    mask: &TemporalMask,
    free_tail_from: usize,
    opts: &CgOptions,
) -> Result<PolishReport> {
    let layout = oracle.layout();
    if mask.horizon() > layout.horizon {
        return Err(Error::InvalidArgument(format!(
            "mask horizon {} exceeds N = {}",
            mask.horizon(),
            layout.horizon
        )));
    }
    if mask.horizon() > 0 {
        let e = mask.entry(1);
        if (e.rows(), e.cols()) != (layout.rows, layout.cols) {
            return Err(Error::DimensionMismatch {
                field: "mask".into(),
                detail: format!(
                    "mask is {}x{}, parameter is {}x{}",
                    e.rows(),
                    e.cols(),
                    layout.rows,
                    layout.cols
                ),
            });
        }
    }
    let idx = mask_coords(mask, free_tail_from, &layout);
    let zero = vec![0.0; layout.len()];
    let out = solve_restricted(oracle, &idx, &zero, &vec![0.0; idx.len()], opts)?;
    if !out.converged {
        warn!(
            "polish stopped after {} iterations at relative residual {:e}",
            out.iters, out.rel_residual
        );
    }
    let mut x = zero;
    for (k, &i) in idx.iter().enumerate() {
        x[i] += out.u[k];
    }
    let nu = oracle.objective_flat(&x).sqrt();
    Ok(PolishReport {
        r: layout.to_fir(&x),
        nu,
        iters: out.iters,
        rel_residual: out.rel_residual,
        converged: out.converged,
    })
}

/// [`polish_qp_report`] returning only `(R, nu)`.
pub fn polish_qp(
    oracle: &ObjectiveOracle,
    mask: &TemporalMask,
    free_tail_from: usize,
    opts: &CgOptions,
) -> Result<(FirTM, f64)> {
    let rep = polish_qp_report(oracle, mask, free_tail_from, opts)?;
    Ok((rep.r, rep.nu))
}
