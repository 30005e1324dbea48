use nalgebra::DMatrix;

use super::cg::{solve_restricted, CgOptions};
use super::{GroupSolution, GroupSpec, Latent};
use crate::error::{Error, Result};
use crate::firmath::{seq_dot, seq_norm2, ObjectiveOracle};

/// Dual certificate at a latent point.
pub(crate) struct GapEval {
    /// Primal objective at the input point.
    pub primal: f64,
    pub dual: f64,
    /// Input point with its unpenalized blocks re-fitted.
    pub x_re: Vec<f64>,
    pub t_re: Vec<DMatrix<f64>>,
    pub primal_re: f64,
    /// `||(A' θ)_g||` per group for the scaled dual point `θ`.
    pub dual_norms: Vec<f64>,
}

impl GapEval {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }
}

/// Re-fit the unpenalized blocks (every block when `lambda == 0`), then scale
/// the residual of the re-fitted point into the dual feasible set.
pub(crate) fn evaluate(
    oracle: &ObjectiveOracle,
    lat: &Latent,
    lambda: f64,
    x: &[f64],
    primal: Option<f64>,
    cg: &CgOptions,
) -> Result<GapEval> {
    let primal = match primal {
        Some(p) => p,
        None => oracle.objective_flat(&lat.scatter(x)) + lambda * lat.penalty(x),
    };
    let free: Vec<usize> = if lambda == 0.0 {
        (0..lat.len()).collect()
    } else {
        lat.unpenalized()
    };
    let mut held = x.to_vec();
    for &k in &free {
        held[k] = 0.0;
    }
    let fixed = lat.scatter(&held);
    let sub_idx: Vec<usize> = free.iter().map(|&k| lat.idx[k]).collect();
    let u0: Vec<f64> = free.iter().map(|&k| x[k]).collect();
    let fit = solve_restricted(oracle, &sub_idx, &fixed, &u0, cg)?;
    let mut x_re = held;
    for (j, &k) in free.iter().enumerate() {
        x_re[k] = fit.u[j];
    }
    let t_re = oracle.apply_flat(&lat.scatter(&x_re));
    let j_re = seq_norm2(&t_re);
    let primal_re = j_re + lambda * lat.penalty(&x_re);

    let grad = oracle.adjoint_flat(&t_re);
    let mut dual_norms: Vec<f64> = lat.group_norms(&lat.gather(&grad)).into_iter().map(|v| 2.0 * v).collect();
    let gmax = dual_norms.iter().copied().fold(0.0, f64::max);
    let scale = if lambda > 0.0 && gmax > lambda { lambda / gmax } else { 1.0 };
    dual_norms.iter_mut().for_each(|v| *v *= scale);
    let dual = 2.0 * scale * seq_dot(&t_re, oracle.g11()) - scale * scale * j_re;
    Ok(GapEval {
        primal,
        dual,
        x_re,
        t_re,
        primal_re,
        dual_norms,
    })
}

/// Primal minus dual objective of the regularized problem at `state`.
pub fn duality_gap(oracle: &ObjectiveOracle, spec: &GroupSpec, lambda: f64, state: &GroupSolution) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be non-negative".into()));
    }
    let layout = oracle.layout();
    spec.check_layout(&layout)?;
    let lat = Latent::new(spec, layout);
    if state.a_groups.len() != lat.groups.len() {
        return Err(Error::InvalidArgument(format!(
            "state has {} groups, spec has {}",
            state.a_groups.len(),
            lat.groups.len()
        )));
    }
    let mut x = vec![0.0; lat.len()];
    let mut fill = |range: std::ops::Range<usize>, f: &crate::firmath::FirTM| -> Result<()> {
        let flat = layout.from_fir(f)?;
        for k in range {
            x[k] = flat[lat.idx[k]];
        }
        Ok(())
    };
    fill(lat.base.clone(), &state.a_base)?;
    for (g, a) in lat.groups.iter().zip(&state.a_groups) {
        fill(g.clone(), a)?;
    }
    fill(lat.tail.clone(), &state.tail)?;
    let eval = evaluate(oracle, &lat, lambda, &x, None, &CgOptions::default())?;
    Ok(eval.gap())
}
