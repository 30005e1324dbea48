use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::cg::{solve_restricted, CgOptions};
use super::gap::evaluate;
use super::{seq_axpby, GroupSolution, GroupSpec, Latent, SNAP_ZERO};
use crate::error::{Error, Result};
use crate::firmath::{norm, seq_norm2, FirTM, ObjectiveOracle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct FistaOptions {
    /// Relative duality gap `gap / |P|` at which to stop.
    pub tol_gap: f64,
    pub max_iters: usize,
    /// Iterations between duality-gap evaluations.
    pub gap_every: usize,
    pub power_iters: usize,
    pub seed: u64,
    pub cg: CgOptions,
    /// Record a [`TraceRow`] per iteration.
    pub trace: bool,
    /// Precomputed [`support_lipschitz`]; estimated on the fly when absent.
    #[serde(skip)]
    pub lipschitz: Option<f64>,
}

impl Default for FistaOptions {
    fn default() -> Self {
        FistaOptions {
            tol_gap: 1e-6,
            max_iters: 50_000,
            gap_every: 20,
            power_iters: 200,
            seed: 0,
            cg: CgOptions::default(),
            trace: false,
            lipschitz: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    /// Present on iterations where the gap was evaluated.
    pub gap: Option<f64>,
    pub max_group_norm: f64,
}

fn block_soft_threshold(v: &mut [f64], thr: f64) {
    let nv = norm(v);
    if nv <= thr {
        v.iter_mut().for_each(|x| *x = 0.0);
    } else {
        let k = 1.0 - thr / nv;
        v.iter_mut().for_each(|x| *x *= k);
    }
}

/// Solve `min J(A_base + Σ A_ij + tail) + λ Σ ||A_ij||_H2` by accelerated
/// proximal gradient on the latent variables, with function-value restart.
pub fn group_lasso_fista(
    oracle: &ObjectiveOracle,
    spec: &GroupSpec,
    lambda: f64,
    opts: &FistaOptions,
) -> Result<GroupSolution> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {lambda}")));
    }
    let layout = oracle.layout();
    spec.check_layout(&layout)?;
    let lat = Latent::new(spec, layout);
    let l_r = match opts.lipschitz {
        Some(l) => l,
        None => oracle.lipschitz_on(Some(&lat.support()), opts.power_iters.max(10), opts.seed),
    };
    let lip = l_r * lat.max_coverage() as f64;
    let penalty = |x: &[f64]| lambda * lat.penalty(x);

    let mut x = vec![0.0; lat.len()];
    let mut t_x = oracle.g11().to_vec();
    let mut f_x = seq_norm2(&t_x);
    let mut trace = Vec::new();
    if !(lip > 0.0) {
        if f_x > 0.0 {
            warn!("closed loop does not depend on the parameter; returning R = 0");
        }
        return Ok(finish(oracle, &lat, lambda, x, 0.0, 0, true, trace));
    }
    let step = 1.0 / lip;
    let thr = lambda * step;
    // bound on ||A_g|| for every group, used by the screening test
    let op_norm = (l_r / 2.0).sqrt();
    let mut screened = vec![false; lat.groups.len()];

    let mut y = x.clone();
    let mut t_y = t_x.clone();
    let mut tk = 1.0_f64;
    let mut gap = f64::INFINITY;
    let mut best_dual = f64::NEG_INFINITY;
    let mut dual_norms = vec![0.0; lat.groups.len()];
    let mut converged = false;
    let mut iters = 0;
    while iters < opts.max_iters {
        iters += 1;
        let grad = oracle.adjoint_flat(&t_y);
        let g = lat.gather(&grad);
        let mut x_new: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - 2.0 * step * b).collect();
        for (k, g) in lat.groups.iter().enumerate() {
            if screened[k] {
                x_new[g.clone()].iter_mut().for_each(|v| *v = 0.0);
            } else {
                block_soft_threshold(&mut x_new[g.clone()], thr);
            }
        }
        let t_new = oracle.apply_flat(&lat.scatter(&x_new));
        let f_new = seq_norm2(&t_new) + penalty(&x_new);
        if f_new > f_x && tk > 1.0 {
            y.clone_from(&x);
            t_y.clone_from(&t_x);
            tk = 1.0;
            continue;
        }
        let tk_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let beta = (tk - 1.0) / tk_next;
        y = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        t_y = seq_axpby(1.0 + beta, &t_new, -beta, &t_x);
        x = x_new;
        t_x = t_new;
        f_x = f_new;
        tk = tk_next;

        let check = iters % opts.gap_every.max(1) == 0 || iters == opts.max_iters;
        let mut row_gap = None;
        if check {
            let ev = evaluate(oracle, &lat, lambda, &x, Some(f_x), &opts.cg)?;
            best_dual = best_dual.max(ev.dual);
            dual_norms.clone_from(&ev.dual_norms);
            let mut reset = false;
            if ev.primal_re < f_x {
                x = ev.x_re;
                t_x = ev.t_re;
                f_x = ev.primal_re;
                reset = true;
            }
            gap = f_x - best_dual;
            // gap-safe screening: the dual optimum lies within 2 sqrt(gap) of θ
            if lambda > 0.0 {
                let radius = 2.0 * gap.max(0.0).sqrt() * op_norm;
                for (k, g) in lat.groups.iter().enumerate() {
                    if !screened[k] && dual_norms[k] + radius < lambda {
                        screened[k] = true;
                        if x[g.clone()].iter().any(|&v| v != 0.0) {
                            x[g.clone()].iter_mut().for_each(|v| *v = 0.0);
                            reset = true;
                        }
                    }
                }
            }
            if reset {
                t_x = oracle.apply_flat(&lat.scatter(&x));
                f_x = seq_norm2(&t_x) + penalty(&x);
                gap = f_x - best_dual;
                y.clone_from(&x);
                t_y.clone_from(&t_x);
                tk = 1.0;
            }
            row_gap = Some(gap);
            if gap <= opts.tol_gap * f_x.abs() || gap <= 0.0 {
                converged = true;
            }
        }
        if opts.trace {
            trace.push(TraceRow {
                iter: iters,
                objective: f_x,
                gap: row_gap,
                max_group_norm: lat.group_norms(&x).into_iter().fold(0.0, f64::max),
            });
        }
        if converged {
            break;
        }
    }
    if converged && lambda > 0.0 {
        // groups strictly inside the dual ball are zero at the optimum; try
        // removing the ones that are still nonzero and keep the result if it is no worse
        let mut cand = x.clone();
        let mut any = false;
        for (k, g) in lat.groups.iter().enumerate() {
            if dual_norms[k] < lambda && cand[g.clone()].iter().any(|&v| v != 0.0) {
                cand[g.clone()].iter_mut().for_each(|v| *v = 0.0);
                any = true;
            }
        }
        if any {
            let ev = evaluate(oracle, &lat, lambda, &cand, None, &opts.cg)?;
            if ev.primal_re <= f_x {
                best_dual = best_dual.max(ev.dual);
                x = ev.x_re;
                f_x = ev.primal_re;
                gap = f_x - best_dual;
            }
        }
    }
    debug!("fista: lambda = {lambda:e}, {iters} iterations, gap = {gap:e}, converged = {converged}");
    if !converged {
        warn!("group lasso stopped after {iters} iterations with duality gap {gap:e}");
    }
    Ok(finish(oracle, &lat, lambda, x, gap, iters, converged, trace))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    oracle: &ObjectiveOracle,
    lat: &Latent,
    lambda: f64,
    mut x: Vec<f64>,
    gap: f64,
    iters: usize,
    converged: bool,
    trace: Vec<super::TraceRow>,
) -> GroupSolution {
    for g in &lat.groups {
        let seg = &mut x[g.clone()];
        if norm(seg) < SNAP_ZERO {
            seg.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let a_base = lat.block_fir(&x, lat.base.clone());
    let a_groups: Vec<FirTM> = lat.groups.iter().map(|g| lat.block_fir(&x, g.clone())).collect();
    let tail = lat.block_fir(&x, lat.tail.clone());
    let r = a_groups.iter().fold(a_base.clone(), |acc, a| acc.add(a)).add(&tail);
    let group_norms = lat.group_norms(&x);
    let objective = oracle.objective_flat(&lat.scatter(&x)) + lambda * group_norms.iter().sum::<f64>();
    GroupSolution {
        a_base,
        a_groups,
        tail,
        r,
        group_norms,
        objective,
        gap,
        rel_gap: if objective != 0.0 { gap / objective.abs() } else { gap },
        iters,
        converged,
        trace,
    }
}

/// Gradient Lipschitz constant of `J` restricted to the coordinates covered by
/// `spec`, before accounting for duplicated variables.
pub fn support_lipschitz(oracle: &ObjectiveOracle, spec: &GroupSpec, iters: usize, seed: u64) -> Result<f64> {
    let layout = oracle.layout();
    spec.check_layout(&layout)?;
    let lat = Latent::new(spec, layout);
    Ok(oracle.lipschitz_on(Some(&lat.support()), iters.max(10), seed))
}

/// Smallest `λ` at which every group is zero at the optimum: the largest group
/// gradient norm at the fit with all groups frozen at zero.
pub fn lambda_max(oracle: &ObjectiveOracle, spec: &GroupSpec) -> Result<f64> {
    let layout = oracle.layout();
    spec.check_layout(&layout)?;
    let lat = Latent::new(spec, layout);
    let unpen = lat.unpenalized();
    let sub_idx: Vec<usize> = unpen.iter().map(|&k| lat.idx[k]).collect();
    let zero = vec![0.0; layout.len()];
    let fit = solve_restricted(oracle, &sub_idx, &zero, &vec![0.0; sub_idx.len()], &CgOptions::default())?;
    let mut x = vec![0.0; lat.len()];
    for (j, &k) in unpen.iter().enumerate() {
        x[k] = fit.u[j];
    }
    let grad = oracle.adjoint_flat(&oracle.apply_flat(&lat.scatter(&x)));
    Ok(lat
        .group_norms(&lat.gather(&grad))
        .into_iter()
        .map(|v| 2.0 * v)
        .fold(0.0, f64::max))
}
