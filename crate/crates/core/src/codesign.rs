//! Joint design of the controller and its communication graph: regularized
//! solve, link read-off, graph construction and polish, plus λ-sweeps and the
//! exhaustive design-set baseline.

use std::fmt;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commgraph::{
    comm_delays, enumerate_design_set, graph_delay, max_graph, propagation_delays, DelayMode, EdgeSet, Graph,
};
use crate::error::{Error, Result};
use crate::firmath::{implementability_check, recover_controller, FirTM, ObjectiveOracle};
use crate::qispace::{qi_delay_check, subspace_masks};
use crate::solvers::{
    group_lasso_fista, lambda_max, polish_qp_report, support_lipschitz, CgOptions, FistaOptions, GroupSpec,
    PolishReport, TraceRow,
};
use crate::sysmodel::{Partition, PlantModel};

/// Largest candidate set accepted by [`enumerate_solve`].
pub const ENUMERATION_GUARD: usize = 12;

/// Slack allowed by the nesting check.
pub const NESTING_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum LambdaGrid {
    /// `points` log-spaced values from `λ_max` down to `ratio · λ_max`.
    Auto { points: usize, ratio: f64 },
    Values(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            points: 12,
            ratio: 1e-3,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GridDoc {
    Auto {
        auto: bool,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_ratio")]
        ratio: f64,
    },
    Name(String),
    Values(Vec<f64>),
}

fn default_points() -> usize {
    12
}

fn default_ratio() -> f64 {
    1e-3
}

impl Serialize for LambdaGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LambdaGrid::Auto { points, ratio } => GridDoc::Auto {
                auto: true,
                points: *points,
                ratio: *ratio,
            },
            LambdaGrid::Values(v) => GridDoc::Values(v.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LambdaGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match GridDoc::deserialize(d)? {
            GridDoc::Auto { points, ratio, .. } => Ok(LambdaGrid::Auto { points, ratio }),
            GridDoc::Name(n) if n == "auto" => Ok(LambdaGrid::default()),
            GridDoc::Name(n) => Err(serde::de::Error::custom(format!("unknown lambda grid `{n}`"))),
            GridDoc::Values(v) => Ok(LambdaGrid::Values(v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct CodesignConfig {
    pub lambda_grid: LambdaGrid,
    /// Parameter horizon.
    #[serde(rename = "N")]
    pub n_param: usize,
    pub tol_tail: f64,
    pub tol_gap: f64,
    pub tol_cg: f64,
    pub tol_zero: f64,
    pub edge_select_eps: f64,
    /// Horizon of the implementability check; `T_max` when absent.
    pub check_horizon: Option<usize>,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for CodesignConfig {
    fn default() -> Self {
        CodesignConfig {
            lambda_grid: LambdaGrid::default(),
            n_param: 10,
            tol_tail: 1e-10,
            tol_gap: 1e-6,
            tol_cg: 1e-10,
            tol_zero: 1e-9,
            edge_select_eps: 1e-5,
            check_horizon: None,
            max_iters: 50_000,
            seed: 0,
        }
    }
}

impl CodesignConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [
            ("tolTail", self.tol_tail),
            ("tolGap", self.tol_gap),
            ("tolCg", self.tol_cg),
            ("tolZero", self.tol_zero),
            ("edgeSelectEps", self.edge_select_eps),
        ];
        for (name, v) in tols {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_param == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        match &self.lambda_grid {
            LambdaGrid::Auto { points, ratio } => {
                if *points == 0 || !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "auto grid needs points >= 1 and ratio in (0, 1], got {points} and {ratio}"
                    )));
                }
            }
            LambdaGrid::Values(v) => {
                if let Some(bad) = v.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
                    return Err(Error::InvalidArgument(format!("lambda values must be >= 0, got {bad}")));
                }
            }
        }
        Ok(())
    }

    pub fn fista_options(&self) -> FistaOptions {
        FistaOptions {
            tol_gap: self.tol_gap,
            max_iters: self.max_iters,
            seed: self.seed,
            cg: self.cg_options(),
            ..FistaOptions::default()
        }
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            tol: self.tol_cg,
            ..CgOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CodesignResult {
    pub lambda: f64,
    pub selected_edges: Vec<(usize, usize)>,
    pub gamma_des: Graph,
    pub group_norms: Vec<f64>,
    /// Closed-loop H2 norm of the polished design.
    pub nu_polished: f64,
    /// Regularized objective at termination.
    pub reg_objective: f64,
    pub polished: FirTM,
    pub iters: usize,
    pub gap: f64,
    pub rel_gap: f64,
    pub converged: bool,
    pub polish_converged: bool,
    /// Recovered controller respects `gamma_des` up to the check horizon.
    pub implementable: bool,
    /// Solver iterations, filled only by [`CodesignProblem::solve_traced`].
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// A validated plant/graph/candidate instance with its objective oracle and
/// group structure, shared by every solve on it.
#[derive(Clone, Debug)]
pub struct CodesignProblem {
    plant: PlantModel,
    part: Partition,
    base: Graph,
    edges: EdgeSet,
    cfg: CodesignConfig,
    oracle: ObjectiveOracle,
    spec: GroupSpec,
    lipschitz: f64,
}

impl CodesignProblem {
    pub fn new(p: &PlantModel, part: &Partition, base: &Graph, edges: &EdgeSet, cfg: &CodesignConfig) -> Result<Self> {
        cfg.validate()?;
        part.check(p)?;
        edges.validate(base)?;
        let d = graph_delay(base).ok_or(Error::InfiniteDelay)?;
        if cfg.n_param < d {
            return Err(Error::InvalidArgument(format!(
                "N = {} is below the base graph delay {d}",
                cfg.n_param
            )));
        }
        let oracle = ObjectiveOracle::new(p, cfg.n_param, cfg.tol_tail)?;
        let prop = match propagation_delays(p, part, DelayMode::Structural, cfg.tol_zero, 0) {
            Ok((dm, _)) => dm,
            Err(_) => propagation_delays(p, part, DelayMode::Numerical, cfg.tol_zero, oracle.t_max())?.0,
        };
        let cert = qi_delay_check(&comm_delays(base), &prop)?;
        if !cert.ok {
            let msgs: Vec<String> = cert.violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::NotQi(msgs.join("; ")));
        }
        let spec = GroupSpec::from_graph(base, edges, part, cfg.n_param)?;
        let lipschitz = support_lipschitz(&oracle, &spec, FistaOptions::default().power_iters, cfg.seed)?;
        Ok(CodesignProblem {
            plant: p.clone(),
            part: part.clone(),
            base: base.clone(),
            edges: edges.clone(),
            cfg: cfg.clone(),
            oracle,
            spec,
            lipschitz,
        })
    }

    pub fn oracle(&self) -> &ObjectiveOracle {
        &self.oracle
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn config(&self) -> &CodesignConfig {
        &self.cfg
    }

    pub fn base(&self) -> &Graph {
        &self.base
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    pub fn lambda_max(&self) -> Result<f64> {
        lambda_max(&self.oracle, &self.spec)
    }

    /// Grid values sorted in descending order.
    pub fn lambda_grid(&self) -> Result<Vec<f64>> {
        let mut grid = match &self.cfg.lambda_grid {
            LambdaGrid::Auto { points, ratio } => {
                let lmax = self.lambda_max()?;
                if *points == 1 {
                    vec![lmax]
                } else {
                    (0..*points)
                        .map(|k| lmax * ratio.powf(k as f64 / (*points - 1) as f64))
                        .collect()
                }
            }
            LambdaGrid::Values(v) => v.clone(),
        };
        grid.sort_by(|a, b| b.total_cmp(a));
        Ok(grid)
    }

    /// Polish on `F(g)` with a free tail after `d(g)`.
    pub fn polish_graph(&self, g: &Graph) -> Result<PolishReport> {
        let d = graph_delay(g).ok_or(Error::InfiniteDelay)?;
        let mask = subspace_masks(g, &self.part)?;
        polish_qp_report(&self.oracle, &mask, d + 1, &self.cfg.cg_options())
    }

    pub fn implementable(&self, r: &FirTM, g: &Graph) -> Result<bool> {
        let horizon = self.cfg.check_horizon.unwrap_or(self.oracle.t_max());
        let k = recover_controller(&self.plant, r, horizon)?;
        Ok(implementability_check(&k, g, &self.part, self.cfg.tol_zero))
    }

    pub fn solve(&self, lambda: f64) -> Result<CodesignResult> {
        self.solve_inner(lambda, false)
    }

    pub fn solve_traced(&self, lambda: f64) -> Result<CodesignResult> {
        self.solve_inner(lambda, true)
    }

    fn solve_inner(&self, lambda: f64, trace: bool) -> Result<CodesignResult> {
        let opts = FistaOptions {
            lipschitz: Some(self.lipschitz),
            trace,
            ..self.cfg.fista_options()
        };
        let sol = group_lasso_fista(&self.oracle, &self.spec, lambda, &opts)?;
        let r_norm = sol.r.h2_norm();
        let thr = self.cfg.edge_select_eps * r_norm.max(1.0);
        let mut adj = self.base.adj().clone();
        let mut selected = Vec::new();
        for (k, &(i, j)) in self.edges.edges.iter().enumerate() {
            if sol.group_norms[k] > thr {
                selected.push((i, j));
                adj.set(i, j, true);
            } else {
                // the parameter can still carry energy on this link's entries
                // through an overlapping group
                let on_link = masked_norm(&sol.r, &self.spec.groups[k].mask);
                if on_link > thr {
                    info!("link {i}<-{j} unselected although R has norm {on_link:e} on its subspace");
                }
            }
        }
        let gamma_des = Graph::new(adj)?;
        let pol = self.polish_graph(&gamma_des)?;
        let implementable = self.implementable(&pol.r, &gamma_des)?;
        if !implementable {
            warn!("recovered controller violates the designed graph at lambda = {lambda:e}");
        }
        Ok(CodesignResult {
            lambda,
            selected_edges: selected,
            gamma_des,
            group_norms: sol.group_norms,
            nu_polished: pol.nu,
            reg_objective: sol.objective,
            polished: pol.r,
            iters: sol.iters,
            gap: sol.gap,
            rel_gap: sol.rel_gap,
            converged: sol.converged,
            polish_converged: pol.converged,
            implementable,
            trace: sol.trace,
        })
    }

    /// One entry per grid value, in descending `λ`; solves run in parallel.
    pub fn sweep(&self) -> Result<Vec<SweepEntry>> {
        let grid = self.lambda_grid()?;
        Ok(grid
            .par_iter()
            .map(|&lambda| SweepEntry {
                lambda,
                result: self.solve(lambda),
            })
            .collect())
    }

    pub fn enumerate(&self) -> Result<Vec<EnumRow>> {
        if self.edges.len() > ENUMERATION_GUARD {
            return Err(Error::GuardExceeded {
                count: self.edges.len(),
                limit: ENUMERATION_GUARD,
            });
        }
        let graphs = enumerate_design_set(&self.base, &self.edges)?;
        let mut rows = graphs
            .par_iter()
            .map(|(mask, g)| {
                let rep = self.polish_graph(g)?;
                let edges = self.edges.subset(*mask);
                Ok(EnumRow {
                    bitmask: *mask,
                    num_extra_links: edges.len(),
                    edges,
                    nu: rep.nu,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.sort_by_key(|r| r.bitmask);
        Ok(rows)
    }

    pub fn nu_base(&self) -> Result<f64> {
        Ok(self.polish_graph(&self.base)?.nu)
    }

    pub fn nu_max(&self) -> Result<f64> {
        Ok(self.polish_graph(&max_graph(&self.base, &self.edges)?)?.nu)
    }
}

fn masked_norm(r: &FirTM, mask: &crate::qispace::TemporalMask) -> f64 {
    let mut acc = 0.0;
    for t in 1..=mask.horizon().min(r.t_max()) {
        let (m, e) = (r.coeff(t), mask.entry(t));
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if e.get(i, j) {
                    acc += m[(i, j)] * m[(i, j)];
                }
            }
        }
    }
    acc.sqrt()
}

pub fn run_codesign(
    p: &PlantModel,
    part: &Partition,
    base: &Graph,
    edges: &EdgeSet,
    lambda: f64,
    cfg: &CodesignConfig,
) -> Result<CodesignResult> {
    CodesignProblem::new(p, part, base, edges, cfg)?.solve(lambda)
}

#[derive(Debug)]
pub struct SweepEntry {
    pub lambda: f64,
    pub result: Result<CodesignResult>,
}

pub fn lambda_sweep(
    p: &PlantModel,
    part: &Partition,
    base: &Graph,
    edges: &EdgeSet,
    cfg: &CodesignConfig,
) -> Result<Vec<SweepEntry>> {
    CodesignProblem::new(p, part, base, edges, cfg)?.sweep()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EnumRow {
    pub bitmask: u64,
    pub num_extra_links: usize,
    pub edges: Vec<(usize, usize)>,
    pub nu: f64,
}

pub fn enumerate_solve(
    p: &PlantModel,
    part: &Partition,
    base: &Graph,
    edges: &EdgeSet,
    cfg: &CodesignConfig,
) -> Result<Vec<EnumRow>> {
    if edges.len() > ENUMERATION_GUARD {
        return Err(Error::GuardExceeded {
            count: edges.len(),
            limit: ENUMERATION_GUARD,
        });
    }
    CodesignProblem::new(p, part, base, edges, cfg)?.enumerate()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestingViolation {
    pub sub: u64,
    pub sup: u64,
    /// `nu(sup) - nu(sub)`.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NestingReport {
    pub pairs_checked: usize,
    pub violations: Vec<NestingViolation>,
    pub max_violation: f64,
}

impl NestingReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for NestingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "comparable pairs: {}", self.pairs_checked)?;
        writeln!(f, "violations: {}", self.violations.len())?;
        writeln!(f, "max violation: {:.16e}", self.max_violation)?;
        for v in &self.violations {
            writeln!(
                f,
                "  nu({:#b}) exceeds nu({:#b}) by {:.16e}",
                v.sup, v.sub, v.excess
            )?;
        }
        Ok(())
    }
}

/// Check that `nu` does not increase along any subset-ordered pair of rows.
pub fn nesting_report(rows: &[EnumRow]) -> NestingReport {
    let mut pairs = 0;
    let mut violations = Vec::new();
    for a in rows {
        for b in rows {
            if a.bitmask != b.bitmask && a.bitmask & b.bitmask == a.bitmask {
                pairs += 1;
                let excess = b.nu - a.nu;
                if excess > NESTING_TOL {
                    violations.push(NestingViolation {
                        sub: a.bitmask,
                        sup: b.bitmask,
                        excess,
                    });
                }
            }
        }
    }
    let max_violation = violations.iter().map(|v| v.excess).fold(0.0, f64::max);
    NestingReport {
        pairs_checked: pairs,
        violations,
        max_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bitmask: u64, nu: f64) -> EnumRow {
        EnumRow {
            bitmask,
            num_extra_links: bitmask.count_ones() as usize,
            edges: Vec::new(),
            nu,
        }
    }

    #[test]
    fn nesting_clean_and_faulty() {
        let rows = vec![row(0, 3.0), row(1, 2.5), row(2, 2.8), row(3, 2.4)];
        let rep = nesting_report(&rows);
        assert!(rep.is_clean());
        assert_eq!(rep.pairs_checked, 5);

        let mut bad = rows.clone();
        bad[3].nu = 2.6;
        let rep = nesting_report(&bad);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!((rep.violations[0].sub, rep.violations[0].sup), (1, 3));
        assert!((rep.max_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nesting_single_row_is_vacuous() {
        let rep = nesting_report(&[row(0, 1.0)]);
        assert!(rep.is_clean());
        assert_eq!(rep.pairs_checked, 0);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg: CodesignConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, CodesignConfig::default());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<CodesignConfig>(&text).unwrap(), cfg);
        let cfg: CodesignConfig = serde_json::from_str(r#"{"lambdaGrid": [0.5, 2.0], "N": 6}"#).unwrap();
        assert_eq!(cfg.lambda_grid, LambdaGrid::Values(vec![0.5, 2.0]));
        assert_eq!(cfg.n_param, 6);
        let cfg: CodesignConfig = serde_json::from_str(r#"{"lambdaGrid": "auto"}"#).unwrap();
        assert_eq!(cfg.lambda_grid, LambdaGrid::default());
        assert!(serde_json::from_str::<CodesignConfig>(r#"{"lambdaGrid": "fine"}"#).is_err());
        assert!(serde_json::from_str::<CodesignConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn config_rejects_bad_tolerances() {
        let cfg = CodesignConfig {
            tol_gap: 0.0,
            ..CodesignConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = CodesignConfig {
            lambda_grid: LambdaGrid::Values(vec![-1.0]),
            ..CodesignConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
