mod common;

use common::{chain_instance, coords_of, dense_gap, dense_group_lasso, rel_err, DenseModel, Instance};
use commlink::commgraph::{max_graph, EdgeSet};
use commlink::firmath::{FirTM, ObjectiveOracle, DEFAULT_TOL_TAIL};
use commlink::qispace::{link_subspace, subspace_masks, TemporalMask};
use commlink::solvers::{
    comm_link_norm, duality_gap, group_lasso_fista, lambda_max, polish_qp, polish_qp_report, CgOptions,
    CommNormOptions, FistaOptions, GroupSolution, GroupSpec,
};
use commlink::sysmodel::PlantModel;
use nalgebra::DMatrix;

const N: usize = 10;

fn setup(inst: &Instance) -> (ObjectiveOracle, GroupSpec) {
    let oracle = ObjectiveOracle::new(&inst.plant, N, DEFAULT_TOL_TAIL).unwrap();
    let spec = GroupSpec::from_graph(&inst.base, &inst.edges, &inst.part, N).unwrap();
    (oracle, spec)
}

#[test]
fn polish_matches_dense_least_squares_on_base_mask() {
    let inst = chain_instance(3, 0.2, 7);
    let (oracle, spec) = setup(&inst);
    let model = DenseModel::for_oracle(&inst.plant, &oracle);
    let (r, nu) = polish_qp(&oracle, &spec.base_mask, spec.free_tail_from, &CgOptions::default()).unwrap();
    let cols = coords_of(&spec.base_mask, &model.layout, spec.free_tail_from);
    let x = model.least_squares(&cols);
    let dense_r = model.to_fir(&x);
    assert!(r.sub(&dense_r).h2_norm() <= 1e-8 * dense_r.h2_norm().max(1.0));
    assert!(rel_err(nu, model.objective(&x).sqrt()) <= 1e-8);
}

#[test]
fn polish_with_empty_mask_and_no_tail_is_open_loop() {
    let inst = chain_instance(3, 0.2, 7);
    let (oracle, spec) = setup(&inst);
    let empty = TemporalMask::empty(spec.horizon(), &inst.part);
    let (r, nu) = polish_qp(&oracle, &empty, N + 1, &CgOptions::default()).unwrap();
    assert_eq!(r.h2_norm(), 0.0);
    let open: f64 = oracle.g11().iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    assert_eq!(nu, open);
}

#[test]
fn polish_full_mask_is_a_lower_bound() {
    let inst = chain_instance(3, 0.2, 7);
    let (oracle, spec) = setup(&inst);
    let cg = CgOptions::default();
    let (_, nu_full) = polish_qp(&oracle, &spec.base_mask.complement().union(&spec.base_mask), 1, &cg).unwrap();
    let (_, nu_base) = polish_qp(&oracle, &spec.base_mask, spec.free_tail_from, &cg).unwrap();
    let (_, nu_union) = polish_qp(&oracle, &spec.union_mask(), spec.free_tail_from, &cg).unwrap();
    assert!(nu_full <= nu_union + 1e-9);
    assert!(nu_union <= nu_base + 1e-9);
}

#[test]
fn polish_rejects_mask_beyond_horizon() {
    let inst = chain_instance(3, 0.2, 7);
    let oracle = ObjectiveOracle::new(&inst.plant, 1, DEFAULT_TOL_TAIL).unwrap();
    let mask = subspace_masks(&inst.base, &inst.part).unwrap();
    assert!(polish_qp(&oracle, &mask, 3, &CgOptions::default()).is_err());
}

#[test]
fn polish_reports_convergence() {
    let inst = chain_instance(4, 0.3, 2);
    let (oracle, spec) = setup(&inst);
    let rep = polish_qp_report(&oracle, &spec.union_mask(), spec.free_tail_from, &CgOptions::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.rel_residual <= 1e-10);
}

fn plant_without_g12(inst: &Instance) -> PlantModel {
    let p = &inst.plant;
    PlantModel::new(
        p.a.clone(),
        p.b1.clone(),
        p.b2.clone(),
        DMatrix::zeros(p.c1.nrows(), p.c1.ncols()),
        p.c2.clone(),
        DMatrix::zeros(p.d12.nrows(), p.d12.ncols()),
        p.d21.clone(),
    )
    .unwrap()
}

#[test]
fn lambda_max_vanishes_without_g12() {
    let inst = chain_instance(3, 0.2, 7);
    let p = plant_without_g12(&inst);
    let oracle = ObjectiveOracle::new(&p, N, DEFAULT_TOL_TAIL).unwrap();
    let spec = GroupSpec::from_graph(&inst.base, &inst.edges, &inst.part, N).unwrap();
    assert_eq!(lambda_max(&oracle, &spec).unwrap(), 0.0);
    let sol = group_lasso_fista(&oracle, &spec, 0.0, &FistaOptions::default()).unwrap();
    assert_eq!(sol.r.h2_norm(), 0.0);
    assert!(sol.converged);
}

#[test]
fn doubling_performance_output_quadruples_lambda_max() {
    let inst = chain_instance(3, 0.2, 7);
    let (oracle, spec) = setup(&inst);
    let p = &inst.plant;
    let scaled = PlantModel::new(
        p.a.clone(),
        p.b1.clone(),
        p.b2.clone(),
        &p.c1 * 2.0,
        p.c2.clone(),
        &p.d12 * 2.0,
        p.d21.clone(),
    )
    .unwrap();
    let oracle2 = ObjectiveOracle::with_horizon(&scaled, N, oracle.t_max()).unwrap();
    let l1 = lambda_max(&oracle, &spec).unwrap();
    let l2 = lambda_max(&oracle2, &spec).unwrap();
    assert!(l1 > 0.0);
    assert!(rel_err(l2, 4.0 * l1) <= 1e-8, "{l2} vs 4 * {l1}");
}

#[test]
fn above_lambda_max_every_group_is_zero() {
    for (n, seed) in [(3, 7), (4, 3)] {
        let inst = chain_instance(n, 0.2, seed);
        let (oracle, spec) = setup(&inst);
        let lmax = lambda_max(&oracle, &spec).unwrap();
        let sol = group_lasso_fista(&oracle, &spec, 1.01 * lmax, &FistaOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.group_norms.iter().all(|&g| g == 0.0), "{:?}", sol.group_norms);
    }
}

#[test]
fn unpenalized_problem_matches_polish_on_union() {
    let inst = chain_instance(4, 0.25, 5);
    let (oracle, spec) = setup(&inst);
    let sol = group_lasso_fista(&oracle, &spec, 0.0, &FistaOptions::default()).unwrap();
    let (_, nu) = polish_qp(&oracle, &spec.union_mask(), spec.free_tail_from, &CgOptions::default()).unwrap();
    assert!(sol.converged);
    assert!(rel_err(sol.objective, nu * nu) <= 1e-6);
}

fn check_decomposition(sol: &GroupSolution, spec: &GroupSpec) {
    let sum = sol
        .a_groups
        .iter()
        .fold(sol.a_base.clone(), |acc, a| acc.add(a))
        .add(&sol.tail);
    assert_eq!(sum, sol.r);
    for (a, g) in sol.a_groups.iter().zip(&spec.groups) {
        for t in 1..=a.t_max() {
            let m = a.coeff(t);
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if t > g.mask.horizon() || !g.mask.entry(t).get(r, c) {
                        assert_eq!(m[(r, c)], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn fista_matches_dense_oracle_at_half_lambda_max() {
    for (n, seed) in [(3, 7), (4, 11)] {
        let inst = chain_instance(n, 0.2, seed);
        let (oracle, spec) = setup(&inst);
        let model = DenseModel::for_oracle(&inst.plant, &oracle);
        let lambda = 0.5 * lambda_max(&oracle, &spec).unwrap();
        let sol = group_lasso_fista(&oracle, &spec, lambda, &FistaOptions::default()).unwrap();
        let dense = dense_group_lasso(&model, &spec, lambda);
        let dgap = dense_gap(&model, &spec, lambda, &dense.r, dense.group_norms.iter().sum());
        assert!(dgap <= 1e-9 * dense.objective, "dense oracle not certified: {dgap:e}");
        assert!(sol.converged);
        assert!(sol.rel_gap <= 1e-6);
        assert!(rel_err(sol.objective, dense.objective) <= 1e-5, "{} vs {}", sol.objective, dense.objective);
        assert!(sol.objective >= dense.objective - 1e-6 * (1.0 + dense.objective));
        check_decomposition(&sol, &spec);
    }
}

#[test]
fn gap_at_dense_optimum_is_negligible() {
    let inst = chain_instance(3, 0.2, 7);
    let (oracle, spec) = setup(&inst);
    let model = DenseModel::for_oracle(&inst.plant, &oracle);
    let lambda = 0.3 * lambda_max(&oracle, &spec).unwrap();
    let dense = dense_group_lasso(&model, &spec, lambda);
    let (a_base, a_groups, tail) = dense.block_firs(&model, &spec);
    let r = a_groups.iter().fold(a_base.clone(), |acc, a| acc.add(a)).add(&tail);
    let state = GroupSolution {
        group_norms: a_groups.iter().map(FirTM::h2_norm).collect(),
        a_base,
        a_groups,
        tail,
        r,
        objective: dense.objective,
        gap: 0.0,
        rel_gap: 0.0,
        iters: 0,
        converged: true,
        trace: Vec::new(),
    };
    let gap = duality_gap(&oracle, &spec, lambda, &state).unwrap();
    assert!(gap.abs() <= 1e-9 * dense.objective.max(1.0), "gap = {gap:e}");
}

#[test]
fn gap_is_positive_at_the_origin() {
    let inst = chain_instance(3, 0.2, 7);
    let (oracle, spec) = setup(&inst);
    let lambda = 1e-3 * lambda_max(&oracle, &spec).unwrap();
    let zero = FirTM::zeros(oracle.layout().rows, oracle.layout().cols, 1, N);
    let state = GroupSolution {
        a_base: zero.clone(),
        a_groups: vec![zero.clone(); spec.groups.len()],
        tail: zero.clone(),
        r: zero,
        group_norms: vec![0.0; spec.groups.len()],
        objective: 0.0,
        gap: 0.0,
        rel_gap: 0.0,
        iters: 0,
        converged: false,
        trace: Vec::new(),
    };
    assert!(duality_gap(&oracle, &spec, lambda, &state).unwrap() > 0.0);
}

#[test]
fn gap_trace_trends_down() {
    let inst = chain_instance(4, 0.3, 1);
    let (oracle, spec) = setup(&inst);
    let lambda = 0.2 * lambda_max(&oracle, &spec).unwrap();
    let opts = FistaOptions {
        trace: true,
        tol_gap: 1e-9,
        ..FistaOptions::default()
    };
    let sol = group_lasso_fista(&oracle, &spec, lambda, &opts).unwrap();
    let gaps: Vec<f64> = sol.trace.iter().filter_map(|r| r.gap).collect();
    assert!(!gaps.is_empty());
    assert!(gaps.last().unwrap() <= gaps.first().unwrap());
    let objs: Vec<f64> = sol.trace.iter().map(|r| r.objective).collect();
    assert!(objs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

#[test]
fn negative_lambda_is_rejected() {
    let inst = chain_instance(3, 0.2, 7);
    let (oracle, spec) = setup(&inst);
    assert!(group_lasso_fista(&oracle, &spec, -1.0, &FistaOptions::default()).is_err());
}

fn fir_from_mask(mask: &TemporalMask, seed: u64) -> FirTM {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (1..=mask.horizon())
        .map(|t| {
            let e = mask.entry(t);
            DMatrix::from_fn(e.rows(), e.cols(), |r, c| if e.get(r, c) { rng.gen_range(-1.0..1.0) } else { 0.0 })
        })
        .collect();
    FirTM::new(1, coeffs).unwrap()
}

#[test]
fn link_norm_examples() {
    let inst = chain_instance(3, 0.2, 7);
    let (_, spec) = setup(&inst);
    let opts = CommNormOptions::default();
    let x = fir_from_mask(&spec.base_mask, 1);
    assert_eq!(comm_link_norm(&x, &spec, &opts).unwrap(), 0.0);

    let g = &spec.groups[0];
    let x = fir_from_mask(&g.mask, 2);
    let x = x.scale(1.0 / x.h2_norm());
    assert!((comm_link_norm(&x, &spec, &opts).unwrap() - 1.0).abs() <= 1e-8);

    let outside = spec.union_mask().complement();
    let x = fir_from_mask(&outside, 3);
    assert_eq!(comm_link_norm(&x, &spec, &opts).unwrap(), f64::INFINITY);

    let mut late = FirTM::zeros(3, 3, 1, spec.horizon() + 1);
    late.coeff_mut(spec.horizon() + 1)[(0, 0)] = 1.0;
    assert_eq!(comm_link_norm(&late, &spec, &opts).unwrap(), f64::INFINITY);
}

#[test]
fn link_norm_with_overlapping_groups_is_below_either_split() {
    let inst = chain_instance(4, 0.2, 3);
    let (_, spec) = setup(&inst);
    let opts = CommNormOptions::default();
    // find two overlapping groups
    let (a, b) = (0..spec.groups.len())
        .flat_map(|a| (a + 1..spec.groups.len()).map(move |b| (a, b)))
        .find(|&(a, b)| !spec.groups[a].mask.is_disjoint_from(&spec.groups[b].mask))
        .expect("4-chain has overlapping link subspaces");
    let shared = spec.groups[a].mask.intersect(&spec.groups[b].mask);
    let x = fir_from_mask(&shared, 5);
    let v = comm_link_norm(&x, &spec, &opts).unwrap();
    // one group alone gives ||X||; an even split gives ||X|| / sqrt(2) at best
    assert!(v <= x.h2_norm() + 1e-9);
    assert!(v >= x.h2_norm() / 2.0_f64.sqrt() - 1e-9);
}

#[test]
fn direct_spec_construction_validates() {
    let inst = chain_instance(3, 0.2, 7);
    let base_mask = subspace_masks(&inst.base, &inst.part).unwrap();
    let g = link_subspace(&inst.base, (0, 2), &inst.part).unwrap();
    assert!(GroupSpec::new(base_mask.clone(), vec![g.clone()], 3, 10).is_ok());
    assert!(GroupSpec::new(base_mask.clone(), vec![g.clone()], 2, 10).is_err());
    assert!(GroupSpec::new(base_mask.clone(), vec![g], 3, 1).is_err());
    let bad = commlink::qispace::LinkSubspace {
        edge: (0, 2),
        mask: base_mask.clone(),
    };
    assert!(GroupSpec::new(base_mask, vec![bad], 3, 10).is_err());
    let gmax = max_graph(&inst.base, &inst.edges).unwrap();
    assert!(GroupSpec::from_graph(&gmax, &EdgeSet::default(), &inst.part, 10).is_ok());
}
