mod common;

use commlink::codesign::{nesting_report, CodesignConfig, CodesignProblem, LambdaGrid};
use commlink::commgraph::{graph_delay, EdgeSet, Graph};
use commlink::firmath::{FirTM, ObjectiveOracle};
use commlink::qispace::TemporalMask;
use commlink::solvers::{comm_link_norm, CommNormOptions, GroupSpec};
use common::{chain_instance, rel_err};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fir_on(mask: &TemporalMask, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> FirTM {
    let d = mask.horizon();
    let mut x = FirTM::zeros(rows, cols, 1, d);
    for t in 1..=d {
        let m = mask.entry(t);
        let c = x.coeff_mut(t);
        for i in 0..rows {
            for j in 0..cols {
                if m.get(i, j) {
                    c[(i, j)] = rng.gen_range(-1.0..1.0);
                }
            }
        }
    }
    x
}

fn link_spec(n: usize, seed: u64) -> GroupSpec {
    let inst = chain_instance(n, 0.2, seed);
    let d = graph_delay(&inst.base).unwrap();
    GroupSpec::from_graph(&inst.base, &inst.edges, &inst.part, d).unwrap()
}

fn norm(x: &FirTM, spec: &GroupSpec) -> f64 {
    comm_link_norm(x, spec, &CommNormOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_central_differences(seed in 0u64..1000, n in 2usize..5) {
        let inst = chain_instance(n, 0.2, seed % 7);
        let oracle = ObjectiveOracle::new(&inst.plant, 4, 1e-10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = oracle.n_param() * n * n;
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (g, _) = oracle.gradient_flat(&x);
        let h = 1e-4;
        let shift = |s: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + s * b).collect() };
        let fd = (oracle.objective_flat(&shift(h)) - oracle.objective_flat(&shift(-h))) / (2.0 * h);
        let an: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!(rel_err(fd, an) <= 1e-6, "fd {fd} vs analytic {an}");
    }

    #[test]
    fn truncation_tail_is_certified(seed in 0u64..1000, n in 2usize..5, big in 0.1f64..10.0) {
        let inst = chain_instance(n, 0.2, seed);
        let oracle = ObjectiveOracle::new(&inst.plant, 5, 1e-10).unwrap();
        let long = ObjectiveOracle::with_horizon(&inst.plant, 5, 2 * oracle.t_max()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let layout = oracle.layout();
        let x: Vec<f64> = (0..layout.len()).map(|_| big * rng.gen_range(-1.0..1.0)).collect();
        let diff = (oracle.objective_flat(&x) - long.objective_flat(&x)).abs();
        let bound = oracle.tail_bound(&layout.to_fir(&x));
        prop_assert!(diff <= bound + 1e-12 * long.objective_flat(&x), "diff {diff:e}, bound {bound:e}");
    }

    #[test]
    fn link_norm_is_a_seminorm(seed in 0u64..1000, n in 3usize..5, a in -3.0f64..3.0) {
        let spec = link_spec(n, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = spec.union_mask();
        let x = fir_on(&u, n, n, &mut rng);
        let y = fir_on(&u, n, n, &mut rng);
        let (nx, ny) = (norm(&x, &spec), norm(&y, &spec));
        prop_assert!(nx >= 0.0 && ny >= 0.0);
        let tol = 1e-7 * (1.0 + nx + ny);
        prop_assert!((norm(&x.scale(a), &spec) - a.abs() * nx).abs() <= tol * (1.0 + a.abs()));
        prop_assert!(norm(&x.add(&y), &spec) <= nx + ny + tol);
        prop_assert!(nx <= x.h2_norm() + tol);
    }

    #[test]
    fn link_norm_ignores_the_base_component(seed in 0u64..1000, n in 3usize..5) {
        let spec = link_spec(n, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = fir_on(&spec.base_mask, n, n, &mut rng);
        prop_assert!(norm(&b, &spec) <= 1e-7);
        let x = fir_on(&spec.union_mask(), n, n, &mut rng);
        let nx = norm(&x, &spec);
        prop_assert!((norm(&x.add(&b), &spec) - nx).abs() <= 1e-7 * (1.0 + nx));
    }

    #[test]
    fn link_norm_is_exact_on_private_entries(seed in 0u64..1000, n in 3usize..5, pick in 0usize..16) {
        let spec = link_spec(n, 3);
        let k = pick % spec.groups.len();
        let others = spec
            .groups
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .fold(spec.base_mask.clone(), |acc, (_, g)| acc.union(&g.mask));
        let private = spec.groups[k].mask.intersect(&others.complement());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = fir_on(&private, n, n, &mut rng);
        prop_assert!((norm(&x, &spec) - x.h2_norm()).abs() <= 1e-6 * (1.0 + x.h2_norm()));
    }

    #[test]
    fn serde_round_trips(
        n_param in 1usize..40,
        tol in 1e-14f64..1e-2,
        seed in any::<u64>(),
        grid in prop::collection::vec(0.0f64..10.0, 0..5),
        coeffs in prop::collection::vec(-1e3f64..1e3, 6),
    ) {
        let cfg = CodesignConfig {
            lambda_grid: if grid.is_empty() { LambdaGrid::Auto { points: 7, ratio: tol } } else { LambdaGrid::Values(grid) },
            n_param,
            tol_gap: tol,
            seed,
            check_horizon: Some(n_param + 3),
            ..CodesignConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(serde_json::from_str::<CodesignConfig>(&text).unwrap(), cfg);

        let m = nalgebra::DMatrix::from_row_slice(2, 3, &coeffs);
        let x = FirTM::new(2, vec![m.clone(), -m]).unwrap();
        let text = serde_json::to_string(&x).unwrap();
        prop_assert_eq!(serde_json::from_str::<FirTM>(&text).unwrap(), x);

        let rows: Vec<Vec<u8>> = (0..3).map(|i| (0..3).map(|j| u8::from((seed >> (3 * i + j)) & 1 == 1 || i == j)).collect()).collect();
        let g = Graph::from_rows(&rows).unwrap();
        prop_assert_eq!(serde_json::from_str::<Graph>(&serde_json::to_string(&g).unwrap()).unwrap(), g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn adding_links_never_hurts(seed in 0u64..1000, n in 3usize..6, order in any::<u64>()) {
        let inst = chain_instance(n, 0.25, seed);
        let cfg = CodesignConfig { n_param: 6, ..CodesignConfig::default() };
        let prob = CodesignProblem::new(&inst.plant, &inst.part, &inst.base, &inst.edges, &cfg).unwrap();
        let mut edges = inst.edges.edges.clone();
        let len = edges.len();
        edges.rotate_left((order as usize) % len);
        let mut g = inst.base.clone();
        let mut nu = prob.polish_graph(&g).unwrap().nu;
        for (i, j) in edges {
            g = g.with_edge(i, j);
            let next = prob.polish_graph(&g).unwrap().nu;
            prop_assert!(next <= nu + 1e-9, "{next} > {nu}");
            nu = next;
        }
    }

    #[test]
    fn enumeration_is_nested(seed in 0u64..1000, couple in 0.05f64..0.4) {
        let inst = chain_instance(4, couple, seed);
        // keep the design set small
        let edges = EdgeSet::new(inst.edges.edges[..3].to_vec(), &inst.base).unwrap();
        let cfg = CodesignConfig { n_param: 5, ..CodesignConfig::default() };
        let prob = CodesignProblem::new(&inst.plant, &inst.part, &inst.base, &edges, &cfg).unwrap();
        let rows = prob.enumerate().unwrap();
        prop_assert_eq!(rows.len(), 8);
        let rep = nesting_report(&rows);
        prop_assert!(rep.is_clean(), "{}", rep);
    }
}
