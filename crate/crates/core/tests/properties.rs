use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use shapegmm::distributions::chi2_quantile;
use shapegmm::gmm::{Dataset, GmmProblem};
use shapegmm::inference::{
    compute_in, ln_from_draws, prepare, rn_from_covariance, vertex_sup, BootstrapConfig,
    BootstrapEngine, KnotPlacement, RestrictionSet, TestConfig, TestKind,
};
use shapegmm::montecarlo::{run_size, McConfig};
use shapegmm::qp::{solve, LinearConstraints, QpOptions, QpProblem};
use shapegmm::rng::{self, normals};
use shapegmm::splines::{make_basis, monotone_decreasing_constraints, KnotRule, SplineBasis};

fn knots() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02f64..0.98, 0..7).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        v
    })
}

fn basis(knots: Vec<f64>) -> SplineBasis {
    SplineBasis::new(3, knots).unwrap()
}

fn dataset(seed: u64, n: usize, noise: f64) -> Dataset {
    let mut g = rng::stream(seed, &[17]);
    let x: Vec<f64> = (0..n).map(|_| g.random::<f64>()).collect();
    let z: Vec<f64> = x
        .iter()
        .map(|v| (0.7 * v + 0.3 * g.random::<f64>()).clamp(0.0, 1.0))
        .collect();
    let e = normals(&mut g, n);
    let y: Vec<f64> = x
        .iter()
        .zip(&e)
        .map(|(v, e)| 1.0 - v * v + noise * e)
        .collect();
    Dataset::new(y, x, z).unwrap()
}

fn weighted_problem(seed: u64, n: usize, jn_knots: usize, kn_knots: usize) -> GmmProblem {
    let data = dataset(seed, n, 0.3);
    let config = TestConfig {
        kind: TestKind::LevelMonotone { x0: 0.5, c0: 0.75 },
        jn_knots,
        kn_knots,
        knots: KnotPlacement::Uniform,
        first_stage: Default::default(),
        bootstrap: BootstrapConfig::default(),
    };
    prepare(&data, &config).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_is_a_nonnegative_partition_of_unity(k in knots(), x in 0.0f64..=1.0) {
        let v = basis(k).eval(x).unwrap();
        prop_assert!((v.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(v.iter().all(|&b| b >= -1e-15));
    }

    #[test]
    fn derivative_matches_central_difference(k in knots(), x in 0.01f64..0.99) {
        let b = basis(k);
        let h = 1e-6;
        prop_assume!(b.interior_knots().iter().all(|t| (t - x).abs() > 2.0 * h));
        let fd = (b.eval(x + h).unwrap() - b.eval(x - h).unwrap()) / (2.0 * h);
        prop_assert!((fd - b.eval_deriv(x).unwrap()).amax() <= 1e-6);
    }

    #[test]
    fn derivative_rows_certify_monotonicity(k in knots(), coef in prop::collection::vec(-2.0f64..2.0, 10)) {
        let b = basis(k);
        let beta = DVector::from_iterator(b.dim(), coef.into_iter().cycle().take(b.dim()));
        let rows = monotone_decreasing_constraints(&b).unwrap().deriv_rows;
        let at_breaks = (&rows * &beta).max();
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
        let on_grid = (b.deriv_design(&grid).unwrap() * &beta).max();
        // The derivative is piecewise linear, so its maximum sits at a breakpoint.
        prop_assert!(on_grid <= at_breaks + 1e-9);
        let values = b.design(&grid).unwrap() * &beta;
        let decreasing = values.as_slice().windows(2).all(|w| w[1] <= w[0] + 1e-12);
        if at_breaks <= 0.0 {
            prop_assert!(decreasing);
        }
    }

    #[test]
    fn qp_matches_grid_search(
        e in (0.3f64..3.0, 0.3f64..3.0, -1.5f64..1.5),
        lin in (-3.0f64..3.0, -3.0f64..3.0),
        normal in (-1.0f64..1.0, -1.0f64..1.0),
        offset in 0.0f64..0.5,
    ) {
        let (c, s) = (e.2.cos(), e.2.sin());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let h = &rot * DMatrix::from_diagonal(&DVector::from_vec(vec![e.0, e.1])) * rot.transpose();
        let h = (&h + h.transpose()) * 0.5;
        let g = DVector::from_vec(vec![lin.0, lin.1]);
        let cons = LinearConstraints::none(2)
            .with_inequalities(&DMatrix::from_row_slice(1, 2, &[normal.0, normal.1]), &DVector::from_element(1, offset))
            .with_box(1.0);
        let sol = solve(&QpProblem::new(h.clone(), g.clone(), cons).unwrap(), &QpOptions::default()).unwrap();
        let steps = 400;
        let step = 2.0 / steps as f64;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let p = DVector::from_vec(vec![-1.0 + i as f64 * step, -1.0 + j as f64 * step]);
                if normal.0 * p[0] + normal.1 * p[1] <= offset {
                    best = best.min(0.5 * p.dot(&(&h * &p)) + g.dot(&p));
                }
            }
        }
        // Gradient is bounded by ‖H‖·√2 + ‖g‖ on the box.
        let resolution = (3.0 * 2f64.sqrt() + 3.0 * 2f64.sqrt()) * step * 2f64.sqrt();
        prop_assert!(sol.objective <= best + 1e-9);
        prop_assert!(best - sol.objective <= resolution);
        prop_assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn moment_vector_is_affine_in_beta(seed in 0u64..1000, a in -2.0f64..2.0) {
        let problem = weighted_problem(seed, 120, 1, 3);
        let j = problem.j();
        let mut g = rng::stream(seed, &[3]);
        let b1 = DVector::from_vec(normals(&mut g, j));
        let b2 = DVector::from_vec(normals(&mut g, j));
        let mix = &b1 * a + &b2 * (1.0 - a);
        let m1 = problem.moment_vector(&b1).unwrap();
        let m2 = problem.moment_vector(&b2).unwrap();
        let lhs = problem.moment_vector(&mix).unwrap();
        let rhs = m1 * a + m2 * (1.0 - a);
        prop_assert!((lhs - &rhs).amax() <= 1e-9 * (1.0 + rhs.amax()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nested_restrictions_order_statistics(seed in 0u64..10_000, r_n in 0.0f64..0.5) {
        let problem = weighted_problem(seed, 200, 1, 3);
        let sieve = problem.sieve().clone();
        let full = RestrictionSet::unrestricted(problem.j());
        let mono = full.clone().with_monotone_decreasing(&sieve).unwrap();
        let both = mono.clone().with_level(&sieve, 0.5, 0.75).unwrap();
        let i_full = compute_in(&problem, &full).unwrap().0;
        let i_mono = compute_in(&problem, &mono).unwrap().0;
        let (i_both, beta) = compute_in(&problem, &both).unwrap();
        prop_assert!(i_full <= i_mono + 1e-9);
        prop_assert!(i_mono <= i_both + 1e-9);

        let betas = std::slice::from_ref(&beta);
        let least_favorable = BootstrapEngine::new(&problem, &both, betas, f64::INFINITY, f64::INFINITY).unwrap();
        let local = BootstrapEngine::new(&problem, &both, betas, r_n, f64::INFINITY).unwrap();
        let boxed = BootstrapEngine::new(&problem, &both, betas, r_n, 0.05).unwrap();
        for b in 0..5u64 {
            let omega = normals(&mut rng::stream(seed, &[b]), problem.n());
            let u_lf = least_favorable.statistic(&omega).unwrap();
            let u_local = local.statistic(&omega).unwrap();
            let u_box = boxed.statistic(&omega).unwrap();
            prop_assert!(u_local >= 0.0);
            prop_assert!(u_local <= u_lf + 1e-9);
            prop_assert!(u_local <= u_box + 1e-9);
        }
        let zero = vec![0.0; problem.n()];
        prop_assert!(local.statistic(&zero).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn weight_scale_equivariance(seed in 0u64..10_000, c in 0.1f64..10.0) {
        let problem = weighted_problem(seed, 150, 1, 3);
        let scaled = problem.clone().with_weight(problem.sigma_hat() * c).unwrap();
        let restriction = RestrictionSet::unrestricted(problem.j())
            .with_monotone_decreasing(problem.sieve())
            .unwrap();
        let (i0, b0) = compute_in(&problem, &restriction).unwrap();
        let (i1, b1) = compute_in(&scaled, &restriction).unwrap();
        prop_assert!((i1 - c * i0).abs() <= 1e-7 * (1.0 + c * i0));
        prop_assert!((&b1 - &b0).amax() <= 1e-6 * (1.0 + b0.amax()));

        let e0 = BootstrapEngine::new(&problem, &restriction, std::slice::from_ref(&b0), 0.1, f64::INFINITY).unwrap();
        let e1 = BootstrapEngine::new(&scaled, &restriction, std::slice::from_ref(&b0), 0.1, f64::INFINITY).unwrap();
        let omega = normals(&mut rng::stream(seed, &[9]), problem.n());
        let (u0, u1) = (e0.statistic(&omega).unwrap(), e1.statistic(&omega).unwrap());
        prop_assert!((u1 - c * u0).abs() <= 1e-7 * (1.0 + c * u0));
    }

    #[test]
    fn vertex_sup_dominates_cube_search(seed in 0u64..10_000, k in 2usize..6, j in 1usize..5) {
        let mut g = rng::stream(seed, &[11]);
        let a = DMatrix::from_fn(k, k, |_, _| normals(&mut g, 1)[0]);
        let sigma = &a * a.transpose() + DMatrix::identity(k, k);
        let z = DMatrix::from_fn(k, j, |_, _| normals(&mut g, 1)[0]);
        let sup = vertex_sup(&sigma, &z);
        let sz = &sigma * &z;
        let mut searched = 0.0f64;
        for _ in 0..2000 {
            let beta = DVector::from_fn(j, |_, _| g.random::<f64>() * 2.0 - 1.0);
            searched = searched.max((&sz * beta).norm());
        }
        prop_assert!(searched <= sup + 1e-12);
        // Every vertex is reachable by the search when it samples signs only.
        let mut vertices = 0.0f64;
        for _ in 0..200 {
            let beta = DVector::from_fn(j, |_, _| if g.random::<bool>() { 1.0 } else { -1.0 });
            vertices = vertices.max((&sz * beta).norm());
        }
        prop_assert!((vertices - sup).abs() <= 1e-9 * sup.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn rejection_rates_are_monotone_in_level(seed in 0u64..1000) {
        let mut config = McConfig::new(TestKind::Monotonicity, 0.1);
        config.n = 150;
        config.replications = 12;
        config.jn_knots = 0;
        config.kn_knots = 3;
        config.bootstrap.draws = 40;
        config.master_seed = seed;
        let result = run_size(&config).unwrap();
        let p = result.rejection_rates;
        prop_assert!(p[0] >= p[1] && p[1] >= p[2]);
        for r in &result.replications {
            prop_assert!(r.critical_values[0] <= r.critical_values[1] && r.critical_values[1] <= r.critical_values[2]);
            prop_assert!(r.decisions[0] >= r.decisions[1] && r.decisions[1] >= r.decisions[2]);
        }
    }
}

#[test]
fn ln_is_reciprocal_quantile_of_vertex_sups() {
    let mut g = rng::stream(5, &[0]);
    let sigma = DMatrix::identity(3, 3);
    let draws: Vec<DMatrix<f64>> = (0..100)
        .map(|_| DMatrix::from_fn(3, 2, |_, _| normals(&mut g, 1)[0]))
        .collect();
    let mut sups: Vec<f64> = draws.iter().map(|z| vertex_sup(&sigma, z)).collect();
    sups.sort_by(f64::total_cmp);
    let b = ln_from_draws(&sigma, &draws, 0.05).unwrap();
    assert_eq!(b.quantile, sups[4]);
    assert_eq!(b.value, 1.0 / sups[4]);
}

#[test]
fn chi2_quantile_against_normal_simulation() {
    let mut g = rng::stream(2024, &[0]);
    let total = 10_000_000usize;
    for (df, p) in [(1usize, 0.95), (3, 0.9), (5, 0.95), (5, 0.5)] {
        let q = chi2_quantile(p, df as f64).unwrap();
        let reps = total / df / 4;
        let below = (0..reps)
            .filter(|_| normals(&mut g, df).iter().map(|z| z * z).sum::<f64>() <= q)
            .count();
        let freq = below as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * se,
            "df {df}, p {p}: {freq} vs {p} (se {se})"
        );
    }
}

#[test]
fn rn_quantile_against_brute_force() {
    let sieve = make_basis(0, KnotRule::UniformQuantile).unwrap();
    let cov = DMatrix::identity(3, 3);
    let q = 0.5;
    let draws = 2000;
    let rn = rn_from_covariance(&sieve, &cov, q, draws, 200, &mut rng::stream(1, &[0])).unwrap();

    let mut grid: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
    grid.extend(sieve.breakpoints());
    let lv = sieve.design(&grid).unwrap();
    let dv = sieve.deriv_design(&grid).unwrap();
    let mut g = rng::stream(2, &[0]);
    let brute = 100_000;
    let below = (0..brute)
        .filter(|_| {
            let z = DVector::from_vec(normals(&mut g, 3));
            (&lv * &z).amax().max((&dv * &z).amax()) <= rn
        })
        .count();
    let freq = below as f64 / brute as f64;
    let se = (q * (1.0 - q) / draws as f64 + q * (1.0 - q) / brute as f64).sqrt();
    assert!((freq - q).abs() <= 3.0 * se, "{freq} vs {q} (se {se})");
}
