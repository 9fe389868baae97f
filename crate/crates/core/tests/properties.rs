//! Property tests for the public API against independent oracles.

use covara_core::linalg::{operator_norm, Matrix, Vector};
use covara_core::marginal::evaluate_mu_grid;
use covara_core::moduli::alpha_point;
use covara_core::setmaps::{finite_difference_jacobian, jacobian_x_of};
use covara_core::{
    alpha_hat, alpha_hat_semilocal, beta, certify_continuity_calmness, certify_lipschitz, deviation_lipschitz_estimate,
    empirical_covering, evaluate_mu, lipschitz_like_estimate, metric_regularity_check, solve_coincidence,
    solve_generalized_equation, solve_implicit, theta_bound, ConvexSet, FnParam, HalfComplexSquare, ParamMap,
    ProblemInstance, SamplingSchedule, SetValuedMap, SmoothFn, SolverConfig, Verdict,
};
use proptest::prelude::*;

fn v(x: &[f64]) -> Vector {
    Vector::from_vec(x.to_vec())
}

fn small_schedule(seed: u64) -> SamplingSchedule {
    SamplingSchedule::halving(0.5, 6, 64, seed)
}

/// Well-conditioned 2×2 matrices.
fn matrix2() -> impl Strategy<Value = Matrix> {
    (prop::array::uniform4(-1.0f64..1.0), 0.5f64..2.0)
        .prop_map(|(e, s)| Matrix::from_row_slice(2, 2, &[s + e[0].abs(), e[1] * 0.3, e[2] * 0.3, s + e[3].abs()]))
}

fn vec2(r: f64) -> impl Strategy<Value = Vector> {
    prop::array::uniform2(-r..r).prop_map(|a| Vector::from_vec(a.to_vec()))
}

/// Least-norm solution of `A x = c` closest to `x₀`, via the SVD.
fn least_norm_oracle(a: &Matrix, c: &Vector, x0: &Vector) -> Vector {
    let pinv = a.clone().pseudo_inverse(1e-14).unwrap();
    x0 + pinv * (c - a * x0)
}

fn interval(lo: f64, hi: f64) -> ConvexSet {
    ConvexSet::boxed(vec![lo], vec![hi]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_jacobian_matches_finite_differences(x in vec2(2.0)) {
        let f = HalfComplexSquare;
        let fd = finite_difference_jacobian(|z| f.eval(z), &x, 2);
        let j = f.jacobian(&x).unwrap();
        prop_assert!((j - &fd).norm() <= 1e-5 * (1.0 + fd.norm()));
    }

    #[test]
    fn alpha_hat_shells_are_monotone(a in matrix2(), b in vec2(1.0), x in vec2(1.0), seed in 0u64..100) {
        let map = SetValuedMap::affine(a.clone(), b.clone());
        let y = &a * &x + &b;
        let e = alpha_hat(&map, &x, &y, &small_schedule(seed)).unwrap();
        for w in e.per_shell_values.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        prop_assert!(e.value >= e.per_shell_values.iter().copied().fold(0.0, f64::max));
        let min_sv = a.clone().svd(false, false).singular_values.min();
        prop_assert!((e.value - min_sv).abs() <= 1e-9 * (1.0 + min_sv));
    }

    #[test]
    fn semilocal_constant_is_below_pointwise(x in vec2(1.5), seed in 0u64..100) {
        prop_assume!(x.norm() > 0.3);
        let map = SetValuedMap::smooth(HalfComplexSquare);
        let s = small_schedule(seed);
        let y = HalfComplexSquare.eval(&x);
        let semi = alpha_hat_semilocal(&map, &x, &s).unwrap().value;
        let pointed = alpha_hat(&map, &x, &y, &s).unwrap().value;
        prop_assert!(semi <= pointed + 1e-9);
    }

    #[test]
    fn alpha_hat_agrees_with_pointwise_at_smooth_points(x in vec2(1.5), seed in 0u64..100) {
        prop_assume!(x.norm() > 0.3);
        let map = SetValuedMap::smooth(HalfComplexSquare);
        let y = HalfComplexSquare.eval(&x);
        let a = alpha_hat(&map, &x, &y, &SamplingSchedule::default().with_seed(seed)).unwrap().value;
        let p = alpha_point(&map, &x).unwrap().value;
        // singular values of the half square are both |x|
        prop_assert!((p - x.norm()).abs() < 1e-12);
        prop_assert!((a - p).abs() <= 1e-4 * (1.0 + p));
    }

    #[test]
    fn affine_moduli_scale_linearly(a in matrix2(), x in vec2(1.0), c in 0.25f64..4.0) {
        let s = small_schedule(3);
        let f = SetValuedMap::affine(a.clone(), Vector::zeros(2));
        let fc = f.scaled(c);
        let y = &a * &x;
        let base = alpha_hat(&f, &x, &y, &s).unwrap().value;
        let scaled = alpha_hat(&fc, &x, &(&y * c), &s).unwrap().value;
        prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + c * base));
        let pb = alpha_point(&f, &x).unwrap().value;
        let ps = alpha_point(&fc, &x).unwrap().value;
        prop_assert!((ps - c * pb).abs() <= 1e-9 * (1.0 + c * pb));
        let g = ParamMap::single(FnParam::linear(a.clone(), Matrix::zeros(2, 1), Vector::zeros(2)));
        let gc = ParamMap::single(FnParam::linear(&a * c, Matrix::zeros(2, 1), Vector::zeros(2)));
        let p = v(&[0.0]);
        let l = lipschitz_like_estimate(&g, &p, &x, 0.5, &y, f64::INFINITY, &s).unwrap().value;
        let lc = lipschitz_like_estimate(&gc, &p, &x, 0.5, &(&y * c), f64::INFINITY, &s).unwrap().value;
        prop_assert!((lc - c * l).abs() <= 1e-9 * (1.0 + c * l));
    }

    #[test]
    fn covering_and_metric_regularity_agree(a in matrix2(), x in vec2(1.0), factor in prop::sample::select(vec![0.5, 0.9, 1.5, 3.0])) {
        let s = SamplingSchedule::halving(0.5, 4, 64, 11);
        let map = SetValuedMap::affine(a.clone(), Vector::zeros(2));
        let y = &a * &x;
        let alpha = factor * a.clone().svd(false, false).singular_values.min();
        let cover = empirical_covering(&map, &x, &y, 0.5, alpha, &s).unwrap();
        let regular = metric_regularity_check(&map, &x, &y, alpha, 0.5, &s).unwrap();
        prop_assert_eq!(cover.holds, regular.holds);
        prop_assert_eq!(cover.holds, factor <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn affine_coincidence_matches_least_norm(a in matrix2(), x0 in vec2(1.0), p in vec2(0.5)) {
        let map = SetValuedMap::affine(a.clone(), Vector::zeros(2));
        let g = ParamMap::single(FnParam::parameter(2));
        let y0 = &a * &x0;
        let sigma_min = a.clone().svd(false, false).singular_values.min();
        let cfg = SolverConfig::with_moduli(0.9 * sigma_min, 0.0).trust_radius(f64::INFINITY);
        let target = &y0 + &p;
        let r = solve_coincidence(&map, &g, &x0, &y0, &target, &cfg).unwrap();
        let want = least_norm_oracle(&a, &target, &x0);
        prop_assert!((&r.sigma - want).norm() <= 1e-8);
    }

    #[test]
    fn iteration_contracts_and_respects_bounds(a in matrix2(), lscale in 0.0f64..0.3, x0 in vec2(1.0), p in vec2(0.5)) {
        let map = SetValuedMap::affine(a.clone(), Vector::zeros(2));
        let sigma_min = a.clone().svd(false, false).singular_values.min();
        let l = Matrix::from_row_slice(2, 2, &[lscale, 0.0, 0.2 * lscale, -lscale]) * sigma_min;
        let ell = operator_norm(&l);
        let g = ParamMap::single(FnParam::linear(l.clone(), Matrix::identity(2, 2), Vector::zeros(2)));
        let y0 = &a * &x0;
        let pbar = &y0 - &l * &x0;
        let target = &pbar + &p;
        let alpha = 0.95 * sigma_min;
        let cfg = SolverConfig::with_moduli(alpha, ell).trust_radius(f64::INFINITY);
        let r = solve_coincidence(&map, &g, &x0, &y0, &target, &cfg).unwrap();
        let d0 = r.initial_distance;
        for w in r.trace.windows(2) {
            prop_assert!(w[1].residual <= (ell / alpha) * w[0].residual * (1.0 + 1e-3) + 1e-14);
        }
        prop_assert!((&r.sigma - &x0).norm() * (alpha - ell) <= d0 + 10.0 * cfg.tol);
        prop_assert!(r.step_sum <= d0 / (alpha - ell) * (1.0 + 1e-3) + 1e-14);
    }

    #[test]
    fn joint_scaling_leaves_the_solution_unchanged(a in matrix2(), x0 in vec2(1.0), p in vec2(0.5), c in 0.25f64..4.0) {
        let sigma_min = a.clone().svd(false, false).singular_values.min();
        let y0 = &a * &x0;
        let target = &y0 + &p;
        let solve = |scale: f64| {
            let map = SetValuedMap::affine(&a * scale, Vector::zeros(2));
            let g = ParamMap::single(FnParam::linear(Matrix::zeros(2, 2), Matrix::identity(2, 2) * scale, Vector::zeros(2)));
            let cfg = SolverConfig::with_moduli(0.9 * sigma_min * scale, 0.0).trust_radius(f64::INFINITY);
            solve_coincidence(&map, &g, &x0, &(&y0 * scale), &target, &cfg).unwrap().sigma
        };
        prop_assert!((solve(1.0) - solve(c)).norm() <= 1e-9);
    }

    #[test]
    fn generalized_equation_is_the_coincidence_reduction(x0 in vec2(1.0), p in vec2(0.4)) {
        let map = SetValuedMap::IdentityPlusNormalCone(ConvexSet::nonneg_orthant(2));
        let g = ParamMap::single(FnParam::parameter(2));
        let xbar = x0.map(|t| t.abs());
        let cfg = SolverConfig::with_moduli(1.0, 0.0).trust_radius(f64::INFINITY);
        let target = &xbar + &p;
        let via_ge = solve_generalized_equation(&map, &g, &xbar, &xbar, &target, &cfg).unwrap();
        let ybar = map.evaluate(&xbar).unwrap().project(&target).unwrap();
        let direct = solve_coincidence(&map, &g, &xbar, &ybar, &target, &cfg).unwrap();
        prop_assert_eq!(&via_ge.sigma, &direct.sigma);
        // projection onto the orthant
        prop_assert!((via_ge.sigma - target.map(|t| t.max(0.0))).norm() <= 1e-9);
    }

    #[test]
    fn implicit_solutions_meet_the_residual_and_bound(p in -1.0f64..1.0, k in 1.5f64..4.0) {
        let f = ParamMap::single(FnParam::new("kx + sin p", 1, 1, 1, move |x, q| v(&[k * x[0] + q[0].sin()])));
        let cfg = SolverConfig::with_moduli(k, 0.0).trust_radius(f64::INFINITY);
        let r = solve_implicit(&f, &v(&[0.0]), &v(&[0.0]), &v(&[p]), &cfg).unwrap();
        prop_assert!(r.residual_norm <= cfg.tol);
        prop_assert!(r.sigma.norm() <= r.bound + 10.0 * cfg.tol);
        prop_assert!((r.sigma[0] + p.sin() / k).abs() <= 1e-9);
    }

    #[test]
    fn theta_of_affine_map_equals_beta(a in matrix2(), x in vec2(1.0)) {
        let s = small_schedule(5);
        let g = ParamMap::single(FnParam::linear(a.clone(), Matrix::identity(2, 2), Vector::zeros(2)));
        let t = theta_bound(&g, &x, &Vector::zeros(2), &s.eta_sequence, &s).unwrap();
        let h = SetValuedMap::affine(jacobian_x_of(g.single_fn().unwrap().as_ref(), &x, &Vector::zeros(2)), Vector::zeros(2));
        let b = beta(&h, &x, &s).unwrap().value;
        for th in &t.theta_values {
            prop_assert!((th - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn separable_maps_have_no_deviation(c in -2.0f64..2.0, o in 0.0f64..1.0) {
        let f = ParamMap::single(FnParam::new("sep", 1, 1, 1, move |x, p| v(&[c * x[0].sin() + p[0].exp()])));
        let e = deviation_lipschitz_estimate(&f, &v(&[0.0]), &v(&[0.0]), 1.0, o, &small_schedule(1)).unwrap();
        prop_assert!(e.value <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn relaxing_the_constraint_never_raises_mu(lo in -1.0f64..-0.1, hi in 0.1f64..1.0, widen in 0.0f64..1.0, shift in -0.5f64..0.5) {
        let g = ParamMap::single(FnParam::linear(Matrix::identity(1, 1), -Matrix::identity(1, 1), v(&[0.0])));
        let make = |l: f64, h: f64| {
            ProblemInstance::new(
                SetValuedMap::ConstantSet { input_dim: 1, set: interval(l, h) },
                g.clone(),
                move |x, p| (x[0] - shift - 2.0).powi(2) + p[0],
                v(&[0.0]),
                v(&[0.0]),
                interval(-3.0, 3.0),
                interval(-1.0, 1.0),
            )
            .unwrap()
            .with_resolution(61)
        };
        let narrow = make(lo, hi);
        let wide = make(lo - widen, hi + widen);
        let grid: Vec<Vector> = (0..=20).map(|k| v(&[-1.0 + 0.1 * k as f64])).collect();
        for (a, b) in evaluate_mu_grid(&narrow, &grid).iter().zip(evaluate_mu_grid(&wide, &grid)) {
            prop_assert!(b.mu <= a.mu + 1e-12, "p={} narrow={} wide={}", a.p[0], a.mu, b.mu);
        }
    }

    #[test]
    fn certified_calmness_bounds_hold(c in 0.2f64..3.0, s in 0.2f64..2.0, d in -1.0f64..1.0) {
        let inst = ProblemInstance::new(
            SetValuedMap::identity(1),
            ParamMap::single(FnParam::linear(Matrix::zeros(1, 1), Matrix::from_element(1, 1, s), v(&[0.0]))),
            move |x, p| c * x[0].abs() + d * p[0],
            v(&[0.0]),
            v(&[0.0]),
            interval(-3.0, 3.0),
            interval(-1.0, 1.0),
        )
        .unwrap();
        let r = certify_continuity_calmness(&inst, &SamplingSchedule::halving(0.5, 8, 128, 9));
        if r.verdicts.calm_above == Verdict::Certified || r.verdicts.calm == Verdict::Certified {
            let k = r.moduli.kappa.unwrap();
            for row in &r.grid {
                let rho = (&row.p - &inst.pbar).norm();
                prop_assert!(row.mu - r.mu_bar <= k * rho + 1e-8);
                prop_assert!(r.mu_bar - row.mu <= k * rho + 1e-8);
            }
        }
        prop_assert_eq!(r.verdicts.calm, Verdict::Certified);
    }

    #[test]
    fn certified_lipschitz_values_are_midpoint_convex(c in 0.2f64..3.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let inst = ProblemInstance::new(
            SetValuedMap::identity(1),
            ParamMap::single(FnParam::parameter(1)),
            move |x, _| c * x[0].abs(),
            v(&[0.0]),
            v(&[0.0]),
            interval(-2.0, 2.0),
            interval(-1.0, 1.0),
        )
        .unwrap();
        let r = certify_lipschitz(&inst, &SamplingSchedule::halving(0.5, 8, 128, 4));
        prop_assert_eq!(r.verdicts.lipschitz, Verdict::Certified);
        let mu = |t: f64| evaluate_mu(&inst, &v(&[t]), inst.resolution);
        prop_assert!(mu(0.5 * (a + b)) <= 0.5 * (mu(a) + mu(b)) + 1e-8);
    }
}
