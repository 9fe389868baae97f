//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure.

use std::time::{Duration, Instant};

use covara_cli::commands::loop_jump;
use covara_cli::corpus;
use covara_cli::ProblemDocument;
use covara_core::coincidence::trace_contracts;
use covara_core::linalg::singular_values;
use covara_core::marginal::kappa;
use covara_core::moduli::image_hausdorff_to_ball;
use covara_core::{
    alpha_hat, alpha_point, certify_continuity_calmness, certify_lipschitz, certify_lsc, certify_usc,
    check_convex_pair, empirical_covering, evaluate_mu, lipschitz_like_estimate, metric_regularity_check,
    solve_coincidence, solve_generalized_equation, solve_implicit, ConvexSet, FnParam, FnSmooth, Matrix, ParamMap,
    SamplingSchedule, SetValuedMap, SolverConfig, Vector, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn v(x: &[f64]) -> Vector {
    Vector::from_vec(x.to_vec())
}

fn doc(name: &str) -> ProblemDocument {
    corpus::find(name)
        .unwrap_or_else(|| panic!("corpus entry {name}"))
        .document()
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit, || {
        format!("runtime {:.2}s exceeds {limit}s", elapsed.as_secs_f64())
    })
}

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn sigma_min(a: &Matrix) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Random `m × n` matrix with `m ≤ n` and smallest singular value at least `floor`.
fn conditioned_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, floor: f64) -> Matrix {
    loop {
        let a = random_matrix(rng, m, n);
        if sigma_min(&a) >= floor {
            return a;
        }
    }
}

fn example_5_2() -> Outcome {
    let start = Instant::now();
    let d = doc("example-5-2");
    let inst = d.instance().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for k in -100i32..=100 {
        let p = f64::from(k) / 100.0;
        let mu = evaluate_mu(&inst, &v(&[p]), inst.resolution);
        let want = if k == 0 { 0.0 } else { -1.0 };
        ensure((mu - want).abs() <= 1e-12, || {
            format!("mu({p}) = {mu}, expected {want}")
        })?;
        checked += 1;
    }
    let schedule = d.schedule_with(None);
    let usc = certify_usc(&inst, &schedule);
    ensure(usc.verdicts.usc == Verdict::Certified, || {
        format!("usc verdict {}", usc.verdicts.usc)
    })?;
    let lsc = certify_lsc(&inst, &schedule);
    ensure(lsc.verdicts.lsc == Verdict::Refuted, || {
        format!("lsc verdict {}", lsc.verdicts.lsc)
    })?;
    let w = lsc
        .witnesses
        .iter()
        .find(|w| w.property == "lsc")
        .ok_or("lsc refuted without a witness")?;
    ensure(w.mu == -1.0 && w.mu_bar == 0.0, || {
        format!("witness values {} / {}", w.mu, w.mu_bar)
    })?;
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "{checked} grid values exact; usc certified; lsc refuted at p = {:?} (mu = {}); {:.2}s",
        w.p.as_slice(),
        w.mu,
        start.elapsed().as_secs_f64()
    ))
}

fn example_4_2() -> Outcome {
    let start = Instant::now();
    let d = doc("example-4-2");
    let map = d.map().map_err(|e| e.to_string())?;
    let origin = v(&[0.0, 0.0]);
    let a0 = alpha_point(&map, &origin).map_err(|e| e.to_string())?.value;
    ensure(a0.abs() <= 1e-8, || format!("alpha_point at the origin = {a0}"))?;
    let x = v(&[0.6, 0.8]);
    let y = map.single_value(&x).ok_or("map is single-valued")?;
    let ah = alpha_hat(&map, &x, &y, &d.schedule_with(None))
        .map_err(|e| e.to_string())?
        .value;
    ensure((ah - 1.0).abs() <= 1e-3, || format!("alpha_hat at (0.6, 0.8) = {ah}"))?;
    let mut hs = Vec::new();
    for r in [0.2, 0.4] {
        let h = image_hausdorff_to_ball(&map, &origin, r, &origin, r * r / 2.0, 200, 720).map_err(|e| e.to_string())?;
        ensure(h <= 1e-3, || format!("Hausdorff distance {h} at r = {r}"))?;
        hs.push(h);
    }
    let lp = doc("example-4-2-loop");
    let jump = loop_jump(&lp, None).map_err(|e| e.to_string())?;
    ensure(jump.points == 64 && jump.radius == 0.02, || "loop shape".into())?;
    ensure(jump.min_max_jump >= 0.2, || {
        format!("minimal max jump {}", jump.min_max_jump)
    })?;
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "alpha_point(0) = {a0}; alpha_hat(0.6, 0.8) = {ah:.6}; Hausdorff {:.2e}, {:.2e}; loop jump {:.4}; {:.2}s",
        hs[0],
        hs[1],
        jump.min_max_jump,
        start.elapsed().as_secs_f64()
    ))
}

fn error_bound() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_bound = f64::NEG_INFINITY;
    let mut worst_oracle: f64 = 0.0;
    let mut solves = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=n);
        let a = conditioned_matrix(&mut rng, m, n, 0.1);
        let smin = sigma_min(&a);
        let b = random_vector(&mut rng, m, 1.0);
        let xbar = random_vector(&mut rng, n, 1.0);
        let pbar = &a * &xbar + &b;
        let map = SetValuedMap::affine(a.clone(), b.clone());
        let g = ParamMap::single(
            FnParam::new("p", n, m, m, |_, p| p.clone())
                .with_jacobian_x(move |_, _| Matrix::zeros(m, n))
                .affine_in_x(),
        );
        let cfg = SolverConfig {
            trust_radius: Some(1e6),
            ..SolverConfig::with_moduli(0.9 * smin, 0.0)
        };
        let pinv = a.clone().pseudo_inverse(1e-13).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let p = &pbar + random_vector(&mut rng, m, 2.0);
            let r = solve_generalized_equation(&map, &g, &xbar, &pbar, &p, &cfg).map_err(|e| e.to_string())?;
            let dist = (&p - &a * &xbar - &b).norm();
            let lhs = (&r.sigma - &xbar).norm() * (r.alpha - r.ell);
            worst_bound = worst_bound.max(lhs - dist);
            ensure(lhs <= dist + 1e-7, || format!("bound violated: {lhs} > {dist}"))?;
            let oracle = &xbar + &pinv * (&p - &b - &a * &xbar);
            let gap = (&r.sigma - oracle).norm();
            worst_oracle = worst_oracle.max(gap);
            ensure(gap <= 1e-8, || format!("oracle gap {gap} (m = {m}, n = {n})"))?;
            solves += 1;
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "{solves} solves; worst bound excess {worst_bound:.2e}; worst oracle gap {worst_oracle:.2e}; {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn contraction() -> Outcome {
    let d = doc("projection-ge");
    let mut traces = 0;
    let mut worst: f64 = 0.0;
    let mut check = |r: &covara_core::CoincidenceResult| -> Result<(), String> {
        let q = r.ell / r.alpha;
        for w in r.trace.windows(2) {
            if w[0].residual > 0.0 {
                worst = worst.max(w[1].residual / (q * w[0].residual));
            }
        }
        ensure(trace_contracts(r, 1e-3), || {
            format!("trace does not contract at rate {q}")
        })?;
        traces += 1;
        Ok(())
    };
    for p in [[1.69, -0.26], [0.13, 0.91], [0.0, 0.0], [2.0, 2.0], [0.7, 0.1]] {
        let r = covara_cli::commands::solve_at(&d, &v(&p), None).map_err(|e| e.to_string())?;
        check(&r)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let schedule = SamplingSchedule::halving(0.25, 6, 128, 4);
    let mut kept = 0;
    let mut attempts = 0;
    while kept < 50 {
        attempts += 1;
        if attempts > 500 {
            return Err(format!("only {kept} random instances satisfied alpha_hat >= 2 ell"));
        }
        let a = conditioned_matrix(&mut rng, 2, 2, 1.0);
        let c = rng.random_range(0.05..0.2);
        let eps = rng.random_range(0.05..0.3);
        let a2 = a.clone();
        let map = SetValuedMap::smooth(
            FnSmooth::new("A x + c sin x", 2, 2, move |x| &a * x + x.map(f64::sin) * c)
                .with_jacobian(move |x| &a2 + Matrix::from_diagonal(&x.map(f64::cos)) * c),
        );
        let g = ParamMap::single(
            FnParam::new("p + eps (sin x2, cos x1)", 2, 2, 2, move |x, p| {
                p + v(&[x[1].sin(), x[0].cos()]) * eps
            })
            .with_jacobian_x(move |x, _| Matrix::from_row_slice(2, 2, &[0.0, x[1].cos(), -x[0].sin(), 0.0]) * eps),
        );
        let xbar = random_vector(&mut rng, 2, 0.5);
        let ybar = map.single_value(&xbar).ok_or("smooth")?;
        let pbar = &ybar - v(&[xbar[1].sin(), xbar[0].cos()]) * eps;
        let ah = alpha_hat(&map, &xbar, &ybar, &schedule)
            .map_err(|e| e.to_string())?
            .value;
        let ell = lipschitz_like_estimate(&g, &pbar, &xbar, 0.25, &ybar, 0.25, &schedule)
            .map_err(|e| e.to_string())?
            .value;
        if !(ell > 0.0 && ah >= 2.0 * ell) {
            continue;
        }
        let p = &pbar + random_vector(&mut rng, 2, 0.05);
        let cfg = SolverConfig {
            schedule: schedule.clone(),
            ..SolverConfig::default()
        };
        let r = solve_coincidence(&map, &g, &xbar, &ybar, &p, &cfg).map_err(|e| e.to_string())?;
        check(&r)?;
        kept += 1;
    }
    Ok(format!(
        "{traces} traces ({kept} random smooth instances); worst ratio to the ell/alpha rate {worst:.4}"
    ))
}

fn duality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let schedule = SamplingSchedule::halving(0.5, 4, 64, 5);
    let mut agreements = 0;
    for _ in 0..30 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=n);
        let a = conditioned_matrix(&mut rng, m, n, 0.2);
        let smin = sigma_min(&a);
        let b = random_vector(&mut rng, m, 1.0);
        let map = SetValuedMap::affine(a.clone(), b.clone());
        let xbar = random_vector(&mut rng, n, 1.0);
        let ybar = &a * &xbar + &b;
        for (factor, expect_hold) in [(0.5, true), (0.99, true), (1.1, false)] {
            let alpha = factor * smin;
            let cov = empirical_covering(&map, &xbar, &ybar, 0.5, alpha, &schedule).map_err(|e| e.to_string())?;
            let reg = metric_regularity_check(&map, &xbar, &ybar, alpha, 0.5, &schedule).map_err(|e| e.to_string())?;
            ensure(cov.holds == reg.holds, || {
                format!(
                    "disagreement at {factor} sigma_min: covering {} vs regularity {}",
                    cov.holds, reg.holds
                )
            })?;
            ensure(cov.holds == expect_hold, || {
                format!("verdict {} at {factor} sigma_min", cov.holds)
            })?;
            agreements += 1;
        }
    }
    Ok(format!(
        "{agreements}/90 verdicts agree; 1.1 sigma_min refuted by both; {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn implicit() -> Outcome {
    let d = doc("implicit");
    let f = d.implicit_map().map_err(|e| e.to_string())?;
    let cfg = d.solver_config(None);
    let (x0, p0) = (v(&[0.0]), v(&[0.0]));
    let mut worst_sol: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for k in 0..50 {
        let p = -1.5 + 3.0 * f64::from(k) / 49.0;
        let r = solve_implicit(&f, &x0, &p0, &v(&[p]), &cfg).map_err(|e| e.to_string())?;
        let want = -p.sin() / 2.0;
        let err = (r.sigma[0] - want).abs();
        worst_sol = worst_sol.max(err);
        ensure(err <= 1e-10, || format!("sigma({p}) = {} vs {want}", r.sigma[0]))?;
        let bound = p.sin().abs() / (r.alpha - r.ell);
        ensure(r.sigma[0].abs() <= bound + 1e-12, || format!("bound violated at {p}"))?;
        let gap = (bound - r.sigma[0].abs()).abs();
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 1e-9, || format!("equality gap {gap} at {p}"))?;
    }
    Ok(format!(
        "50 parameters; worst solution error {worst_sol:.2e}; worst equality gap {worst_gap:.2e}"
    ))
}

fn calmness_formula() -> Outcome {
    let d = doc("convex-marginal");
    let inst = d.instance().map_err(|e| e.to_string())?;
    let schedule = d.schedule_with(None);
    let r = certify_continuity_calmness(&inst, &schedule);
    ensure(r.verdicts.calm == Verdict::Certified, || {
        format!("calm verdict {}", r.verdicts.calm)
    })?;
    let m = &r.moduli;
    let (k, k1, k2, a, l) = match (m.kappa, m.kappa1, m.kappa2, m.alpha, m.ell) {
        (Some(k), Some(k1), Some(k2), Some(a), Some(l)) => (k, k1, k2, a, l),
        _ => return Err(format!("moduli incomplete: {m:?}")),
    };
    ensure(k >= 1.0, || format!("kappa = {k}"))?;
    let assembled = kappa(k1, k2, a, l);
    ensure(k == assembled, || {
        format!("kappa {k} differs from the assembled {assembled}")
    })?;
    for row in &r.grid {
        let lhs = (row.mu - r.mu_bar).abs();
        let rhs = k * (&row.p - &inst.pbar).norm() + 1e-8;
        ensure(lhs <= rhs, || {
            format!("|mu(p) - mu(0)| = {lhs} > {rhs} at p = {:?}", row.p.as_slice())
        })?;
    }
    let lip = certify_lipschitz(&inst, &schedule);
    ensure(lip.verdicts.lipschitz == Verdict::Certified, || {
        format!("lipschitz verdict {}", lip.verdicts.lipschitz)
    })?;
    let slope = lip.moduli.local_lipschitz_estimate.ok_or("no slope")?;
    ensure((slope - 1.0).abs() <= 1e-3, || format!("slope {slope}"))?;
    Ok(format!(
        "kappa = {k} = {k1} + {k1}*{k2}/({a} - {l}); {} grid points bounded; slope {slope}",
        r.grid.len()
    ))
}

fn convex_pairs() -> Outcome {
    let s = ConvexSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).map_err(|e| e.to_string())?;
    let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
    let f = SetValuedMap::affine(a.clone(), v(&[0.0, 0.0]));
    let g = ParamMap::single(FnParam::linear(a, Matrix::zeros(2, 2), v(&[0.0, 0.0])));
    let r = check_convex_pair(&g, &f, &s, &s, 24, 1).map_err(|e| e.to_string())?;
    ensure(r.holds_on_samples, || "affine pair reported non-convex".into())?;

    let cone = SetValuedMap::ConstantSet {
        input_dim: 2,
        set: ConvexSet::nonneg_orthant(2),
    };
    let gp = ParamMap::single(FnParam::parameter(2));
    let r = check_convex_pair(&gp, &cone, &s, &s, 24, 2).map_err(|e| e.to_string())?;
    ensure(r.holds_on_samples && r.process_holds == Some(true), || {
        "cone process reported non-convex".into()
    })?;

    let unit = ConvexSet::boxed(vec![0.0], vec![1.0]).map_err(|e| e.to_string())?;
    let sq = SetValuedMap::smooth(FnSmooth::new("x^2", 1, 1, |x| v(&[x[0] * x[0]])));
    let gsq = ParamMap::single(FnParam::new("x^2", 1, 1, 1, |x, _| v(&[x[0] * x[0]])));
    let r = check_convex_pair(&gsq, &sq, &unit, &unit, 24, 3).map_err(|e| e.to_string())?;
    ensure(!r.holds_on_samples, || "squared map reported convex".into())?;
    let w = r.witness.ok_or("no witness")?;
    let (x1, x2) = (w.x1[0], w.x2[0]);
    let endpoints = (x1 == 0.0 && x2 == 1.0) || (x1 == 1.0 && x2 == 0.0);
    ensure(endpoints && w.lambda == 0.5, || {
        format!("witness x1 = {x1}, x2 = {x2}, lambda = {}", w.lambda)
    })?;
    Ok(format!(
        "affine and cone pairs hold; witness x1 = {x1}, x2 = {x2}, lambda = {}",
        w.lambda
    ))
}

fn determinism() -> Outcome {
    let run = |format: &str| {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = covara_cli::run_with(
            ["covara", "corpus", "run", "--seed", "7", "--format", format],
            &mut out,
            &mut err,
        );
        (code, out)
    };
    let mut sizes = Vec::new();
    for format in ["text", "json"] {
        let (c1, a) = run(format);
        let (c2, b) = run(format);
        ensure(c1 == 0 && c2 == 0, || format!("exit codes {c1}, {c2}"))?;
        ensure(a == b, || format!("{format} reports differ"))?;
        sizes.push(a.len());
    }
    Ok(format!(
        "text ({} bytes) and json ({} bytes) reports identical across runs",
        sizes[0], sizes[1]
    ))
}

fn main() {
    let criteria: [Check; 9] = [
        ("optimal value jump reproduction", example_5_2),
        ("half complex square map", example_4_2),
        ("error-bound certificate", error_bound),
        ("geometric contraction", contraction),
        ("covering and metric regularity agree", duality),
        ("implicit function bound", implicit),
        ("calmness modulus formula", calmness_formula),
        ("convex-pair detector", convex_pairs),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} [{secs:.2}s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} [{secs:.2}s] {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
