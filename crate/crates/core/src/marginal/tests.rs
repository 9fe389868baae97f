use super::*;
use crate::linalg::Matrix;
use crate::sampling::SamplingSchedule;
use crate::setmaps::{FnParam, FnSmooth};

fn v(x: &[f64]) -> Vector {
    Vector::from_vec(x.to_vec())
}

fn interval(lo: f64, hi: f64) -> ConvexSet {
    ConvexSet::boxed(vec![lo], vec![hi]).unwrap()
}

fn zero_g() -> ParamMap {
    ParamMap::single(
        FnParam::new("0", 1, 1, 1, |_, _| v(&[0.0]))
            .with_jacobian_x(|_, _| Matrix::zeros(1, 1))
            .affine_in_x(),
    )
}

fn jump_instance() -> ProblemInstance {
    ProblemInstance::new(
        SetValuedMap::ConstantSet {
            input_dim: 1,
            set: ConvexSet::WholeSpace(1),
        },
        zero_g(),
        |x, p| (p[0].abs() * x[0]).max(-1.0),
        v(&[0.0]),
        v(&[0.0]),
        interval(-100.0, 100.0),
        interval(-1.0, 1.0),
    )
    .unwrap()
}

fn branch_instance() -> ProblemInstance {
    ProblemInstance::new(
        SetValuedMap::NormalCone(ConvexSet::nonneg_orthant(1)),
        ParamMap::single(FnParam::linear(
            Matrix::identity(1, 1),
            -Matrix::identity(1, 1),
            v(&[0.0]),
        )),
        |x, _| x[0],
        v(&[0.0]),
        v(&[0.0]),
        interval(-2.0, 2.0),
        interval(-1.0, 1.0),
    )
    .unwrap()
}

fn projection_instance() -> ProblemInstance {
    ProblemInstance::new(
        SetValuedMap::IdentityPlusNormalCone(ConvexSet::nonneg_orthant(1)),
        ParamMap::single(FnParam::parameter(1)),
        |x, _| x[0] * x[0],
        v(&[0.0]),
        v(&[0.0]),
        interval(-2.0, 2.0),
        interval(-1.0, 1.0),
    )
    .unwrap()
}

fn abs_instance() -> ProblemInstance {
    ProblemInstance::new(
        SetValuedMap::identity(1),
        ParamMap::single(FnParam::parameter(1)),
        |x, _| x[0].abs(),
        v(&[0.0]),
        v(&[0.0]),
        interval(-2.0, 2.0),
        interval(-1.0, 1.0),
    )
    .unwrap()
}

fn quadratic_instance() -> ProblemInstance {
    ProblemInstance::new(
        SetValuedMap::ConstantSet {
            input_dim: 1,
            set: ConvexSet::WholeSpace(1),
        },
        zero_g(),
        |x, p| (x[0] - p[0]).powi(2),
        v(&[0.0]),
        v(&[0.0]),
        interval(-2.0, 2.0),
        interval(-1.0, 1.0),
    )
    .unwrap()
}

#[test]
fn instance_validation() {
    let bad = ProblemInstance::new(
        SetValuedMap::identity(1),
        ParamMap::single(FnParam::parameter(1)),
        |x, _| x[0],
        v(&[1.0]),
        v(&[0.0]),
        interval(-2.0, 2.0),
        interval(-1.0, 1.0),
    );
    assert!(matches!(bad, Err(CovaraError::NotOnGraph { .. })));
    let unbounded = ProblemInstance::new(
        SetValuedMap::identity(1),
        ParamMap::single(FnParam::parameter(1)),
        |x, _| x[0],
        v(&[0.0]),
        v(&[0.0]),
        ConvexSet::nonneg_orthant(1),
        interval(-1.0, 1.0),
    );
    assert!(matches!(unbounded, Err(CovaraError::InvalidInput(_))));
    let infinite_cost = ProblemInstance::new(
        SetValuedMap::identity(1),
        ParamMap::single(FnParam::parameter(1)),
        |_, _| f64::INFINITY,
        v(&[0.0]),
        v(&[0.0]),
        interval(-2.0, 2.0),
        interval(-1.0, 1.0),
    );
    assert!(infinite_cost.is_err());
}

#[test]
fn whole_space_feasible_set_is_the_grid() {
    let inst = quadratic_instance();
    let s = feasible_set_sample(&inst, &v(&[0.3]), 11);
    assert_eq!(s.points.len(), 11);
    assert!(s.exhaustive);
}

#[test]
fn branch_feasible_sets() {
    let inst = branch_instance();
    let s = feasible_set_sample(&inst, &v(&[1.0]), 201);
    assert!(s.exhaustive);
    let mut xs: Vec<f64> = s.points.iter().map(|x| x[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert_eq!(xs, vec![0.0, 1.0]);
    assert!(feasible_set_sample(&inst, &v(&[-1.0]), 201).points.is_empty());
}

#[test]
fn mu_examples() {
    let q = quadratic_instance();
    for p in [-1.0, -0.37, 0.0, 0.5, 1.0] {
        assert!(evaluate_mu(&q, &v(&[p]), 201).abs() < 1e-12);
    }
    let b = branch_instance();
    assert_eq!(evaluate_mu(&b, &v(&[1.0]), 201), 0.0);
    assert_eq!(evaluate_mu(&b, &v(&[-0.5]), 201), f64::INFINITY);
    let pr = projection_instance();
    for p in [-0.6, 0.0, 0.3, 0.77] {
        let want = f64::max(p, 0.0).powi(2);
        assert!((evaluate_mu(&pr, &v(&[p]), 201) - want).abs() < 1e-12, "p={p}");
    }
}

#[test]
fn jump_values_are_exact() {
    let inst = jump_instance();
    assert_eq!(evaluate_mu(&inst, &v(&[0.0]), inst.resolution), 0.0);
    let grid: Vec<Vector> = (1..=100)
        .flat_map(|k| [v(&[0.01 * k as f64]), v(&[-0.01 * k as f64])])
        .collect();
    for row in evaluate_mu_grid(&inst, &grid) {
        assert_eq!(row.mu, -1.0, "p={}", row.p[0]);
    }
}

#[test]
fn jump_verdicts() {
    let inst = jump_instance();
    let s = SamplingSchedule::default();
    let r = certify_continuity_calmness(&inst, &s);
    assert_eq!(r.verdicts.usc, Verdict::Certified, "{}", r.summary());
    assert_eq!(r.verdicts.lsc, Verdict::Refuted);
    assert_eq!(r.verdicts.continuous, Verdict::Refuted);
    assert_eq!(r.verdicts.calm, Verdict::Refuted);
    let w = r.witnesses.iter().find(|w| w.property == "lsc").unwrap();
    assert_eq!(w.mu, -1.0);
    assert_eq!(w.mu_bar, 0.0);
    assert!(w.p[0].abs() >= 0.01);
    let l = certify_lipschitz(&inst, &s);
    assert_eq!(l.verdicts.lipschitz, Verdict::Refuted);
}

#[test]
fn quadratic_is_calm() {
    let r = certify_continuity_calmness(&quadratic_instance(), &SamplingSchedule::default());
    assert_eq!(r.verdicts.continuous, Verdict::Certified, "{}", r.summary());
    assert_eq!(r.verdicts.calm, Verdict::Certified, "{}", r.summary());
    assert!(r.grid.iter().all(|g| g.mu.abs() < 1e-12));
}

#[test]
fn projection_is_continuous() {
    let r = certify_continuity_calmness(&projection_instance(), &SamplingSchedule::default());
    assert_eq!(r.verdicts.usc, Verdict::Certified, "{}", r.summary());
    assert_eq!(r.verdicts.lsc, Verdict::Certified, "{}", r.summary());
    assert_eq!(r.verdicts.continuous, Verdict::Certified);
}

#[test]
fn abs_value_calmness_and_slope() {
    let inst = abs_instance();
    let s = SamplingSchedule::default();
    let r = certify_continuity_calmness(&inst, &s);
    assert_eq!(r.verdicts.calm, Verdict::Certified, "{}", r.summary());
    let m = r.moduli;
    let k = m.kappa.unwrap();
    assert!(k >= 1.0);
    let assembled = kappa(m.kappa1.unwrap(), m.kappa2.unwrap(), m.alpha.unwrap(), m.ell.unwrap());
    assert_eq!(k, assembled);
    for row in &r.grid {
        assert!((row.mu - row.p[0].abs()).abs() < 1e-12);
        assert!((row.mu - r.mu_bar).abs() <= k * row.p[0].abs() + 1e-8);
    }
    let l = certify_lipschitz(&inst, &s);
    assert_eq!(l.verdicts.lipschitz, Verdict::Certified, "{}", l.summary());
    assert!((l.moduli.local_lipschitz_estimate.unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn branch_loses_feasibility() {
    let inst = branch_instance();
    let r = certify_usc(&inst, &SamplingSchedule::default());
    assert_eq!(r.verdicts.usc, Verdict::Refuted, "{}", r.summary());
    for row in &r.grid {
        if row.p[0] < 0.0 {
            assert_eq!(row.mu, f64::INFINITY);
        } else {
            assert!(row.mu.is_finite());
        }
    }
}

#[test]
fn convex_pair_examples() {
    let s = ConvexSet::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
    let f = SetValuedMap::affine(a.clone(), v(&[0.0, 0.0]));
    let g = ParamMap::single(FnParam::linear(a, Matrix::zeros(2, 2), v(&[0.0, 0.0])));
    let r = check_convex_pair(&g, &f, &s, &s, 24, 1).unwrap();
    assert!(r.holds_on_samples);
    assert_eq!(r.process_holds, Some(true));

    let cone = SetValuedMap::ConstantSet {
        input_dim: 2,
        set: ConvexSet::nonneg_orthant(2),
    };
    let gp = ParamMap::single(FnParam::parameter(2));
    let r = check_convex_pair(&gp, &cone, &s, &s, 24, 2).unwrap();
    assert_eq!(r.process_holds, Some(true));
    assert!(r.holds_on_samples);

    let sq = SetValuedMap::smooth(FnSmooth::new("x^2", 1, 1, |x| v(&[x[0] * x[0]])));
    let gsq = ParamMap::single(FnParam::new("x^2", 1, 1, 1, |x, _| v(&[x[0] * x[0]])));
    let r = check_convex_pair(&gsq, &sq, &interval(0.0, 1.0), &interval(0.0, 1.0), 24, 3).unwrap();
    assert!(!r.holds_on_samples);
    let w = r.witness.unwrap();
    assert!(w.distance > 0.1);
}
