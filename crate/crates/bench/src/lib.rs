//! Instance builders shared by the benchmarks.

use covara_core::{
    ConvexSet, FnParam, FnSmooth, Matrix, ParamMap, ProblemInstance, SamplingSchedule, SetValuedMap, SolverConfig,
    Vector,
};

/// `F(x) = A x + b` with `A` an `m × n` matrix of full row rank.
pub fn affine_problem(m: usize, n: usize) -> (SetValuedMap, ParamMap, Vector, Vector) {
    let a = Matrix::from_fn(m, n, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i + j) as f64) });
    let b = Vector::from_fn(m, |i, _| 0.1 * i as f64);
    let xbar = Vector::from_fn(n, |i, _| 0.2 * (i as f64 + 1.0).sin());
    let pbar = &a * &xbar + &b;
    let map = SetValuedMap::affine(a, b);
    let g = ParamMap::single(
        FnParam::new("p", n, m, m, |_, p| p.clone())
            .with_jacobian_x(move |_, _| Matrix::zeros(m, n))
            .affine_in_x(),
    );
    (map, g, xbar, pbar)
}

/// Solver settings for `affine_problem`: explicit moduli and a wide trust region.
pub fn affine_config() -> SolverConfig {
    SolverConfig {
        trust_radius: Some(1e6),
        ..SolverConfig::with_moduli(1.0, 0.0)
    }
}

/// The map `z ↦ z² / 2` on the plane viewed as complex numbers.
pub fn half_complex_square() -> SetValuedMap {
    SetValuedMap::smooth(
        FnSmooth::new("z^2 / 2", 2, 2, |z| {
            Vector::from_vec(vec![(z[0] * z[0] - z[1] * z[1]) / 2.0, z[0] * z[1]])
        })
        .with_jacobian(|z| Matrix::from_row_slice(2, 2, &[z[0], -z[1], z[1], z[0]])),
    )
}

/// `minimize max(-1, |p| x)` over `x ∈ [-100, 100]` with no constraint.
pub fn jump_instance() -> ProblemInstance {
    ProblemInstance::new(
        SetValuedMap::ConstantSet {
            input_dim: 1,
            set: ConvexSet::WholeSpace(1),
        },
        ParamMap::single(FnParam::new("0", 1, 1, 1, |_, _| Vector::zeros(1))),
        |x, p| (-1.0f64).max(p[0].abs() * x[0]),
        Vector::zeros(1),
        Vector::zeros(1),
        ConvexSet::boxed(vec![-100.0], vec![100.0]).expect("box"),
        ConvexSet::boxed(vec![-1.0], vec![1.0]).expect("box"),
    )
    .expect("valid instance")
}

/// A small schedule that keeps one benchmark iteration short.
pub fn light_schedule() -> SamplingSchedule {
    SamplingSchedule::halving(0.5, 6, 128, 1)
}
