//! Parameterized generalized equations `0 ∈ F(x) − g(x, p)` and the
//! implicit function theorem obtained from covering.
//!
//! Both reduce to the coincidence form `F(σ) ∩ {g(σ, p)} ≠ ∅`. The form
//! `0 ∈ F(x) + g(x, p)` is the same problem with `g` replaced by `−g`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coincidence::{solve_coincidence, CoincidenceResult, SolverConfig};
use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::moduli::{extrapolate, last_two_agree, ModulusEstimate, ModulusKind};
use crate::sampling::{self, SamplingSchedule};
use crate::serde_ext;
use crate::setmaps::{evaluate_distance, jacobian_x_of, ParamFn, ParamMap, SetValuedMap, SmoothFn, MEMBERSHIP_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplicitResult {
    #[serde(with = "serde_ext::vector")]
    pub sigma: Vector,
    /// `|f(σ(p), p)|`.
    pub residual_norm: f64,
    /// `c |f(x̄, p)|`.
    pub bound: f64,
    /// `(α − ℓ)⁻¹`.
    pub c: f64,
    pub bound_satisfied: bool,
    pub iterations: usize,
    pub alpha: f64,
    pub ell: f64,
}

/// `ϑ(r)` on a ladder of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTable {
    pub radii: Vec<f64>,
    #[serde(with = "serde_ext::ext_real_vec")]
    pub theta_values: Vec<f64>,
    #[serde(with = "serde_ext::ext_real")]
    pub inf_theta: f64,
}

fn single(g: &ParamMap, what: &str) -> Result<Arc<dyn ParamFn>> {
    g.single_fn()
        .cloned()
        .ok_or_else(|| CovaraError::InvalidInput(format!("{what} must be single-valued")))
}

/// Solves `0 ∈ F(σ) − g(σ, p)` from the nominal solution `x̄` at `p̄`,
/// with `|σ(p) − x̄| ≤ dist(g(x̄, p); F(x̄)) / (α − ℓ)`.
pub fn solve_generalized_equation(
    map: &SetValuedMap,
    g: &ParamMap,
    xbar: &Vector,
    pbar: &Vector,
    p: &Vector,
    cfg: &SolverConfig,
) -> Result<CoincidenceResult> {
    let gf = single(g, "the generalized equation right-hand side")?;
    check_dim("base point", gf.x_dim(), xbar.len())?;
    check_dim("nominal parameter", gf.p_dim(), pbar.len())?;
    check_dim("parameter", gf.p_dim(), p.len())?;
    check_dim("base point", map.input_dim(), xbar.len())?;
    let nominal = evaluate_distance(map, xbar, &gf.eval(xbar, pbar))?;
    if nominal > MEMBERSHIP_TOL {
        return Err(CovaraError::NotOnGraph { distance: nominal });
    }
    // the reference value nearest to g(x̄, p) makes the launch residual
    // equal to dist(g(x̄, p); F(x̄))
    let ybar = generalized_reference(map, &gf, xbar, p)?;
    solve_coincidence(map, g, xbar, &ybar, p, cfg)
}

/// The point of `F(x̄)` nearest to `g(x̄, p)`.
pub fn generalized_reference(map: &SetValuedMap, g: &Arc<dyn ParamFn>, xbar: &Vector, p: &Vector) -> Result<Vector> {
    map.evaluate(xbar)?.project(&g.eval(xbar, p))
}

/// `β(h, x)`: the limit over shrinking balls of the sampled sup of `|∇h(u)ᵀ|`.
pub fn beta(h: &SetValuedMap, x: &Vector, schedule: &SamplingSchedule) -> Result<ModulusEstimate> {
    h.validate()?;
    schedule.validate()?;
    check_dim("base point", h.input_dim(), x.len())?;
    if !h.is_single_valued() || h.smooth_jacobian(x).is_none() {
        return Err(CovaraError::JacobianUnavailable(
            "beta needs a smooth single-valued map",
        ));
    }
    let per_shell: Vec<f64> = schedule
        .eta_sequence
        .iter()
        .enumerate()
        .map(|(k, &eta)| {
            sampling::ball_points(x, eta, schedule.samples_per_shell, schedule.seed, 500 + k as u64)
                .iter()
                .map(|u| {
                    h.smooth_jacobian(u)
                        .map_or(f64::INFINITY, |j| linalg::operator_norm(&j))
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let floor = per_shell.iter().copied().fold(f64::INFINITY, f64::min);
    let value = extrapolate(&schedule.eta_sequence, &per_shell).clamp(0.0, floor);
    Ok(ModulusEstimate {
        kind: ModulusKind::Beta,
        value,
        converged: last_two_agree(&per_shell),
        per_shell_values: per_shell,
        eta_sequence: schedule.eta_sequence.clone(),
        seed: schedule.seed,
    })
}

/// Roughly `√count` points of a ball: center, axis points, then samples.
fn factor_points(center: &Vector, radius: f64, count: usize, seed: u64, stream: u64) -> Vec<Vector> {
    let k = ((count as f64).sqrt().ceil() as usize).max(2 * center.len() + 1);
    sampling::ball_points(center, radius, k, seed, stream)
}

/// `ϑ(r) = sup { |∇ₓg(x, p)ᵀ| : x ∈ B(x̄, r), p ∈ B(p̄, r) }` per radius;
/// any `ℓ > inf ϑ` bounds the Lipschitz modulus of `g(·, p)` near `(x̄, p̄)`.
pub fn theta_bound(
    g: &ParamMap,
    xbar: &Vector,
    pbar: &Vector,
    radii: &[f64],
    schedule: &SamplingSchedule,
) -> Result<ThetaTable> {
    let gf = g.single_fn().ok_or(CovaraError::JacobianUnavailable(
        "theta needs a single-valued parameterized map",
    ))?;
    schedule.validate()?;
    check_dim("base point", gf.x_dim(), xbar.len())?;
    check_dim("nominal parameter", gf.p_dim(), pbar.len())?;
    if radii.is_empty() || radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(CovaraError::InvalidInput(
            "theta radii must be finite and nonnegative".into(),
        ));
    }
    let theta_values: Vec<f64> = radii
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let xs = factor_points(xbar, r, schedule.samples_per_shell, schedule.seed, 520 + 2 * k as u64);
            let ps = factor_points(pbar, r, schedule.samples_per_shell, schedule.seed, 521 + 2 * k as u64);
            let mut sup: f64 = 0.0;
            for x in &xs {
                for p in &ps {
                    sup = sup.max(linalg::operator_norm(&jacobian_x_of(gf.as_ref(), x, p)));
                }
            }
            sup
        })
        .collect();
    let inf_theta = theta_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ThetaTable {
        radii: radii.to_vec(),
        theta_values,
        inf_theta,
    })
}

/// Sampled Lipschitz modulus in `x` of the deviation `f(x, p) − f(x, p̄)`,
/// uniformly over `p ∈ B(p̄, O)`.
pub fn deviation_lipschitz_estimate(
    f: &ParamMap,
    xbar: &Vector,
    pbar: &Vector,
    u_radius: f64,
    o_radius: f64,
    schedule: &SamplingSchedule,
) -> Result<ModulusEstimate> {
    let ff = single(f, "the implicit function map")?;
    schedule.validate()?;
    check_dim("base point", ff.x_dim(), xbar.len())?;
    check_dim("nominal parameter", ff.p_dim(), pbar.len())?;
    if !(u_radius > 0.0) || !u_radius.is_finite() {
        return Err(CovaraError::DegenerateSampling("neighborhood radius must be positive"));
    }
    if !(o_radius >= 0.0) || !o_radius.is_finite() {
        return Err(CovaraError::DegenerateSampling("parameter radius must be nonnegative"));
    }
    let ps = sampling::ball_points(pbar, o_radius, (2 * pbar.len() + 1).max(16), schedule.seed, 540);
    let n = xbar.len();
    let eta0 = schedule.eta_sequence[0];
    let deviation = |x: &Vector, p: &Vector| ff.eval(x, p) - ff.eval(x, pbar);
    let per_shell: Vec<f64> = schedule
        .eta_sequence
        .iter()
        .enumerate()
        .map(|(k, &eta)| {
            let sep = u_radius * eta / eta0;
            let base = sampling::ball_points(
                xbar,
                u_radius,
                schedule.samples_per_shell,
                schedule.seed,
                550 + k as u64,
            );
            let dirs = sampling::sphere_directions(n, schedule.samples_per_shell, schedule.seed, 560 + k as u64);
            let mut best: f64 = 0.0;
            for (x1, d) in base.iter().zip(&dirs) {
                let mut x2 = x1 + d * sep;
                let off = (&x2 - xbar).norm();
                if off > u_radius {
                    x2 = xbar + (&x2 - xbar) * (u_radius / off);
                }
                let dist = (&x2 - x1).norm();
                if dist <= 1e-12 * (1.0 + u_radius) {
                    continue;
                }
                for p in &ps {
                    let num = (deviation(x1, p) - deviation(&x2, p)).norm();
                    best = best.max(if num.is_nan() { f64::INFINITY } else { num / dist });
                }
            }
            best
        })
        .collect();
    let value = per_shell.iter().copied().fold(0.0, f64::max);
    Ok(ModulusEstimate {
        kind: ModulusKind::LipschitzLike,
        value,
        converged: last_two_agree(&per_shell),
        per_shell_values: per_shell,
        eta_sequence: schedule.eta_sequence.clone(),
        seed: schedule.seed,
    })
}

/// `x ↦ f(x, p̄)`.
#[derive(Debug)]
struct FixedParam {
    f: Arc<dyn ParamFn>,
    pbar: Vector,
}

impl SmoothFn for FixedParam {
    fn input_dim(&self) -> usize {
        self.f.x_dim()
    }
    fn output_dim(&self) -> usize {
        self.f.output_dim()
    }
    fn eval(&self, x: &Vector) -> Vector {
        self.f.eval(x, &self.pbar)
    }
    fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.f.jacobian_x(x, &self.pbar)
    }
}

/// `(x, p) ↦ f(x, p̄) − f(x, p)`.
#[derive(Debug)]
struct Deviation {
    f: Arc<dyn ParamFn>,
    pbar: Vector,
}

impl ParamFn for Deviation {
    fn x_dim(&self) -> usize {
        self.f.x_dim()
    }
    fn p_dim(&self) -> usize {
        self.f.p_dim()
    }
    fn output_dim(&self) -> usize {
        self.f.output_dim()
    }
    fn eval(&self, x: &Vector, p: &Vector) -> Vector {
        self.f.eval(x, &self.pbar) - self.f.eval(x, p)
    }
    fn jacobian_x(&self, x: &Vector, p: &Vector) -> Option<Matrix> {
        Some(self.f.jacobian_x(x, &self.pbar)? - self.f.jacobian_x(x, p)?)
    }
    fn affine_in_x(&self, p: &Vector) -> Option<(Matrix, Vector)> {
        let (m0, c0) = self.f.affine_in_x(&self.pbar)?;
        let (m, c) = self.f.affine_in_x(p)?;
        Some((m0 - m, c0 - c))
    }
}

/// Solves `f(σ, p) = 0` near a nominal zero `f(x̄, p̄) = 0`, with
/// `|σ(p) − x̄| ≤ (α − ℓ)⁻¹ |f(x̄, p)|`.
///
/// `α` covers `f(·, p̄)` and `ℓ` bounds the deviation modulus; missing values
/// are estimated as in [`solve_coincidence`].
pub fn solve_implicit(
    f: &ParamMap,
    xbar: &Vector,
    pbar: &Vector,
    p: &Vector,
    cfg: &SolverConfig,
) -> Result<ImplicitResult> {
    let ff = single(f, "the implicit function map")?;
    check_dim("base point", ff.x_dim(), xbar.len())?;
    check_dim("nominal parameter", ff.p_dim(), pbar.len())?;
    check_dim("parameter", ff.p_dim(), p.len())?;
    let f0 = ff.eval(xbar, pbar);
    if f0.norm() > MEMBERSHIP_TOL {
        return Err(CovaraError::NotOnGraph { distance: f0.norm() });
    }
    let map = SetValuedMap::smooth(FixedParam {
        f: ff.clone(),
        pbar: pbar.clone(),
    });
    let g = ParamMap::single(Deviation {
        f: ff.clone(),
        pbar: pbar.clone(),
    });
    let r = solve_coincidence(&map, &g, xbar, &f0, p, cfg)?;
    let c = 1.0 / (r.alpha - r.ell);
    let bound = c * ff.eval(xbar, p).norm();
    let residual_norm = ff.eval(&r.sigma, p).norm();
    Ok(ImplicitResult {
        bound_satisfied: (&r.sigma - xbar).norm() <= bound + 10.0 * cfg.tol,
        sigma: r.sigma,
        residual_norm,
        bound,
        c,
        iterations: r.iterations,
        alpha: r.alpha,
        ell: r.ell,
    })
}
