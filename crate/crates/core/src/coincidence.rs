//! Coincidence points `F(x) ∩ G(x, p) ≠ ∅` by alternating covering steps.
//!
//! Starting from `x₀ = x̄`, each iteration takes the point `yₖ` of `G(xₖ, p)`
//! nearest to `F(xₖ)` and moves to `xₖ₊₁` with `yₖ ∈ F(xₖ₊₁)` and
//! `|xₖ₊₁ − xₖ| ≤ dist(yₖ; F(xₖ)) / α`. When `F` covers at rate `α` and
//! `G(·, p)` is `ℓ`-Lipschitz with `ℓ < α`, residuals contract by `ℓ/α` and
//! the limit satisfies `|σ(p) − x̄| ≤ dist(ȳ; G(x̄, p)) / (α − ℓ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::moduli::{alpha_hat, empirical_covering, lipschitz_like_estimate};
use crate::oracle::{self, monotone_box_form};
use crate::sampling::SamplingSchedule;
use crate::serde_ext;
use crate::setmaps::{evaluate_distance, ParamMap, SetValue, SetValuedMap, SmoothFn, MEMBERSHIP_TOL};

/// Safety margins applied to estimated moduli when none are supplied.
pub const ALPHA_MARGIN: f64 = 0.9;
pub const ELL_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Assumed covering modulus of `F`; estimated as `0.9 α̂` when absent.
    pub alpha: Option<f64>,
    /// Assumed Lipschitz modulus of `G(·, p)`; estimated as `1.1 ℓ̂` when absent.
    pub ell: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Radius `r` of the launch condition; probed when absent.
    pub trust_radius: Option<f64>,
    pub schedule: SamplingSchedule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            ell: None,
            tol: 1e-10,
            max_iter: 200,
            trust_radius: None,
            schedule: SamplingSchedule::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_moduli(alpha: f64, ell: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ell: Some(ell),
            ..Self::default()
        }
    }

    pub fn trust_radius(mut self, r: f64) -> Self {
        self.trust_radius = Some(r);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(CovaraError::InvalidInput("tol must be positive".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("ell", self.ell),
            ("trust_radius", self.trust_radius),
        ] {
            if let Some(v) = v {
                if v.is_nan() || v < 0.0 {
                    return Err(CovaraError::InvalidInput(format!("{name} must be nonnegative")));
                }
            }
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    #[serde(with = "serde_ext::vector")]
    pub x: Vector,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceResult {
    #[serde(with = "serde_ext::vector")]
    pub sigma: Vector,
    /// A point of `G(σ, p)` within `residual` of `F(σ)`.
    #[serde(with = "serde_ext::vector")]
    pub witness_y: Vector,
    pub residual: f64,
    pub iterations: usize,
    /// `dist(ȳ; G(x̄, p)) / (α − ℓ)`.
    pub bound: f64,
    pub bound_satisfied: bool,
    pub initial_distance: f64,
    pub alpha: f64,
    pub ell: f64,
    #[serde(with = "serde_ext::ext_real")]
    pub trust_radius: f64,
    pub step_sum: f64,
    pub trace: Vec<TraceEntry>,
}

/// Moduli and radius actually used by a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedModuli {
    pub alpha: f64,
    pub ell: f64,
    pub trust_radius: f64,
}

/// Views a single-valued map as a [`SmoothFn`].
#[derive(Debug)]
struct SingleValuedView<'a>(&'a SetValuedMap);

impl SmoothFn for SingleValuedView<'_> {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }
    fn eval(&self, x: &Vector) -> Vector {
        self.0.single_value(x).expect("single-valued map")
    }
    fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.0.smooth_jacobian(x)
    }
}

fn step_failed(reason: impl Into<String>) -> CovaraError {
    CovaraError::StepFailed { reason: reason.into() }
}

/// Moves `x` to a point `x′` with `dist(y_target; F(x′)) ≤ tol` and
/// `|x′ − x| ≤ dist(y_target; F(x)) / α · (1 + 1e-6)`.
pub fn covering_step(map: &SetValuedMap, x: &Vector, y_target: &Vector, alpha: f64, tol: f64) -> Result<Vector> {
    check_dim("covering step point", map.input_dim(), x.len())?;
    check_dim("covering step target", map.output_dim(), y_target.len())?;
    if !(alpha > 0.0) {
        return Err(CovaraError::InvalidInput("covering modulus must be positive".into()));
    }
    let d = evaluate_distance(map, x, y_target)?;
    if d <= tol {
        return Ok(x.clone());
    }
    let next = raw_step(map, x, y_target, alpha, tol)?;
    let reached = evaluate_distance(map, &next, y_target)?;
    if reached > tol {
        return Err(step_failed(format!(
            "inner solve stalled at distance {reached:e} above tolerance {tol:e}"
        )));
    }
    let len = (&next - x).norm();
    let allowed = d / alpha * (1.0 + 1e-6) + 4.0 * f64::EPSILON * (1.0 + x.norm());
    if len > allowed {
        return Err(step_failed(format!(
            "step length {len:e} exceeds dist/alpha = {:e}; the assumed covering modulus is too large here",
            d / alpha
        )));
    }
    Ok(next)
}

fn raw_step(map: &SetValuedMap, x: &Vector, y: &Vector, alpha: f64, tol: f64) -> Result<Vector> {
    if let Some(mb) = monotone_box_form(map) {
        return mb.resolvent(y);
    }
    match map {
        SetValuedMap::Affine { a, b } => Ok(x + linalg::least_norm_solve(a, &(y - a * x - b))?),
        m if m.is_single_valued() => {
            let view = SingleValuedView(m);
            let out = oracle::gauss_newton(&view, x, y, Some(1.0 / alpha), 200)?;
            if out.residual > tol {
                return Err(step_failed(format!(
                    "Gauss-Newton stalled at residual {:e}",
                    out.residual
                )));
            }
            Ok(out.z)
        }
        SetValuedMap::ConstantSet { set, .. } => {
            if set.to_value().distance(y)? <= tol {
                Ok(x.clone())
            } else {
                Err(step_failed("target lies outside the constant value"))
            }
        }
        SetValuedMap::Negate(inner) => raw_step(inner, x, &-y, alpha, tol),
        other => Err(CovaraError::UnsupportedMapClass {
            operation: "covering step",
            class: other.class_name(),
        }),
    }
}

/// The point of `gv` nearest to `fv` and the distance between the two sets.
fn nearest_pair(fv: &SetValue, gv: &SetValue) -> Result<(Vector, f64)> {
    if fv.is_empty() || gv.is_empty() {
        return Err(CovaraError::EmptyValue);
    }
    if let SetValue::Point(y) = gv {
        return Ok((y.clone(), fv.distance(y)?));
    }
    if let SetValue::Point(f) = fv {
        let y = gv.project(f)?;
        let d = (&y - f).norm();
        return Ok((y, d));
    }
    // alternating projections between two closed convex sets
    let m = fv.dim().unwrap_or(0);
    let mut b = fv.project(&Vector::zeros(m))?;
    let mut a = gv.project(&b)?;
    for _ in 0..10_000 {
        let nb = fv.project(&a)?;
        let na = gv.project(&nb)?;
        let moved = (&na - &a).norm() + (&nb - &b).norm();
        a = na;
        b = nb;
        if moved <= 1e-15 * (1.0 + a.norm()) {
            break;
        }
    }
    let d = (&a - &b).norm();
    Ok((a, d))
}

fn check_problem(map: &SetValuedMap, g: &ParamMap, xbar: &Vector, ybar: &Vector, p: &Vector) -> Result<()> {
    map.validate()?;
    g.validate()?;
    check_dim("base point", map.input_dim(), xbar.len())?;
    check_dim("reference value", map.output_dim(), ybar.len())?;
    check_dim("parameterized map input", map.input_dim(), g.x_dim())?;
    check_dim("parameterized map output", map.output_dim(), g.output_dim())?;
    check_dim("parameter", g.p_dim(), p.len())?;
    let d = evaluate_distance(map, xbar, ybar)?;
    if d > MEMBERSHIP_TOL * (1.0 + ybar.amax()) {
        return Err(CovaraError::NotOnGraph { distance: d });
    }
    Ok(())
}

/// Largest `r ∈ {1, 1/2, …, 2⁻¹⁰}` at which the covering inclusion holds on
/// a coarse probe, halved; `+∞` when no preimage oracle exists for `F`.
fn probe_trust_radius(
    map: &SetValuedMap,
    xbar: &Vector,
    ybar: &Vector,
    alpha: f64,
    schedule: &SamplingSchedule,
) -> Result<f64> {
    let coarse = SamplingSchedule {
        samples_per_shell: 64,
        ..schedule.clone()
    };
    for k in 0..=10 {
        let r = 0.5f64.powi(k);
        match empirical_covering(map, xbar, ybar, r, alpha, &coarse) {
            Ok(c) if c.holds => return Ok(r / 2.0),
            Ok(_) => {}
            Err(CovaraError::UnsupportedMapClass { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(0.0)
}

/// Fills in `α`, `ℓ` and `r` missing from `cfg`, estimating `ℓ` at `p_ell`.
pub fn resolve_moduli(
    map: &SetValuedMap,
    g: &ParamMap,
    xbar: &Vector,
    ybar: &Vector,
    p_ell: &Vector,
    cfg: &SolverConfig,
) -> Result<ResolvedModuli> {
    cfg.validate()?;
    let alpha = match cfg.alpha {
        Some(a) => a,
        None => ALPHA_MARGIN * alpha_hat(map, xbar, ybar, &cfg.schedule)?.value,
    };
    if !(alpha > 0.0) {
        return Err(CovaraError::NotContractive {
            alpha,
            ell: cfg.ell.unwrap_or(0.0),
        });
    }
    let trust_radius = match cfg.trust_radius {
        Some(r) => r,
        None if alpha.is_finite() => probe_trust_radius(map, xbar, ybar, alpha, &cfg.schedule)?,
        None => f64::INFINITY,
    };
    let ell = match cfg.ell {
        Some(l) => l,
        None => {
            let u_radius = if trust_radius.is_finite() && trust_radius > 0.0 {
                trust_radius
            } else {
                1.0
            };
            let v_radius = if alpha.is_finite() {
                alpha * u_radius
            } else {
                f64::INFINITY
            };
            ELL_MARGIN * lipschitz_like_estimate(g, p_ell, xbar, u_radius, ybar, v_radius, &cfg.schedule)?.value
        }
    };
    if !(ell < alpha) {
        return Err(CovaraError::NotContractive { alpha, ell });
    }
    Ok(ResolvedModuli {
        alpha,
        ell,
        trust_radius,
    })
}

/// Solves `F(σ) ∩ G(σ, p) ≠ ∅` from the reference pair `ȳ ∈ F(x̄)`.
pub fn solve_coincidence(
    map: &SetValuedMap,
    g: &ParamMap,
    xbar: &Vector,
    ybar: &Vector,
    p: &Vector,
    cfg: &SolverConfig,
) -> Result<CoincidenceResult> {
    check_problem(map, g, xbar, ybar, p)?;
    let moduli = resolve_moduli(map, g, xbar, ybar, p, cfg)?;
    solve_with_moduli(map, g, xbar, ybar, p, cfg, moduli)
}

pub(crate) fn solve_with_moduli(
    map: &SetValuedMap,
    g: &ParamMap,
    xbar: &Vector,
    ybar: &Vector,
    p: &Vector,
    cfg: &SolverConfig,
    moduli: ResolvedModuli,
) -> Result<CoincidenceResult> {
    let ResolvedModuli {
        alpha,
        ell,
        trust_radius,
    } = moduli;
    let gbar = g.evaluate(xbar, p)?;
    let d0 = gbar.distance(ybar)?;
    let limit = (alpha - ell) * trust_radius;
    if !d0.is_finite() || (d0 > 0.0 && d0 >= limit) {
        return Err(CovaraError::LaunchConditionViolated { residual: d0, limit });
    }
    let bound = if d0 == 0.0 { 0.0 } else { d0 / (alpha - ell) };
    let inner_tol = |y: &Vector| (cfg.tol * 1e-2).min(1e-12 * (1.0 + y.amax()));

    let mut x = xbar.clone();
    let mut trace = Vec::new();
    let mut step_sum = 0.0;
    for k in 0..=cfg.max_iter {
        let fv = map.evaluate(&x)?;
        let gv = g.evaluate(&x, p)?;
        let (y, residual) = nearest_pair(&fv, &gv).map_err(|e| match e {
            CovaraError::EmptyValue => step_failed("a map value became empty along the iteration"),
            other => other,
        })?;
        trace.push(TraceEntry { x: x.clone(), residual });
        if residual <= cfg.tol {
            let dist = (&x - xbar).norm();
            return Ok(CoincidenceResult {
                bound_satisfied: dist <= bound + 10.0 * cfg.tol,
                sigma: x,
                witness_y: y,
                residual,
                iterations: k,
                bound,
                initial_distance: d0,
                alpha,
                ell,
                trust_radius,
                step_sum,
                trace,
            });
        }
        if k == cfg.max_iter {
            return Err(CovaraError::MaxIterExceeded {
                iterations: k,
                residual,
            });
        }
        let next = covering_step(map, &x, &y, alpha, inner_tol(&y))?;
        step_sum += (&next - &x).norm();
        x = next;
    }
    unreachable!("loop returns on the last iteration")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub p: Vector,
    pub outcome: std::result::Result<CoincidenceResult, CovaraError>,
}

/// Per-parameter solutions; no continuity across parameters is implied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionTable {
    pub entries: Vec<SelectionEntry>,
}

impl SelectionTable {
    pub fn sigmas(&self) -> Result<Vec<Vector>> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| match &e.outcome {
                Ok(r) => Ok(r.sigma.clone()),
                Err(err) => Err(CovaraError::InvalidInput(format!("entry {i} has no solution: {err}"))),
            })
            .collect()
    }
}

/// Solves every grid parameter with moduli resolved once at `p̄`.
pub fn solve_family(
    map: &SetValuedMap,
    g: &ParamMap,
    xbar: &Vector,
    ybar: &Vector,
    pbar: &Vector,
    p_grid: &[Vector],
    cfg: &SolverConfig,
) -> SelectionTable {
    let prepared = check_problem(map, g, xbar, ybar, pbar).and_then(|_| resolve_moduli(map, g, xbar, ybar, pbar, cfg));
    let entries = p_grid
        .par_iter()
        .map(|p| SelectionEntry {
            p: p.clone(),
            outcome: prepared.clone().and_then(|m| {
                check_dim("parameter", g.p_dim(), p.len())?;
                solve_with_moduli(map, g, xbar, ybar, p, cfg, m)
            }),
        })
        .collect();
    SelectionTable { entries }
}

/// Follows a path of parameters, restarting each solve from the previous
/// solution and its witness value.
pub fn solve_continuation(
    map: &SetValuedMap,
    g: &ParamMap,
    x0: &Vector,
    y0: &Vector,
    params: &[Vector],
    cfg: &SolverConfig,
) -> SelectionTable {
    let mut entries = Vec::with_capacity(params.len());
    let (mut xbar, mut ybar) = (x0.clone(), y0.clone());
    let mut broken: Option<CovaraError> = None;
    for p in params {
        let outcome = match &broken {
            Some(e) => Err(e.clone()),
            None => solve_coincidence(map, g, &xbar, &ybar, p, cfg),
        };
        match &outcome {
            Ok(r) => {
                xbar = r.sigma.clone();
                ybar = map
                    .evaluate(&r.sigma)
                    .and_then(|v| v.project(&r.witness_y))
                    .unwrap_or_else(|_| r.witness_y.clone());
            }
            Err(e) => broken = Some(e.clone()),
        }
        entries.push(SelectionEntry { p: p.clone(), outcome });
    }
    SelectionTable { entries }
}

fn check_loop(n: usize, loop_order: &[usize]) -> Result<()> {
    if loop_order.len() < 3 {
        return Err(CovaraError::TooFewPoints {
            needed: 3,
            got: loop_order.len(),
        });
    }
    let mut seen = vec![false; n];
    for &i in loop_order {
        if i >= n || seen[i] {
            return Err(CovaraError::InvalidInput(
                "loop order must list distinct table indices".into(),
            ));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Largest jump of the selection around the closed loop, or, when branch
/// candidates are supplied, the smallest such jump over all assignments of
/// one candidate per loop point.
pub fn detect_selection_discontinuity(
    table: &SelectionTable,
    loop_order: &[usize],
    branches: Option<&[Vec<Vector>]>,
) -> Result<f64> {
    check_loop(table.entries.len(), loop_order)?;
    match branches {
        None => {
            let sig = table.sigmas()?;
            let pts: Vec<&Vector> = loop_order.iter().map(|&i| &sig[i]).collect();
            Ok(closed_loop_max_jump(&pts))
        }
        Some(b) => {
            check_dim("branch sets", table.entries.len(), b.len())?;
            let sets: Vec<&[Vector]> = loop_order.iter().map(|&i| b[i].as_slice()).collect();
            minimal_max_jump(&sets)
        }
    }
}

fn closed_loop_max_jump(pts: &[&Vector]) -> f64 {
    (0..pts.len())
        .map(|i| (pts[(i + 1) % pts.len()] - pts[i]).norm())
        .fold(0.0, f64::max)
}

/// `min over assignments of max over loop edges` by dynamic programming
/// (one pass per candidate of the first point).
pub fn minimal_max_jump(sets: &[&[Vector]]) -> Result<f64> {
    if sets.len() < 3 {
        return Err(CovaraError::TooFewPoints {
            needed: 3,
            got: sets.len(),
        });
    }
    if sets.iter().any(|s| s.is_empty()) {
        return Err(CovaraError::InvalidInput("every loop point needs a candidate".into()));
    }
    let mut best = f64::INFINITY;
    for start in sets[0] {
        let mut cost: Vec<f64> = vec![0.0];
        let mut prev: &[Vector] = std::slice::from_ref(start);
        for set in &sets[1..] {
            cost = set
                .iter()
                .map(|c| {
                    prev.iter()
                        .zip(&cost)
                        .map(|(q, k)| k.max((c - q).norm()))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            prev = set;
        }
        let closing = prev
            .iter()
            .zip(&cost)
            .map(|(q, k)| k.max((start - q).norm()))
            .fold(f64::INFINITY, f64::min);
        best = best.min(closing);
    }
    Ok(best)
}

/// Whether a trace contracts at rate `ℓ/α` up to the relative slack `slack`.
pub fn trace_contracts(result: &CoincidenceResult, slack: f64) -> bool {
    let q = result.ell / result.alpha;
    result
        .trace
        .windows(2)
        .all(|w| w[1].residual <= q * w[0].residual * (1.0 + slack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setmaps::{ConvexSet, FnParam, HalfComplexSquare};

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    fn const_p(dim: usize) -> ParamMap {
        ParamMap::single(FnParam::parameter(dim))
    }

    #[test]
    fn covering_step_examples() {
        let a = SetValuedMap::affine(Matrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[0.0]));
        let x = covering_step(&a, &v(&[0.0, 0.0]), &v(&[3.0]), 1.0, 1e-12).unwrap();
        assert!((x - v(&[3.0, 0.0])).norm() < 1e-14);

        let id = SetValuedMap::identity(2);
        let x = covering_step(&id, &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 1.0, 1e-12).unwrap();
        assert_eq!(x, v(&[1.0, 0.0]));

        let proj = SetValuedMap::IdentityPlusNormalCone(ConvexSet::nonneg_orthant(1));
        let x = covering_step(&proj, &v(&[2.0]), &v(&[-1.0]), 1.0, 1e-12).unwrap();
        assert_eq!(x, v(&[0.0]));
    }

    #[test]
    fn covering_step_rejects_overlong_steps() {
        let a = SetValuedMap::affine(Matrix::from_diagonal(&v(&[2.0, 1.0])), v(&[0.0, 0.0]));
        let err = covering_step(&a, &v(&[0.0, 0.0]), &v(&[0.0, 1.0]), 1.5, 1e-12).unwrap_err();
        assert!(matches!(err, CovaraError::StepFailed { .. }));
        let nc = SetValuedMap::NormalCone(ConvexSet::nonneg_orthant(1));
        assert!(matches!(
            covering_step(&nc, &v(&[1.0]), &v(&[1.0]), 1.0, 1e-12),
            Err(CovaraError::UnsupportedMapClass { .. })
        ));
    }

    #[test]
    fn identity_against_parameter() {
        let id = SetValuedMap::identity(2);
        let cfg = SolverConfig::with_moduli(1.0, 0.0).trust_radius(10.0);
        let o = v(&[0.0, 0.0]);
        let p = v(&[0.3, -0.4]);
        let r = solve_coincidence(&id, &const_p(2), &o, &o, &p, &cfg).unwrap();
        assert!((&r.sigma - &p).norm() < 1e-14);
        assert!((r.bound - 0.5).abs() < 1e-15);
        assert!(((&r.sigma - &o).norm() - r.bound).abs() < 1e-14);
        let same = solve_coincidence(&id, &const_p(2), &o, &o, &o, &cfg).unwrap();
        assert_eq!(same.iterations, 0);
        assert_eq!(same.residual, 0.0);
        assert_eq!(same.sigma, o);
    }

    #[test]
    fn half_square_off_origin() {
        let f = SetValuedMap::smooth(HalfComplexSquare);
        let cfg = SolverConfig::with_moduli(0.19, 0.0);
        let xbar = v(&[0.2, 0.0]);
        let ybar = v(&[0.02, 0.0]);
        let r = solve_coincidence(&f, &const_p(2), &xbar, &ybar, &v(&[0.0203, 0.0]), &cfg).unwrap();
        assert!((r.sigma[0] - 0.0406f64.sqrt()).abs() < 1e-10);
        assert!(r.sigma[1].abs() < 1e-10);
        assert!((r.bound - 0.0003 / 0.19).abs() < 1e-15);
        assert!(r.bound_satisfied);
        assert!(r.trust_radius.is_finite() && r.trust_radius > 0.0);
    }

    #[test]
    fn launch_condition_and_contractivity_are_enforced() {
        let id = SetValuedMap::identity(1);
        let o = v(&[0.0]);
        let cfg = SolverConfig::with_moduli(1.0, 0.0).trust_radius(0.1);
        assert!(matches!(
            solve_coincidence(&id, &const_p(1), &o, &o, &v(&[0.2]), &cfg),
            Err(CovaraError::LaunchConditionViolated { .. })
        ));
        let cfg = SolverConfig::with_moduli(1.0, 1.0).trust_radius(0.1);
        assert!(matches!(
            solve_coincidence(&id, &const_p(1), &o, &o, &v(&[0.01]), &cfg),
            Err(CovaraError::NotContractive { .. })
        ));
        let cfg = SolverConfig::with_moduli(1.0, 0.0);
        assert!(matches!(
            solve_coincidence(&id, &const_p(1), &o, &v(&[1.0]), &v(&[0.01]), &cfg),
            Err(CovaraError::NotOnGraph { .. })
        ));
    }

    #[test]
    fn automatic_moduli() {
        let a = SetValuedMap::affine(Matrix::from_diagonal(&v(&[2.0, 1.0])), v(&[0.0, 0.0]));
        let g = ParamMap::single(FnParam::new("p + x/4", 2, 2, 2, |x, p| p + x * 0.25));
        let o = v(&[0.0, 0.0]);
        let cfg = SolverConfig {
            schedule: SamplingSchedule {
                samples_per_shell: 64,
                ..SamplingSchedule::default()
            },
            ..SolverConfig::default()
        };
        let r = solve_coincidence(&a, &g, &o, &o, &v(&[0.05, 0.02]), &cfg).unwrap();
        assert!((r.alpha - 0.9).abs() < 1e-9);
        assert!((r.ell - 0.275).abs() < 1e-6);
        // A σ = p + σ/4
        let expect = v(&[0.05 / 1.75, 0.02 / 0.75]);
        assert!((&r.sigma - expect).norm() < 1e-9);
        assert!(trace_contracts(&r, 1e-3));
    }

    #[test]
    fn family_with_failing_point() {
        let id = SetValuedMap::identity(1);
        let o = v(&[0.0]);
        let cfg = SolverConfig::with_moduli(1.0, 0.0).trust_radius(0.5);
        let grid: Vec<Vector> = [-0.1, 0.0, 0.1, 0.7].iter().map(|p| v(&[*p])).collect();
        let t = solve_family(&id, &const_p(1), &o, &o, &o, &grid, &cfg);
        for (e, p) in t.entries.iter().zip(&grid).take(3) {
            assert!((&e.outcome.as_ref().unwrap().sigma - p).norm() < 1e-15);
        }
        assert!(matches!(
            t.entries[3].outcome,
            Err(CovaraError::LaunchConditionViolated { .. })
        ));
    }

    #[test]
    fn discontinuity_examples() {
        let mk = |pts: Vec<Vector>| SelectionTable {
            entries: pts
                .into_iter()
                .map(|s| SelectionEntry {
                    p: s.clone(),
                    outcome: Ok(CoincidenceResult {
                        witness_y: s.clone(),
                        sigma: s,
                        residual: 0.0,
                        iterations: 0,
                        bound: 0.0,
                        bound_satisfied: true,
                        initial_distance: 0.0,
                        alpha: 1.0,
                        ell: 0.0,
                        trust_radius: 1.0,
                        step_sum: 0.0,
                        trace: vec![],
                    }),
                })
                .collect(),
        };
        let order: Vec<usize> = (0..64).collect();
        let constant = mk(vec![v(&[1.0, 2.0]); 64]);
        assert_eq!(detect_selection_discontinuity(&constant, &order, None).unwrap(), 0.0);
        let circle: Vec<Vector> = (0..64)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 64.0;
                v(&[0.5 * t.cos(), 0.5 * t.sin()])
            })
            .collect();
        let jump = detect_selection_discontinuity(&mk(circle), &order, None).unwrap();
        assert!((jump - 2.0 * 0.5 * (std::f64::consts::PI / 64.0).sin()).abs() < 1e-12);
        assert!(matches!(
            detect_selection_discontinuity(&mk(vec![v(&[0.0]); 2]), &[0, 1], None),
            Err(CovaraError::TooFewPoints { .. })
        ));
    }

    fn brute_force_min_max(sets: &[Vec<Vector>]) -> f64 {
        let n = sets.len();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; n];
        loop {
            let pts: Vec<&Vector> = (0..n).map(|i| &sets[i][idx[i]]).collect();
            best = best.min(closed_loop_max_jump(&pts));
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                idx[i] += 1;
                if idx[i] < sets[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn dynamic_program_matches_brute_force() {
        let f = HalfComplexSquare;
        let mut rng = crate::sampling::rng(11, 0);
        use rand::Rng;
        for trial in 0..20 {
            let sets: Vec<Vec<Vector>> = (0..8)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / 8.0;
                    let p = if trial == 0 {
                        v(&[0.02 * t.cos(), 0.02 * t.sin()])
                    } else {
                        v(&[rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
                    };
                    f.preimages(&p).unwrap()
                })
                .collect();
            let refs: Vec<&[Vector]> = sets.iter().map(|s| s.as_slice()).collect();
            let dp = minimal_max_jump(&refs).unwrap();
            assert!((dp - brute_force_min_max(&sets)).abs() < 1e-15);
        }
    }
}
