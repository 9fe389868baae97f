//! Sampled regularity moduli and brute-force covering oracles.
//!
//! Every limit over shrinking neighborhoods is discretized by the radii
//! ladder of a [`SamplingSchedule`]; per-shell values are reported next to
//! the extrapolated limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::{self, Vector};
use crate::oracle::{self, PreimageSearch};
use crate::sampling::{self, SamplingSchedule};
use crate::serde_ext;
use crate::setmaps::{evaluate_distance, ConvexSet, ParamMap, SetValue, SetValuedMap, MEMBERSHIP_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulusKind {
    AlphaHat,
    AlphaPoint,
    AlphaHatSemilocal,
    LipschitzLike,
    Calmness,
    CalmnessAbove,
    CalmnessBelow,
    Beta,
    Theta,
}

/// A sampled modulus with its per-shell history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusEstimate {
    pub kind: ModulusKind,
    #[serde(with = "serde_ext::ext_real")]
    pub value: f64,
    #[serde(with = "serde_ext::ext_real_vec")]
    pub per_shell_values: Vec<f64>,
    pub eta_sequence: Vec<f64>,
    pub converged: bool,
    pub seed: u64,
}

impl ModulusEstimate {
    /// Largest per-shell value (the value itself when there are no shells).
    pub fn shell_sup(&self) -> f64 {
        self.per_shell_values.iter().copied().fold(
            if self.per_shell_values.is_empty() {
                self.value
            } else {
                f64::NEG_INFINITY
            },
            f64::max,
        )
    }

    fn exact(kind: ModulusKind, value: f64, seed: u64) -> Self {
        Self {
            kind,
            value,
            per_shell_values: Vec::new(),
            eta_sequence: Vec::new(),
            converged: true,
            seed,
        }
    }
}

/// Linear extrapolation of the last two shells to `η = 0`.
pub(crate) fn extrapolate(etas: &[f64], vals: &[f64]) -> f64 {
    let k = vals.len();
    if k == 0 {
        return f64::NAN;
    }
    let b = vals[k - 1];
    if k == 1 || !b.is_finite() || !vals[k - 2].is_finite() {
        return b;
    }
    let a = vals[k - 2];
    b + (b - a) * etas[k - 1] / (etas[k - 2] - etas[k - 1])
}

pub(crate) fn last_two_agree(vals: &[f64]) -> bool {
    match vals {
        [.., a, b] => a == b || (a - b).abs() <= 1e-3 * a.abs().max(b.abs()),
        _ => true,
    }
}

fn check_on_graph(map: &SetValuedMap, xbar: &Vector, ybar: &Vector) -> Result<()> {
    let d = evaluate_distance(map, xbar, ybar)?;
    if d > MEMBERSHIP_TOL * (1.0 + ybar.amax()) {
        return Err(CovaraError::NotOnGraph { distance: d });
    }
    Ok(())
}

/// One sampled candidate `(x, y)`: distance of `y` to `ȳ` and the value of
/// the inner infimum over unit `y*`.
type GainSample = (f64, f64);

/// Per-class evaluation of `inf_{|y*|=1} |D̂*F(x,y)(y*)|` at sampled points.
enum GainOracle<'a> {
    Smooth(&'a SetValuedMap),
    IdPlusBox { lower: Vector, upper: Vector },
    Constant(&'a ConvexSet),
}

fn gain_oracle(map: &SetValuedMap) -> Result<(GainOracle<'_>, bool)> {
    match map {
        SetValuedMap::Negate(inner) => {
            let (g, neg) = gain_oracle(inner)?;
            Ok((g, !neg))
        }
        m if m.is_single_valued() => Ok((GainOracle::Smooth(m), false)),
        SetValuedMap::IdentityPlusNormalCone(ConvexSet::Box { lower, upper }) => Ok((
            GainOracle::IdPlusBox {
                lower: lower.clone(),
                upper: upper.clone(),
            },
            false,
        )),
        SetValuedMap::IdentityPlusNormalCone(ConvexSet::WholeSpace(n)) => Ok((
            GainOracle::IdPlusBox {
                lower: Vector::from_element(*n, f64::NEG_INFINITY),
                upper: Vector::from_element(*n, f64::INFINITY),
            },
            false,
        )),
        SetValuedMap::ConstantSet { set, .. } => Ok((GainOracle::Constant(set), false)),
        other => Err(CovaraError::UnsupportedMapClass {
            operation: "coderivative-based covering constant",
            class: other.class_name(),
        }),
    }
}

/// Coderivative gain of `x ↦ x + N_box(x)` at `(z, y)`: coordinates whose
/// multiplier lies in the interior of the normal cone (or whose interval is
/// degenerate) force `y*_i = 0` and contribute nothing; the rest act as the
/// identity. The value is 1 unless every coordinate is forced, in which case
/// no unit `y*` is admissible and the infimum is `+∞`.
fn id_plus_box_gain(lower: &Vector, upper: &Vector, z: &Vector, y: &Vector) -> f64 {
    let v = y - z;
    let forced = (0..z.len()).all(|i| {
        let (l, u) = (lower[i], upper[i]);
        l == u
            || ((z[i] - l).abs() <= MEMBERSHIP_TOL && v[i] < -MEMBERSHIP_TOL)
            || ((z[i] - u).abs() <= MEMBERSHIP_TOL && v[i] > MEMBERSHIP_TOL)
    });
    if forced {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Distance from an interior point to the boundary of a closed convex set.
fn boundary_distance(set: &ConvexSet, y: &Vector) -> f64 {
    match set {
        ConvexSet::WholeSpace(_) => f64::INFINITY,
        ConvexSet::Singleton(_) => 0.0,
        ConvexSet::Box { lower, upper } => (0..y.len())
            .flat_map(|i| [y[i] - lower[i], upper[i] - y[i]])
            .filter(|d| d.is_finite())
            .fold(f64::INFINITY, f64::min)
            .max(0.0),
        ConvexSet::Polyhedron { a, b } => (0..a.nrows())
            .filter_map(|i| {
                let nrm = a.row(i).norm();
                (nrm > 0.0).then(|| (b[i] - (a.row(i) * y)[0]) / nrm)
            })
            .fold(f64::INFINITY, f64::min)
            .max(0.0),
    }
}

fn sample_gains(
    oracle: &GainOracle<'_>,
    map: &SetValuedMap,
    x: &Vector,
    ybar: Option<&Vector>,
) -> Result<Vec<GainSample>> {
    match oracle {
        GainOracle::Smooth(m) => {
            let y = m.single_value(x).expect("single-valued");
            let j = m.smooth_jacobian(x).expect("single-valued");
            let dy = ybar.map_or(0.0, |yb| (y - yb).norm());
            Ok(vec![(dy, linalg::min_adjoint_gain(&j))])
        }
        GainOracle::IdPlusBox { lower, upper } => {
            let z = Vector::from_iterator(
                x.len(),
                x.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(v, (l, u))| v.clamp(*l, *u)),
            );
            let mut out = Vec::with_capacity(2);
            let value = map.evaluate(&z)?;
            let mut candidates = vec![z.clone()];
            if let Some(yb) = ybar {
                candidates.push(value.project(yb)?);
            }
            for y in candidates {
                let dy = ybar.map_or(0.0, |yb| (&y - yb).norm());
                out.push((dy, id_plus_box_gain(lower, upper, &z, &y)));
            }
            Ok(out)
        }
        GainOracle::Constant(_) => unreachable!("constant maps are handled in closed form"),
    }
}

fn covering_constant(
    kind: ModulusKind,
    map: &SetValuedMap,
    xbar: &Vector,
    ybar: Option<&Vector>,
    schedule: &SamplingSchedule,
) -> Result<ModulusEstimate> {
    schedule.validate()?;
    map.validate()?;
    check_dim("base point", map.input_dim(), xbar.len())?;
    let (oracle, negated) = gain_oracle(map)?;
    let ybar_inner = ybar.map(|y| if negated { -y } else { y.clone() });
    let inner_map = strip_negations(map);
    let etas = &schedule.eta_sequence;

    let mut unrestricted: Option<Vec<f64>> = None;
    let per_shell: Vec<f64> = if let GainOracle::Constant(set) = &oracle {
        match &ybar_inner {
            Some(yb) => {
                let bd = boundary_distance(set, yb);
                etas.iter()
                    .map(|e| if bd <= *e { 0.0 } else { f64::INFINITY })
                    .collect()
            }
            None => {
                let v = if boundary_distance(set, &set.to_value().project(&Vector::zeros(set.dim()))?).is_finite() {
                    0.0
                } else {
                    f64::INFINITY
                };
                vec![v; etas.len()]
            }
        }
    } else {
        // records of (shell index, y-distance, gain)
        let records: Vec<Vec<(usize, f64, f64)>> = etas
            .par_iter()
            .enumerate()
            .map(|(k, &eta)| -> Result<Vec<(usize, f64, f64)>> {
                let pts = sampling::ball_points(xbar, eta, schedule.samples_per_shell, schedule.seed, k as u64);
                let mut out = Vec::with_capacity(pts.len());
                for x in pts {
                    for (dy, g) in sample_gains(&oracle, inner_map, &x, ybar_inner.as_ref())? {
                        out.push((k, dy, g));
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let flat: Vec<(usize, f64, f64)> = records.into_iter().flatten().collect();
        // Samples of smaller shells lie in every larger ball, so the suffix
        // minimum is the infimum over the union and is monotone in η.
        let shells = |restrict: bool| -> Vec<f64> {
            etas.iter()
                .enumerate()
                .map(|(k, &eta)| {
                    flat.iter()
                        .filter(|(s, dy, _)| *s >= k && (!restrict || *dy <= eta))
                        .map(|(_, _, g)| *g)
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        };
        if ybar_inner.is_some() {
            unrestricted = Some(shells(false));
        }
        shells(true)
    };
    let mut value = extrapolate(etas, &per_shell).max(*per_shell.last().unwrap_or(&0.0));
    // the constant restricted to y near ȳ is never below the unrestricted one
    if let Some(u) = unrestricted {
        value = value.max(extrapolate(etas, &u).max(*u.last().unwrap_or(&0.0)));
    }
    Ok(ModulusEstimate {
        kind,
        value,
        converged: last_two_agree(&per_shell),
        per_shell_values: per_shell,
        eta_sequence: etas.clone(),
        seed: schedule.seed,
    })
}

fn strip_negations(map: &SetValuedMap) -> &SetValuedMap {
    match map {
        SetValuedMap::Negate(inner) if !map.is_single_valued() => strip_negations(inner),
        m => m,
    }
}

/// The covering constant `α̂(F, x̄, ȳ)`.
///
/// For smooth maps the inner infimum is the smallest singular value of the
/// Jacobian (zero when the output dimension exceeds the input dimension).
pub fn alpha_hat(
    map: &SetValuedMap,
    xbar: &Vector,
    ybar: &Vector,
    schedule: &SamplingSchedule,
) -> Result<ModulusEstimate> {
    check_dim("reference value", map.output_dim(), ybar.len())?;
    check_on_graph(map, xbar, ybar)?;
    covering_constant(ModulusKind::AlphaHat, map, xbar, Some(ybar), schedule)
}

/// The semilocal constant `α̂(F, x̄)`: as [`alpha_hat`] without restricting `y`.
pub fn alpha_hat_semilocal(map: &SetValuedMap, xbar: &Vector, schedule: &SamplingSchedule) -> Result<ModulusEstimate> {
    covering_constant(ModulusKind::AlphaHatSemilocal, map, xbar, None, schedule)
}

/// The pointbased constant: smallest singular value of `∇F(x̄)`.
pub fn alpha_point(map: &SetValuedMap, xbar: &Vector) -> Result<ModulusEstimate> {
    check_dim("base point", map.input_dim(), xbar.len())?;
    let j = map.smooth_jacobian(xbar).ok_or(CovaraError::JacobianUnavailable(
        "pointbased constant needs a smooth map",
    ))?;
    Ok(ModulusEstimate::exact(
        ModulusKind::AlphaPoint,
        linalg::min_adjoint_gain(&j),
        0,
    ))
}

/// A sampled point where the covering inclusion failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringWitness {
    #[serde(with = "serde_ext::vector")]
    pub x: Vector,
    #[serde(with = "serde_ext::vector")]
    pub y_target: Vector,
    /// Radius of the ball around `x` (covering checks only).
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringCertificate {
    pub alpha: f64,
    pub radius_r: f64,
    #[serde(with = "serde_ext::vector")]
    pub center_x: Vector,
    #[serde(with = "serde_ext::vector")]
    pub center_y: Vector,
    pub neighborhood_v_radius: f64,
    pub samples_checked: usize,
    pub violation_count: usize,
    /// At most [`MAX_WITNESSES`] witnesses are kept.
    pub violations: Vec<CoveringWitness>,
    pub holds: bool,
}

pub const MAX_WITNESSES: usize = 32;

fn certificate(
    alpha: f64,
    r: f64,
    xbar: &Vector,
    ybar: &Vector,
    checked: usize,
    mut violations: Vec<CoveringWitness>,
) -> CoveringCertificate {
    let count = violations.len();
    violations.truncate(MAX_WITNESSES);
    CoveringCertificate {
        alpha,
        radius_r: r,
        center_x: xbar.clone(),
        center_y: ybar.clone(),
        neighborhood_v_radius: alpha * r,
        samples_checked: checked,
        violation_count: count,
        holds: count == 0,
        violations,
    }
}

fn check_modulus_inputs(map: &SetValuedMap, xbar: &Vector, ybar: &Vector, r: f64, alpha: f64) -> Result<()> {
    map.validate()?;
    check_dim("base point", map.input_dim(), xbar.len())?;
    check_dim("reference value", map.output_dim(), ybar.len())?;
    if !(r > 0.0 && r.is_finite()) || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CovaraError::InvalidInput(
            "radius and modulus must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Candidate values `y ∈ F(x) ∩ B(ȳ, radius)`.
fn values_near(value: &SetValue, ybar: &Vector, radius: f64, dirs: &[Vector]) -> Result<Vec<Vector>> {
    Ok(value
        .sample_near(ybar, dirs, radius)?
        .into_iter()
        .filter(|y| (y - ybar).norm() <= radius * (1.0 + 1e-12))
        .collect())
}

/// Target directions: weakest output directions of the Jacobian first.
fn target_directions(map: &SetValuedMap, x: &Vector, count: usize, seed: u64, stream: u64) -> Vec<Vector> {
    let m = map.output_dim();
    let mut dirs = Vec::new();
    if let Some(j) = map.smooth_jacobian(x) {
        for u in linalg::left_singular_vectors(&j).into_iter().rev() {
            dirs.push(u.clone());
            dirs.push(-u);
        }
    }
    dirs.extend(sampling::sphere_directions(m, count, seed, stream));
    dirs
}

/// Brute-force check of the covering inclusion `B(y, αρ) ⊆ F(B(x, ρ))` for
/// sampled `x` with `B(x, ρ) ⊆ U = B(x̄, r)` and `y ∈ F(x) ∩ V`,
/// `V = B(ȳ, αr)`.
pub fn empirical_covering(
    map: &SetValuedMap,
    xbar: &Vector,
    ybar: &Vector,
    r: f64,
    alpha: f64,
    schedule: &SamplingSchedule,
) -> Result<CoveringCertificate> {
    check_modulus_inputs(map, xbar, ybar, r, alpha)?;
    schedule.validate()?;
    let v_radius = alpha * r;
    let n_centers = (schedule.samples_per_shell / 16).clamp(4, 32);
    let n_dirs = 2 * map.output_dim() + 8;
    let rhos: Vec<f64> = (0..4).map(|j| r * 0.5f64.powi(j)).collect();

    let per_rho: Vec<(usize, Vec<CoveringWitness>)> = rhos
        .par_iter()
        .enumerate()
        .map(|(j, &rho)| -> Result<(usize, Vec<CoveringWitness>)> {
            let stream = 100 + j as u64;
            let centers = sampling::ball_points(xbar, (r - rho).max(0.0), n_centers, schedule.seed, stream);
            let mut checked = 0;
            let mut bad = Vec::new();
            for (ci, x) in centers.iter().enumerate() {
                let value = map.evaluate(x)?;
                let ydirs = sampling::sphere_directions(map.output_dim(), 8, schedule.seed, stream + 1);
                for y in values_near(&value, ybar, v_radius, &ydirs)? {
                    let dirs = target_directions(map, x, n_dirs, schedule.seed, stream * 1000 + ci as u64);
                    for d in &dirs {
                        for scale in [1.0, 0.5] {
                            let t = &y + d * (alpha * rho * scale);
                            checked += 1;
                            let pre =
                                oracle::nearest_preimage(map, x, &t, rho, PreimageSearch::Multistart, schedule.seed)?;
                            let ok = pre.is_some_and(|z| (z - x).norm() <= rho * (1.0 + 1e-9) + 1e-12);
                            if !ok {
                                bad.push(CoveringWitness {
                                    x: x.clone(),
                                    y_target: t,
                                    rho: Some(rho),
                                });
                            }
                        }
                    }
                }
            }
            Ok((checked, bad))
        })
        .collect::<Result<_>>()?;
    let checked = per_rho.iter().map(|(c, _)| c).sum();
    let violations = per_rho.into_iter().flat_map(|(_, v)| v).collect();
    Ok(certificate(alpha, r, xbar, ybar, checked, violations))
}

/// `dist(x; F⁻¹(y))` for maps with an explicit inverse.
fn distance_to_preimage(map: &SetValuedMap, x: &Vector, y: &Vector) -> Result<f64> {
    match oracle::nearest_preimage(map, x, y, f64::INFINITY, PreimageSearch::ExactOnly, 0) {
        Ok(Some(z)) => Ok((z - x).norm()),
        Ok(None) => Ok(f64::INFINITY),
        Err(CovaraError::UnsupportedMapClass { .. }) => Err(CovaraError::InverseUnavailable(map.class_name())),
        Err(e) => Err(e),
    }
}

/// Checks `dist(x; F⁻¹(y)) ≤ α⁻¹ dist(y; F(x))` for sampled `x ∈ B(x̄, r)`
/// and `y ∈ B(ȳ, αr)`.
pub fn metric_regularity_check(
    map: &SetValuedMap,
    xbar: &Vector,
    ybar: &Vector,
    alpha: f64,
    r: f64,
    schedule: &SamplingSchedule,
) -> Result<CoveringCertificate> {
    check_modulus_inputs(map, xbar, ybar, r, alpha)?;
    schedule.validate()?;
    // Fails early with InverseUnavailable for unsupported classes.
    distance_to_preimage(map, xbar, ybar)?;
    let v_radius = alpha * r;
    let m = map.output_dim();
    let n_x = schedule.samples_per_shell.clamp(8, 64);
    let xs = sampling::ball_points(xbar, r, n_x, schedule.seed, 200);
    let mut weak = target_directions(map, xbar, 0, schedule.seed, 201);
    if weak.is_empty() {
        weak = sampling::sphere_directions(m, 2 * m, schedule.seed, 201);
    }
    let mut ys: Vec<Vector> = weak.iter().map(|u| ybar + u * v_radius).collect();
    ys.extend(weak.iter().map(|u| ybar + u * (0.5 * v_radius)));
    ys.extend(sampling::ball_points(ybar, v_radius, n_x, schedule.seed, 202));

    let results: Vec<(usize, Vec<CoveringWitness>)> = xs
        .par_iter()
        .map(|x| -> Result<(usize, Vec<CoveringWitness>)> {
            let value = map.evaluate(x)?;
            let mut local: Vec<Vector> = ys.clone();
            // targets displaced from F(x) along the weak directions
            if let Ok(fx) = value.project(ybar) {
                for u in &weak {
                    for s in [0.25, 0.5] {
                        let y = &fx + u * (s * v_radius);
                        if (&y - ybar).norm() <= v_radius {
                            local.push(y);
                        }
                    }
                }
            }
            let mut bad = Vec::new();
            for y in &local {
                let dy = value.distance(y)?;
                let dx = distance_to_preimage(map, x, y)?;
                if dx > dy / alpha * (1.0 + 1e-9) + 1e-12 {
                    bad.push(CoveringWitness {
                        x: x.clone(),
                        y_target: y.clone(),
                        rho: None,
                    });
                }
            }
            Ok((local.len(), bad))
        })
        .collect::<Result<_>>()?;
    let checked = results.iter().map(|(c, _)| c).sum();
    let violations = results.into_iter().flat_map(|(_, v)| v).collect();
    Ok(certificate(alpha, r, xbar, ybar, checked, violations))
}

/// Hausdorff excess of `a ∩ V` over `b`, estimated on points of `a`.
fn excess(a: &SetValue, b: &SetValue, v_center: &Vector, v_radius: f64, dirs: &[Vector]) -> Result<f64> {
    if let SetValue::Point(pa) = a {
        if (pa - v_center).norm() > v_radius {
            return Ok(0.0);
        }
        return b.distance(pa);
    }
    let pts = values_near(a, v_center, v_radius, dirs)?;
    let mut e: f64 = 0.0;
    for p in pts {
        e = e.max(b.distance(&p)?);
    }
    Ok(e)
}

/// Sampled Lipschitz-like modulus of `x ↦ G(x, p)` on `U` relative to `V`.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_like_estimate(
    g: &ParamMap,
    p: &Vector,
    u_center: &Vector,
    u_radius: f64,
    v_center: &Vector,
    v_radius: f64,
    schedule: &SamplingSchedule,
) -> Result<ModulusEstimate> {
    g.validate()?;
    schedule.validate()?;
    check_dim("neighborhood center", g.x_dim(), u_center.len())?;
    check_dim("parameter", g.p_dim(), p.len())?;
    check_dim("value neighborhood center", g.output_dim(), v_center.len())?;
    if !(u_radius > 0.0) || !u_radius.is_finite() {
        return Err(CovaraError::DegenerateSampling("neighborhood radius must be positive"));
    }
    let single_valued = matches!(g, ParamMap::SingleValued(_));
    let v_radius = if single_valued { f64::INFINITY } else { v_radius };
    let n = g.x_dim();
    let eta0 = schedule.eta_sequence[0];
    let ydirs = sampling::sphere_directions(g.output_dim(), 2 * g.output_dim() + 4, schedule.seed, 300);
    let per_shell: Vec<f64> = schedule
        .eta_sequence
        .par_iter()
        .enumerate()
        .map(|(k, &eta)| -> Result<f64> {
            let sep = u_radius * eta / eta0;
            let base = sampling::ball_points(
                u_center,
                u_radius,
                schedule.samples_per_shell,
                schedule.seed,
                310 + k as u64,
            );
            let dirs = sampling::sphere_directions(n, schedule.samples_per_shell, schedule.seed, 320 + k as u64);
            let mut best: f64 = 0.0;
            let mut pairs = 0usize;
            for (x, d) in base.iter().zip(dirs.iter()) {
                let mut u = x + d * sep;
                let off = (&u - u_center).norm();
                if off > u_radius {
                    u = u_center + (&u - u_center) * (u_radius / off);
                }
                let dist = (&u - x).norm();
                if dist <= 1e-12 * (1.0 + u_radius) {
                    continue;
                }
                pairs += 1;
                let gx = g.evaluate(x, p)?;
                let gu = g.evaluate(&u, p)?;
                let e =
                    excess(&gx, &gu, v_center, v_radius, &ydirs)?.max(excess(&gu, &gx, v_center, v_radius, &ydirs)?);
                best = best.max(e / dist);
            }
            if pairs == 0 {
                return Err(CovaraError::DegenerateSampling("fewer than two distinct samples"));
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalmnessKind {
    TwoSided,
    Above,
    Below,
}

/// Calmness modulus of `f` at `x̄` over shrinking balls.
///
/// `Above` measures `max(0, f(x̄) − f(x)) / |x − x̄|` and `Below` its mirror;
/// both need a scalar `f`.
pub fn calmness_estimate(
    f: &(dyn Fn(&Vector) -> Vector + Sync),
    xbar: &Vector,
    kind: CalmnessKind,
    schedule: &SamplingSchedule,
) -> Result<ModulusEstimate> {
    schedule.validate()?;
    let fbar = f(xbar);
    if kind != CalmnessKind::TwoSided && fbar.len() != 1 {
        return Err(CovaraError::InvalidInput(
            "one-sided calmness needs a scalar function".into(),
        ));
    }
    if !linalg::all_finite(&fbar) {
        return Err(CovaraError::InvalidInput(
            "function value at the base point is not finite".into(),
        ));
    }
    let per_shell: Vec<f64> = schedule
        .eta_sequence
        .par_iter()
        .enumerate()
        .map(|(k, &eta)| {
            sampling::ball_points(xbar, eta, schedule.samples_per_shell, schedule.seed, 400 + k as u64)
                .into_iter()
                .skip(1)
                .map(|x| {
                    let rho = (&x - xbar).norm();
                    let fx = f(&x);
                    let num = match kind {
                        CalmnessKind::TwoSided => (&fx - &fbar).norm(),
                        CalmnessKind::Above => (fbar[0] - fx[0]).max(0.0),
                        CalmnessKind::Below => (fx[0] - fbar[0]).max(0.0),
                    };
                    if num.is_nan() {
                        f64::INFINITY
                    } else {
                        num / rho
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let value = extrapolate(&schedule.eta_sequence, &per_shell).max(0.0);
    Ok(ModulusEstimate {
        kind: match kind {
            CalmnessKind::TwoSided => ModulusKind::Calmness,
            CalmnessKind::Above => ModulusKind::CalmnessAbove,
            CalmnessKind::Below => ModulusKind::CalmnessBelow,
        },
        value,
        converged: last_two_agree(&per_shell),
        per_shell_values: per_shell,
        eta_sequence: schedule.eta_sequence.clone(),
        seed: schedule.seed,
    })
}

/// Covering rate of a single-valued map at scale `r`: the radius of the
/// largest ball around `F(x̄)` inside `F(B(x̄, r))`, divided by `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringRate {
    pub r: f64,
    pub inner_radius: f64,
    pub rate: f64,
}

/// Scale-dependent covering rates, estimated from the image of the sphere
/// `|x − x̄| = r` (the boundary of an open image lies in the image of the
/// boundary).
pub fn covering_rate_table(
    map: &SetValuedMap,
    xbar: &Vector,
    radii: &[f64],
    directions: usize,
    seed: u64,
) -> Result<Vec<CoveringRate>> {
    check_dim("base point", map.input_dim(), xbar.len())?;
    let fbar = map.single_value(xbar).ok_or_else(|| CovaraError::UnsupportedMapClass {
        operation: "covering rate table",
        class: map.class_name(),
    })?;
    let n = xbar.len();
    let dirs: Vec<Vector> = if n == 2 {
        (0..directions)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / directions as f64;
                Vector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect()
    } else {
        sampling::sphere_directions(n, directions, seed, 500)
    };
    Ok(radii
        .iter()
        .map(|&r| {
            let inner = dirs
                .iter()
                .map(|d| (map.single_value(&(xbar + d * r)).expect("single-valued") - &fbar).norm())
                .fold(f64::INFINITY, f64::min);
            CoveringRate {
                r,
                inner_radius: inner,
                rate: inner / r,
            }
        })
        .collect())
}

/// Hausdorff distance between the image `F(B(c, r))` of a planar disk and
/// the disk `B(ball_center, ball_radius)`, by dense polar sampling of both.
pub fn image_hausdorff_to_ball(
    map: &SetValuedMap,
    center: &Vector,
    r: f64,
    ball_center: &Vector,
    ball_radius: f64,
    radial: usize,
    angular: usize,
) -> Result<f64> {
    if map.input_dim() != 2 || map.output_dim() != 2 || !map.is_single_valued() {
        return Err(CovaraError::UnsupportedMapClass {
            operation: "planar image sampling",
            class: map.class_name(),
        });
    }
    let polar = |c: &Vector, rad: f64| -> Vec<[f64; 2]> {
        let mut pts = vec![[c[0], c[1]]];
        for i in 1..=radial {
            let rr = rad * i as f64 / radial as f64;
            for k in 0..angular {
                let t = std::f64::consts::TAU * k as f64 / angular as f64;
                pts.push([c[0] + rr * t.cos(), c[1] + rr * t.sin()]);
            }
        }
        pts
    };
    let image: Vec<[f64; 2]> = polar(center, r)
        .into_par_iter()
        .map(|p| {
            let y = map.single_value(&Vector::from_vec(p.to_vec())).expect("single-valued");
            [y[0], y[1]]
        })
        .collect();
    let ball = polar(ball_center, ball_radius);
    let bc = [ball_center[0], ball_center[1]];
    // excess of the image over the disk
    let out = image
        .iter()
        .map(|y| (dist2(y, &bc) - ball_radius).max(0.0))
        .fold(0.0, f64::max);
    // excess of the disk over the image, via nearest-neighbor queries
    let tree = KdTree::new(image);
    let inn = ball.par_iter().map(|y| tree.nearest(y)).reduce(|| 0.0, f64::max);
    Ok(out.max(inn))
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Planar k-d tree stored implicitly: each subslice is split at its median
/// along alternating axes.
struct KdTree {
    points: Vec<[f64; 2]>,
}

impl KdTree {
    fn new(mut points: Vec<[f64; 2]>) -> Self {
        fn build(pts: &mut [[f64; 2]], axis: usize) {
            if pts.len() <= 1 {
                return;
            }
            let mid = pts.len() / 2;
            pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
            let (left, right) = pts.split_at_mut(mid);
            build(left, 1 - axis);
            build(&mut right[1..], 1 - axis);
        }
        build(&mut points, 0);
        KdTree { points }
    }

    fn nearest(&self, q: &[f64; 2]) -> f64 {
        fn search(pts: &[[f64; 2]], axis: usize, q: &[f64; 2], best: &mut f64) {
            if pts.is_empty() {
                return;
            }
            let mid = pts.len() / 2;
            let p = &pts[mid];
            *best = best.min(dist2(p, q));
            let diff = q[axis] - p[axis];
            let (near, far) = if diff < 0.0 {
                (&pts[..mid], &pts[mid + 1..])
            } else {
                (&pts[mid + 1..], &pts[..mid])
            };
            search(near, 1 - axis, q, best);
            if diff.abs() < *best {
                search(far, 1 - axis, q, best);
            }
        }
        let mut best = f64::INFINITY;
        search(&self.points, 0, q, &mut best);
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::setmaps::{FnParam, HalfComplexSquare};

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    fn quick() -> SamplingSchedule {
        SamplingSchedule {
            samples_per_shell: 128,
            ..SamplingSchedule::default()
        }
    }

    fn diag21() -> SetValuedMap {
        SetValuedMap::affine(Matrix::from_diagonal(&v(&[2.0, 1.0])), v(&[0.0, 0.0]))
    }

    #[test]
    fn alpha_hat_examples() {
        let s = quick();
        let a = alpha_hat(&diag21(), &v(&[1.0, 1.0]), &v(&[2.0, 1.0]), &s).unwrap();
        assert!((a.value - 1.0).abs() < 1e-12);
        let id = SetValuedMap::identity(3);
        let x = v(&[0.3, -1.0, 2.0]);
        assert!((alpha_hat(&id, &x, &x, &s).unwrap().value - 1.0).abs() < 1e-12);
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        let xb = v(&[0.6, 0.8]);
        let yb = sq.single_value(&xb).unwrap();
        let est = alpha_hat(&sq, &xb, &yb, &SamplingSchedule::default()).unwrap();
        assert!((est.value - 1.0).abs() < 1e-3, "{est:?}");
        assert!(est.per_shell_values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn alpha_hat_off_graph_is_rejected() {
        let err = alpha_hat(&diag21(), &v(&[1.0, 1.0]), &v(&[0.0, 0.0]), &quick()).unwrap_err();
        assert!(matches!(err, CovaraError::NotOnGraph { .. }));
    }

    #[test]
    fn alpha_hat_of_normal_cone_map_is_unsupported() {
        let nc = SetValuedMap::NormalCone(ConvexSet::nonneg_orthant(1));
        let err = alpha_hat(&nc, &v(&[1.0]), &v(&[0.0]), &quick()).unwrap_err();
        assert!(matches!(err, CovaraError::UnsupportedMapClass { .. }));
    }

    #[test]
    fn alpha_hat_of_projection_map_and_constant_sets() {
        let m = SetValuedMap::IdentityPlusNormalCone(ConvexSet::nonneg_orthant(1));
        assert_eq!(alpha_hat(&m, &v(&[0.0]), &v(&[0.0]), &quick()).unwrap().value, 1.0);
        assert_eq!(alpha_hat(&m, &v(&[1.0]), &v(&[1.0]), &quick()).unwrap().value, 1.0);
        // locally F⁻¹ ≡ 0 near (0, −1), so every rate covers
        assert_eq!(
            alpha_hat(&m, &v(&[0.0]), &v(&[-1.0]), &quick()).unwrap().value,
            f64::INFINITY
        );
        let whole = SetValuedMap::ConstantSet {
            input_dim: 1,
            set: ConvexSet::WholeSpace(1),
        };
        assert_eq!(
            alpha_hat(&whole, &v(&[0.0]), &v(&[5.0]), &quick()).unwrap().value,
            f64::INFINITY
        );
        let unit = SetValuedMap::ConstantSet {
            input_dim: 1,
            set: ConvexSet::boxed(vec![0.0], vec![1.0]).unwrap(),
        };
        assert_eq!(alpha_hat(&unit, &v(&[0.0]), &v(&[0.0]), &quick()).unwrap().value, 0.0);
        assert_eq!(
            alpha_hat(&unit, &v(&[0.0]), &v(&[0.5]), &quick()).unwrap().value,
            f64::INFINITY
        );
    }

    #[test]
    fn alpha_point_examples() {
        let a = SetValuedMap::affine(Matrix::from_diagonal(&v(&[3.0, 0.5])), v(&[0.0, 0.0]));
        assert!((alpha_point(&a, &v(&[0.0, 0.0])).unwrap().value - 0.5).abs() < 1e-14);
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        assert!(alpha_point(&sq, &v(&[0.0, 0.0])).unwrap().value.abs() < 1e-8);
        assert!((alpha_point(&sq, &v(&[0.6, 0.8])).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn semilocal_examples() {
        let s = quick();
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        assert!((alpha_hat_semilocal(&diag21(), &v(&[0.0, 0.0]), &s).unwrap().value - 1.0).abs() < 1e-12);
        assert!(
            (alpha_hat_semilocal(&sq, &v(&[0.6, 0.8]), &SamplingSchedule::default())
                .unwrap()
                .value
                - 1.0)
                .abs()
                < 1e-3
        );
        assert_eq!(alpha_hat_semilocal(&sq, &v(&[0.0, 0.0]), &s).unwrap().value, 0.0);
    }

    #[test]
    fn empirical_covering_examples() {
        let s = quick();
        let id = SetValuedMap::identity(2);
        let o = v(&[0.0, 0.0]);
        assert!(empirical_covering(&id, &o, &o, 1.0, 0.99, &s).unwrap().holds);
        assert!(!empirical_covering(&id, &o, &o, 1.0, 1.5, &s).unwrap().holds);
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        let cert = empirical_covering(&sq, &o, &o, 0.4, 0.2, &s).unwrap();
        assert!(!cert.holds);
        assert!(cert
            .violations
            .iter()
            .any(|w| w.x.norm() < 1e-12 && w.rho.unwrap() < 0.4));
    }

    #[test]
    fn empirical_covering_respects_the_neighborhood() {
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        let o = v(&[0.0, 0.0]);
        let cert = empirical_covering(&sq, &o, &o, 0.4, 0.2, &quick()).unwrap();
        for w in &cert.violations {
            assert!(w.x.norm() + w.rho.unwrap() <= 0.4 + 1e-12);
        }
    }

    #[test]
    fn metric_regularity_examples() {
        let s = quick();
        let id = SetValuedMap::identity(2);
        let o = v(&[0.0, 0.0]);
        assert!(metric_regularity_check(&id, &o, &o, 1.0, 1.0, &s).unwrap().holds);
        assert!(metric_regularity_check(&diag21(), &o, &o, 1.0, 1.0, &s).unwrap().holds);
        let bad = metric_regularity_check(&diag21(), &o, &o, 1.2, 1.0, &s).unwrap();
        assert!(!bad.holds);
        let nc = SetValuedMap::NormalCone(ConvexSet::nonneg_orthant(1));
        assert!(matches!(
            metric_regularity_check(&nc, &v(&[1.0]), &v(&[0.0]), 1.0, 1.0, &s),
            Err(CovaraError::InverseUnavailable(_))
        ));
    }

    #[test]
    fn lipschitz_like_examples() {
        let s = quick();
        let two = ParamMap::single(FnParam::new("2x", 1, 1, 1, |x, _| x * 2.0));
        let est = lipschitz_like_estimate(&two, &v(&[0.0]), &v(&[0.0]), 1.0, &v(&[0.0]), 1.0, &s).unwrap();
        assert!((est.value - 2.0).abs() < 1e-6);
        let p = std::f64::consts::FRAC_PI_2;
        let sinp = ParamMap::single(FnParam::new("0.5 sin(p) x", 1, 1, 1, |x, p| x * (0.5 * p[0].sin())));
        let est = lipschitz_like_estimate(&sinp, &v(&[p]), &v(&[0.0]), 1.0, &v(&[0.0]), 1.0, &s).unwrap();
        assert!((est.value - 0.5).abs() < 1e-3);
        let c = ParamMap::single(FnParam::new("p", 1, 1, 1, |_, p| p.clone()));
        let est = lipschitz_like_estimate(&c, &v(&[0.3]), &v(&[0.0]), 1.0, &v(&[0.3]), 1.0, &s).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(matches!(
            lipschitz_like_estimate(&c, &v(&[0.3]), &v(&[0.0]), 0.0, &v(&[0.3]), 1.0, &s),
            Err(CovaraError::DegenerateSampling(_))
        ));
    }

    #[test]
    fn calmness_examples() {
        let s = quick();
        let abs = |x: &Vector| v(&[x[0].abs()]);
        let sq = |x: &Vector| v(&[x[0] * x[0]]);
        let neg_abs = |x: &Vector| v(&[-x[0].abs()]);
        let o = v(&[0.0]);
        assert!((calmness_estimate(&abs, &o, CalmnessKind::TwoSided, &s).unwrap().value - 1.0).abs() < 1e-12);
        assert!(calmness_estimate(&sq, &o, CalmnessKind::TwoSided, &s).unwrap().value < 1e-9);
        assert!((calmness_estimate(&neg_abs, &o, CalmnessKind::Above, &s).unwrap().value - 1.0).abs() < 1e-12);
        assert_eq!(
            calmness_estimate(&neg_abs, &o, CalmnessKind::Below, &s).unwrap().value,
            0.0
        );
    }

    #[test]
    fn covering_rates_of_half_square_grow_linearly() {
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        let table = covering_rate_table(&sq, &v(&[0.0, 0.0]), &[1.0, 0.5, 0.25], 64, 0).unwrap();
        for row in table {
            assert!((row.rate - row.r / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn image_of_disk_under_half_square() {
        let sq = SetValuedMap::smooth(HalfComplexSquare);
        let o = v(&[0.0, 0.0]);
        let h = image_hausdorff_to_ball(&sq, &o, 0.4, &o, 0.08, 200, 1000).unwrap();
        assert!(h < 1e-3, "{h}");
        let wrong = image_hausdorff_to_ball(&sq, &o, 0.4, &o, 0.1, 200, 1000).unwrap();
        assert!(wrong > 0.015);
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        use rand::Rng;
        let mut rng = crate::sampling::rng(3, 0);
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>() * 0.1])
            .collect();
        let tree = KdTree::new(pts.clone());
        for _ in 0..200 {
            let q = [rng.random::<f64>() * 1.2 - 0.1, rng.random::<f64>() * 0.3];
            let brute = pts.iter().map(|p| dist2(p, &q)).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest(&q), brute);
        }
    }

    #[test]
    fn extrapolation_is_exact_for_linear_shells() {
        let etas = [0.5, 0.25, 0.125];
        let vals: Vec<f64> = etas.iter().map(|e| 1.0 - 0.3 * e).collect();
        assert!((extrapolate(&etas, &vals) - 1.0).abs() < 1e-15);
    }
}
