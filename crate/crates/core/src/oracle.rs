//! Inner solvers shared by the covering oracles and the coincidence
//! iteration: resolvents of monotone box-constrained maps, least-norm
//! Gauss–Newton and nearest preimages.

use crate::error::{CovaraError, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::sampling;
use crate::setmaps::{jacobian_of, ConvexSet, SetValuedMap, SmoothFn};

/// `y ∈ A x + b + N(x; [lower, upper])` with `A` symmetric positive definite.
#[derive(Debug, Clone)]
pub(crate) struct MonotoneBox {
    pub a: Matrix,
    pub b: Vector,
    pub lower: Vector,
    pub upper: Vector,
}

fn as_box(set: &ConvexSet) -> Option<(Vector, Vector)> {
    match set {
        ConvexSet::Box { lower, upper } => Some((lower.clone(), upper.clone())),
        ConvexSet::WholeSpace(n) => Some((
            Vector::from_element(*n, f64::NEG_INFINITY),
            Vector::from_element(*n, f64::INFINITY),
        )),
        _ => None,
    }
}

/// Recognizes `x + N_box`, `Ax + b + N_box` and `Ax + b + (x + N_box)` with
/// `A` symmetric positive definite.
pub(crate) fn monotone_box_form(map: &SetValuedMap) -> Option<MonotoneBox> {
    match map {
        SetValuedMap::IdentityPlusNormalCone(set) => {
            let (lower, upper) = as_box(set)?;
            let n = lower.len();
            Some(MonotoneBox {
                a: Matrix::identity(n, n),
                b: Vector::zeros(n),
                lower,
                upper,
            })
        }
        SetValuedMap::Sum(l, r) => {
            let (aff, other) = match (l.as_ref(), r.as_ref()) {
                (SetValuedMap::Affine { a, b }, o) | (o, SetValuedMap::Affine { a, b }) => ((a, b), o),
                _ => return None,
            };
            let (a, b) = aff;
            let (a, lower, upper) = match other {
                SetValuedMap::NormalCone(set) => {
                    let (lo, up) = as_box(set)?;
                    (a.clone(), lo, up)
                }
                SetValuedMap::IdentityPlusNormalCone(set) => {
                    let (lo, up) = as_box(set)?;
                    let n = lo.len();
                    (a + Matrix::identity(n, n), lo, up)
                }
                _ => return None,
            };
            linalg::is_symmetric_positive_definite(&a).then(|| MonotoneBox {
                a,
                b: b.clone(),
                lower,
                upper,
            })
        }
        _ => None,
    }
}

const FACE_ENUMERATION_MAX_DIM: usize = 10;

impl MonotoneBox {
    fn clamp(&self, x: &Vector) -> Vector {
        Vector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (l, u))| v.clamp(*l, *u)),
        )
    }

    /// Violation of the inclusion at `x`: box infeasibility plus the sign
    /// error of the multiplier `y - A x - b`.
    fn inclusion_error(&self, x: &Vector, y: &Vector) -> f64 {
        let w = y - &self.a * x - &self.b;
        let scale = 1.0 + y.amax() + self.b.amax();
        let mut err: f64 = 0.0;
        for i in 0..x.len() {
            let (l, u) = (self.lower[i], self.upper[i]);
            err = err.max((l - x[i]).max(x[i] - u).max(0.0));
            if l == u {
                continue;
            }
            let at_l = (x[i] - l).abs() <= 1e-12 * (1.0 + l.abs());
            let at_u = (x[i] - u).abs() <= 1e-12 * (1.0 + u.abs());
            let wi = w[i];
            let e = match (at_l, at_u) {
                (true, _) if wi <= 0.0 => 0.0,
                (_, true) if wi >= 0.0 => 0.0,
                _ => wi.abs(),
            };
            err = err.max(e / scale);
        }
        err
    }

    /// The unique solution of the inclusion.
    pub fn resolvent(&self, y: &Vector) -> Result<Vector> {
        let n = y.len();
        let identity = (&self.a - Matrix::identity(n, n)).amax() == 0.0;
        if identity {
            return Ok(self.clamp(&(y - &self.b)));
        }
        if n <= FACE_ENUMERATION_MAX_DIM {
            if let Some(x) = self.enumerate_faces(y)? {
                return Ok(x);
            }
        }
        self.projected_gradient(y)
    }

    fn enumerate_faces(&self, y: &Vector) -> Result<Option<Vector>> {
        let n = y.len();
        let rhs = y - &self.b;
        let mut best: Option<(f64, Vector)> = None;
        let total = 3usize.pow(n as u32);
        'faces: for code in 0..total {
            // status per coordinate: 0 free, 1 at lower, 2 at upper
            let mut c = code;
            let mut x = Vector::zeros(n);
            let mut free = Vec::with_capacity(n);
            for i in 0..n {
                let s = c % 3;
                c /= 3;
                let (l, u) = (self.lower[i], self.upper[i]);
                match s {
                    0 if l == u => continue 'faces,
                    0 => free.push(i),
                    1 if l.is_finite() => x[i] = l,
                    2 if u.is_finite() && l != u => x[i] = u,
                    _ => continue 'faces,
                }
            }
            if !free.is_empty() {
                let aff = self.a.select_rows(free.iter()).select_columns(free.iter());
                let bound: Vec<usize> = (0..n).filter(|i| !free.contains(i)).collect();
                let mut r = Vector::from_iterator(free.len(), free.iter().map(|&i| rhs[i]));
                if !bound.is_empty() {
                    let afb = self.a.select_rows(free.iter()).select_columns(bound.iter());
                    let xb = Vector::from_iterator(bound.len(), bound.iter().map(|&i| x[i]));
                    r -= afb * xb;
                }
                let Some(sol) = aff.lu().solve(&r) else {
                    continue;
                };
                for (k, &i) in free.iter().enumerate() {
                    x[i] = sol[k];
                }
            }
            let err = self.inclusion_error(&x, y);
            if err <= 1e-10 {
                return Ok(Some(x));
            }
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, x));
            }
        }
        Ok(best.filter(|(e, _)| *e <= 1e-6).map(|(_, x)| x))
    }

    fn projected_gradient(&self, y: &Vector) -> Result<Vector> {
        let lmax = linalg::operator_norm(&self.a);
        if !(lmax > 0.0) {
            return Err(CovaraError::LinearAlgebra("degenerate monotone operator"));
        }
        let tau = 1.0 / lmax;
        let mut x = self.clamp(&(y - &self.b));
        for _ in 0..200_000 {
            let next = self.clamp(&(&x - (&self.a * &x + &self.b - y) * tau));
            let change = (&next - &x).amax();
            x = next;
            if change <= 1e-16 * (1.0 + x.amax()) {
                break;
            }
        }
        Ok(x)
    }
}

/// Result of a Gauss–Newton solve of `f(z) = t`.
#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub z: Vector,
    pub residual: f64,
}

/// Damped least-norm Gauss–Newton for `f(z) = t` started at `z0`.
///
/// Every step is capped at `cap_factor · |f(z) - t|` when a cap is given,
/// and halved until the residual decreases.
pub(crate) fn gauss_newton(
    f: &dyn SmoothFn,
    z0: &Vector,
    t: &Vector,
    cap_factor: Option<f64>,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let target_tol = 1e-15 * (1.0 + t.amax());
    let mut z = z0.clone();
    let mut r = t - f.eval(&z);
    let mut res = r.norm();
    for _ in 0..max_iter {
        if res <= target_tol {
            break;
        }
        let j = jacobian_of(f, &z);
        let mut step = linalg::least_norm_solve(&j, &r)?;
        if let Some(c) = cap_factor {
            let cap = c * res;
            let len = step.norm();
            if len > cap {
                step *= cap / len;
            }
        }
        let mut accepted = false;
        let mut s = 1.0;
        for _ in 0..40 {
            let cand = &z + &step * s;
            let rc = t - f.eval(&cand);
            let rn = rc.norm();
            if rn < res {
                z = cand;
                r = rc;
                res = rn;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !res.is_finite() {
        return Err(CovaraError::StepFailed {
            reason: "non-finite residual in Gauss-Newton".into(),
        });
    }
    Ok(NewtonOutcome { z, residual: res })
}

/// How hard to look for preimages of smooth maps without a closed-form inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PreimageSearch {
    /// Only exact inverses; smooth maps need `SmoothFn::preimages`.
    ExactOnly,
    /// Multistart Gauss–Newton within the given radius of the anchor.
    Multistart,
}

fn preimage_tol(t: &Vector) -> f64 {
    1e-9 * (1.0 + t.amax())
}

/// A preimage of `t` nearest to `x` (exactly for the classes with explicit
/// inverses, heuristically for multistart search). `Ok(None)` means no
/// preimage was found.
pub(crate) fn nearest_preimage(
    map: &SetValuedMap,
    x: &Vector,
    t: &Vector,
    radius: f64,
    search: PreimageSearch,
    seed: u64,
) -> Result<Option<Vector>> {
    if let Some(mb) = monotone_box_form(map) {
        let z = mb.resolvent(t)?;
        return Ok((mb.inclusion_error(&z, t) <= 1e-8).then_some(z));
    }
    match map {
        SetValuedMap::Affine { a, b } => {
            let z = x + linalg::least_norm_solve(a, &(t - a * x - b))?;
            let ok = (a * &z + b - t).norm() <= preimage_tol(t);
            Ok(ok.then_some(z))
        }
        SetValuedMap::ConstantSet { set, .. } => {
            let inside = set.to_value().distance(t)? <= preimage_tol(t);
            Ok(inside.then(|| x.clone()))
        }
        SetValuedMap::Negate(inner) => nearest_preimage(inner, x, &-t, radius, search, seed),
        SetValuedMap::Smooth(f) => {
            if let Some(list) = f.preimages(t) {
                return Ok(list
                    .into_iter()
                    .filter(|z| (f.eval(z) - t).norm() <= preimage_tol(t))
                    .min_by(|a, b| (a - x).norm().total_cmp(&(b - x).norm())));
            }
            if search == PreimageSearch::ExactOnly {
                return Err(CovaraError::InverseUnavailable(map.class_name()));
            }
            let n = x.len();
            let mut starts = vec![x.clone()];
            if radius > 0.0 && radius.is_finite() {
                for d in sampling::sphere_directions(n, 2 * n + 6, seed, 17) {
                    starts.push(x + d * (0.5 * radius));
                }
            }
            let mut best: Option<Vector> = None;
            for s in starts {
                let out = gauss_newton(f.as_ref(), &s, t, None, 100)?;
                if out.residual <= preimage_tol(t) {
                    let better = best.as_ref().is_none_or(|b| (&out.z - x).norm() < (b - x).norm());
                    if better {
                        best = Some(out.z);
                    }
                }
            }
            Ok(best)
        }
        other => Err(CovaraError::UnsupportedMapClass {
            operation: "preimage search",
            class: other.class_name(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn resolvent_of_identity_plus_orthant_is_projection() {
        let map = SetValuedMap::IdentityPlusNormalCone(ConvexSet::nonneg_orthant(2));
        let mb = monotone_box_form(&map).unwrap();
        assert_eq!(mb.resolvent(&v(&[-1.0, 2.0])).unwrap(), v(&[0.0, 2.0]));
    }

    #[test]
    fn face_enumeration_matches_projected_gradient() {
        let a = Matrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.5]);
        let mb = MonotoneBox {
            a,
            b: v(&[0.1, -0.2, 0.3]),
            lower: v(&[0.0, -1.0, f64::NEG_INFINITY]),
            upper: v(&[1.0, 1.0, 0.0]),
        };
        for y in [v(&[5.0, -3.0, 2.0]), v(&[-1.0, 0.5, -0.5]), v(&[0.3, 0.1, 0.0])] {
            let x1 = mb.enumerate_faces(&y).unwrap().unwrap();
            let x2 = mb.projected_gradient(&y).unwrap();
            assert!((x1 - x2).norm() < 1e-9);
        }
    }

    #[test]
    fn gauss_newton_finds_square_root() {
        let f = crate::setmaps::HalfComplexSquare;
        let out = gauss_newton(&f, &v(&[0.2, 0.0]), &v(&[0.021, 0.0]), None, 50).unwrap();
        assert!(out.residual < 1e-15);
        assert!((out.z[0] - 0.042f64.sqrt()).abs() < 1e-14);
    }
}
