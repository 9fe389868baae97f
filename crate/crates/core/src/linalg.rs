//! Small dense linear algebra helpers: singular values, pseudoinverse solves,
//! nonnegative least squares and least-distance projection onto polyhedra.

use nalgebra::{DMatrix, DVector};

use crate::error::{CovaraError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

const SVD_EPS: f64 = 1e-14;
const SVD_MAX_ITER: usize = 10_000;

fn svd(a: &Matrix) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    nalgebra::SVD::try_new(a.clone(), true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(CovaraError::LinearAlgebra("svd did not converge"))
}

/// Singular values of `a`, sorted in decreasing order.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// `inf { |Aᵀ y| : |y| = 1 }` over `y` in the output space of `a` (m×n).
///
/// This is zero whenever `m > n`, since `Aᵀ` then has a kernel.
pub fn min_adjoint_gain(a: &Matrix) -> f64 {
    if a.nrows() > a.ncols() {
        return 0.0;
    }
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Operator norm (largest singular value).
pub fn operator_norm(a: &Matrix) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// A unit vector `y` realizing `min_adjoint_gain`, when one exists.
pub fn min_adjoint_direction(a: &Matrix) -> Option<Vector> {
    let m = a.nrows();
    if m == 0 {
        return None;
    }
    // Smallest eigenvector of A Aᵀ (m×m) covers both m ≤ n and m > n.
    let gram = a * a.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let (idx, _) = eig.eigenvalues.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1))?;
    let v = eig.eigenvectors.column(idx).into_owned();
    let n = v.norm();
    (n > 0.0).then(|| v / n)
}

/// Left singular vectors of `a` (columns of U), ordered as the singular values.
pub fn left_singular_vectors(a: &Matrix) -> Vec<Vector> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let gram = a * a.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut pairs: Vec<(f64, Vector)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(l, c)| (*l, c.into_owned()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs.into_iter().map(|(_, v)| v).collect()
}

/// Moore–Penrose pseudoinverse with relative cutoff `1e-12 * σ_max`.
pub fn pseudo_inverse(a: &Matrix) -> Result<Matrix> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Matrix::zeros(a.ncols(), a.nrows()));
    }
    let s = svd(a)?;
    let smax = s.singular_values.max();
    let cutoff = 1e-12 * smax.max(f64::MIN_POSITIVE);
    s.pseudo_inverse(cutoff)
        .map_err(|_| CovaraError::LinearAlgebra("pseudoinverse failed"))
}

/// Least-norm least-squares solution of `a x = b`.
pub fn least_norm_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    Ok(pseudo_inverse(a)? * b)
}

/// Nonnegative least squares `min |E u - f|, u >= 0` (Lawson–Hanson active set).
pub fn nnls(e: &Matrix, f: &Vector) -> Result<Vector> {
    let n = e.ncols();
    let mut u = Vector::zeros(n);
    if n == 0 {
        return Ok(u);
    }
    let scale = e.amax().max(f.amax()).max(1.0);
    let tol = 1e-13 * scale * scale * (n as f64);
    let mut passive = vec![false; n];
    let mut outer = 0;
    loop {
        let w = e.transpose() * (f - e * &u);
        let candidate = (0..n).filter(|&j| !passive[j]).max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let t = match candidate {
            Some(t) if w[t] > tol => t,
            _ => break,
        };
        passive[t] = true;
        outer += 1;
        if outer > 3 * n + 10 {
            break;
        }
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let ep = e.select_columns(idx.iter());
            let zp = least_norm_solve(&ep, f)?;
            if zp.iter().all(|&z| z > 0.0) {
                u.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    u[j] = zp[k];
                }
                break;
            }
            let mut step = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if zp[k] <= 0.0 {
                    let denom = u[j] - zp[k];
                    if denom > 0.0 {
                        step = step.min(u[j] / denom);
                    } else {
                        step = 0.0f64.min(step);
                    }
                }
            }
            if !step.is_finite() {
                step = 0.0;
            }
            for (k, &j) in idx.iter().enumerate() {
                u[j] += step * (zp[k] - u[j]);
            }
            let mut moved = false;
            for &j in &idx {
                if u[j] <= 1e-15 * scale {
                    u[j] = 0.0;
                    passive[j] = false;
                    moved = true;
                }
            }
            if !moved || !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(u)
}

/// Euclidean projection of `y` onto `{z : A z <= b}`; `None` when the
/// polyhedron is empty.
pub fn project_polyhedron(a: &Matrix, b: &Vector, y: &Vector) -> Result<Option<Vector>> {
    let n = y.len();
    let m = a.nrows();
    if m == 0 {
        return Ok(Some(y.clone()));
    }
    let slack = b - a * y;
    let feas_tol = 1e-12 * (1.0 + b.amax() + (a * y).amax());
    if slack.iter().all(|&s| s >= -feas_tol) {
        return Ok(Some(y.clone()));
    }
    // Least-distance program: min |x| s.t. G x >= h with G = -A, h = A y - b.
    let g = -a;
    let h = a * y - b;
    let mut e = Matrix::zeros(n + 1, m);
    for j in 0..m {
        for i in 0..n {
            e[(i, j)] = g[(j, i)];
        }
        e[(n, j)] = h[j];
    }
    let mut f = Vector::zeros(n + 1);
    f[n] = 1.0;
    let u = nnls(&e, &f)?;
    let r = &e * &u - &f;
    if r.norm() < 1e-10 || r[n].abs() < 1e-14 {
        return Ok(None);
    }
    let x = Vector::from_iterator(n, (0..n).map(|j| -r[j] / r[n]));
    let z = y + x;
    Ok(Some(polish_projection(a, b, y, z, &u)))
}

/// Re-solve the projection on the detected active set to recover full precision.
fn polish_projection(a: &Matrix, b: &Vector, y: &Vector, z: Vector, mult: &Vector) -> Vector {
    let scale = 1.0 + b.amax() + y.amax();
    let active: Vec<usize> = (0..a.nrows())
        .filter(|&i| mult[i] > 0.0 || (a.row(i) * &z)[0] - b[i] > -1e-9 * scale)
        .collect();
    if active.is_empty() {
        return z;
    }
    let aa = a.select_rows(active.iter());
    let ba = Vector::from_iterator(active.len(), active.iter().map(|&i| b[i]));
    // z* = y - Aᵀ (A Aᵀ)⁺ (A y - b) on the active set.
    let Ok(pinv) = pseudo_inverse(&aa) else {
        return z;
    };
    let cand = y - &pinv * (&aa * y - &ba);
    let viol = (a * &cand - b).max();
    if viol <= 1e-11 * scale && (&cand - y).norm() <= (&z - y).norm() + 1e-9 * scale {
        cand
    } else {
        z
    }
}

/// Cholesky test for symmetric positive definiteness.
pub fn is_symmetric_positive_definite(a: &Matrix) -> bool {
    if !a.is_square() {
        return false;
    }
    let asym = (a - a.transpose()).amax();
    if asym > 1e-12 * (1.0 + a.amax()) {
        return false;
    }
    nalgebra::Cholesky::new(a.clone()).is_some()
}

pub(crate) fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}
