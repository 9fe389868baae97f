//! Feasible sets `S(p) = {x : 0 ∈ F(x) − g(x, p)}` inside a compact box.
//!
//! When `g(·, p)` is affine and `F` is affine, constant, a normal cone or
//! identity plus a normal cone of a box, `S(p)` is a finite union of
//! polyhedra and is enumerated branch by branch. Other problems fall back to
//! grid filtering refined by local solves.

use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::coincidence::{solve_coincidence, SolverConfig};
use crate::linalg::{self, Matrix, Vector};
use crate::oracle;
use crate::sampling::SamplingSchedule;
use crate::setmaps::{evaluate_distance, jacobian_x_of, ConvexSet, ParamFn, ParamMap, SetValuedMap, SmoothFn};

/// Points of `S(p)` satisfy the constraint to this accuracy.
pub const FEASIBILITY_TOL: f64 = 1e-8;

const MAX_GRID_POINTS: usize = 250_000;
const MAX_BRANCH_DIM: usize = 8;
const FALLBACK_SEEDS: usize = 8;

/// `{x : E x = e, C x ≤ d}`.
#[derive(Debug, Clone)]
pub(crate) struct Piece {
    eq_a: Matrix,
    eq_b: Vector,
    ineq_a: Matrix,
    ineq_b: Vector,
}

#[derive(Debug, Clone, Default)]
struct PieceBuilder {
    eq: Vec<(Vec<f64>, f64)>,
    ineq: Vec<(Vec<f64>, f64)>,
}

impl PieceBuilder {
    fn eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq.push((row, rhs));
    }

    fn ineq(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq.push((row, rhs));
    }

    fn build(self, n: usize) -> Piece {
        let stack = |rows: &[(Vec<f64>, f64)]| {
            let a = Matrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
            let b = Vector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            (a, b)
        };
        let (eq_a, eq_b) = stack(&self.eq);
        let (ineq_a, ineq_b) = stack(&self.ineq);
        Piece {
            eq_a,
            eq_b,
            ineq_a,
            ineq_b,
        }
    }
}

fn unit(n: usize, i: usize, s: f64) -> Vec<f64> {
    let mut r = vec![0.0; n];
    r[i] = s;
    r
}

fn row(m: &Matrix, i: usize, s: f64) -> Vec<f64> {
    m.row(i).iter().map(|v| s * v).collect()
}

impl Piece {
    fn scale(&self, x: &Vector) -> f64 {
        1.0 + x.amax() + self.eq_b.amax() + self.ineq_b.amax()
    }

    pub(crate) fn contains(&self, x: &Vector, tol: f64) -> bool {
        let s = tol * self.scale(x);
        let eq_ok = self.eq_a.nrows() == 0 || (&self.eq_a * x - &self.eq_b).amax() <= s;
        let ineq_ok = self.ineq_a.nrows() == 0 || (&self.ineq_a * x - &self.ineq_b).max() <= s;
        eq_ok && ineq_ok
    }

    fn rank(&self) -> usize {
        if self.eq_a.nrows() == 0 {
            return 0;
        }
        let sv = linalg::singular_values(&self.eq_a);
        let top = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|s| **s > 1e-10 * top.max(1e-300)).count()
    }

    /// Orthonormal basis of the directions along which the equalities hold.
    pub(crate) fn free_directions(&self) -> Vec<Vector> {
        let n = self.eq_a.ncols();
        if self.eq_a.nrows() == 0 {
            return (0..n).map(|i| Vector::from_vec(unit(n, i, 1.0))).collect();
        }
        let gram = self.eq_a.transpose() * &self.eq_a;
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.amax().max(1e-300);
        (0..n)
            .filter(|&i| eig.eigenvalues[i] <= 1e-12 * top)
            .map(|i| eig.eigenvectors.column(i).into_owned())
            .collect()
    }

    fn project(&self, y: &Vector) -> Option<Vector> {
        let k = self.ineq_a.nrows();
        let e = self.eq_a.nrows();
        let n = y.len();
        let mut a = Matrix::zeros(k + 2 * e, n);
        let mut b = Vector::zeros(k + 2 * e);
        a.rows_mut(0, k).copy_from(&self.ineq_a);
        b.rows_mut(0, k).copy_from(&self.ineq_b);
        a.rows_mut(k, e).copy_from(&self.eq_a);
        b.rows_mut(k, e).copy_from(&self.eq_b);
        a.rows_mut(k + e, e).copy_from(&-&self.eq_a);
        b.rows_mut(k + e, e).copy_from(&-&self.eq_b);
        linalg::project_polyhedron(&a, &b, y).ok().flatten()
    }

    /// Grid points projected on the equality subspace plus projections of
    /// the box center and corners.
    fn points(&self, lower: &Vector, upper: &Vector, per_axis: usize) -> Vec<Vector> {
        let n = lower.len();
        let e = self.eq_a.nrows();
        if e > 0 && self.rank() == n {
            return linalg::least_norm_solve(&self.eq_a, &self.eq_b)
                .ok()
                .filter(|x| self.contains(x, 1e-9))
                .into_iter()
                .collect();
        }
        let pinv = if e > 0 {
            linalg::pseudo_inverse(&self.eq_a).ok()
        } else {
            None
        };
        let mut out = Vec::new();
        for q in box_grid(lower, upper, per_axis) {
            let z = match &pinv {
                Some(p) => &q - p * (&self.eq_a * &q - &self.eq_b),
                None => q,
            };
            if self.contains(&z, 1e-12) {
                out.push(z);
            }
        }
        for anchor in box_anchors(lower, upper) {
            if let Some(z) = self.project(&anchor) {
                if self.contains(&z, 1e-9) {
                    out.push(z);
                }
            }
        }
        out
    }
}

/// Per-axis grid of a box with both endpoints, capped in total size.
pub(crate) fn box_grid(lower: &Vector, upper: &Vector, per_axis: usize) -> Vec<Vector> {
    let n = lower.len();
    let cap = (MAX_GRID_POINTS as f64).powf(1.0 / n.max(1) as f64).floor() as usize;
    let k = per_axis.clamp(2, cap.max(2));
    let axis = |i: usize| -> Vec<f64> {
        if upper[i] == lower[i] {
            return vec![lower[i]];
        }
        (0..k)
            .map(|j| {
                if j == k - 1 {
                    upper[i]
                } else {
                    lower[i] + (upper[i] - lower[i]) * j as f64 / (k - 1) as f64
                }
            })
            .collect()
    };
    let axes: Vec<Vec<f64>> = (0..n).map(axis).collect();
    let mut out = vec![Vector::zeros(n)];
    for (i, ax) in axes.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|v| {
                ax.iter().map(move |&t| {
                    let mut w = v.clone();
                    w[i] = t;
                    w
                })
            })
            .collect();
    }
    out
}

fn box_anchors(lower: &Vector, upper: &Vector) -> Vec<Vector> {
    let n = lower.len();
    let mut out = vec![(lower + upper) * 0.5];
    if n <= 10 {
        for mask in 0..(1usize << n) {
            out.push(Vector::from_iterator(
                n,
                (0..n).map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] }),
            ));
        }
    }
    out
}

/// Branches of `h(x) ∈ N(x; box)` for `h(x) = H x + k`.
fn box_normal_branches(h: &Matrix, k: &Vector, lo: &[f64], up: &[f64], base: PieceBuilder) -> Vec<PieceBuilder> {
    let n = lo.len();
    let mut out = vec![base];
    for i in 0..n {
        let mut next = Vec::with_capacity(out.len() * 3);
        for b in out {
            if lo[i] == up[i] {
                let mut c = b;
                c.eq(unit(n, i, 1.0), lo[i]);
                next.push(c);
                continue;
            }
            let mut interior = b.clone();
            interior.eq(row(h, i, 1.0), -k[i]);
            if up[i].is_finite() {
                interior.ineq(unit(n, i, 1.0), up[i]);
            }
            if lo[i].is_finite() {
                interior.ineq(unit(n, i, -1.0), -lo[i]);
            }
            next.push(interior);
            if lo[i].is_finite() {
                let mut c = b.clone();
                c.eq(unit(n, i, 1.0), lo[i]);
                c.ineq(row(h, i, 1.0), -k[i]);
                next.push(c);
            }
            if up[i].is_finite() {
                let mut c = b;
                c.eq(unit(n, i, 1.0), up[i]);
                c.ineq(row(h, i, -1.0), k[i]);
                next.push(c);
            }
        }
        out = next;
    }
    out
}

/// Branch decomposition of `g(x) ∈ F(x)` with `g(x) = M x + c`; `None` when
/// the class is not enumerable.
fn branches(map: &SetValuedMap, affine: Option<&(Matrix, Vector)>, n: usize) -> Option<Vec<PieceBuilder>> {
    let mut base = PieceBuilder::default();
    match map {
        SetValuedMap::ConstantSet {
            set: ConvexSet::WholeSpace(_),
            ..
        } => Some(vec![base]),
        SetValuedMap::ConstantSet { set, .. } => {
            let (m, c) = affine?;
            match set {
                ConvexSet::Singleton(s) => {
                    for i in 0..m.nrows() {
                        base.eq(row(m, i, 1.0), s[i] - c[i]);
                    }
                }
                ConvexSet::Box { lower, upper } => {
                    for i in 0..m.nrows() {
                        if upper[i].is_finite() {
                            base.ineq(row(m, i, 1.0), upper[i] - c[i]);
                        }
                        if lower[i].is_finite() {
                            base.ineq(row(m, i, -1.0), c[i] - lower[i]);
                        }
                    }
                }
                ConvexSet::Polyhedron { a, b } => {
                    let am = a * m;
                    let rhs = b - a * c;
                    for i in 0..am.nrows() {
                        base.ineq(row(&am, i, 1.0), rhs[i]);
                    }
                }
                ConvexSet::WholeSpace(_) => unreachable!("handled above"),
            }
            Some(vec![base])
        }
        SetValuedMap::Affine { a, b } => {
            let (m, c) = affine?;
            let d = a - m;
            for i in 0..d.nrows() {
                base.eq(row(&d, i, 1.0), c[i] - b[i]);
            }
            Some(vec![base])
        }
        SetValuedMap::NormalCone(set) | SetValuedMap::IdentityPlusNormalCone(set) => {
            let (m, c) = affine?;
            if n > MAX_BRANCH_DIM {
                return None;
            }
            let h = if matches!(map, SetValuedMap::IdentityPlusNormalCone(_)) {
                m - Matrix::identity(n, n)
            } else {
                m.clone()
            };
            match set {
                ConvexSet::WholeSpace(_) => {
                    for i in 0..n {
                        base.eq(row(&h, i, 1.0), -c[i]);
                    }
                    Some(vec![base])
                }
                ConvexSet::Singleton(s) => {
                    for i in 0..n {
                        base.eq(unit(n, i, 1.0), s[i]);
                    }
                    Some(vec![base])
                }
                ConvexSet::Box { lower, upper } => {
                    Some(box_normal_branches(&h, c, lower.as_slice(), upper.as_slice(), base))
                }
                ConvexSet::Polyhedron { .. } => None,
            }
        }
        SetValuedMap::Negate(inner) => {
            let neg = affine.map(|(m, c)| (-m, -c));
            branches(inner, neg.as_ref(), n)
        }
        _ => None,
    }
}

/// `x ↦ F(x) − g(x, p)` for single-valued smooth `F`.
#[derive(Debug)]
struct ConstraintResidual<'a> {
    map: &'a SetValuedMap,
    g: &'a dyn ParamFn,
    p: &'a Vector,
}

impl SmoothFn for ConstraintResidual<'_> {
    fn input_dim(&self) -> usize {
        self.map.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.map.output_dim()
    }
    fn eval(&self, x: &Vector) -> Vector {
        self.map.single_value(x).expect("single-valued map") - self.g.eval(x, self.p)
    }
    fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        Some(self.map.smooth_jacobian(x)? - jacobian_x_of(self.g, x, self.p))
    }
}

/// Feasible points with the index of the polyhedral piece each came from.
#[derive(Debug, Clone)]
pub(crate) struct FeasibleDetail {
    pub points: Vec<Vector>,
    pub pieces: Option<Vec<Piece>>,
    pub owner: Vec<usize>,
}

pub(crate) fn residual(map: &SetValuedMap, g: &dyn ParamFn, x: &Vector, p: &Vector) -> f64 {
    evaluate_distance(map, x, &g.eval(x, p)).unwrap_or(f64::INFINITY)
}

fn in_box(x: &Vector, lower: &Vector, upper: &Vector) -> bool {
    x.iter()
        .zip(lower.iter().zip(upper.iter()))
        .all(|(v, (l, u))| *v >= *l && *v <= *u)
}

fn clamp_to_box(x: &Vector, lower: &Vector, upper: &Vector) -> Vector {
    Vector::from_iterator(
        x.len(),
        x.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(v, (l, u))| v.clamp(*l, *u) + 0.0),
    )
}

pub(crate) fn feasible_detail(
    map: &SetValuedMap,
    g: &ParamMap,
    p: &Vector,
    lower: &Vector,
    upper: &Vector,
    per_axis: usize,
) -> FeasibleDetail {
    let gf = g.single_fn().expect("single-valued constraint map").clone();
    let n = lower.len();
    let affine = gf.affine_in_x(p);
    let mut detail = match branches(map, affine.as_ref(), n) {
        Some(builders) => {
            let mut pieces = Vec::with_capacity(builders.len());
            let mut points = Vec::new();
            let mut owner = Vec::new();
            for mut b in builders {
                for i in 0..n {
                    b.ineq(unit(n, i, 1.0), upper[i]);
                    b.ineq(unit(n, i, -1.0), -lower[i]);
                }
                let piece = b.build(n);
                for x in piece.points(lower, upper, per_axis) {
                    points.push(clamp_to_box(&x, lower, upper));
                    owner.push(pieces.len());
                }
                pieces.push(piece);
            }
            FeasibleDetail {
                points,
                pieces: Some(pieces),
                owner,
            }
        }
        None => fallback(map, &gf, p, lower, upper, per_axis),
    };
    let keep: Vec<bool> = detail
        .points
        .iter()
        .map(|x| residual(map, gf.as_ref(), x, p) <= FEASIBILITY_TOL)
        .collect();
    let mut seen = std::collections::HashSet::new();
    let mut points = Vec::new();
    let mut owner = Vec::new();
    for ((x, o), k) in detail.points.drain(..).zip(detail.owner.drain(..)).zip(keep) {
        let key: Vec<u64> = x.iter().map(|v| (v + 0.0).to_bits()).collect();
        if k && seen.insert(key) {
            points.push(x);
            owner.push(o);
        }
    }
    FeasibleDetail {
        points,
        pieces: detail.pieces,
        owner,
    }
}

fn fallback(
    map: &SetValuedMap,
    g: &Arc<dyn ParamFn>,
    p: &Vector,
    lower: &Vector,
    upper: &Vector,
    per_axis: usize,
) -> FeasibleDetail {
    let grid = box_grid(lower, upper, per_axis);
    let mut scored: Vec<(f64, Vector)> = grid
        .into_iter()
        .map(|x| (residual(map, g.as_ref(), &x, p), x))
        .collect();
    let mut points: Vec<Vector> = scored
        .iter()
        .filter(|(r, _)| *r <= FEASIBILITY_TOL)
        .map(|(_, x)| x.clone())
        .collect();
    scored.retain(|(r, _)| r.is_finite() && *r > FEASIBILITY_TOL);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, seed) in scored.into_iter().take(FALLBACK_SEEDS) {
        if let Some(x) = refine_seed(map, g, p, &seed) {
            if in_box(&x, lower, upper) {
                points.push(x);
            }
        }
    }
    let owner = vec![0; points.len()];
    FeasibleDetail {
        points,
        pieces: None,
        owner,
    }
}

fn refine_seed(map: &SetValuedMap, g: &Arc<dyn ParamFn>, p: &Vector, seed: &Vector) -> Option<Vector> {
    if map.is_single_valued() && map.smooth_jacobian(seed).is_some() {
        let h = ConstraintResidual { map, g: g.as_ref(), p };
        let out = oracle::gauss_newton(&h, seed, &Vector::zeros(map.output_dim()), None, 100).ok()?;
        return (out.residual <= 1e-12).then_some(out.z);
    }
    let ybar = map.evaluate(seed).ok()?.project(&g.eval(seed, p)).ok()?;
    let cfg = SolverConfig {
        trust_radius: Some(f64::INFINITY),
        schedule: SamplingSchedule::halving(0.5, 4, 64, SamplingSchedule::default().seed),
        ..SolverConfig::default()
    };
    let gm = ParamMap::SingleValued(g.clone());
    solve_coincidence(map, &gm, seed, &ybar, p, &cfg).ok().map(|r| r.sigma)
}
