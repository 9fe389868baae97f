//! Closed convex sets, finitely generated cones and the values taken by
//! set-valued maps.

use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::{self, Matrix, Vector};

/// Tolerance for membership and for detecting active constraints.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// A closed convex set in ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    WholeSpace(usize),
    Singleton(Vector),
    Box {
        lower: Vector,
        upper: Vector,
    },
    /// `{z : a z <= b}`
    Polyhedron {
        a: Matrix,
        b: Vector,
    },
}

impl ConvexSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let set = ConvexSet::Box {
            lower: Vector::from_vec(lower),
            upper: Vector::from_vec(upper),
        };
        set.validate()?;
        Ok(set)
    }

    /// The nonnegative orthant `[0, ∞)ⁿ`.
    pub fn nonneg_orthant(dim: usize) -> Self {
        ConvexSet::Box {
            lower: Vector::zeros(dim),
            upper: Vector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::WholeSpace(n) => *n,
            ConvexSet::Singleton(p) => p.len(),
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Polyhedron { a, .. } => a.ncols(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::WholeSpace(n) => {
                if *n == 0 {
                    return Err(CovaraError::InvalidInput("zero-dimensional space".into()));
                }
            }
            ConvexSet::Singleton(p) => {
                if p.is_empty() || !linalg::all_finite(p) {
                    return Err(CovaraError::InvalidInput("singleton must be finite".into()));
                }
            }
            ConvexSet::Box { lower, upper } => {
                check_dim("box bounds", lower.len(), upper.len())?;
                if lower.is_empty() {
                    return Err(CovaraError::InvalidInput("empty box dimension".into()));
                }
                for (l, u) in lower.iter().zip(upper.iter()) {
                    if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                        return Err(CovaraError::InvalidInput(format!(
                            "box requires lower <= upper, got [{l}, {u}]"
                        )));
                    }
                }
            }
            ConvexSet::Polyhedron { a, b } => {
                check_dim("polyhedron rows", a.nrows(), b.len())?;
                if a.ncols() == 0 || a.iter().any(|x| !x.is_finite()) || b.iter().any(|x| x.is_nan()) {
                    return Err(CovaraError::InvalidInput("polyhedron data must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Constraint violation of `z` (0 inside the set).
    pub fn violation(&self, z: &Vector) -> f64 {
        match self {
            ConvexSet::WholeSpace(_) => 0.0,
            ConvexSet::Singleton(p) => (z - p).amax(),
            ConvexSet::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
                .fold(0.0, f64::max),
            ConvexSet::Polyhedron { a, b } => (a * z - b).iter().fold(0.0, |m, v| m.max(*v)),
        }
    }

    pub fn contains(&self, z: &Vector, tol: f64) -> bool {
        self.violation(z) <= tol
    }

    /// True when the set is a convex cone (closed under addition and
    /// nonnegative scaling).
    pub fn is_cone(&self) -> bool {
        match self {
            ConvexSet::WholeSpace(_) => true,
            ConvexSet::Singleton(p) => p.iter().all(|v| *v == 0.0),
            ConvexSet::Box { lower, upper } => lower.iter().chain(upper.iter()).all(|v| *v == 0.0 || v.is_infinite()),
            ConvexSet::Polyhedron { b, .. } => b.iter().all(|v| *v == 0.0),
        }
    }

    pub fn to_value(&self) -> SetValue {
        match self {
            ConvexSet::WholeSpace(n) => SetValue::Box {
                lower: Vector::from_element(*n, f64::NEG_INFINITY),
                upper: Vector::from_element(*n, f64::INFINITY),
            },
            ConvexSet::Singleton(p) => SetValue::Point(p.clone()),
            ConvexSet::Box { lower, upper } => SetValue::Box {
                lower: lower.clone(),
                upper: upper.clone(),
            },
            ConvexSet::Polyhedron { a, b } => SetValue::Polyhedron {
                a: a.clone(),
                b: b.clone(),
            },
        }
    }
}

/// `{ Σ λᵢ gᵢ + Σ μⱼ lⱼ : λ >= 0, μ free }`; no generators means `{0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSpec {
    pub dim: usize,
    pub generators: Vec<Vector>,
    pub lineality: Vec<Vector>,
}

impl ConeSpec {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            generators: Vec::new(),
            lineality: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.generators.iter().chain(&self.lineality).all(|g| g.amax() == 0.0)
    }

    /// Nearest point of the cone to `w`.
    pub fn project(&self, w: &Vector) -> Result<Vector> {
        check_dim("cone projection", self.dim, w.len())?;
        let n = self.dim;
        let lin = if self.lineality.is_empty() {
            None
        } else {
            Some(Matrix::from_columns(&self.lineality))
        };
        // Projector onto the orthogonal complement of the lineality space.
        let perp = match &lin {
            Some(l) => Matrix::identity(n, n) - l * linalg::pseudo_inverse(l)?,
            None => Matrix::identity(n, n),
        };
        let mut point = Vector::zeros(n);
        if !self.generators.is_empty() {
            let g = Matrix::from_columns(&self.generators);
            let lambda = linalg::nnls(&(&perp * &g), &(&perp * w))?;
            point = g * lambda;
        }
        if let Some(l) = &lin {
            let mu = linalg::least_norm_solve(l, &(w - &point))?;
            point += l * mu;
        }
        Ok(point)
    }

    pub fn negated(&self) -> Self {
        Self {
            dim: self.dim,
            generators: self.generators.iter().map(|g| -g).collect(),
            lineality: self.lineality.clone(),
        }
    }

    /// Cone membership of `w` within `tol`.
    pub fn contains(&self, w: &Vector, tol: f64) -> bool {
        self.project(w).map(|p| (p - w).norm() <= tol).unwrap_or(false)
    }
}

/// Value `F(x)` of a set-valued map: empty or a closed convex set.
#[derive(Debug, Clone, PartialEq)]
pub enum SetValue {
    Empty,
    Point(Vector),
    Box {
        lower: Vector,
        upper: Vector,
    },
    Polyhedron {
        a: Matrix,
        b: Vector,
    },
    /// `apex + cone`
    Cone {
        apex: Vector,
        cone: ConeSpec,
    },
}

impl SetValue {
    pub fn is_empty(&self) -> bool {
        matches!(self, SetValue::Empty)
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            SetValue::Empty => None,
            SetValue::Point(p) => Some(p.len()),
            SetValue::Box { lower, .. } => Some(lower.len()),
            SetValue::Polyhedron { a, .. } => Some(a.ncols()),
            SetValue::Cone { apex, .. } => Some(apex.len()),
        }
    }

    /// Nearest point to `y`. Convex values have a unique nearest point, so no
    /// tie-breaking is needed.
    pub fn project(&self, y: &Vector) -> Result<Vector> {
        if let Some(d) = self.dim() {
            check_dim("projection target", d, y.len())?;
        }
        match self {
            SetValue::Empty => Err(CovaraError::EmptyValue),
            SetValue::Point(p) => Ok(p.clone()),
            SetValue::Box { lower, upper } => Ok(Vector::from_iterator(
                y.len(),
                y.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(v, (l, u))| v.clamp(*l, *u)),
            )),
            SetValue::Polyhedron { a, b } => linalg::project_polyhedron(a, b, y)?.ok_or(CovaraError::EmptyValue),
            SetValue::Cone { apex, cone } => Ok(apex + cone.project(&(y - apex))?),
        }
    }

    /// Euclidean distance from `y`; `+∞` for the empty value.
    pub fn distance(&self, y: &Vector) -> Result<f64> {
        match self.project(y) {
            Ok(p) => Ok((p - y).norm()),
            Err(CovaraError::EmptyValue) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    pub fn contains(&self, y: &Vector, tol: f64) -> bool {
        self.distance(y).map(|d| d <= tol).unwrap_or(false)
    }

    pub fn translate(self, v: &Vector) -> Result<SetValue> {
        if let Some(d) = self.dim() {
            check_dim("translation", d, v.len())?;
        }
        Ok(match self {
            SetValue::Empty => SetValue::Empty,
            SetValue::Point(p) => SetValue::Point(p + v),
            SetValue::Box { lower, upper } => SetValue::Box {
                lower: lower + v,
                upper: upper + v,
            },
            SetValue::Polyhedron { a, b } => {
                let shift = &a * v;
                SetValue::Polyhedron { a, b: b + shift }
            }
            SetValue::Cone { apex, cone } => SetValue::Cone { apex: apex + v, cone },
        })
    }

    pub fn negate(self) -> SetValue {
        match self {
            SetValue::Empty => SetValue::Empty,
            SetValue::Point(p) => SetValue::Point(-p),
            SetValue::Box { lower, upper } => SetValue::Box {
                lower: -upper,
                upper: -lower,
            },
            SetValue::Polyhedron { a, b } => SetValue::Polyhedron { a: -a, b },
            SetValue::Cone { apex, cone } => SetValue::Cone {
                apex: -apex,
                cone: cone.negated(),
            },
        }
    }

    pub fn scale(self, c: f64) -> SetValue {
        assert!(c > 0.0, "scale factor must be positive");
        match self {
            SetValue::Empty => SetValue::Empty,
            SetValue::Point(p) => SetValue::Point(p * c),
            SetValue::Box { lower, upper } => SetValue::Box {
                lower: lower * c,
                upper: upper * c,
            },
            SetValue::Polyhedron { a, b } => SetValue::Polyhedron { a, b: b * c },
            SetValue::Cone { apex, cone } => SetValue::Cone { apex: apex * c, cone },
        }
    }

    /// Minkowski sum for the pairs of value classes that stay representable.
    pub fn minkowski_sum(self, other: SetValue) -> Result<SetValue> {
        use SetValue::*;
        if let (Some(a), Some(b)) = (self.dim(), other.dim()) {
            check_dim("minkowski sum", a, b)?;
        }
        match (self, other) {
            (Empty, _) | (_, Empty) => Ok(Empty),
            (Point(p), v) | (v, Point(p)) => v.translate(&p),
            (Box { lower: l1, upper: u1 }, Box { lower: l2, upper: u2 }) => Ok(Box {
                lower: l1 + l2,
                upper: u1 + u2,
            }),
            (Cone { apex: a1, cone: c1 }, Cone { apex: a2, cone: c2 }) => {
                let mut cone = c1;
                cone.generators.extend(c2.generators);
                cone.lineality.extend(c2.lineality);
                Ok(Cone { apex: a1 + a2, cone })
            }
            (a, b) => Err(CovaraError::UnsupportedMapClass {
                operation: "minkowski sum",
                class: format!("{} + {}", a.class_name(), b.class_name()),
            }),
        }
    }

    pub fn class_name(&self) -> &'static str {
        match self {
            SetValue::Empty => "empty",
            SetValue::Point(_) => "point",
            SetValue::Box { .. } => "box",
            SetValue::Polyhedron { .. } => "polyhedron",
            SetValue::Cone { .. } => "cone",
        }
    }

    /// Points of the value near `anchor`: the projection of the anchor and of
    /// its perturbations along `directions` scaled by `radius`.
    pub fn sample_near(&self, anchor: &Vector, directions: &[Vector], radius: f64) -> Result<Vec<Vector>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = vec![self.project(anchor)?];
        if matches!(self, SetValue::Point(_)) {
            return Ok(out);
        }
        for d in directions {
            let p = self.project(&(anchor + d * radius))?;
            if out.iter().all(|q| (q - &p).norm() > 1e-12) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Classical normal cone of a closed convex set at `z`.
pub fn normal_cone(set: &ConvexSet, z: &Vector) -> Result<ConeSpec> {
    set.validate()?;
    check_dim("normal cone point", set.dim(), z.len())?;
    let violation = set.violation(z);
    if violation > MEMBERSHIP_TOL {
        return Err(CovaraError::PointNotInSet { violation });
    }
    let n = z.len();
    let unit = |i: usize, s: f64| {
        let mut v = Vector::zeros(n);
        v[i] = s;
        v
    };
    let mut cone = ConeSpec::zero(n);
    match set {
        ConvexSet::WholeSpace(_) => {}
        ConvexSet::Singleton(_) => cone.lineality = (0..n).map(|i| unit(i, 1.0)).collect(),
        ConvexSet::Box { lower, upper } => {
            for i in 0..n {
                if lower[i] == upper[i] {
                    cone.lineality.push(unit(i, 1.0));
                    continue;
                }
                if (z[i] - lower[i]).abs() <= MEMBERSHIP_TOL {
                    cone.generators.push(unit(i, -1.0));
                }
                if (z[i] - upper[i]).abs() <= MEMBERSHIP_TOL {
                    cone.generators.push(unit(i, 1.0));
                }
            }
        }
        ConvexSet::Polyhedron { a, b } => {
            for i in 0..a.nrows() {
                let slack = b[i] - (a.row(i) * z)[0];
                if slack.abs() <= MEMBERSHIP_TOL {
                    cone.generators.push(a.row(i).transpose());
                }
            }
        }
    }
    Ok(cone)
}
