use std::fmt;
use std::sync::Arc;

use super::sets::{normal_cone, ConvexSet, SetValue, MEMBERSHIP_TOL};
use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::{self, Matrix, Vector};

/// A smooth single-valued map `ℝⁿ → ℝᵐ`.
pub trait SmoothFn: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;

    /// Analytic Jacobian, when known.
    fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        let _ = x;
        None
    }

    /// All preimages of `y`, when a closed-form inverse is known.
    fn preimages(&self, y: &Vector) -> Option<Vec<Vector>> {
        let _ = y;
        None
    }
}

/// A single-valued parameterized map `(x, p) ↦ g(x, p)`.
pub trait ParamFn: Send + Sync + fmt::Debug {
    fn x_dim(&self) -> usize;
    fn p_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &Vector, p: &Vector) -> Vector;

    fn jacobian_x(&self, x: &Vector, p: &Vector) -> Option<Matrix> {
        let _ = (x, p);
        None
    }

    /// `(M, c)` with `g(x, p) = M x + c` for every `x`, when `g(·, p)` is affine.
    fn affine_in_x(&self, p: &Vector) -> Option<(Matrix, Vector)> {
        let _ = p;
        None
    }
}

/// A parameter-dependent convex set `p ↦ C(p)`.
pub trait SetFamily: Send + Sync + fmt::Debug {
    fn p_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn at(&self, p: &Vector) -> ConvexSet;
}

fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central finite-difference Jacobian with step `1e-6 (1 + |xᵢ|)`.
pub fn finite_difference_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector, m: usize) -> Matrix {
    let n = x.len();
    let mut j = Matrix::zeros(m, n);
    for i in 0..n {
        let h = fd_step(x[i]);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        j.set_column(i, &col);
    }
    j
}

/// Jacobian of a smooth map: analytic if provided, finite differences otherwise.
pub fn jacobian_of(f: &dyn SmoothFn, x: &Vector) -> Matrix {
    f.jacobian(x)
        .unwrap_or_else(|| finite_difference_jacobian(|z| f.eval(z), x, f.output_dim()))
}

/// x-Jacobian of a parameterized map.
pub fn jacobian_x_of(g: &dyn ParamFn, x: &Vector, p: &Vector) -> Matrix {
    g.jacobian_x(x, p)
        .unwrap_or_else(|| finite_difference_jacobian(|z| g.eval(z, p), x, g.output_dim()))
}

type VecFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type MatFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// Closure-backed smooth map.
#[derive(Clone)]
pub struct FnSmooth {
    name: String,
    input_dim: usize,
    output_dim: usize,
    f: Arc<VecFn>,
    jac: Option<Arc<MatFn>>,
}

impl FnSmooth {
    pub fn new(
        name: impl Into<String>,
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            input_dim,
            output_dim,
            f: Arc::new(f),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl fmt::Debug for FnSmooth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnSmooth({}: ℝ{} → ℝ{})", self.name, self.input_dim, self.output_dim)
    }
}

impl SmoothFn for FnSmooth {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
    fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        self.jac.as_ref().map(|j| j(x))
    }
}

type ParamVecFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;
type ParamMatFn = dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync;

/// Closure-backed parameterized map.
#[derive(Clone)]
pub struct FnParam {
    name: String,
    x_dim: usize,
    p_dim: usize,
    output_dim: usize,
    f: Arc<ParamVecFn>,
    jac_x: Option<Arc<ParamMatFn>>,
    affine: bool,
}

impl FnParam {
    pub fn new(
        name: impl Into<String>,
        x_dim: usize,
        p_dim: usize,
        output_dim: usize,
        f: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            x_dim,
            p_dim,
            output_dim,
            f: Arc::new(f),
            jac_x: None,
            affine: false,
        }
    }

    pub fn with_jacobian_x(mut self, jac: impl Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jac_x = Some(Arc::new(jac));
        self
    }

    /// Declares `g(·, p)` affine for every `p`; enables exact feasible-set
    /// enumeration.
    pub fn affine_in_x(mut self) -> Self {
        self.affine = true;
        self
    }

    /// `g(x, p) = p`.
    pub fn parameter(dim: usize) -> Self {
        Self::new("p", dim, dim, dim, |_, p| p.clone())
            .with_jacobian_x(move |_, _| Matrix::zeros(dim, dim))
            .affine_in_x()
    }

    /// `g(x, p) = A x + B p + c`.
    pub fn linear(a: Matrix, b: Matrix, c: Vector) -> Self {
        let (m, n) = a.shape();
        let d = b.ncols();
        let a2 = a.clone();
        Self::new("linear", n, d, m, move |x, p| &a * x + &b * p + &c)
            .with_jacobian_x(move |_, _| a2.clone())
            .affine_in_x()
    }
}

impl fmt::Debug for FnParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FnParam({}: ℝ{} × ℝ{} → ℝ{})",
            self.name, self.x_dim, self.p_dim, self.output_dim
        )
    }
}

impl ParamFn for FnParam {
    fn x_dim(&self) -> usize {
        self.x_dim
    }
    fn p_dim(&self) -> usize {
        self.p_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval(&self, x: &Vector, p: &Vector) -> Vector {
        (self.f)(x, p)
    }
    fn jacobian_x(&self, x: &Vector, p: &Vector) -> Option<Matrix> {
        self.jac_x.as_ref().map(|j| j(x, p))
    }
    fn affine_in_x(&self, p: &Vector) -> Option<(Matrix, Vector)> {
        if !self.affine {
            return None;
        }
        let zero = Vector::zeros(self.x_dim);
        let m = jacobian_x_of(self, &zero, p);
        Some((m, self.eval(&zero, p)))
    }
}

/// `x ↦ ½ (x₁² − x₂², 2 x₁ x₂)`, i.e. `z ↦ z²/2` on ℂ ≅ ℝ².
///
/// Both singular values of its Jacobian equal `|x|`; the image of `B(0, r)`
/// is `B(0, r²/2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfComplexSquare;

impl SmoothFn for HalfComplexSquare {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![0.5 * (x[0] * x[0] - x[1] * x[1]), x[0] * x[1]])
    }
    fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        Some(Matrix::from_row_slice(2, 2, &[x[0], -x[1], x[1], x[0]]))
    }
    fn preimages(&self, y: &Vector) -> Option<Vec<Vector>> {
        // z² = 2y: principal complex square root and its negative.
        let (re, im) = (2.0 * y[0], 2.0 * y[1]);
        let modulus = re.hypot(im);
        let a = ((modulus + re) / 2.0).max(0.0).sqrt();
        let b = ((modulus - re) / 2.0)
            .max(0.0)
            .sqrt()
            .copysign(if im == 0.0 { 1.0 } else { im });
        let root = Vector::from_vec(vec![a, b]);
        Some(vec![root.clone(), -root])
    }
}

/// Declarative set-valued map `F: ℝⁿ ⇉ ℝᵐ`.
#[derive(Debug, Clone)]
pub enum SetValuedMap {
    Smooth(Arc<dyn SmoothFn>),
    Affine {
        a: Matrix,
        b: Vector,
    },
    ConstantSet {
        input_dim: usize,
        set: ConvexSet,
    },
    /// `x ↦ N(x; set)`, empty outside the set.
    NormalCone(ConvexSet),
    Sum(Box<SetValuedMap>, Box<SetValuedMap>),
    Negate(Box<SetValuedMap>),
    /// `x ↦ x + N(x; set)`.
    IdentityPlusNormalCone(ConvexSet),
}

impl SetValuedMap {
    pub fn smooth(f: impl SmoothFn + 'static) -> Self {
        SetValuedMap::Smooth(Arc::new(f))
    }

    pub fn affine(a: Matrix, b: Vector) -> Self {
        SetValuedMap::Affine { a, b }
    }

    pub fn identity(n: usize) -> Self {
        SetValuedMap::Affine {
            a: Matrix::identity(n, n),
            b: Vector::zeros(n),
        }
    }

    pub fn sum(left: SetValuedMap, right: SetValuedMap) -> Self {
        SetValuedMap::Sum(Box::new(left), Box::new(right))
    }

    pub fn negate(inner: SetValuedMap) -> Self {
        SetValuedMap::Negate(Box::new(inner))
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SetValuedMap::Smooth(f) => f.input_dim(),
            SetValuedMap::Affine { a, .. } => a.ncols(),
            SetValuedMap::ConstantSet { input_dim, .. } => *input_dim,
            SetValuedMap::NormalCone(s) | SetValuedMap::IdentityPlusNormalCone(s) => s.dim(),
            SetValuedMap::Sum(l, _) => l.input_dim(),
            SetValuedMap::Negate(i) => i.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SetValuedMap::Smooth(f) => f.output_dim(),
            SetValuedMap::Affine { a, .. } => a.nrows(),
            SetValuedMap::ConstantSet { set, .. } => set.dim(),
            SetValuedMap::NormalCone(s) | SetValuedMap::IdentityPlusNormalCone(s) => s.dim(),
            SetValuedMap::Sum(l, _) => l.output_dim(),
            SetValuedMap::Negate(i) => i.output_dim(),
        }
    }

    pub fn class_name(&self) -> String {
        match self {
            SetValuedMap::Smooth(_) => "smooth".into(),
            SetValuedMap::Affine { .. } => "affine".into(),
            SetValuedMap::ConstantSet { .. } => "constant_set".into(),
            SetValuedMap::NormalCone(_) => "normal_cone".into(),
            SetValuedMap::Sum(l, r) => format!("sum({}, {})", l.class_name(), r.class_name()),
            SetValuedMap::Negate(i) => format!("negate({})", i.class_name()),
            SetValuedMap::IdentityPlusNormalCone(_) => "identity_plus_normal_cone".into(),
        }
    }

    /// Checks dimensional consistency of the whole expression tree.
    pub fn validate(&self) -> Result<()> {
        match self {
            SetValuedMap::Smooth(f) => {
                if f.input_dim() == 0 || f.output_dim() == 0 {
                    return Err(CovaraError::InvalidInput("smooth map with zero dimension".into()));
                }
            }
            SetValuedMap::Affine { a, b } => {
                check_dim("affine offset", a.nrows(), b.len())?;
                if a.ncols() == 0 || a.nrows() == 0 {
                    return Err(CovaraError::InvalidInput("affine map with zero dimension".into()));
                }
                if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                    return Err(CovaraError::InvalidInput("affine data must be finite".into()));
                }
            }
            SetValuedMap::ConstantSet { input_dim, set } => {
                if *input_dim == 0 {
                    return Err(CovaraError::InvalidInput(
                        "constant map with zero input dimension".into(),
                    ));
                }
                set.validate()?;
            }
            SetValuedMap::NormalCone(s) | SetValuedMap::IdentityPlusNormalCone(s) => s.validate()?,
            SetValuedMap::Sum(l, r) => {
                l.validate()?;
                r.validate()?;
                check_dim("sum input", l.input_dim(), r.input_dim())?;
                check_dim("sum output", l.output_dim(), r.output_dim())?;
            }
            SetValuedMap::Negate(i) => i.validate()?,
        }
        Ok(())
    }

    /// The value `F(x)`.
    pub fn evaluate(&self, x: &Vector) -> Result<SetValue> {
        check_dim("map argument", self.input_dim(), x.len())?;
        Ok(match self {
            SetValuedMap::Smooth(f) => SetValue::Point(f.eval(x)),
            SetValuedMap::Affine { a, b } => SetValue::Point(a * x + b),
            SetValuedMap::ConstantSet { set, .. } => set.to_value(),
            SetValuedMap::NormalCone(set) => {
                if set.violation(x) > MEMBERSHIP_TOL {
                    SetValue::Empty
                } else {
                    SetValue::Cone {
                        apex: Vector::zeros(x.len()),
                        cone: normal_cone(set, x)?,
                    }
                }
            }
            SetValuedMap::IdentityPlusNormalCone(set) => {
                if set.violation(x) > MEMBERSHIP_TOL {
                    SetValue::Empty
                } else {
                    SetValue::Cone {
                        apex: x.clone(),
                        cone: normal_cone(set, x)?,
                    }
                }
            }
            SetValuedMap::Sum(l, r) => l.evaluate(x)?.minkowski_sum(r.evaluate(x)?)?,
            SetValuedMap::Negate(i) => i.evaluate(x)?.negate(),
        })
    }

    /// `Some(F(x))` when the map is single-valued everywhere.
    pub fn single_value(&self, x: &Vector) -> Option<Vector> {
        match self {
            SetValuedMap::Smooth(f) => Some(f.eval(x)),
            SetValuedMap::Affine { a, b } => Some(a * x + b),
            SetValuedMap::Sum(l, r) => Some(l.single_value(x)? + r.single_value(x)?),
            SetValuedMap::Negate(i) => Some(-i.single_value(x)?),
            _ => None,
        }
    }

    /// Jacobian of a single-valued smooth map (Smooth, Affine and their sums
    /// and negations).
    pub fn smooth_jacobian(&self, x: &Vector) -> Option<Matrix> {
        match self {
            SetValuedMap::Smooth(f) => Some(jacobian_of(f.as_ref(), x)),
            SetValuedMap::Affine { a, .. } => Some(a.clone()),
            SetValuedMap::Sum(l, r) => Some(l.smooth_jacobian(x)? + r.smooth_jacobian(x)?),
            SetValuedMap::Negate(i) => Some(-i.smooth_jacobian(x)?),
            _ => None,
        }
    }

    pub fn is_single_valued(&self) -> bool {
        match self {
            SetValuedMap::Smooth(_) | SetValuedMap::Affine { .. } => true,
            SetValuedMap::Sum(l, r) => l.is_single_valued() && r.is_single_valued(),
            SetValuedMap::Negate(i) => i.is_single_valued(),
            _ => false,
        }
    }

    /// All preimages of `y`, where a closed form exists.
    pub fn preimages(&self, y: &Vector) -> Option<Vec<Vector>> {
        match self {
            SetValuedMap::Smooth(f) => f.preimages(y),
            SetValuedMap::Negate(i) => i.preimages(&-y),
            _ => None,
        }
    }

    /// `c · F`; used for scaling checks.
    pub fn scaled(&self, c: f64) -> SetValuedMap {
        match self {
            SetValuedMap::Affine { a, b } => SetValuedMap::Affine { a: a * c, b: b * c },
            SetValuedMap::Smooth(f) => SetValuedMap::smooth(ScaledSmooth { inner: f.clone(), c }),
            other => SetValuedMap::Sum(
                Box::new(other.clone()),
                Box::new(SetValuedMap::ConstantSet {
                    input_dim: other.input_dim(),
                    set: ConvexSet::Singleton(Vector::zeros(other.output_dim())),
                }),
            ),
        }
    }
}

#[derive(Debug)]
struct ScaledSmooth {
    inner: Arc<dyn SmoothFn>,
    c: f64,
}

impl SmoothFn for ScaledSmooth {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn eval(&self, x: &Vector) -> Vector {
        self.inner.eval(x) * self.c
    }
    fn jacobian(&self, x: &Vector) -> Option<Matrix> {
        Some(jacobian_of(self.inner.as_ref(), x) * self.c)
    }
}

/// Parameterized map `G: ℝⁿ × ℝᵈ ⇉ ℝᵐ`.
#[derive(Debug, Clone)]
pub enum ParamMap {
    SingleValued(Arc<dyn ParamFn>),
    ConstantInX {
        x_dim: usize,
        family: Arc<dyn SetFamily>,
    },
    /// `g(x, p) + S(x)`
    SumWithSetMap {
        single: Arc<dyn ParamFn>,
        setmap: SetValuedMap,
    },
}

impl ParamMap {
    pub fn single(g: impl ParamFn + 'static) -> Self {
        ParamMap::SingleValued(Arc::new(g))
    }

    pub fn x_dim(&self) -> usize {
        match self {
            ParamMap::SingleValued(g) => g.x_dim(),
            ParamMap::ConstantInX { x_dim, .. } => *x_dim,
            ParamMap::SumWithSetMap { single, .. } => single.x_dim(),
        }
    }

    pub fn p_dim(&self) -> usize {
        match self {
            ParamMap::SingleValued(g) => g.p_dim(),
            ParamMap::ConstantInX { family, .. } => family.p_dim(),
            ParamMap::SumWithSetMap { single, .. } => single.p_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ParamMap::SingleValued(g) => g.output_dim(),
            ParamMap::ConstantInX { family, .. } => family.output_dim(),
            ParamMap::SumWithSetMap { single, .. } => single.output_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ParamMap::SumWithSetMap { single, setmap } = self {
            setmap.validate()?;
            check_dim("parameterized sum input", single.x_dim(), setmap.input_dim())?;
            check_dim("parameterized sum output", single.output_dim(), setmap.output_dim())?;
        }
        if self.x_dim() == 0 || self.output_dim() == 0 {
            return Err(CovaraError::InvalidInput(
                "parameterized map with zero dimension".into(),
            ));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &Vector, p: &Vector) -> Result<SetValue> {
        check_dim("parameterized map argument", self.x_dim(), x.len())?;
        check_dim("parameter", self.p_dim(), p.len())?;
        match self {
            ParamMap::SingleValued(g) => {
                let v = g.eval(x, p);
                if !linalg::all_finite(&v) {
                    return Err(CovaraError::InvalidInput(
                        "parameterized map value is not finite".into(),
                    ));
                }
                Ok(SetValue::Point(v))
            }
            ParamMap::ConstantInX { family, .. } => {
                let set = family.at(p);
                set.validate()?;
                Ok(set.to_value())
            }
            ParamMap::SumWithSetMap { single, setmap } => setmap.evaluate(x)?.translate(&single.eval(x, p)),
        }
    }

    pub fn single_fn(&self) -> Option<&Arc<dyn ParamFn>> {
        match self {
            ParamMap::SingleValued(g) => Some(g),
            _ => None,
        }
    }
}
