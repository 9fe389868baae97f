//! Problem documents: TOML files declaring maps, reference points, solver
//! settings, sampling schedules, sweeps and optional expected values.

use std::path::Path;
use std::sync::Arc;

use covara_core::{
    ConvexSet, CostFn, FnParam, FnSmooth, HalfComplexSquare, Matrix, ParamMap, ProblemInstance, SamplingSchedule,
    SetValuedMap, SolverConfig, Vector,
};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;

pub const DEFAULT_SEED: u64 = 0x5eed_c0de;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DocError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid value for '{key}': {message}")]
    Validation { key: String, message: String },
    #[error("{0}")]
    Io(String),
}

fn invalid<T>(key: impl Into<String>, message: impl Into<String>) -> Result<T, DocError> {
    Err(DocError::Validation {
        key: key.into(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub maps: MapsSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsSection {
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub big_f: Option<MapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<ParamSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<CostSpec>,
    /// Map of an implicit equation `f(x, p) = 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Smooth { input_dim: usize, outputs: Vec<String> },
    HalfComplexSquare,
    Affine { a: Vec<Vec<f64>>, b: Vec<f64> },
    Identity { dim: usize },
    ConstantSet { input_dim: usize, set: SetSpec },
    NormalCone { set: SetSpec },
    IdentityPlusNormalCone { set: SetSpec },
    Sum { left: Box<MapSpec>, right: Box<MapSpec> },
    Negate { inner: Box<MapSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    WholeSpace {
        dim: usize,
    },
    Singleton {
        point: Vec<f64>,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    NonnegOrthant {
        dim: usize,
    },
    /// `{z : a z <= b}`
    Polyhedron {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamSpec {
    Expr {
        x_dim: usize,
        p_dim: usize,
        outputs: Vec<String>,
    },
    /// `a x + b p + c`
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    /// `g(x, p) = p`, with `x` of dimension `x_dim` (default `dim`).
    Parameter {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_dim: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub expr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convex: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xbar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ybar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pbar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_box: Option<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_box: Option<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_shell: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Mu,
    Selection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SweepMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(rename = "loop", default, skip_serializing_if = "Option::is_none")]
    pub loop_: Option<LoopSpec>,
    /// Warm-start each selection solve from the previous solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Points `center + radius (cos t, sin t, 0, ...)` for `count` equally spaced `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    #[default]
    Eq,
    Ge,
    Le,
}

/// Where an expected value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Stated for the instance in the source literature.
    Reference,
    /// Computed independently of the code under test.
    Derived,
    /// Immediate from the definitions.
    Trivial,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Reference => "reference",
            Provenance::Derived => "derived",
            Provenance::Trivial => "trivial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpectedValue {
    Number(f64),
    Vector(Vec<f64>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub quantity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
    pub value: ExpectedValue,
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub relation: Relation,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_vec(v.to_vec())
}

fn matrix(key: &str, rows: &[Vec<f64>], ncols: Option<usize>) -> Result<Matrix, DocError> {
    let n = ncols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if let Some(i) = rows.iter().position(|r| r.len() != n) {
        return invalid(
            format!("{key}[{i}]"),
            format!("expected {n} columns, found {}", rows[i].len()),
        );
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), n, &flat))
}

fn check_len(key: &str, expected: usize, v: &[f64]) -> Result<(), DocError> {
    if v.len() != expected {
        return invalid(key, format!("expected {expected} entries, found {}", v.len()));
    }
    Ok(())
}

fn check_finite(key: &str, v: &[f64]) -> Result<(), DocError> {
    if v.iter().any(|x| !x.is_finite()) {
        return invalid(key, "entries must be finite");
    }
    Ok(())
}

fn build_set(key: &str, spec: &SetSpec) -> Result<ConvexSet, DocError> {
    let set = match spec {
        SetSpec::WholeSpace { dim } => ConvexSet::WholeSpace(*dim),
        SetSpec::Singleton { point } => ConvexSet::Singleton(vector(point)),
        SetSpec::Box { lower, upper } => {
            check_len(&format!("{key}.upper"), lower.len(), upper)?;
            ConvexSet::Box {
                lower: vector(lower),
                upper: vector(upper),
            }
        }
        SetSpec::NonnegOrthant { dim } => ConvexSet::nonneg_orthant(*dim),
        SetSpec::Polyhedron { a, b } => {
            let a = matrix(&format!("{key}.a"), a, None)?;
            check_len(&format!("{key}.b"), a.nrows(), b)?;
            ConvexSet::Polyhedron { a, b: vector(b) }
        }
    };
    if set.dim() == 0 {
        return invalid(key, "dimension must be positive");
    }
    set.validate().or_else(|e| invalid(key, e.to_string()))?;
    Ok(set)
}

fn parse_exprs(key: &str, sources: &[String], x_dim: usize, p_dim: usize) -> Result<Vec<Expr>, DocError> {
    if sources.is_empty() {
        return invalid(key, "at least one output expression is required");
    }
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| Expr::parse(s, x_dim, p_dim).or_else(|e| invalid(format!("{key}[{i}]"), e.to_string())))
        .collect()
}

fn joined(x: &Vector, p: &Vector) -> Vec<f64> {
    x.iter().chain(p.iter()).copied().collect()
}

fn build_map(key: &str, spec: &MapSpec) -> Result<SetValuedMap, DocError> {
    let map = match spec {
        MapSpec::Smooth { input_dim, outputs } => {
            let n = *input_dim;
            if n == 0 {
                return invalid(format!("{key}.input_dim"), "must be positive");
            }
            let exprs = Arc::new(parse_exprs(&format!("{key}.outputs"), outputs, n, 0)?);
            let m = exprs.len();
            let (e1, e2) = (exprs.clone(), exprs);
            let name = e1.iter().map(Expr::source).collect::<Vec<_>>().join(", ");
            SetValuedMap::smooth(
                FnSmooth::new(format!("({name})"), n, m, move |x| {
                    Vector::from_iterator(m, e1.iter().map(|e| e.eval(x.as_slice())))
                })
                .with_jacobian(move |x| {
                    let mut j = Matrix::zeros(m, n);
                    for (i, e) in e2.iter().enumerate() {
                        let (_, g) = e.eval_grad_x(x.as_slice());
                        for (k, gk) in g.into_iter().enumerate() {
                            j[(i, k)] = gk;
                        }
                    }
                    j
                }),
            )
        }
        MapSpec::HalfComplexSquare => SetValuedMap::smooth(HalfComplexSquare),
        MapSpec::Affine { a, b } => {
            let a = matrix(&format!("{key}.a"), a, None)?;
            check_len(&format!("{key}.b"), a.nrows(), b)?;
            SetValuedMap::affine(a, vector(b))
        }
        MapSpec::Identity { dim } => {
            if *dim == 0 {
                return invalid(format!("{key}.dim"), "must be positive");
            }
            SetValuedMap::identity(*dim)
        }
        MapSpec::ConstantSet { input_dim, set } => {
            if *input_dim == 0 {
                return invalid(format!("{key}.input_dim"), "must be positive");
            }
            SetValuedMap::ConstantSet {
                input_dim: *input_dim,
                set: build_set(&format!("{key}.set"), set)?,
            }
        }
        MapSpec::NormalCone { set } => SetValuedMap::NormalCone(build_set(&format!("{key}.set"), set)?),
        MapSpec::IdentityPlusNormalCone { set } => {
            SetValuedMap::IdentityPlusNormalCone(build_set(&format!("{key}.set"), set)?)
        }
        MapSpec::Sum { left, right } => SetValuedMap::sum(
            build_map(&format!("{key}.left"), left)?,
            build_map(&format!("{key}.right"), right)?,
        ),
        MapSpec::Negate { inner } => SetValuedMap::negate(build_map(&format!("{key}.inner"), inner)?),
    };
    map.validate().or_else(|e| invalid(key, e.to_string()))?;
    Ok(map)
}

fn build_param(key: &str, spec: &ParamSpec) -> Result<ParamMap, DocError> {
    let g = match spec {
        ParamSpec::Expr { x_dim, p_dim, outputs } => {
            let (n, d) = (*x_dim, *p_dim);
            if n == 0 || d == 0 {
                return invalid(key, "x_dim and p_dim must be positive");
            }
            let exprs = Arc::new(parse_exprs(&format!("{key}.outputs"), outputs, n, d)?);
            let m = exprs.len();
            let affine = exprs.iter().all(Expr::affine_in_x);
            let (e1, e2) = (exprs.clone(), exprs);
            let name = e1.iter().map(Expr::source).collect::<Vec<_>>().join(", ");
            let f = FnParam::new(format!("({name})"), n, d, m, move |x, p| {
                let vars = joined(x, p);
                Vector::from_iterator(m, e1.iter().map(|e| e.eval(&vars)))
            })
            .with_jacobian_x(move |x, p| {
                let vars = joined(x, p);
                let mut j = Matrix::zeros(m, n);
                for (i, e) in e2.iter().enumerate() {
                    let (_, g) = e.eval_grad_x(&vars);
                    for (k, gk) in g.into_iter().enumerate() {
                        j[(i, k)] = gk;
                    }
                }
                j
            });
            ParamMap::single(if affine { f.affine_in_x() } else { f })
        }
        ParamSpec::Linear { a, b, c } => {
            let a = matrix(&format!("{key}.a"), a, None)?;
            let b = matrix(&format!("{key}.b"), b, None)?;
            if b.nrows() != a.nrows() {
                return invalid(
                    format!("{key}.b"),
                    format!("expected {} rows, found {}", a.nrows(), b.nrows()),
                );
            }
            check_len(&format!("{key}.c"), a.nrows(), c)?;
            if a.nrows() == 0 || a.ncols() == 0 || b.ncols() == 0 {
                return invalid(key, "matrices must be nonempty");
            }
            ParamMap::single(FnParam::linear(a, b, vector(c)))
        }
        ParamSpec::Parameter { dim, x_dim } => {
            let (d, n) = (*dim, x_dim.unwrap_or(*dim));
            if d == 0 || n == 0 {
                return invalid(key, "dimensions must be positive");
            }
            ParamMap::single(if n == d {
                FnParam::parameter(d)
            } else {
                FnParam::new("p", n, d, d, |_, p| p.clone())
                    .with_jacobian_x(move |_, _| Matrix::zeros(d, n))
                    .affine_in_x()
            })
        }
    };
    g.validate().or_else(|e| invalid(key, e.to_string()))?;
    Ok(g)
}

fn build_box(key: &str, b: &BoxSpec, dim: usize) -> Result<ConvexSet, DocError> {
    check_len(&format!("{key}.lower"), dim, &b.lower)?;
    check_len(&format!("{key}.upper"), dim, &b.upper)?;
    check_finite(&format!("{key}.lower"), &b.lower)?;
    check_finite(&format!("{key}.upper"), &b.upper)?;
    ConvexSet::boxed(b.lower.clone(), b.upper.clone()).or_else(|e| invalid(key, e.to_string()))
}

fn require<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T, DocError> {
    v.as_ref().ok_or_else(|| DocError::Validation {
        key: key.into(),
        message: "required for this operation".into(),
    })
}

impl ProblemDocument {
    pub fn load(path: &Path) -> Result<Self, DocError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| DocError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Parses and validates a document.
    pub fn from_toml_str(text: &str) -> Result<Self, DocError> {
        let doc: ProblemDocument = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            DocError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("documents serialize to TOML")
    }

    /// Builds every declared map and cross-checks all dimensions.
    pub fn validate(&self) -> Result<(), DocError> {
        let m = &self.maps;
        if m.big_f.is_none() && m.f.is_none() {
            return invalid("maps", "declare at least one of maps.F or maps.f");
        }
        let pb = &self.problem;
        let mut x_dim: Option<(usize, &str)> = None;
        let mut p_dim: Option<(usize, &str)> = None;
        let agree = |slot: &mut Option<(usize, &str)>, dim: usize, key: &'static str| -> Result<(), DocError> {
            match *slot {
                Some((d, other)) if d != dim => invalid(key, format!("dimension {dim} disagrees with {other} ({d})")),
                Some(_) => Ok(()),
                None => {
                    *slot = Some((dim, key));
                    Ok(())
                }
            }
        };
        if let Some(spec) = &m.big_f {
            let f = build_map("maps.F", spec)?;
            agree(&mut x_dim, f.input_dim(), "maps.F")?;
            if let Some(y) = &pb.ybar {
                check_len("problem.ybar", f.output_dim(), y)?;
            }
            if let Some(spec) = &m.g {
                let g = build_param("maps.g", spec)?;
                agree(&mut x_dim, g.x_dim(), "maps.g")?;
                agree(&mut p_dim, g.p_dim(), "maps.g")?;
                if g.output_dim() != f.output_dim() {
                    return invalid(
                        "maps.g",
                        format!(
                            "output dimension {} disagrees with maps.F ({})",
                            g.output_dim(),
                            f.output_dim()
                        ),
                    );
                }
            }
        } else if m.g.is_some() {
            return invalid("maps.g", "requires maps.F");
        }
        if let Some(spec) = &m.f {
            let f = build_param("maps.f", spec)?;
            agree(&mut x_dim, f.x_dim(), "maps.f")?;
            agree(&mut p_dim, f.p_dim(), "maps.f")?;
        }
        if let Some(c) = &m.phi {
            let (Some((n, _)), Some((d, _))) = (x_dim, p_dim) else {
                return invalid("maps.phi", "requires maps.F and maps.g");
            };
            Expr::parse(&c.expr, n, d).or_else(|e| invalid("maps.phi.expr", e.to_string()))?;
        }
        let n = x_dim.map(|v| v.0);
        let d = p_dim.map(|v| v.0);
        if let (Some(x), Some(n)) = (&pb.xbar, n) {
            check_len("problem.xbar", n, x)?;
            check_finite("problem.xbar", x)?;
        }
        if let Some(p) = &pb.pbar {
            match d {
                Some(d) => check_len("problem.pbar", d, p)?,
                None => return invalid("problem.pbar", "no parameterized map is declared"),
            }
            check_finite("problem.pbar", p)?;
        }
        if let (Some(b), Some(n)) = (&pb.domain_box, n) {
            build_box("problem.domain_box", b, n)?;
        }
        if let Some(b) = &pb.param_box {
            build_box("problem.param_box", b, d.unwrap_or(b.lower.len()))?;
        }
        if let Some(r) = pb.resolution {
            if r < 2 {
                return invalid("problem.resolution", "must be at least 2");
            }
        }
        if let Some(r) = pb.audit_radius {
            if !(r > 0.0 && r.is_finite()) {
                return invalid("problem.audit_radius", "must be positive");
            }
        }
        let s = &self.solver;
        for (key, v) in [
            ("solver.alpha", s.alpha),
            ("solver.tol", s.tol),
            ("solver.trust_radius", s.trust_radius),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return invalid(key, "must be positive");
                }
            }
        }
        if let Some(l) = s.ell {
            if !(l >= 0.0 && l.is_finite()) {
                return invalid("solver.ell", "must be finite and nonnegative");
            }
        }
        if s.max_iter == Some(0) {
            return invalid("solver.max_iter", "must be positive");
        }
        if let Some(seed) = self.schedule.seed {
            if seed > i64::MAX as u64 {
                return invalid("schedule.seed", "must fit in a signed 64-bit integer");
            }
        }
        self.schedule_with(None)
            .validate()
            .or_else(|e| invalid("schedule", e.to_string()))?;
        self.validate_sweep(d)?;
        Ok(())
    }

    fn validate_sweep(&self, d: Option<usize>) -> Result<(), DocError> {
        let sw = &self.sweep;
        let any = sw.grid.is_some() || sw.points.is_some() || sw.loop_.is_some();
        let Some(d) = d else {
            return if any {
                invalid("sweep", "no parameterized map is declared")
            } else {
                Ok(())
            };
        };
        if let Some(g) = &sw.grid {
            check_len("sweep.grid.lower", d, &g.lower)?;
            check_len("sweep.grid.upper", d, &g.upper)?;
            check_finite("sweep.grid.lower", &g.lower)?;
            check_finite("sweep.grid.upper", &g.upper)?;
            if g.counts.len() != d {
                return invalid(
                    "sweep.grid.counts",
                    format!("expected {d} entries, found {}", g.counts.len()),
                );
            }
            if g.counts.contains(&0) {
                return invalid("sweep.grid.counts", "counts must be positive");
            }
            if g.counts
                .iter()
                .try_fold(1usize, |a, &c| a.checked_mul(c))
                .is_none_or(|t| t > 1_000_000)
            {
                return invalid("sweep.grid.counts", "grid has more than 10^6 points");
            }
        }
        if let Some(pts) = &sw.points {
            for (i, p) in pts.iter().enumerate() {
                check_len(&format!("sweep.points[{i}]"), d, p)?;
                check_finite(&format!("sweep.points[{i}]"), p)?;
            }
        }
        if let Some(l) = &sw.loop_ {
            check_len("sweep.loop.center", d, &l.center)?;
            if d < 2 {
                return invalid("sweep.loop", "loops need a parameter dimension of at least 2");
            }
            if !(l.radius > 0.0 && l.radius.is_finite()) {
                return invalid("sweep.loop.radius", "must be positive");
            }
            if l.count < 3 {
                return invalid("sweep.loop.count", "must be at least 3");
            }
        }
        if sw.mode == Some(SweepMode::Mu) && self.maps.phi.is_none() {
            return invalid("sweep.mode", "mu sweeps require maps.phi");
        }
        Ok(())
    }

    pub fn map(&self) -> Result<SetValuedMap, DocError> {
        build_map("maps.F", require(&self.maps.big_f, "maps.F")?)
    }

    pub fn g(&self) -> Result<ParamMap, DocError> {
        build_param("maps.g", require(&self.maps.g, "maps.g")?)
    }

    pub fn implicit_map(&self) -> Result<ParamMap, DocError> {
        build_param("maps.f", require(&self.maps.f, "maps.f")?)
    }

    pub fn cost(&self) -> Result<CostFn, DocError> {
        let spec = require(&self.maps.phi, "maps.phi")?;
        let g = self.g()?;
        let e = Expr::parse(&spec.expr, g.x_dim(), g.p_dim()).or_else(|e| invalid("maps.phi.expr", e.to_string()))?;
        Ok(Arc::new(move |x: &Vector, p: &Vector| e.eval(&joined(x, p))))
    }

    pub fn xbar(&self) -> Result<Vector, DocError> {
        Ok(vector(require(&self.problem.xbar, "problem.xbar")?))
    }

    pub fn pbar(&self) -> Result<Vector, DocError> {
        Ok(vector(require(&self.problem.pbar, "problem.pbar")?))
    }

    pub fn ybar(&self) -> Option<Vector> {
        self.problem.ybar.as_deref().map(vector)
    }

    pub fn seed(&self, seed_override: Option<u64>) -> u64 {
        seed_override.or(self.schedule.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn schedule_with(&self, seed_override: Option<u64>) -> SamplingSchedule {
        let s = &self.schedule;
        SamplingSchedule::halving(
            s.eta_max.unwrap_or(0.5),
            s.shells.unwrap_or(10),
            s.samples_per_shell.unwrap_or(512),
            self.seed(seed_override),
        )
    }

    pub fn solver_config(&self, seed_override: Option<u64>) -> SolverConfig {
        let s = &self.solver;
        let d = SolverConfig::default();
        SolverConfig {
            alpha: s.alpha,
            ell: s.ell,
            tol: s.tol.unwrap_or(d.tol),
            max_iter: s.max_iter.unwrap_or(d.max_iter),
            trust_radius: s.trust_radius,
            schedule: self.schedule_with(seed_override),
        }
    }

    /// The optimal value problem declared by `maps.F`, `maps.g`, `maps.phi`
    /// and the problem boxes.
    pub fn instance(&self) -> Result<ProblemInstance, DocError> {
        let map = self.map()?;
        let g = self.g()?;
        let n = map.input_dim();
        let domain = build_box(
            "problem.domain_box",
            require(&self.problem.domain_box, "problem.domain_box")?,
            n,
        )?;
        let params = build_box(
            "problem.param_box",
            require(&self.problem.param_box, "problem.param_box")?,
            g.p_dim(),
        )?;
        let phi = self.cost()?;
        let mut inst = ProblemInstance::new(
            map,
            g,
            move |x, p| phi(x, p),
            self.xbar()?,
            self.pbar()?,
            domain,
            params,
        )
        .or_else(|e| invalid("problem", e.to_string()))?;
        if let Some(r) = self.problem.resolution {
            inst = inst.with_resolution(r);
        }
        if let Some(r) = self.problem.audit_radius {
            inst = inst.with_audit_radius(r);
        }
        if let Some(c) = self.maps.phi.as_ref().and_then(|c| c.convex) {
            inst = inst.declare_phi_convex(c);
        }
        Ok(inst)
    }

    pub fn sweep_mode(&self) -> SweepMode {
        self.sweep.mode.unwrap_or(if self.maps.phi.is_some() {
            SweepMode::Mu
        } else {
            SweepMode::Selection
        })
    }

    /// Grid points (first axis slowest) followed by the explicit points.
    pub fn sweep_points(&self) -> Vec<Vector> {
        let mut out = Vec::new();
        if let Some(g) = &self.sweep.grid {
            let axes: Vec<Vec<f64>> = (0..g.counts.len())
                .map(|i| {
                    let c = g.counts[i];
                    (0..c)
                        .map(|k| {
                            if c == 1 {
                                g.lower[i]
                            } else {
                                g.lower[i] + (g.upper[i] - g.lower[i]) * k as f64 / (c - 1) as f64
                            }
                        })
                        .collect()
                })
                .collect();
            let total: usize = g.counts.iter().product();
            for mut idx in 0..total {
                let mut p = vec![0.0; axes.len()];
                for i in (0..axes.len()).rev() {
                    p[i] = axes[i][idx % g.counts[i]];
                    idx /= g.counts[i];
                }
                out.push(Vector::from_vec(p));
            }
        }
        if let Some(pts) = &self.sweep.points {
            out.extend(pts.iter().map(|p| vector(p)));
        }
        out
    }

    pub fn loop_points(&self) -> Option<Vec<Vector>> {
        let l = self.sweep.loop_.as_ref()?;
        Some(
            (0..l.count)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / l.count as f64;
                    let mut p = vector(&l.center);
                    p[0] += l.radius * t.cos();
                    p[1] += l.radius * t.sin();
                    p
                })
                .collect(),
        )
    }
}
