//! Built-in instance gallery and the evaluator for documented expectations.

use std::cell::OnceCell;

use covara_core::coincidence::trace_contracts;
use covara_core::moduli::image_hausdorff_to_ball;
use covara_core::{
    alpha_hat, alpha_hat_semilocal, alpha_point, certify_lipschitz, check_convex_pair, evaluate_mu, evaluate_mu_grid,
    feasible_set_sample, marginal, MarginalReport, ProblemInstance, Vector, Verdict,
};
use serde::Serialize;

use crate::commands::{loop_jump, reference_value, solve_at, solve_implicit_at};
use crate::document::{DocError, Expectation, ExpectedValue, ProblemDocument, Provenance, Relation};

pub struct CorpusEntry {
    pub name: &'static str,
    pub source: &'static str,
}

macro_rules! entry {
    ($name:literal) => {
        CorpusEntry {
            name: $name,
            source: include_str!(concat!("../corpus/", $name, ".toml")),
        }
    };
}

pub const CORPUS: &[CorpusEntry] = &[
    entry!("example-4-2"),
    entry!("example-4-2-loop"),
    entry!("example-5-2"),
    entry!("projection-ge"),
    entry!("affine-ge"),
    entry!("convex-marginal"),
    entry!("branch-vi"),
    entry!("implicit"),
];

pub fn find(name: &str) -> Option<&'static CorpusEntry> {
    CORPUS.iter().find(|e| e.name == name)
}

impl CorpusEntry {
    pub fn document(&self) -> Result<ProblemDocument, DocError> {
        ProblemDocument::from_toml_str(self.source)
    }
}

/// Outcome of one expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub entry: String,
    pub quantity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<Vec<f64>>,
    pub relation: Relation,
    pub expected: String,
    pub tolerance: f64,
    pub actual: String,
    pub provenance: Provenance,
    pub passed: bool,
}

impl CheckResult {
    pub fn line(&self) -> String {
        let at = self
            .at
            .as_ref()
            .map_or(String::new(), |a| format!(" at {}", fmt_vec(a)));
        let rel = match self.relation {
            Relation::Eq => "=",
            Relation::Ge => ">=",
            Relation::Le => "<=",
        };
        let tol = if self.tolerance > 0.0 {
            format!(" ± {}", self.tolerance)
        } else {
            String::new()
        };
        format!(
            "{} {} {}{}: {} (expected {} {}{}, {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.entry,
            self.quantity,
            at,
            self.actual,
            rel,
            self.expected,
            tol,
            self.provenance.as_str()
        )
    }
}

pub fn fmt_vec(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

#[derive(Debug, Clone, PartialEq)]
enum Actual {
    Number(f64),
    Vector(Vec<f64>),
    Text(String),
}

impl Actual {
    fn render(&self) -> String {
        match self {
            Actual::Number(x) => x.to_string(),
            Actual::Vector(v) => fmt_vec(v),
            Actual::Text(s) => s.clone(),
        }
    }
}

fn render_expected(v: &ExpectedValue) -> String {
    match v {
        ExpectedValue::Number(x) => x.to_string(),
        ExpectedValue::Vector(v) => fmt_vec(v),
        ExpectedValue::Text(s) => s.clone(),
    }
}

fn compare_number(a: f64, e: f64, tol: f64, rel: Relation) -> bool {
    if a.is_nan() || e.is_nan() {
        return false;
    }
    match rel {
        Relation::Eq => a == e || (a - e).abs() <= tol,
        Relation::Ge => a >= e - tol,
        Relation::Le => a <= e + tol,
    }
}

fn passes(actual: &Actual, exp: &Expectation) -> bool {
    match (actual, &exp.value) {
        (Actual::Number(a), ExpectedValue::Number(e)) => compare_number(*a, *e, exp.tolerance, exp.relation),
        (Actual::Vector(a), ExpectedValue::Vector(e)) => {
            a.len() == e.len()
                && a.iter()
                    .zip(e)
                    .all(|(a, e)| compare_number(*a, *e, exp.tolerance, exp.relation))
        }
        (Actual::Vector(a), ExpectedValue::Number(e)) if a.len() == 1 => {
            compare_number(a[0], *e, exp.tolerance, exp.relation)
        }
        (Actual::Text(a), ExpectedValue::Text(e)) => exp.relation == Relation::Eq && a == e,
        _ => false,
    }
}

struct Ctx<'a> {
    doc: &'a ProblemDocument,
    seed: Option<u64>,
    instance: OnceCell<Result<ProblemInstance, String>>,
    report: OnceCell<Result<MarginalReport, String>>,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

impl Ctx<'_> {
    fn instance(&self) -> Result<&ProblemInstance, String> {
        self.instance
            .get_or_init(|| self.doc.instance().map_err(err))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn report(&self) -> Result<&MarginalReport, String> {
        self.report
            .get_or_init(|| {
                let inst = self.instance()?;
                Ok(certify_lipschitz(inst, &self.doc.schedule_with(self.seed)))
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn point(&self, exp: &Expectation, default: Result<Vector, DocError>) -> Result<Vector, String> {
        match &exp.at {
            Some(a) => Ok(Vector::from_vec(a.clone())),
            None => default.map_err(err),
        }
    }

    fn evaluate(&self, exp: &Expectation) -> Result<Actual, String> {
        let doc = self.doc;
        let q = exp.quantity.as_str();
        let schedule = doc.schedule_with(self.seed);
        if let Some(prop) = q.strip_prefix("verdict.") {
            let v = &self.report()?.verdicts;
            let verdict: Verdict = match prop {
                "usc" => v.usc,
                "lsc" => v.lsc,
                "continuous" => v.continuous,
                "calm" => v.calm,
                "calm_above" => v.calm_above,
                "calm_below" => v.calm_below,
                "lipschitz" => v.lipschitz,
                other => return Err(format!("unknown verdict '{other}'")),
            };
            return Ok(Actual::Text(verdict.to_string()));
        }
        if let Some(prop) = q.strip_prefix("witness_mu.") {
            let r = self.report()?;
            let w = r
                .witnesses
                .iter()
                .find(|w| w.property == prop)
                .ok_or_else(|| format!("no {prop} witness"))?;
            return Ok(Actual::Number(w.mu));
        }
        let need = |v: Option<f64>, what: &str| v.ok_or_else(|| format!("{what} is unavailable"));
        Ok(match q {
            "alpha_point" => {
                let x = self.point(exp, doc.xbar())?;
                Actual::Number(alpha_point(&doc.map().map_err(err)?, &x).map_err(err)?.value)
            }
            "alpha_hat" | "alpha_hat_semilocal" => {
                let map = doc.map().map_err(err)?;
                let x = self.point(exp, doc.xbar())?;
                let est = if q == "alpha_hat" {
                    let y = if exp.at.is_none() { doc.ybar() } else { None };
                    let y = match y {
                        Some(y) => y,
                        None => reference_value(doc, &map, &x).map_err(err)?,
                    };
                    alpha_hat(&map, &x, &y, &schedule)
                } else {
                    alpha_hat_semilocal(&map, &x, &schedule)
                };
                Actual::Number(est.map_err(err)?.value)
            }
            "image_hausdorff" => {
                let map = doc.map().map_err(err)?;
                let c = self.point(exp, doc.xbar())?;
                let r = need(exp.radius, "radius")?;
                let br = need(exp.ball_radius, "ball_radius")?;
                let fc = map.single_value(&c).ok_or("the map must be single-valued")?;
                Actual::Number(image_hausdorff_to_ball(&map, &c, r, &fc, br, 200, 720).map_err(err)?)
            }
            "min_max_jump" => Actual::Number(loop_jump(doc, self.seed).map_err(err)?.min_max_jump),
            "sigma" | "residual" | "iterations" | "contraction" | "error_bound_gap" | "oracle_gap" => {
                let p = self.point(exp, doc.pbar())?;
                let r = solve_at(doc, &p, self.seed).map_err(err)?;
                match q {
                    "sigma" => Actual::Vector(r.sigma.as_slice().to_vec()),
                    "residual" => Actual::Number(r.residual),
                    "iterations" => Actual::Number(r.iterations as f64),
                    "contraction" => Actual::Text(if trace_contracts(&r, 1e-3) { "holds" } else { "fails" }.into()),
                    "error_bound_gap" => {
                        let xbar = doc.xbar().map_err(err)?;
                        Actual::Number(((&r.sigma - xbar).norm() * (r.alpha - r.ell) - r.initial_distance).max(0.0))
                    }
                    _ => Actual::Number((&r.sigma - least_norm_oracle(doc, &p)?).norm()),
                }
            }
            "implicit_sigma" | "implicit_residual" | "implicit_bound_gap" => {
                let p = self.point(exp, doc.pbar())?;
                let r = solve_implicit_at(doc, &p, self.seed).map_err(err)?;
                match q {
                    "implicit_sigma" => Actual::Vector(r.sigma.as_slice().to_vec()),
                    "implicit_residual" => Actual::Number(r.residual_norm),
                    _ => {
                        let xbar = doc.xbar().map_err(err)?;
                        Actual::Number((r.bound - (&r.sigma - xbar).norm()).abs())
                    }
                }
            }
            "mu" => {
                let inst = self.instance()?;
                let p = self.point(exp, doc.pbar())?;
                Actual::Number(evaluate_mu(inst, &p, inst.resolution))
            }
            "feasible_count" => {
                let inst = self.instance()?;
                let p = self.point(exp, doc.pbar())?;
                Actual::Number(feasible_set_sample(inst, &p, inst.resolution).points.len() as f64)
            }
            "mu_sweep_max" | "mu_sweep_min" => {
                let inst = self.instance()?;
                let pts: Vec<Vector> = doc.sweep_points().into_iter().filter(|p| *p != inst.pbar).collect();
                if pts.is_empty() {
                    return Err("the sweep has no points besides pbar".into());
                }
                let mus = evaluate_mu_grid(inst, &pts).into_iter().map(|r| r.mu);
                Actual::Number(if q == "mu_sweep_max" {
                    mus.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    mus.fold(f64::INFINITY, f64::min)
                })
            }
            "kappa" | "kappa1" | "kappa2" | "kappa_product" | "slope" => {
                let m = &self.report()?.moduli;
                Actual::Number(match q {
                    "kappa" => need(m.kappa, "kappa")?,
                    "kappa1" => need(m.kappa1, "kappa1")?,
                    "kappa2" => need(m.kappa2, "kappa2")?,
                    "kappa_product" => need(m.kappa_product, "kappa_product")?,
                    _ => need(m.local_lipschitz_estimate, "local Lipschitz estimate")?,
                })
            }
            "kappa_formula_gap" => {
                let m = &self.report()?.moduli;
                let k = need(m.kappa, "kappa")?;
                let assembled = marginal::kappa(
                    need(m.kappa1, "kappa1")?,
                    need(m.kappa2, "kappa2")?,
                    need(m.alpha, "alpha")?,
                    need(m.ell, "ell")?,
                );
                Actual::Number((k - assembled).abs())
            }
            "kappa_bound_violation" => {
                let r = self.report()?;
                let k = need(r.moduli.kappa, "kappa")?;
                let inst = self.instance()?;
                Actual::Number(
                    r.grid
                        .iter()
                        .map(|row| (row.mu - r.mu_bar).abs() - k * (&row.p - &inst.pbar).norm())
                        .map(|v| if v.is_nan() { f64::INFINITY } else { v })
                        .fold(f64::NEG_INFINITY, f64::max),
                )
            }
            "convex_pair" => {
                let inst = self.instance()?;
                let seed = doc.seed(self.seed);
                let r =
                    check_convex_pair(&inst.g, &inst.map, &inst.domain_box, &inst.param_box, 24, seed).map_err(err)?;
                Actual::Text(if r.holds_on_samples { "holds" } else { "fails" }.into())
            }
            other => return Err(format!("unknown quantity '{other}'")),
        })
    }
}

/// `x̄ + A⁺ (c − b − A x̄)` for an affine `F = A x + b` and `c = g(x̄, p)`.
fn least_norm_oracle(doc: &ProblemDocument, p: &Vector) -> Result<Vector, String> {
    let map = doc.map().map_err(err)?;
    let covara_core::SetValuedMap::Affine { a, b } = &map else {
        return Err("the least-norm oracle needs an affine map".into());
    };
    let g = doc.g().map_err(err)?;
    let gf = g.single_fn().ok_or("g must be single-valued")?;
    let xbar = doc.xbar().map_err(err)?;
    let c = gf.eval(&xbar, p);
    let pinv = a.clone().pseudo_inverse(1e-12).map_err(|e| e.to_string())?;
    Ok(&xbar + pinv * (c - b - a * &xbar))
}

/// Evaluates every expectation of `doc` under the label `entry`.
pub fn check_document(entry: &str, doc: &ProblemDocument, seed: Option<u64>) -> Vec<CheckResult> {
    let ctx = Ctx {
        doc,
        seed,
        instance: OnceCell::new(),
        report: OnceCell::new(),
    };
    doc.expect
        .iter()
        .map(|exp| {
            let (actual, passed) = match ctx.evaluate(exp) {
                Ok(a) => {
                    let ok = passes(&a, exp);
                    (a.render(), ok)
                }
                Err(e) => (format!("error: {e}"), false),
            };
            CheckResult {
                entry: entry.to_string(),
                quantity: exp.quantity.clone(),
                at: exp.at.clone(),
                relation: exp.relation,
                expected: render_expected(&exp.value),
                tolerance: exp.tolerance,
                actual,
                provenance: exp.provenance,
                passed,
            }
        })
        .collect()
}
