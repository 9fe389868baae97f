//! Sampled certificates for semicontinuity, calmness and Lipschitz
//! continuity of `μ` at `p̄`.
//!
//! Every verdict pairs an assumption audit with an empirical limit test on
//! shrinking parameter shells `ρₖ = R₀ ηₖ / η₀`, where `R₀` is the largest
//! half-width of the parameter box. A property is refuted when its defect
//! stays above `ε = ρ_min^{1/3} (1 + |μ(p̄)|)` on the three smallest shells,
//! certified when the defect on the smallest shell is below `ε` and the audit
//! passed, and inconclusive otherwise.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::convexity::{check_convex_pair, cost_convexity_violation, graph_convexity_violation};
use super::{evaluate_mu_grid, feasible_set_sample, GridRow, ProblemInstance};
use crate::linalg::Vector;
use crate::moduli::{alpha_hat, alpha_hat_semilocal, calmness_estimate, lipschitz_like_estimate, CalmnessKind};
use crate::sampling::{self, SamplingSchedule};
use crate::serde_ext;

/// Slack added to every sampled calmness bound.
pub const BOUND_SLACK: f64 = 1e-8;
const MAX_LSC_ANCHORS: usize = 16;
const REFUTE_SHELLS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Refuted,
    #[default]
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::Refuted => "refuted",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    fn both(a: Verdict, b: Verdict) -> Verdict {
        match (a, b) {
            (Verdict::Certified, Verdict::Certified) => Verdict::Certified,
            (Verdict::Refuted, _) | (_, Verdict::Refuted) => Verdict::Refuted,
            _ => Verdict::Inconclusive,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Verdicts {
    pub usc: Verdict,
    pub lsc: Verdict,
    pub continuous: Verdict,
    pub calm_above: Verdict,
    pub calm_below: Verdict,
    pub calm: Verdict,
    pub lipschitz: Verdict,
}

/// Moduli behind the calmness bounds; `None` when not estimated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarginalModuli {
    /// Calmness of the cost in `(x, p)`.
    #[serde(default, with = "serde_ext::opt_ext_real")]
    pub kappa1: Option<f64>,
    /// Calmness of `g(x, ·)`.
    #[serde(default, with = "serde_ext::opt_ext_real")]
    pub kappa2: Option<f64>,
    /// `κ₁ + κ₁κ₂ / (α − ℓ)`.
    #[serde(default, with = "serde_ext::opt_ext_real")]
    pub kappa: Option<f64>,
    /// `κ₁κ₁κ₂ / (α − ℓ)`, reported for comparison only.
    #[serde(default, with = "serde_ext::opt_ext_real")]
    pub kappa_product: Option<f64>,
    #[serde(default, with = "serde_ext::opt_ext_real")]
    pub alpha: Option<f64>,
    #[serde(default, with = "serde_ext::opt_ext_real")]
    pub ell: Option<f64>,
    /// Largest two-point slope of `μ` on the smallest shell.
    #[serde(default, with = "serde_ext::opt_ext_real")]
    pub local_lipschitz_estimate: Option<f64>,
}

/// One checked assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub property: String,
    pub assumption: String,
    pub passed: bool,
    pub detail: String,
}

/// A parameter at which a property visibly fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub property: String,
    #[serde(with = "serde_ext::vector")]
    pub p: Vector,
    pub radius: f64,
    #[serde(with = "serde_ext::ext_real")]
    pub mu: f64,
    #[serde(with = "serde_ext::ext_real")]
    pub mu_bar: f64,
    /// Size of the violation.
    #[serde(with = "serde_ext::ext_real")]
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    #[serde(with = "serde_ext::vector")]
    pub pbar: Vector,
    #[serde(with = "serde_ext::ext_real")]
    pub mu_bar: f64,
    /// The limit tolerance `ε` of the shell test.
    pub limit_tolerance: f64,
    pub seed: u64,
    /// `μ` at `p̄` followed by the shell points.
    pub grid: Vec<GridRow>,
    pub verdicts: Verdicts,
    pub moduli: MarginalModuli,
    pub audit: Vec<AuditItem>,
    pub witnesses: Vec<Witness>,
}

impl MarginalReport {
    /// Human-readable verdict block.
    pub fn summary(&self) -> String {
        let v = &self.verdicts;
        let fmt_opt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x}"));
        let mut out = String::new();
        out.push_str(&format!(
            "mu(pbar) = {} at pbar = {:?}\n",
            self.mu_bar,
            self.pbar.as_slice()
        ));
        for (name, verdict, meaning) in [
            ("usc", v.usc, "upper semicontinuity of the optimal value"),
            ("lsc", v.lsc, "lower semicontinuity of the optimal value"),
            ("continuous", v.continuous, "usc and lsc together"),
            ("calm_above", v.calm_above, "mu(p) <= mu(pbar) + kappa |p - pbar|"),
            ("calm_below", v.calm_below, "mu(p) >= mu(pbar) - kappa |p - pbar|"),
            ("calm", v.calm, "|mu(p) - mu(pbar)| <= kappa |p - pbar|"),
            (
                "lipschitz",
                v.lipschitz,
                "local Lipschitz continuity under joint convexity",
            ),
        ] {
            out.push_str(&format!("{name:<11} {verdict:<13} {meaning}\n"));
        }
        let m = &self.moduli;
        out.push_str(&format!(
            "kappa1 = {}  kappa2 = {}  alpha = {}  ell = {}  kappa = {}  slope = {}\n",
            fmt_opt(m.kappa1),
            fmt_opt(m.kappa2),
            fmt_opt(m.alpha),
            fmt_opt(m.ell),
            fmt_opt(m.kappa),
            fmt_opt(m.local_lipschitz_estimate)
        ));
        for a in self.audit.iter().filter(|a| !a.passed) {
            out.push_str(&format!("failed [{}] {}: {}\n", a.property, a.assumption, a.detail));
        }
        for w in &self.witnesses {
            out.push_str(&format!(
                "witness [{}] p = {:?}: mu = {}, mu(pbar) = {}, gap = {}\n",
                w.property,
                w.p.as_slice(),
                w.mu,
                w.mu_bar,
                w.gap
            ));
        }
        out
    }
}

/// `κ₁ + κ₁κ₂ / (α − ℓ)`, with `κ = κ₁` when `α = ∞` and `κ = 0` when `κ₁ = 0`.
pub fn kappa(kappa1: f64, kappa2: f64, alpha: f64, ell: f64) -> f64 {
    if kappa1 == 0.0 {
        return 0.0;
    }
    if alpha == f64::INFINITY || kappa2 == 0.0 {
        return kappa1;
    }
    kappa1 + kappa1 * kappa2 / (alpha - ell)
}

/// `κ₁κ₁κ₂ / (α − ℓ)`.
pub fn kappa_product(kappa1: f64, kappa2: f64, alpha: f64, ell: f64) -> f64 {
    if kappa1 == 0.0 || kappa2 == 0.0 || alpha == f64::INFINITY {
        return 0.0;
    }
    kappa1 * kappa1 * kappa2 / (alpha - ell)
}

/// A covering constant strictly between `ℓ` and `α̂`.
fn choose_alpha(ahat: f64, ell: f64) -> f64 {
    if ahat == f64::INFINITY {
        f64::INFINITY
    } else {
        (0.9 * ahat).max(0.5 * (ahat + ell))
    }
}

fn limit_tolerance(rho: f64, scale: f64) -> f64 {
    let s = if scale.is_finite() { scale.abs() } else { 0.0 };
    rho.cbrt() * (1.0 + s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Above,
    Below,
}

impl Side {
    fn gap(self, value: f64, base: f64) -> f64 {
        let g = match self {
            Side::Above => value - base,
            Side::Below => base - value,
        };
        if g.is_nan() {
            f64::INFINITY
        } else {
            g.max(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Limit {
    Pass,
    Fail,
    Unclear,
}

fn limit_test(gaps: &[f64], eps: f64) -> Limit {
    match gaps.last() {
        None => Limit::Unclear,
        Some(&g) if g <= eps => Limit::Pass,
        Some(_) if gaps.iter().rev().take(REFUTE_SHELLS).all(|g| *g > eps) => Limit::Fail,
        Some(_) => Limit::Unclear,
    }
}

fn concat(x: &Vector, p: &Vector) -> Vector {
    Vector::from_iterator(x.len() + p.len(), x.iter().chain(p.iter()).copied())
}

fn split(z: &Vector, n: usize) -> (Vector, Vector) {
    (z.rows(0, n).into_owned(), z.rows(n, z.len() - n).into_owned())
}

/// Parameter shells around `p̄` with their `μ` values.
struct Probe {
    grid: Vec<GridRow>,
    rho: Vec<f64>,
    shell: Vec<Option<usize>>,
    shells: usize,
    mu_bar: f64,
    eps: f64,
    /// The input schedule rescaled so that `η₀ = R₀`.
    scaled: SamplingSchedule,
}

impl Probe {
    fn new(inst: &ProblemInstance, schedule: &SamplingSchedule) -> Self {
        let (lo, hi) = inst.params();
        let d = inst.pbar.len();
        let r0 = (0..d).map(|i| 0.5 * (hi[i] - lo[i])).fold(0.0, f64::max);
        let eta0 = schedule.eta_sequence[0];
        let radii: Vec<f64> = schedule.eta_sequence.iter().map(|e| r0 * e / eta0).collect();
        let mut seen = HashSet::new();
        let dirs: Vec<Vector> = sampling::sphere_directions(d, 4 * d.max(1), schedule.seed, 800)
            .into_iter()
            .filter(|v| seen.insert(v.iter().map(|c| c.to_bits()).collect::<Vec<_>>()))
            .collect();
        let mut pts = vec![inst.pbar.clone()];
        let mut shell = vec![None];
        for (k, &r) in radii.iter().enumerate() {
            let mut seen = HashSet::new();
            for dir in &dirs {
                let p = Vector::from_iterator(d, (0..d).map(|i| (inst.pbar[i] + r * dir[i]).clamp(lo[i], hi[i])));
                if (&p - &inst.pbar).norm() <= 1e-15 * (1.0 + r0) {
                    continue;
                }
                if seen.insert(p.iter().map(|c| (c + 0.0).to_bits()).collect::<Vec<_>>()) {
                    pts.push(p);
                    shell.push(Some(k));
                }
            }
        }
        let grid = evaluate_mu_grid(inst, &pts);
        let rho = pts.iter().map(|p| (p - &inst.pbar).norm()).collect();
        let mu_bar = grid[0].mu;
        let rho_min = radii.last().copied().unwrap_or(0.0);
        let scaled = if r0 > 0.0 {
            SamplingSchedule {
                eta_sequence: radii,
                ..schedule.clone()
            }
        } else {
            schedule.clone()
        };
        Self {
            grid,
            rho,
            shell,
            shells: schedule.eta_sequence.len(),
            mu_bar,
            eps: limit_tolerance(rho_min, mu_bar),
            scaled,
        }
    }

    /// Largest defect per shell; shells without points are dropped.
    fn shell_gaps(&self, side: Side) -> Vec<f64> {
        let mut gaps = vec![None::<f64>; self.shells];
        for (row, s) in self.grid.iter().zip(&self.shell) {
            if let Some(k) = *s {
                let g = side.gap(row.mu, self.mu_bar);
                gaps[k] = Some(gaps[k].map_or(g, |h| h.max(g)));
            }
        }
        gaps.into_iter().flatten().collect()
    }

    /// The smallest-radius point among those with the largest defect.
    fn witness(&self, property: &str, defect: impl Fn(usize) -> f64) -> Option<Witness> {
        let rows: Vec<(usize, f64)> = (1..self.grid.len())
            .map(|i| (i, defect(i)))
            .filter(|(_, g)| *g > 0.0)
            .collect();
        let top = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        if top <= 0.0 {
            return None;
        }
        let (i, gap) = rows
            .into_iter()
            .filter(|(_, g)| *g == top || (top.is_finite() && *g >= top - 1e-12 * (1.0 + top)))
            .min_by(|a, b| self.rho[a.0].total_cmp(&self.rho[b.0]))?;
        Some(Witness {
            property: property.into(),
            p: self.grid[i].p.clone(),
            radius: self.rho[i],
            mu: self.grid[i].mu,
            mu_bar: self.mu_bar,
            gap,
        })
    }

    /// Rows violating the one-sided bound `κρ`, worst first.
    fn bound_violation(&self, side: Side, kappa: f64) -> Option<usize> {
        (1..self.grid.len())
            .map(|i| {
                (
                    i,
                    side.gap(self.grid[i].mu, self.mu_bar) - kappa * self.rho[i] - BOUND_SLACK,
                )
            })
            .filter(|(_, v)| *v > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

/// Largest one-sided change of the cost on each joint ball around `(x, p)`.
fn cost_gaps(inst: &ProblemInstance, x: &Vector, p: &Vector, schedule: &SamplingSchedule, side: Side) -> Vec<f64> {
    let center = concat(x, p);
    let f0 = inst.phi(x, p);
    let n = x.len();
    schedule
        .eta_sequence
        .iter()
        .enumerate()
        .map(|(k, &eta)| {
            sampling::ball_points(&center, eta, schedule.samples_per_shell, schedule.seed, 820 + k as u64)
                .iter()
                .map(|z| {
                    let (u, q) = split(z, n);
                    side.gap(inst.phi(&u, &q), f0)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Neighborhood calmness of the cost jointly in `(x, p)`.
fn cost_calmness(inst: &ProblemInstance, x: &Vector, p: &Vector, schedule: &SamplingSchedule) -> Option<f64> {
    let n = x.len();
    let f = |z: &Vector| {
        let (u, q) = split(z, n);
        Vector::from_element(1, inst.phi(&u, &q))
    };
    calmness_estimate(&f, &concat(x, p), CalmnessKind::TwoSided, schedule)
        .ok()
        .map(|e| e.shell_sup())
}

/// Neighborhood calmness of `g(x, ·)` at `p̄`.
fn constraint_calmness(inst: &ProblemInstance, x: &Vector, schedule: &SamplingSchedule) -> Option<f64> {
    let gf = inst.g.single_fn().expect("validated").clone();
    let f = |q: &Vector| gf.eval(x, q);
    calmness_estimate(&f, &inst.pbar, CalmnessKind::TwoSided, schedule)
        .ok()
        .map(|e| e.shell_sup())
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

fn show(v: Option<f64>) -> String {
    v.map_or("unavailable".to_string(), |x| format!("{x}"))
}

/// Outcome of one semicontinuity fragment.
#[derive(Default)]
struct Part {
    verdict: Verdict,
    calm: Verdict,
    audit: Vec<AuditItem>,
    witnesses: Vec<Witness>,
    kappa1: Option<f64>,
    kappa2: Option<f64>,
    alpha: Option<f64>,
    ell: Option<f64>,
    kappa: Option<f64>,
}

impl Part {
    fn check(&mut self, property: &str, assumption: &str, passed: bool, detail: String) {
        self.audit.push(AuditItem {
            property: property.into(),
            assumption: assumption.into(),
            passed,
            detail,
        });
    }

    fn audit_passed(&self) -> bool {
        self.audit.iter().all(|a| a.passed)
    }

    /// Verdicts from the limit test, the audit and the `κρ` bound.
    fn conclude(&mut self, probe: &Probe, side: Side, property: &str, calm_property: &str) {
        let gaps = probe.shell_gaps(side);
        let limit = limit_test(&gaps, probe.eps);
        self.verdict = match limit {
            Limit::Fail => Verdict::Refuted,
            Limit::Pass if self.audit_passed() => Verdict::Certified,
            _ => Verdict::Inconclusive,
        };
        if limit == Limit::Fail {
            let w = probe.witness(property, |i| side.gap(probe.grid[i].mu, probe.mu_bar));
            self.witnesses.extend(w);
        }
        if self.audit_passed() {
            if let (Some(k1), Some(k2), Some(a), Some(l)) = (self.kappa1, self.kappa2, self.alpha, self.ell) {
                self.kappa = finite(Some(kappa(k1, k2, a, l)));
            }
        }
        self.calm = match (self.verdict, self.kappa) {
            (Verdict::Refuted, _) => Verdict::Refuted,
            (Verdict::Certified, Some(k)) => match probe.bound_violation(side, k) {
                None => Verdict::Certified,
                Some(_) => {
                    let w = probe.witness(calm_property, |i| {
                        side.gap(probe.grid[i].mu, probe.mu_bar) - k * probe.rho[i] - BOUND_SLACK
                    });
                    self.witnesses.extend(w);
                    Verdict::Inconclusive
                }
            },
            _ => Verdict::Inconclusive,
        };
    }
}

fn usc_part(inst: &ProblemInstance, schedule: &SamplingSchedule, probe: &Probe) -> Part {
    const P: &str = "usc";
    let gf = inst.g.single_fn().expect("validated").clone();
    let mut part = Part::default();
    part.check(
        P,
        "closed graph of F",
        true,
        format!("{} has closed graph", inst.map.class_name()),
    );

    let phi_bar = inst.phi(&inst.xbar, &inst.pbar);
    part.check(
        P,
        "nominal point attains mu(pbar)",
        probe.mu_bar >= phi_bar - 1e-9 * (1.0 + phi_bar.abs()),
        format!("phi(xbar, pbar) = {phi_bar}, mu(pbar) = {}", probe.mu_bar),
    );

    let gbar = gf.eval(&inst.xbar, &inst.pbar);
    let mut params = vec![inst.pbar.clone()];
    params.extend(
        probe
            .grid
            .iter()
            .zip(&probe.shell)
            .filter(|(_, s)| **s == Some(0))
            .map(|(r, _)| r.p.clone()),
    );
    let ell = params
        .iter()
        .map(|p| {
            lipschitz_like_estimate(
                &inst.g,
                p,
                &inst.xbar,
                inst.audit_radius,
                &gbar,
                f64::INFINITY,
                schedule,
            )
            .map_or(f64::INFINITY, |e| e.value)
        })
        .fold(0.0, f64::max);
    part.ell = finite(Some(ell));
    part.check(
        P,
        "g(., p) Lipschitz near xbar uniformly in p",
        part.ell.is_some(),
        format!("modulus l = {ell} on a ball of radius {}", inst.audit_radius),
    );

    part.kappa2 = finite(constraint_calmness(inst, &inst.xbar, &probe.scaled));
    part.check(
        P,
        "g(xbar, .) calm at pbar",
        part.kappa2.is_some(),
        format!("calmness modulus {}", show(part.kappa2)),
    );

    let ahat = inst
        .map
        .evaluate(&inst.xbar)
        .and_then(|v| v.project(&gbar))
        .and_then(|ybar| alpha_hat(&inst.map, &inst.xbar, &ybar, schedule));
    match ahat {
        Ok(a) => {
            let passed = part.ell.is_some_and(|l| a.value > l);
            if passed {
                part.alpha = Some(choose_alpha(a.value, ell));
            }
            let detail = if passed {
                format!("l = {ell} < covering constant {}", a.value)
            } else {
                format!("l = {ell} is not below the covering constant {}", a.value)
            };
            part.check(
                P,
                "Lipschitz modulus l below the covering constant of F",
                passed,
                detail,
            );
        }
        Err(e) => part.check(
            P,
            "Lipschitz modulus l below the covering constant of F",
            false,
            e.to_string(),
        ),
    }

    let gaps = cost_gaps(inst, &inst.xbar, &inst.pbar, &probe.scaled, Side::Above);
    let eps = limit_tolerance(probe.scaled.eta_sequence.last().copied().unwrap_or(0.0), phi_bar);
    let last = gaps.last().copied().unwrap_or(f64::INFINITY);
    part.check(
        P,
        "cost upper semicontinuous at (xbar, pbar)",
        last <= eps,
        format!("largest increase {last} on the smallest ball, tolerance {eps}"),
    );

    part.kappa1 = finite(cost_calmness(inst, &inst.xbar, &inst.pbar, &probe.scaled));
    part.conclude(probe, Side::Above, P, "calm_above");
    part
}

/// Up to `count` evenly spaced points of `pts`, with `first` in front.
fn anchors(first: &Vector, pts: &[Vector], count: usize) -> Vec<Vector> {
    let mut out = vec![first.clone()];
    if !pts.is_empty() {
        let step = pts.len().div_ceil(count.saturating_sub(1).max(1));
        out.extend(pts.iter().step_by(step.max(1)).filter(|u| *u != first).cloned());
    }
    out.truncate(count);
    out
}

fn lsc_part(inst: &ProblemInstance, schedule: &SamplingSchedule, probe: &Probe) -> Part {
    const P: &str = "lsc";
    let gf = inst.g.single_fn().expect("validated").clone();
    let mut part = Part::default();
    let sample = feasible_set_sample(inst, &inst.pbar, inst.resolution);
    let us = anchors(&inst.xbar, &sample.points, MAX_LSC_ANCHORS);
    part.check(
        P,
        "feasible set at pbar nonempty",
        true,
        format!(
            "{} feasible points found, {} used as anchors",
            sample.points.len().max(1),
            us.len()
        ),
    );

    let (dlo, dhi) = inst.domain();
    let delta = inst.audit_radius;
    let mut alpha_s = f64::INFINITY;
    let mut alpha_err = None;
    for u in &us {
        let mut cands = vec![u.clone()];
        for i in 0..u.len() {
            for s in [-1.0, 1.0] {
                let mut c = u.clone();
                c[i] = (c[i] + s * delta).clamp(dlo[i], dhi[i]);
                cands.push(c);
            }
        }
        for c in cands {
            match alpha_hat_semilocal(&inst.map, &c, schedule) {
                Ok(a) => alpha_s = alpha_s.min(a.value),
                Err(e) => {
                    alpha_s = 0.0;
                    alpha_err.get_or_insert(e.to_string());
                }
            }
        }
    }

    let ell = us
        .iter()
        .map(|u| {
            lipschitz_like_estimate(
                &inst.g,
                &inst.pbar,
                u,
                delta,
                &gf.eval(u, &inst.pbar),
                f64::INFINITY,
                schedule,
            )
            .map_or(f64::INFINITY, |e| e.value)
        })
        .fold(0.0, f64::max);
    part.ell = finite(Some(ell));
    part.check(
        P,
        "g(., pbar) Lipschitz near the feasible set",
        part.ell.is_some(),
        format!("modulus l = {ell} on balls of radius {delta}"),
    );
    let passed = alpha_err.is_none() && part.ell.is_some_and(|l| alpha_s > l);
    if passed {
        part.alpha = Some(choose_alpha(alpha_s, ell));
    }
    let detail = match &alpha_err {
        Some(e) => e.clone(),
        None if passed => format!("semilocal covering constant {alpha_s} > l = {ell}"),
        None => format!("semilocal covering constant {alpha_s} is not above l = {ell}"),
    };
    part.check(
        P,
        "semilocal covering constant of F above l near the feasible set",
        passed,
        detail,
    );

    let k2 = us
        .iter()
        .map(|u| constraint_calmness(inst, u, &probe.scaled).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    part.kappa2 = finite(Some(k2));
    part.check(
        P,
        "g(x, .) calm at pbar uniformly near the feasible set",
        part.kappa2.is_some(),
        format!("calmness modulus {k2}"),
    );

    let rho_min = probe.scaled.eta_sequence.last().copied().unwrap_or(0.0);
    let (worst, worst_eps, worst_u) = us
        .iter()
        .map(|u| {
            let gaps = cost_gaps(inst, u, &inst.pbar, &probe.scaled, Side::Below);
            let eps = limit_tolerance(rho_min, inst.phi(u, &inst.pbar));
            (gaps.last().copied().unwrap_or(f64::INFINITY), eps, u)
        })
        .max_by(|a, b| (a.0 - a.1).total_cmp(&(b.0 - b.1)))
        .expect("anchors are nonempty");
    part.check(
        P,
        "cost lower semicontinuous uniformly on the feasible set",
        worst <= worst_eps,
        format!(
            "largest decrease {worst} near x = {:?}, tolerance {worst_eps}",
            worst_u.as_slice()
        ),
    );

    let k1 = us
        .iter()
        .map(|u| cost_calmness(inst, u, &inst.pbar, &probe.scaled).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    part.kappa1 = finite(Some(k1));
    part.conclude(probe, Side::Below, P, "calm_below");
    part
}

fn report(inst: &ProblemInstance, schedule: &SamplingSchedule, probe: Probe) -> MarginalReport {
    MarginalReport {
        pbar: inst.pbar.clone(),
        mu_bar: probe.mu_bar,
        limit_tolerance: probe.eps,
        seed: schedule.seed,
        grid: probe.grid,
        verdicts: Verdicts::default(),
        moduli: MarginalModuli::default(),
        audit: Vec::new(),
        witnesses: Vec::new(),
    }
}

fn invalid_schedule(inst: &ProblemInstance, schedule: &SamplingSchedule, reason: String) -> MarginalReport {
    let mu_bar = super::evaluate_mu(inst, &inst.pbar, inst.resolution);
    MarginalReport {
        pbar: inst.pbar.clone(),
        mu_bar,
        limit_tolerance: 0.0,
        seed: schedule.seed,
        grid: Vec::new(),
        verdicts: Verdicts::default(),
        moduli: MarginalModuli::default(),
        audit: vec![AuditItem {
            property: "schedule".into(),
            assumption: "valid sampling schedule".into(),
            passed: false,
            detail: reason,
        }],
        witnesses: Vec::new(),
    }
}

fn moduli_of(part: &Part) -> MarginalModuli {
    MarginalModuli {
        kappa1: part.kappa1,
        kappa2: part.kappa2,
        kappa: part.kappa,
        kappa_product: match (part.kappa, part.kappa1, part.kappa2, part.alpha, part.ell) {
            (Some(_), Some(k1), Some(k2), Some(a), Some(l)) => Some(kappa_product(k1, k2, a, l)),
            _ => None,
        },
        alpha: part.alpha,
        ell: part.ell,
        local_lipschitz_estimate: None,
    }
}

/// Upper semicontinuity of `μ` at `p̄` and calmness from above,
/// `μ(p) ≤ μ(p̄) + κ|p − p̄|`.
pub fn certify_usc(inst: &ProblemInstance, schedule: &SamplingSchedule) -> MarginalReport {
    if let Err(e) = schedule.validate() {
        return invalid_schedule(inst, schedule, e.to_string());
    }
    let probe = Probe::new(inst, schedule);
    let part = usc_part(inst, schedule, &probe);
    let mut out = report(inst, schedule, probe);
    out.verdicts.usc = part.verdict;
    out.verdicts.calm_above = part.calm;
    out.moduli = moduli_of(&part);
    out.audit = part.audit;
    out.witnesses = part.witnesses;
    out
}

/// Lower semicontinuity of `μ` at `p̄` and calmness from below,
/// `μ(p) ≥ μ(p̄) − κ|p − p̄|`.
pub fn certify_lsc(inst: &ProblemInstance, schedule: &SamplingSchedule) -> MarginalReport {
    if let Err(e) = schedule.validate() {
        return invalid_schedule(inst, schedule, e.to_string());
    }
    let probe = Probe::new(inst, schedule);
    let part = lsc_part(inst, schedule, &probe);
    let mut out = report(inst, schedule, probe);
    out.verdicts.lsc = part.verdict;
    out.verdicts.calm_below = part.calm;
    out.moduli = moduli_of(&part);
    out.audit = part.audit;
    out.witnesses = part.witnesses;
    out
}

fn combined(inst: &ProblemInstance, schedule: &SamplingSchedule, probe: Probe) -> (MarginalReport, Vec<f64>) {
    let up = usc_part(inst, schedule, &probe);
    let low = lsc_part(inst, schedule, &probe);
    let join = |a: Option<f64>, b: Option<f64>, f: fn(f64, f64) -> f64| Some(f(a?, b?));
    let k1 = join(up.kappa1, low.kappa1, f64::max);
    let k2 = join(up.kappa2, low.kappa2, f64::max);
    let alpha = join(up.alpha, low.alpha, f64::min);
    let ell = join(up.ell, low.ell, f64::max);
    let audits_ok = up.audit_passed() && low.audit_passed();
    let k = match (k1, k2, alpha, ell) {
        (Some(k1), Some(k2), Some(a), Some(l)) if audits_ok && a > l => finite(Some(kappa(k1, k2, a, l))),
        _ => None,
    };
    let mut witnesses = Vec::new();
    let calm = match (up.calm, low.calm, k) {
        (Verdict::Certified, Verdict::Certified, Some(k)) => {
            let violated = [Side::Above, Side::Below]
                .into_iter()
                .find(|s| probe.bound_violation(*s, k).is_some());
            match violated {
                None => Verdict::Certified,
                Some(side) => {
                    witnesses.extend(probe.witness("calm", |i| {
                        side.gap(probe.grid[i].mu, probe.mu_bar) - k * probe.rho[i] - BOUND_SLACK
                    }));
                    Verdict::Inconclusive
                }
            }
        }
        (a, b, _) if a == Verdict::Refuted || b == Verdict::Refuted => Verdict::Refuted,
        _ => Verdict::Inconclusive,
    };
    let moduli = MarginalModuli {
        kappa1: k1,
        kappa2: k2,
        kappa: k,
        kappa_product: match (k, k1, k2, alpha, ell) {
            (Some(_), Some(k1), Some(k2), Some(a), Some(l)) => Some(kappa_product(k1, k2, a, l)),
            _ => None,
        },
        alpha,
        ell,
        local_lipschitz_estimate: None,
    };
    let slopes = shell_slopes(&probe);
    let mut out = report(inst, schedule, probe);
    out.verdicts = Verdicts {
        usc: up.verdict,
        lsc: low.verdict,
        continuous: Verdict::both(up.verdict, low.verdict),
        calm_above: up.calm,
        calm_below: low.calm,
        calm,
        lipschitz: Verdict::Inconclusive,
    };
    out.moduli = moduli;
    out.audit = up.audit.into_iter().chain(low.audit).collect();
    out.witnesses = up.witnesses.into_iter().chain(low.witnesses).chain(witnesses).collect();
    (out, slopes)
}

/// Continuity (usc and lsc) and two-sided calmness
/// `|μ(p) − μ(p̄)| ≤ κ|p − p̄|` with `κ` assembled from both fragments.
pub fn certify_continuity_calmness(inst: &ProblemInstance, schedule: &SamplingSchedule) -> MarginalReport {
    if let Err(e) = schedule.validate() {
        return invalid_schedule(inst, schedule, e.to_string());
    }
    combined(inst, schedule, Probe::new(inst, schedule)).0
}

/// Largest two-point slope of `μ` within each shell together with `p̄`.
fn shell_slopes(probe: &Probe) -> Vec<f64> {
    (0..probe.shells)
        .filter_map(|k| {
            let idx: Vec<usize> = std::iter::once(0)
                .chain((1..probe.grid.len()).filter(|&i| probe.shell[i] == Some(k)))
                .collect();
            if idx.len() < 2 {
                return None;
            }
            let mut best: f64 = 0.0;
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    let (mi, mj) = (probe.grid[i].mu, probe.grid[j].mu);
                    let dist = (&probe.grid[i].p - &probe.grid[j].p).norm();
                    if dist == 0.0 {
                        continue;
                    }
                    let s = if mi.is_finite() && mj.is_finite() {
                        (mi - mj).abs() / dist
                    } else if mi == mj {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    best = best.max(s);
                }
            }
            Some(best)
        })
        .collect()
}

/// Local Lipschitz continuity of `μ` near `p̄`: joint convexity of the cost,
/// convexity of the pair `(g, F)` and of the graph of `S`, together with
/// continuity at `p̄`.
pub fn certify_lipschitz(inst: &ProblemInstance, schedule: &SamplingSchedule) -> MarginalReport {
    const P: &str = "lipschitz";
    if let Err(e) = schedule.validate() {
        return invalid_schedule(inst, schedule, e.to_string());
    }
    let (mut out, slopes) = combined(inst, schedule, Probe::new(inst, schedule));
    let xb = inst.domain();
    let pb = inst.params();
    let seed = schedule.seed;
    let mut items = Vec::new();
    let mut check = |assumption: &str, passed: bool, detail: String| {
        items.push(AuditItem {
            property: P.into(),
            assumption: assumption.into(),
            passed,
            detail,
        })
    };

    match inst.phi_convex {
        Some(c) => check("cost jointly convex", c, "declared".into()),
        None => {
            let phi = |x: &Vector, p: &Vector| inst.phi(x, p);
            let (gap, seg) = cost_convexity_violation(&phi, &xb, &pb, 64, seed);
            let ok = seg.is_none();
            let detail = match seg {
                None => "no violation on sampled segments".into(),
                Some((z1, z2, l)) => format!(
                    "convexity gap {gap} between {:?} and {:?} at weight {l}",
                    z1.as_slice(),
                    z2.as_slice()
                ),
            };
            check("cost jointly convex", ok, detail);
        }
    }

    match check_convex_pair(&inst.g, &inst.map, &inst.domain_box, &inst.param_box, 24, seed) {
        Ok(r) => {
            let detail = match &r.witness {
                None => format!(
                    "{} combinations of {} graph points",
                    r.combinations_tested, r.graph_points
                ),
                Some(w) => format!(
                    "combination {:?} at weight {} lies {} away from F",
                    w.combination.as_slice(),
                    w.lambda,
                    w.distance
                ),
            };
            check("pair (g, F) convex", r.holds_on_samples, detail);
        }
        Err(e) => check("pair (g, F) convex", false, e.to_string()),
    }

    let graph = graph_convexity_violation(&inst.map, &inst.g, &xb, &pb, 24, seed);
    let detail = match &graph {
        None => "midpoints of sampled feasible pairs stay feasible".into(),
        Some(((x1, p1), (x2, p2), l)) => format!(
            "combination of ({:?}, {:?}) and ({:?}, {:?}) at weight {l} is infeasible",
            x1.as_slice(),
            p1.as_slice(),
            x2.as_slice(),
            p2.as_slice()
        ),
    };
    check("graph of the feasible set map convex", graph.is_none(), detail);

    let audits_ok = items.iter().all(|a| a.passed);
    let v = out.verdicts;
    out.verdicts.lipschitz = if [v.continuous, v.usc, v.lsc].contains(&Verdict::Refuted) {
        Verdict::Refuted
    } else if audits_ok && v.continuous == Verdict::Certified {
        Verdict::Certified
    } else {
        Verdict::Inconclusive
    };
    out.moduli.local_lipschitz_estimate = slopes.last().copied();
    out.audit.extend(items);
    out
}
