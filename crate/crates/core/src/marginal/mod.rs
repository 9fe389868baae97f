//! Optimal value functions `μ(p) = inf { φ(x, p) : 0 ∈ F(x) − g(x, p) }`
//! over a compact search box, with sampled certificates for their
//! semicontinuity, calmness and Lipschitz continuity.

mod certify;
mod convexity;
mod feasible;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::Vector;
use crate::serde_ext;
use crate::setmaps::{evaluate_distance, ConvexSet, ParamMap, SetValuedMap, MEMBERSHIP_TOL};

pub use certify::{
    certify_continuity_calmness, certify_lipschitz, certify_lsc, certify_usc, kappa, kappa_product, AuditItem,
    MarginalModuli, MarginalReport, Verdict, Verdicts, Witness,
};
pub use convexity::{check_convex_pair, ConvexPairReport, ConvexPairWitness, LAMBDAS};
pub use feasible::FEASIBILITY_TOL;

use feasible::{feasible_detail, Piece};

pub type CostFn = Arc<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>;

/// `minimize φ(x, p) subject to 0 ∈ F(x) − g(x, p)` with `x` restricted to
/// `domain_box` and `p` to `param_box`.
#[derive(Clone)]
pub struct ProblemInstance {
    pub map: SetValuedMap,
    pub g: ParamMap,
    pub phi: CostFn,
    pub xbar: Vector,
    pub pbar: Vector,
    pub domain_box: ConvexSet,
    pub param_box: ConvexSet,
    /// Grid points per axis of `domain_box` when sampling `S(p)`.
    pub resolution: usize,
    /// Radius of the `x`-neighborhoods probed by the assumption audits.
    pub audit_radius: f64,
    /// Declared joint convexity of `φ`; sampled when `None`.
    pub phi_convex: Option<bool>,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("map", &self.map.class_name())
            .field("g", &self.g)
            .field("xbar", &self.xbar.as_slice())
            .field("pbar", &self.pbar.as_slice())
            .field("domain_box", &self.domain_box)
            .field("param_box", &self.param_box)
            .field("resolution", &self.resolution)
            .finish()
    }
}

fn box_bounds(set: &ConvexSet, what: &str) -> Result<(Vector, Vector)> {
    match set {
        ConvexSet::Box { lower, upper } if lower.iter().chain(upper.iter()).all(|v| v.is_finite()) => {
            Ok((lower.clone(), upper.clone()))
        }
        _ => Err(CovaraError::InvalidInput(format!("{what} must be a bounded box"))),
    }
}

impl ProblemInstance {
    pub fn new(
        map: SetValuedMap,
        g: ParamMap,
        phi: impl Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
        xbar: Vector,
        pbar: Vector,
        domain_box: ConvexSet,
        param_box: ConvexSet,
    ) -> Result<Self> {
        let inst = Self {
            map,
            g,
            phi: Arc::new(phi),
            xbar,
            pbar,
            domain_box,
            param_box,
            resolution: 201,
            audit_radius: 0.5,
            phi_convex: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution.max(2);
        self
    }

    pub fn with_audit_radius(mut self, r: f64) -> Self {
        self.audit_radius = r;
        self
    }

    pub fn declare_phi_convex(mut self, convex: bool) -> Self {
        self.phi_convex = Some(convex);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.g.validate()?;
        let gf = self
            .g
            .single_fn()
            .ok_or_else(|| CovaraError::InvalidInput("the constraint map g must be single-valued".into()))?;
        let (xl, _) = box_bounds(&self.domain_box, "domain_box")?;
        let (pl, _) = box_bounds(&self.param_box, "param_box")?;
        check_dim("base point", self.map.input_dim(), self.xbar.len())?;
        check_dim("domain box", self.map.input_dim(), xl.len())?;
        check_dim("constraint input", self.map.input_dim(), gf.x_dim())?;
        check_dim("constraint output", self.map.output_dim(), gf.output_dim())?;
        check_dim("nominal parameter", gf.p_dim(), self.pbar.len())?;
        check_dim("parameter box", gf.p_dim(), pl.len())?;
        if !(self.audit_radius > 0.0) || !self.audit_radius.is_finite() {
            return Err(CovaraError::InvalidInput("audit_radius must be positive".into()));
        }
        if !self.domain_box.contains(&self.xbar, MEMBERSHIP_TOL) {
            return Err(CovaraError::InvalidInput("xbar lies outside domain_box".into()));
        }
        if !self.param_box.contains(&self.pbar, MEMBERSHIP_TOL) {
            return Err(CovaraError::InvalidInput("pbar lies outside param_box".into()));
        }
        let d = evaluate_distance(&self.map, &self.xbar, &gf.eval(&self.xbar, &self.pbar))?;
        if d > MEMBERSHIP_TOL {
            return Err(CovaraError::NotOnGraph { distance: d });
        }
        if !self.phi(&self.xbar, &self.pbar).is_finite() {
            return Err(CovaraError::InvalidInput(
                "the cost must be finite at (xbar, pbar)".into(),
            ));
        }
        Ok(())
    }

    /// `φ(x, p)` with NaN read as `+∞`.
    pub fn phi(&self, x: &Vector, p: &Vector) -> f64 {
        let v = (self.phi)(x, p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    pub(crate) fn domain(&self) -> (Vector, Vector) {
        box_bounds(&self.domain_box, "domain_box").expect("validated")
    }

    pub(crate) fn params(&self) -> (Vector, Vector) {
        box_bounds(&self.param_box, "param_box").expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSample {
    #[serde(with = "serde_ext::vector")]
    pub p: Vector,
    #[serde(with = "serde_ext::vector_list")]
    pub points: Vec<Vector>,
    /// Whether the points come from exact branch enumeration.
    pub exhaustive: bool,
}

/// Points of `S(p)` inside the domain box; empty when none were found.
pub fn feasible_set_sample(inst: &ProblemInstance, p: &Vector, resolution: usize) -> FeasibleSample {
    let (lo, hi) = inst.domain();
    let d = feasible_detail(&inst.map, &inst.g, p, &lo, &hi, resolution);
    FeasibleSample {
        p: p.clone(),
        exhaustive: d.pieces.is_some(),
        points: d.points,
    }
}

/// `μ(p)` over the domain box, `+∞` when `S(p)` has no sampled point.
///
/// The smallest sampled cost is refined by a compass search that stays
/// inside the branch it started from, so the value is an upper estimate of
/// the true infimum.
pub fn evaluate_mu(inst: &ProblemInstance, p: &Vector, resolution: usize) -> f64 {
    mu_with_count(inst, p, resolution).0
}

fn mu_with_count(inst: &ProblemInstance, p: &Vector, resolution: usize) -> (f64, usize) {
    let (lo, hi) = inst.domain();
    let d = feasible_detail(&inst.map, &inst.g, p, &lo, &hi, resolution);
    let count = d.points.len();
    let Some((best, fbest)) = d
        .points
        .iter()
        .enumerate()
        .map(|(i, x)| (i, inst.phi(x, p)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return (f64::INFINITY, 0);
    };
    let piece = d.pieces.as_ref().map(|ps| &ps[d.owner[best]]);
    let step0 = (0..lo.len()).map(|i| hi[i] - lo[i]).fold(0.0, f64::max) / (resolution.max(2) - 1) as f64;
    let (_, f) = compass_search(inst, p, &d.points[best], fbest, piece, step0, &lo, &hi);
    (f + 0.0, count)
}

#[allow(clippy::too_many_arguments)]
fn compass_search(
    inst: &ProblemInstance,
    p: &Vector,
    x0: &Vector,
    f0: f64,
    piece: Option<&Piece>,
    step0: f64,
    lo: &Vector,
    hi: &Vector,
) -> (Vector, f64) {
    if !f0.is_finite() || step0 <= 0.0 {
        return (x0.clone(), f0);
    }
    let gf = inst.g.single_fn().expect("validated");
    let base: Vec<Vector> = match piece {
        Some(pc) => pc.free_directions(),
        None => (0..x0.len())
            .map(|i| {
                let mut e = Vector::zeros(x0.len());
                e[i] = 1.0;
                e
            })
            .collect(),
    };
    let dirs: Vec<Vector> = base.iter().flat_map(|d| [d.clone(), -d]).collect();
    if dirs.is_empty() {
        return (x0.clone(), f0);
    }
    let feasible = |x: &Vector| {
        let inside = x
            .iter()
            .zip(lo.iter().zip(hi.iter()))
            .all(|(v, (l, h))| *v >= *l && *v <= *h);
        inside
            && match piece {
                Some(pc) => pc.contains(x, 1e-12),
                None => true,
            }
            && feasible::residual(&inst.map, gf.as_ref(), x, p) <= FEASIBILITY_TOL
    };
    let (mut x, mut f) = (x0.clone(), f0);
    let mut step = step0;
    let floor = 1e-10 * (1.0 + x0.amax());
    let mut evals = 0usize;
    while step > floor && evals < 20_000 {
        let mut moved = false;
        for d in &dirs {
            let cand = &x + d * step;
            evals += 1;
            if !feasible(&cand) {
                continue;
            }
            let fc = inst.phi(&cand, p);
            if fc < f {
                x = cand;
                f = fc;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (x, f)
}

/// One row of a `μ` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(with = "serde_ext::vector")]
    pub p: Vector,
    #[serde(with = "serde_ext::ext_real")]
    pub mu: f64,
    pub feasible_count: usize,
}

/// `μ` on a parameter grid, evaluated in parallel and returned in grid order.
pub fn evaluate_mu_grid(inst: &ProblemInstance, grid: &[Vector]) -> Vec<GridRow> {
    grid.par_iter()
        .map(|p| {
            let (mu, feasible_count) = mu_with_count(inst, p, inst.resolution);
            GridRow {
                p: p.clone(),
                mu,
                feasible_count,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
