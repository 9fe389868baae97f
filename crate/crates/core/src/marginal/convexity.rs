//! Sampled convexity tests for the pair `(g, F)`, for `F` as a convex
//! process, for the cost, and for the graph of `S`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::feasible::{box_grid, feasible_detail, residual, FEASIBILITY_TOL};
use crate::error::{check_dim, CovaraError, Result};
use crate::linalg::Vector;
use crate::sampling;
use crate::serde_ext;
use crate::setmaps::{ConvexSet, ParamMap, SetValuedMap};

/// Fixed mixing weights tried first on every pair, in order.
pub const LAMBDAS: [f64; 5] = [0.5, 0.25, 0.75, 0.0, 1.0];
const RANDOM_LAMBDAS: usize = 2;
const MEMBER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPairWitness {
    #[serde(with = "serde_ext::vector")]
    pub x1: Vector,
    #[serde(with = "serde_ext::vector")]
    pub p1: Vector,
    #[serde(with = "serde_ext::vector")]
    pub x2: Vector,
    #[serde(with = "serde_ext::vector")]
    pub p2: Vector,
    pub lambda: f64,
    /// `λ g(x₁, p₁) + (1 − λ) g(x₂, p₂)`.
    #[serde(with = "serde_ext::vector")]
    pub combination: Vector,
    /// Its distance to `F(λ x₁ + (1 − λ) x₂)`.
    #[serde(with = "serde_ext::ext_real")]
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPairReport {
    pub holds_on_samples: bool,
    /// Worst violation found, if any.
    pub witness: Option<ConvexPairWitness>,
    /// Outcome of the convex-process test, when `F` is cone-valued.
    pub process_holds: Option<bool>,
    pub graph_points: usize,
    pub combinations_tested: usize,
}

fn bounds(set: &ConvexSet, what: &str) -> Result<(Vector, Vector)> {
    match set {
        ConvexSet::Box { lower, upper } if lower.iter().chain(upper.iter()).all(|v| v.is_finite()) => {
            Ok((lower.clone(), upper.clone()))
        }
        _ => Err(CovaraError::InvalidInput(format!("{what} must be a bounded box"))),
    }
}

fn within_tol(d: f64, v: &Vector) -> bool {
    d <= MEMBER_TOL * (1.0 + v.amax())
}

/// Graph points `(x, p)` with `g(x, p) ∈ F(x)`: grid and random pairs that
/// happen to be feasible, then enumerated feasible points for sampled `p`.
fn graph_points(
    map: &SetValuedMap,
    g: &ParamMap,
    xb: &(Vector, Vector),
    pb: &(Vector, Vector),
    budget: usize,
    seed: u64,
) -> Vec<(Vector, Vector)> {
    let gf = g.single_fn().expect("single-valued").clone();
    let mut out: Vec<(Vector, Vector)> = Vec::new();
    let per_axis = 3usize;
    let xs = box_grid(&xb.0, &xb.1, per_axis);
    let ps = box_grid(&pb.0, &pb.1, per_axis);
    for x in &xs {
        for p in &ps {
            if residual(map, gf.as_ref(), x, p) <= FEASIBILITY_TOL {
                out.push((x.clone(), p.clone()));
            }
        }
    }
    let mut rng = sampling::rng(seed, 700);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, b: &(Vector, Vector)| {
        Vector::from_iterator(
            b.0.len(),
            (0..b.0.len()).map(|i| b.0[i] + (b.1[i] - b.0[i]) * rng.random::<f64>()),
        )
    };
    for _ in 0..budget {
        let x = draw(&mut rng, xb);
        let p = draw(&mut rng, pb);
        if residual(map, gf.as_ref(), &x, &p) <= FEASIBILITY_TOL {
            out.push((x, p));
        }
    }
    let mut ps_random: Vec<Vector> = ps.clone();
    ps_random.extend((0..budget.min(32)).map(|_| draw(&mut rng, pb)));
    for p in ps_random {
        if out.len() >= 4 * budget {
            break;
        }
        let d = feasible_detail(map, g, &p, &xb.0, &xb.1, 5);
        let step = (d.points.len() / 4).max(1);
        out.extend(d.points.into_iter().step_by(step).map(|x| (x, p.clone())));
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|(x, p)| {
        seen.insert(
            x.iter()
                .chain(p.iter())
                .map(|v| (v + 0.0).to_bits())
                .collect::<Vec<_>>(),
        )
    });
    out.truncate(budget.max(2));
    out
}

/// Tests `λ g(x₁, p₁) + (1 − λ) g(x₂, p₂) ∈ F(λ x₁ + (1 − λ) x₂)` on sampled
/// graph pairs inside the given boxes, and the convex-process inclusions
/// `F(x + z) ⊇ F(x) + F(z)`, `F(λx) ⊇ λF(x)` when `F` is cone-valued.
pub fn check_convex_pair(
    g: &ParamMap,
    map: &SetValuedMap,
    x_box: &ConvexSet,
    p_box: &ConvexSet,
    sample_budget: usize,
    seed: u64,
) -> Result<ConvexPairReport> {
    map.validate()?;
    g.validate()?;
    let gf = g
        .single_fn()
        .ok_or_else(|| CovaraError::InvalidInput("the pair test needs a single-valued g".into()))?
        .clone();
    let xb = bounds(x_box, "the x sampling box")?;
    let pb = bounds(p_box, "the parameter sampling box")?;
    check_dim("x sampling box", map.input_dim(), xb.0.len())?;
    check_dim("parameter sampling box", gf.p_dim(), pb.0.len())?;
    check_dim("pair output", map.output_dim(), gf.output_dim())?;
    check_dim("pair input", map.input_dim(), gf.x_dim())?;

    let pts = graph_points(map, g, &xb, &pb, sample_budget.max(2), seed);
    let vals: Vec<Vector> = pts.iter().map(|(x, p)| gf.eval(x, p)).collect();
    let mut rng = sampling::rng(seed, 710);
    let mut worst: Option<ConvexPairWitness> = None;
    let mut tested = 0usize;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let mut lambdas = LAMBDAS.to_vec();
            lambdas.extend((0..RANDOM_LAMBDAS).map(|_| rng.random::<f64>()));
            for lambda in lambdas {
                tested += 1;
                let x = &pts[i].0 * lambda + &pts[j].0 * (1.0 - lambda);
                let y = &vals[i] * lambda + &vals[j] * (1.0 - lambda);
                let d = map.evaluate(&x).and_then(|v| v.distance(&y)).unwrap_or(f64::INFINITY);
                if !within_tol(d, &y) && worst.as_ref().is_none_or(|w| d > w.distance) {
                    worst = Some(ConvexPairWitness {
                        x1: pts[i].0.clone(),
                        p1: pts[i].1.clone(),
                        x2: pts[j].0.clone(),
                        p2: pts[j].1.clone(),
                        lambda,
                        combination: y,
                        distance: d,
                    });
                }
            }
        }
    }
    let process_holds = if is_cone_valued(map) {
        Some(process_test(map, &xb, seed)?)
    } else {
        None
    };
    Ok(ConvexPairReport {
        holds_on_samples: worst.is_none() && process_holds != Some(false),
        witness: worst,
        process_holds,
        graph_points: pts.len(),
        combinations_tested: tested,
    })
}

fn is_cone_valued(map: &SetValuedMap) -> bool {
    match map {
        SetValuedMap::ConstantSet { set, .. } => set.is_cone(),
        SetValuedMap::Affine { b, .. } => b.iter().all(|v| *v == 0.0),
        SetValuedMap::Negate(inner) => is_cone_valued(inner),
        SetValuedMap::Sum(a, b) => is_cone_valued(a) && is_cone_valued(b),
        _ => false,
    }
}

fn process_test(map: &SetValuedMap, xb: &(Vector, Vector), seed: u64) -> Result<bool> {
    let m = map.output_dim();
    let xs = box_grid(&xb.0, &xb.1, 3);
    let dirs = sampling::sphere_directions(m, 2 * m + 2, seed, 720);
    let mut ok = true;
    for (k, x) in xs.iter().enumerate() {
        let z = &xs[(k * 7 + 3) % xs.len()];
        let fx = map.evaluate(x)?;
        let fz = map.evaluate(z)?;
        let ys = fx.sample_near(&Vector::zeros(m), &dirs, 1.0 + x.amax())?;
        let ws = fz.sample_near(&Vector::zeros(m), &dirs, 1.0 + z.amax())?;
        let fsum = map.evaluate(&(x + z))?;
        for (y, w) in ys.iter().zip(ws.iter().cycle()) {
            let s = y + w;
            ok &= within_tol(fsum.distance(&s)?, &s);
            for lambda in [0.0, 0.5, 2.0] {
                let fl = map.evaluate(&(x * lambda))?;
                let ly = y * lambda;
                ok &= within_tol(fl.distance(&ly)?, &ly);
            }
        }
    }
    Ok(ok)
}

/// Largest violation of `φ(λ z₁ + (1 − λ) z₂) ≤ λ φ(z₁) + (1 − λ) φ(z₂)` on
/// sampled segments of the box `X × P`, with the offending segment.
pub(crate) fn cost_convexity_violation(
    phi: &(dyn Fn(&Vector, &Vector) -> f64 + Sync),
    xb: &(Vector, Vector),
    pb: &(Vector, Vector),
    segments: usize,
    seed: u64,
) -> (f64, Option<(Vector, Vector, f64)>) {
    let n = xb.0.len();
    let lo = Vector::from_iterator(n + pb.0.len(), xb.0.iter().chain(pb.0.iter()).copied());
    let hi = Vector::from_iterator(n + pb.0.len(), xb.1.iter().chain(pb.1.iter()).copied());
    let mut pts = box_grid(&lo, &hi, 3);
    let mut h = sampling::Halton::new(lo.len(), seed, 730);
    pts.extend((0..segments).map(|_| {
        let u = h.next_point();
        Vector::from_iterator(lo.len(), (0..lo.len()).map(|i| lo[i] + (hi[i] - lo[i]) * u[i]))
    }));
    let split = |z: &Vector| (z.rows(0, n).into_owned(), z.rows(n, z.len() - n).into_owned());
    let eval = |z: &Vector| {
        let (x, p) = split(z);
        let v = phi(&x, &p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let vals: Vec<f64> = pts.iter().map(eval).collect();
    let mut worst = (0.0, None);
    let count = pts.len();
    for i in 0..count {
        for step in [1usize, count / 2 + 1, count / 3 + 1] {
            let j = (i + step) % count;
            if i == j {
                continue;
            }
            for lambda in [0.25, 0.5, 0.75] {
                let z = &pts[i] * lambda + &pts[j] * (1.0 - lambda);
                let chord = lambda * vals[i] + (1.0 - lambda) * vals[j];
                let gap = eval(&z) - chord;
                let tol = 1e-9 * (1.0 + chord.abs());
                if gap > tol && gap > worst.0 {
                    worst = (gap, Some((pts[i].clone(), pts[j].clone(), lambda)));
                }
            }
        }
    }
    worst
}

/// Two graph points `(x, p)` and the `λ` whose combination leaves the graph.
type GraphViolation = ((Vector, Vector), (Vector, Vector), f64);

/// Midpoint test for the graph of `S`: for feasible `(xᵢ, pᵢ)`, the convex
/// combination must again be feasible.
pub(crate) fn graph_convexity_violation(
    map: &SetValuedMap,
    g: &ParamMap,
    xb: &(Vector, Vector),
    pb: &(Vector, Vector),
    budget: usize,
    seed: u64,
) -> Option<GraphViolation> {
    let gf = g.single_fn()?.clone();
    let pts = graph_points(map, g, xb, pb, budget, seed);
    let mut worst: Option<(f64, GraphViolation)> = None;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for lambda in [0.5, 0.25, 0.75] {
                let x = &pts[i].0 * lambda + &pts[j].0 * (1.0 - lambda);
                let p = &pts[i].1 * lambda + &pts[j].1 * (1.0 - lambda);
                let r = residual(map, gf.as_ref(), &x, &p);
                if r > FEASIBILITY_TOL && worst.as_ref().is_none_or(|w| r > w.0) {
                    worst = Some((r, (pts[i].clone(), pts[j].clone(), lambda)));
                }
            }
        }
    }
    worst.map(|w| w.1)
}
