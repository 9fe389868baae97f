//! Covering constants, coincidence points and optimal value functions for
//! parameterized generalized equations in Euclidean spaces.
//!
//! The crate is organized bottom-up:
//!
//! * [`setmaps`]: convex-valued maps, distances, projections, normal cones.
//! * [`moduli`]: sampled covering, Lipschitz-like and calmness moduli, plus
//!   brute-force covering and metric-regularity checks.
//! * [`coincidence`]: covering steps and the coincidence-point iteration.
//! * [`gensolve`]: generalized equations and implicit functions.
//! * [`marginal`]: optimal value functions and their regularity verdicts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coincidence;
pub mod error;
pub mod gensolve;
pub mod linalg;
pub mod marginal;
pub mod moduli;
mod oracle;
pub mod sampling;
pub mod serde_ext;
pub mod setmaps;

pub use coincidence::{
    covering_step, detect_selection_discontinuity, minimal_max_jump, solve_coincidence, solve_continuation,
    solve_family, CoincidenceResult, SelectionEntry, SelectionTable, SolverConfig,
};
pub use error::{CovaraError, Result};
pub use gensolve::{
    beta, deviation_lipschitz_estimate, solve_generalized_equation, solve_implicit, theta_bound, ImplicitResult,
    ThetaTable,
};
pub use linalg::{Matrix, Vector};
pub use marginal::{
    certify_continuity_calmness, certify_lipschitz, certify_lsc, certify_usc, check_convex_pair, evaluate_mu,
    evaluate_mu_grid, feasible_set_sample, ConvexPairReport, CostFn, FeasibleSample, GridRow, MarginalModuli,
    MarginalReport, ProblemInstance, Verdict, Verdicts,
};
pub use moduli::{
    alpha_hat, alpha_hat_semilocal, alpha_point, calmness_estimate, empirical_covering, lipschitz_like_estimate,
    metric_regularity_check, CalmnessKind, CoveringCertificate, ModulusEstimate, ModulusKind,
};
pub use sampling::SamplingSchedule;
pub use setmaps::{
    evaluate_distance, normal_cone, precoderivative_apply_smooth, project, ConeSpec, ConvexSet, FnParam, FnSmooth,
    HalfComplexSquare, ParamFn, ParamMap, SetFamily, SetValue, SetValuedMap, SmoothFn,
};
