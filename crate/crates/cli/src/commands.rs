//! Subcommands, output channels and exit codes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use covara_core::moduli::{covering_rate_table, CoveringRate};
use covara_core::{
    alpha_hat, alpha_hat_semilocal, alpha_point, certify_continuity_calmness, certify_lipschitz, certify_lsc,
    certify_usc, detect_selection_discontinuity, evaluate_mu_grid, lipschitz_like_estimate, minimal_max_jump,
    solve_coincidence, solve_continuation, solve_family, solve_generalized_equation, solve_implicit, CoincidenceResult,
    CovaraError, ImplicitResult, MarginalReport, ModulusEstimate, SetValuedMap, Vector,
};
use serde::Serialize;

use crate::corpus::{self, fmt_vec, CheckResult};
use crate::document::{DocError, Format, ProblemDocument, SweepMode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Document(#[from] DocError),
    #[error("{}", diagnose(.0))]
    Core(#[from] CovaraError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Document(_) => 2,
            _ => 1,
        }
    }
}

/// Error text, prefixed with the assumption it violates where there is one.
pub fn diagnose(e: &CovaraError) -> String {
    match e {
        CovaraError::NotContractive { .. } => format!("covering assumption failed (need ell < alpha): {e}"),
        CovaraError::LaunchConditionViolated { .. } => format!("launch assumption failed: {e}"),
        CovaraError::NotOnGraph { .. } => format!("reference assumption failed (need ybar in F(xbar)): {e}"),
        _ => e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Floats(Vec<f64>);

fn parse_floats(s: &str) -> Result<Floats, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{}' is not a number", t.trim()))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Floats)
}

#[derive(Parser, Debug)]
#[command(
    name = "covara",
    version,
    about = "Covering constants, coincidence points and optimal value functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Problem document (TOML).
    #[arg(long)]
    doc: PathBuf,
    /// Sampling seed; overrides the document schedule.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report files; reports go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Property {
    Usc,
    Lsc,
    Continuity,
    Lipschitz,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Covering and Lipschitz-like moduli at the reference point.
    Moduli {
        #[command(flatten)]
        common: Common,
        /// Base point replacing xbar (comma-separated).
        #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
        at: Option<Floats>,
    },
    /// One coincidence point or generalized-equation solution.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
        p: Floats,
    },
    /// One solution of the implicit equation f(x, p) = 0.
    Implicit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
        p: Floats,
    },
    /// Optimal values or solution selections over the document sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Sampled regularity verdicts for the optimal value function.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "lipschitz")]
        property: Property,
    },
    /// The built-in instance gallery.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Subcommand, Debug)]
enum CorpusAction {
    /// Names and descriptions of the entries.
    List,
    /// Evaluates the expectations of the named entries (all when none).
    Run {
        names: Vec<String>,
        /// Also evaluate the expectations of this document.
        #[arg(long)]
        doc: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Prints the document of an entry.
    Show { name: String },
}

/// Report text for stdout or `--out`, plus notes for stderr.
struct Output {
    files: Vec<(String, String)>,
    notes: String,
    passed: bool,
}

impl Output {
    fn single(name: &str, content: String) -> Self {
        Self {
            files: vec![(name.into(), content)],
            notes: String::new(),
            passed: true,
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize to JSON");
    s.push('\n');
    s
}

fn csv_row(fields: impl IntoIterator<Item = String>) -> String {
    let mut s = fields.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn nums(v: &Vector) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn load(path: &Path) -> Result<ProblemDocument, CliError> {
    Ok(ProblemDocument::load(path)?)
}

/// The reference value `ȳ ∈ F(x)` used by the covering estimates.
pub fn reference_value(doc: &ProblemDocument, map: &SetValuedMap, x: &Vector) -> Result<Vector, CliError> {
    if let (Some(y), Ok(xbar)) = (doc.ybar(), doc.xbar()) {
        if *x == xbar {
            return Ok(y);
        }
    }
    if let Some(y) = map.single_value(x) {
        return Ok(y);
    }
    let g = doc.g()?;
    let gf = g
        .single_fn()
        .ok_or_else(|| CliError::Other("g must be single-valued".into()))?;
    Ok(map.evaluate(x)?.project(&gf.eval(x, &doc.pbar()?))?)
}

/// Coincidence point at `p` from `(x̄, ȳ)`, or the generalized-equation
/// solution when no `ȳ` is declared.
pub fn solve_at(doc: &ProblemDocument, p: &Vector, seed: Option<u64>) -> Result<CoincidenceResult, CliError> {
    let map = doc.map()?;
    let g = doc.g()?;
    let xbar = doc.xbar()?;
    if p.len() != g.p_dim() {
        return Err(CliError::Other(format!(
            "--p needs {} entries, found {}",
            g.p_dim(),
            p.len()
        )));
    }
    let cfg = doc.solver_config(seed);
    Ok(match doc.ybar() {
        Some(y) => solve_coincidence(&map, &g, &xbar, &y, p, &cfg)?,
        None => solve_generalized_equation(&map, &g, &xbar, &doc.pbar()?, p, &cfg)?,
    })
}

pub fn solve_implicit_at(doc: &ProblemDocument, p: &Vector, seed: Option<u64>) -> Result<ImplicitResult, CliError> {
    let f = doc.implicit_map()?;
    if p.len() != f.p_dim() {
        return Err(CliError::Other(format!(
            "--p needs {} entries, found {}",
            f.p_dim(),
            p.len()
        )));
    }
    Ok(solve_implicit(
        &f,
        &doc.xbar()?,
        &doc.pbar()?,
        p,
        &doc.solver_config(seed),
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopReport {
    pub points: usize,
    pub radius: f64,
    pub min_max_jump: f64,
    /// `branches` when all preimages are enumerated, `selection` when the
    /// jump is measured along solver outputs.
    pub method: &'static str,
}

/// Smallest possible largest jump of a selection around the sweep loop.
pub fn loop_jump(doc: &ProblemDocument, seed: Option<u64>) -> Result<LoopReport, CliError> {
    let pts = doc
        .loop_points()
        .ok_or_else(|| CliError::Other("the document declares no sweep.loop".into()))?;
    let radius = doc.sweep.loop_.as_ref().map_or(0.0, |l| l.radius);
    let map = doc.map()?;
    let g = doc.g()?;
    let xbar = doc.xbar()?;
    let gf = g
        .single_fn()
        .ok_or_else(|| CliError::Other("g must be single-valued".into()))?;
    let x_free = pts
        .iter()
        .all(|p| gf.affine_in_x(p).is_some_and(|(m, _)| m.amax() == 0.0));
    let branches: Option<Vec<Vec<Vector>>> = if x_free {
        pts.iter().map(|p| map.preimages(&gf.eval(&xbar, p))).collect()
    } else {
        None
    };
    let (jump, method) = match branches {
        Some(b) => {
            let sets: Vec<&[Vector]> = b.iter().map(Vec::as_slice).collect();
            (minimal_max_jump(&sets)?, "branches")
        }
        None => {
            let ybar = reference_value(doc, &map, &xbar)?;
            let table = solve_family(&map, &g, &xbar, &ybar, &doc.pbar()?, &pts, &doc.solver_config(seed));
            let order: Vec<usize> = (0..pts.len()).collect();
            (detect_selection_discontinuity(&table, &order, None)?, "selection")
        }
    };
    Ok(LoopReport {
        points: pts.len(),
        radius,
        min_max_jump: jump,
        method,
    })
}

#[derive(Serialize)]
struct ModuliReport {
    seed: u64,
    x: Vec<f64>,
    y: Vec<f64>,
    alpha_hat: ModulusEstimate,
    alpha_hat_semilocal: ModulusEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_point: Option<ModulusEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz_like: Option<ModulusEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    covering_rates: Option<Vec<CoveringRate>>,
}

fn cmd_moduli(c: &Common, at: Option<&Floats>) -> Result<Output, CliError> {
    let doc = load(&c.doc)?;
    let map = doc.map()?;
    let schedule = doc.schedule_with(c.seed);
    let x = match at {
        Some(f) => {
            if f.0.len() != map.input_dim() {
                return Err(CliError::Other(format!("--at needs {} entries", map.input_dim())));
            }
            Vector::from_vec(f.0.clone())
        }
        None => doc.xbar()?,
    };
    let y = reference_value(&doc, &map, &x)?;
    let lipschitz_like = match (doc.maps.g.is_some(), doc.pbar()) {
        (true, Ok(p)) => {
            let eta = schedule.eta_sequence.first().copied().unwrap_or(0.5);
            Some(lipschitz_like_estimate(&doc.g()?, &p, &x, eta, &y, eta, &schedule)?)
        }
        _ => None,
    };
    let smooth = matches!(map, SetValuedMap::Smooth(_));
    let report = ModuliReport {
        seed: schedule.seed,
        x: x.as_slice().to_vec(),
        y: y.as_slice().to_vec(),
        alpha_hat: alpha_hat(&map, &x, &y, &schedule)?,
        alpha_hat_semilocal: alpha_hat_semilocal(&map, &x, &schedule)?,
        alpha_point: alpha_point(&map, &x).ok(),
        lipschitz_like,
        covering_rates: if smooth {
            covering_rate_table(&map, &x, &schedule.eta_sequence, 64, schedule.seed).ok()
        } else {
            None
        },
    };
    Ok(match c.format.unwrap_or(Format::Json) {
        Format::Csv => {
            let mut s = csv_row(["quantity", "value", "converged", "seed"].map(String::from));
            let ests = [
                Some(&report.alpha_hat),
                Some(&report.alpha_hat_semilocal),
                report.alpha_point.as_ref(),
                report.lipschitz_like.as_ref(),
            ];
            for e in ests.into_iter().flatten() {
                let kind = serde_json::to_value(e.kind).expect("kind serializes");
                s += &csv_row([
                    kind.as_str().unwrap_or_default().to_string(),
                    e.value.to_string(),
                    e.converged.to_string(),
                    e.seed.to_string(),
                ]);
            }
            Output::single("moduli.csv", s)
        }
        _ => Output::single("moduli.json", json(&report)),
    })
}

#[derive(Serialize)]
struct SolveReport<'a, T: Serialize> {
    seed: u64,
    p: Vec<f64>,
    result: &'a T,
}

fn solve_csv(p: &Vector, r: &CoincidenceResult) -> String {
    let mut s = csv_row(
        names("p", p.len())
            .chain(names("sigma", r.sigma.len()))
            .chain(["residual", "iterations", "bound", "bound_satisfied"].map(String::from)),
    );
    s += &csv_row(nums(p).chain(nums(&r.sigma)).chain([
        r.residual.to_string(),
        r.iterations.to_string(),
        r.bound.to_string(),
        r.bound_satisfied.to_string(),
    ]));
    s
}

fn cmd_solve(c: &Common, p: &Floats) -> Result<Output, CliError> {
    let doc = load(&c.doc)?;
    let p = Vector::from_vec(p.0.clone());
    let r = solve_at(&doc, &p, c.seed)?;
    Ok(match c.format.unwrap_or(Format::Json) {
        Format::Csv => Output::single("solve.csv", solve_csv(&p, &r)),
        _ => Output::single(
            "solve.json",
            json(&SolveReport {
                seed: doc.seed(c.seed),
                p: p.as_slice().to_vec(),
                result: &r,
            }),
        ),
    })
}

fn cmd_implicit(c: &Common, p: &Floats) -> Result<Output, CliError> {
    let doc = load(&c.doc)?;
    let p = Vector::from_vec(p.0.clone());
    let r = solve_implicit_at(&doc, &p, c.seed)?;
    Ok(match c.format.unwrap_or(Format::Json) {
        Format::Csv => {
            let mut s = csv_row(
                names("p", p.len())
                    .chain(names("sigma", r.sigma.len()))
                    .chain(["residual_norm", "iterations", "bound", "c", "bound_satisfied"].map(String::from)),
            );
            s += &csv_row(nums(&p).chain(nums(&r.sigma)).chain([
                r.residual_norm.to_string(),
                r.iterations.to_string(),
                r.bound.to_string(),
                r.c.to_string(),
                r.bound_satisfied.to_string(),
            ]));
            Output::single("implicit.csv", s)
        }
        _ => Output::single(
            "implicit.json",
            json(&SolveReport {
                seed: doc.seed(c.seed),
                p: p.as_slice().to_vec(),
                result: &r,
            }),
        ),
    })
}

#[derive(Serialize)]
struct SelectionRow {
    p: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<CoincidenceResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepReport<T: Serialize> {
    seed: u64,
    mode: SweepMode,
    rows: Vec<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loop_discontinuity: Option<LoopReport>,
}

fn cmd_sweep(c: &Common) -> Result<Output, CliError> {
    let doc = load(&c.doc)?;
    let seed = doc.seed(c.seed);
    let pts = doc.sweep_points();
    let mode = doc.sweep_mode();
    let loop_report = match doc.sweep.loop_ {
        Some(_) => Some(loop_jump(&doc, c.seed)?),
        None => None,
    };
    if pts.is_empty() && loop_report.is_none() {
        return Err(CliError::Other("the document declares no sweep points".into()));
    }
    let format = c.format.unwrap_or(Format::Csv);
    let mut out = match mode {
        SweepMode::Mu => {
            let inst = doc.instance()?;
            let rows = evaluate_mu_grid(&inst, &pts);
            match format {
                Format::Json => Output::single(
                    "sweep.json",
                    json(&SweepReport {
                        seed,
                        mode,
                        rows,
                        loop_discontinuity: loop_report.clone(),
                    }),
                ),
                _ => {
                    let d = inst.pbar.len();
                    let mut s = csv_row(names("p", d).chain(["mu".into(), "feasible_count".into()]));
                    for r in &rows {
                        s += &csv_row(nums(&r.p).chain([r.mu.to_string(), r.feasible_count.to_string()]));
                    }
                    Output::single("sweep.csv", s)
                }
            }
        }
        SweepMode::Selection => {
            let map = doc.map()?;
            let g = doc.g()?;
            let xbar = doc.xbar()?;
            let ybar = reference_value(&doc, &map, &xbar)?;
            let cfg = doc.solver_config(c.seed);
            let table = if doc.sweep.continuation.unwrap_or(false) {
                solve_continuation(&map, &g, &xbar, &ybar, &pts, &cfg)
            } else {
                solve_family(&map, &g, &xbar, &ybar, &doc.pbar()?, &pts, &cfg)
            };
            match format {
                Format::Json => {
                    let rows = table
                        .entries
                        .into_iter()
                        .map(|e| SelectionRow {
                            p: e.p.as_slice().to_vec(),
                            error: e.outcome.as_ref().err().map(diagnose),
                            result: e.outcome.ok(),
                        })
                        .collect();
                    Output::single(
                        "sweep.json",
                        json(&SweepReport {
                            seed,
                            mode,
                            rows,
                            loop_discontinuity: loop_report.clone(),
                        }),
                    )
                }
                _ => {
                    let (d, n) = (g.p_dim(), map.input_dim());
                    let mut s = csv_row(
                        names("p", d)
                            .chain(names("sigma", n))
                            .chain(["residual", "iterations", "bound", "bound_satisfied", "status"].map(String::from)),
                    );
                    for e in &table.entries {
                        s += &match &e.outcome {
                            Ok(r) => csv_row(nums(&e.p).chain(nums(&r.sigma)).chain([
                                r.residual.to_string(),
                                r.iterations.to_string(),
                                r.bound.to_string(),
                                r.bound_satisfied.to_string(),
                                "ok".into(),
                            ])),
                            Err(err) => csv_row(
                                nums(&e.p)
                                    .chain(std::iter::repeat_n(String::new(), n + 4))
                                    .chain([csv_text(&diagnose(err))]),
                            ),
                        };
                    }
                    Output::single("sweep.csv", s)
                }
            }
        }
    };
    if let Some(l) = &loop_report {
        if format != Format::Json {
            out.files.push(("loop.json".into(), json(l)));
        }
        let _ = writeln!(
            out.notes,
            "loop of {} points, radius {}: minimal max jump {} ({})",
            l.points, l.radius, l.min_max_jump, l.method
        );
    }
    Ok(out)
}

fn grid_csv(r: &MarginalReport) -> String {
    let mut s = csv_row(names("p", r.pbar.len()).chain(["mu".into(), "feasible_count".into()]));
    for row in &r.grid {
        s += &csv_row(nums(&row.p).chain([row.mu.to_string(), row.feasible_count.to_string()]));
    }
    s
}

fn cmd_certify(c: &Common, property: Property) -> Result<Output, CliError> {
    let doc = load(&c.doc)?;
    let inst = doc.instance()?;
    let schedule = doc.schedule_with(c.seed);
    let report = match property {
        Property::Usc => certify_usc(&inst, &schedule),
        Property::Lsc => certify_lsc(&inst, &schedule),
        Property::Continuity => certify_continuity_calmness(&inst, &schedule),
        Property::Lipschitz => certify_lipschitz(&inst, &schedule),
    };
    let summary = report.summary();
    let mut out = match c.format.unwrap_or(Format::Json) {
        Format::Csv => Output::single("certify_grid.csv", grid_csv(&report)),
        Format::Text => Output::single("certify.txt", summary.clone()),
        Format::Json => Output::single("certify.json", json(&report)),
    };
    if c.out.is_some() {
        for (name, content) in [
            ("certify.json", json(&report)),
            ("certify.txt", summary.clone()),
            ("certify_grid.csv", grid_csv(&report)),
        ] {
            if out.files.iter().all(|f| f.0 != name) {
                out.files.push((name.into(), content));
            }
        }
    }
    if c.format.unwrap_or(Format::Json) != Format::Text {
        out.notes = summary;
    }
    Ok(out)
}

#[derive(Serialize)]
struct CorpusReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    passed: usize,
    failed: usize,
    checks: Vec<CheckResult>,
}

fn cmd_corpus_run(
    selected: &[String],
    doc_path: Option<&Path>,
    seed: Option<u64>,
    format: Option<Format>,
) -> Result<Output, CliError> {
    let mut docs = Vec::new();
    if selected.is_empty() && doc_path.is_none() {
        for e in corpus::CORPUS {
            docs.push((e.name.to_string(), e.document()?));
        }
    }
    for name in selected {
        let e = corpus::find(name).ok_or_else(|| {
            let known: Vec<&str> = corpus::CORPUS.iter().map(|e| e.name).collect();
            CliError::Other(format!("unknown corpus entry '{name}' (known: {})", known.join(", ")))
        })?;
        docs.push((e.name.to_string(), e.document()?));
    }
    if let Some(p) = doc_path {
        let doc = load(p)?;
        let label = doc.name.clone().unwrap_or_else(|| p.display().to_string());
        docs.push((label, doc));
    }
    let checks: Vec<CheckResult> = docs
        .iter()
        .flat_map(|(name, doc)| corpus::check_document(name, doc, seed))
        .collect();
    let failed = checks.iter().filter(|c| !c.passed).count();
    let report = CorpusReport {
        seed,
        passed: checks.len() - failed,
        failed,
        checks,
    };
    let mut out = match format.unwrap_or(Format::Text) {
        Format::Json => Output::single("corpus.json", json(&report)),
        Format::Csv => {
            let mut s = csv_row(
                [
                    "entry",
                    "quantity",
                    "at",
                    "relation",
                    "expected",
                    "tolerance",
                    "actual",
                    "provenance",
                    "passed",
                ]
                .map(String::from),
            );
            for c in &report.checks {
                s += &csv_row([
                    csv_text(&c.entry),
                    csv_text(&c.quantity),
                    csv_text(&c.at.as_deref().map(fmt_vec).unwrap_or_default()),
                    serde_json::to_value(c.relation)
                        .expect("serializes")
                        .as_str()
                        .unwrap_or_default()
                        .into(),
                    csv_text(&c.expected),
                    c.tolerance.to_string(),
                    csv_text(&c.actual),
                    c.provenance.as_str().into(),
                    c.passed.to_string(),
                ]);
            }
            Output::single("corpus.csv", s)
        }
        Format::Text => {
            let mut s: String = report.checks.iter().map(|c| c.line() + "\n").collect();
            let _ = writeln!(s, "{} passed, {} failed", report.passed, report.failed);
            Output::single("corpus.txt", s)
        }
    };
    out.passed = failed == 0;
    Ok(out)
}

fn corpus_list() -> Output {
    let mut s = String::new();
    for e in corpus::CORPUS {
        let desc = e.document().ok().and_then(|d| d.description).unwrap_or_default();
        let _ = writeln!(s, "{:<18} {}", e.name, desc);
    }
    Output::single("corpus_list.txt", s)
}

fn dispatch(cli: Cli) -> Result<(Output, Option<PathBuf>), CliError> {
    Ok(match cli.command {
        Command::Moduli { common, at } => (cmd_moduli(&common, at.as_ref())?, common.out),
        Command::Solve { common, p } => (cmd_solve(&common, &p)?, common.out),
        Command::Implicit { common, p } => (cmd_implicit(&common, &p)?, common.out),
        Command::Sweep { common } => (cmd_sweep(&common)?, common.out),
        Command::Certify { common, property } => (cmd_certify(&common, property)?, common.out),
        Command::Corpus { action } => match action {
            CorpusAction::List => (corpus_list(), None),
            CorpusAction::Show { name } => {
                let e = corpus::find(&name).ok_or_else(|| CliError::Other(format!("unknown corpus entry '{name}'")))?;
                (Output::single(&format!("{name}.toml"), e.source.to_string()), None)
            }
            CorpusAction::Run {
                names,
                doc,
                seed,
                out,
                format,
            } => (cmd_corpus_run(&names, doc.as_deref(), seed, format)?, out),
        },
    })
}

fn emit(output: &Output, dir: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), String> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
            for (name, content) in &output.files {
                let path = dir.join(name);
                std::fs::write(&path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
                let _ = writeln!(stderr, "wrote {}", path.display());
            }
        }
        None => {
            if let Some((_, content)) = output.files.first() {
                stdout.write_all(content.as_bytes()).map_err(|e| e.to_string())?;
            }
        }
    }
    if !output.notes.is_empty() {
        let _ = stderr.write_all(output.notes.as_bytes());
    }
    Ok(())
}

fn thread_pool() -> Result<Option<rayon::ThreadPool>, String> {
    let Ok(v) = std::env::var("COVARA_THREADS") else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("COVARA_THREADS must be a positive integer, found '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| e.to_string())
}

/// Runs one command line and returns its exit code: 0 on success, 1 on a
/// failed expectation or solver error, 2 on usage or document errors.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                2
            } else {
                let _ = stdout.write_all(text.as_bytes());
                0
            };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(m) => {
            let _ = writeln!(stderr, "error: {m}");
            return 2;
        }
    };
    let result = match &pool {
        Some(p) => p.install(|| dispatch(cli)),
        None => dispatch(cli),
    };
    match result {
        Ok((output, dir)) => match emit(&output, dir.as_deref(), stdout, stderr) {
            Ok(()) => {
                if output.passed {
                    0
                } else {
                    1
                }
            }
            Err(m) => {
                let _ = writeln!(stderr, "error: {m}");
                1
            }
        },
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
