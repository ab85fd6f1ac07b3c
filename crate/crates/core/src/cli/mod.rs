//! The `ctrlcert` command line.
//!
//! Every run writes `manifest.json` into its output directory; passing that
//! file back with `--manifest` re-executes the recorded command.
//!
//! Exit codes: 0 success, 2 configuration / argument / input errors,
//! 3 convergence or numerical failures, 4 certification failure.

pub mod docs;
pub mod manifest;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use self::docs::{absolute, candidate_from_file, load_json, load_policy, load_problem, parse_box, parse_list, read_points, GridDoc};
use self::manifest::{read_manifest, RunContext, RunManifest};
use crate::certify::{
    bracket_report, certify_subsolution, certify_supersolution, AdversaryConfig, BracketConfig, CandidateKind,
    CertificationReport, TestConfig,
};
use crate::error::{Error, Result};
use crate::facelift::{facelift, verify_facelift};
use crate::oracles::{dense_reference, heat_value, HeatPayoff, MertonParams};
use crate::sim::{estimate_value, gauge_check, simulate_paths, Record, SimOptions};

use crate::solver::{convergence_study, solve_hjb, terminal_data, RefineMode, TerminalMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CERTIFICATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ctrlcert", version, about = "Constrained HJB solver and Monte-Carlo sub/super-solution certifier")]
pub struct Cli {
    /// Base seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Re-run the command recorded in a manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Face-lifted terminal data on a grid.
    Facelift(FaceliftArgs),
    /// Backward solve of the constrained HJB equation.
    Solve(SolveArgs),
    /// Monte-Carlo value of a feedback policy.
    Simulate(SimulateArgs),
    /// Test a candidate as a stochastic sub- or super-solution.
    Certify(CertifyArgs),
    /// Sandwich report from two certification reports.
    Bracket(BracketArgs),
    /// Empirical convergence orders under dyadic refinement.
    Convergence(ConvergenceArgs),
    /// Closed-form and reference values.
    Oracle(OracleArgs),
    /// facelift → solve → simulate → certify → bracket.
    Pipeline(PipelineArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Facelift(_) => "facelift",
            Command::Solve(_) => "solve",
            Command::Simulate(_) => "simulate",
            Command::Certify(_) => "certify",
            Command::Bracket(_) => "bracket",
            Command::Convergence(_) => "convergence",
            Command::Oracle(_) => "oracle",
            Command::Pipeline(_) => "pipeline",
        }
    }

    /// Makes every input path absolute so the manifest replays from anywhere.
    fn absolutize(&mut self) {
        let fix = |p: &mut PathBuf| *p = absolute(p);
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                *q = absolute(q)
            }
        };
        match self {
            Command::Facelift(a) => {
                fix(&mut a.problem);
                fix(&mut a.grid);
            }
            Command::Solve(a) => {
                fix(&mut a.problem);
                fix(&mut a.grid);
            }
            Command::Simulate(a) => {
                fix(&mut a.problem);
                fix(&mut a.policy);
            }
            Command::Certify(a) => {
                fix(&mut a.problem);
                fix(&mut a.candidate);
                a.adversary_policy.iter_mut().for_each(fix);
            }
            Command::Bracket(a) => {
                fix(&mut a.sub);
                fix(&mut a.sup);
                fix(&mut a.points);
            }
            Command::Convergence(a) => {
                fix(&mut a.problem);
                fix(&mut a.grid);
            }
            Command::Oracle(a) => {
                fix_opt(&mut a.problem);
                fix_opt(&mut a.grid);
            }
            Command::Pipeline(a) => fix(&mut a.spec),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FaceliftArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Grid document (`axes`).
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000_000)]
    pub max_iters: usize,
    #[arg(long, default_value = "facelift.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Grid document with a `scheme` section.
    #[arg(long)]
    pub grid: PathBuf,
    /// Overrides the grid document's terminal mode.
    #[arg(long, value_enum)]
    pub terminal: Option<TerminalArg>,
    #[arg(long, default_value = "solution.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalArg {
    Raw,
    Facelift,
}

impl From<TerminalArg> for TerminalMode {
    fn from(t: TerminalArg) -> Self {
        match t {
            TerminalArg::Raw => TerminalMode::Raw,
            TerminalArg::Facelift => TerminalMode::Facelift,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Comma-separated start state.
    #[arg(long)]
    pub x0: String,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    /// Stop-and-flag box `lo:hi[,lo:hi]`.
    #[arg(long)]
    pub sim_box: Option<String>,
    /// Step in physical coordinates even for proportional dynamics.
    #[arg(long)]
    pub no_log: bool,
    /// Also record full paths and report the gauge diagnostic.
    #[arg(long)]
    pub gauge: bool,
    #[arg(long, default_value = "ensemble-summary.json")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Sub,
    Super,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CertifyArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Start box `lo:hi[,lo:hi]` of the battery.
    #[arg(long)]
    pub test_box: String,
    #[arg(long, default_value_t = 100_000)]
    pub budget: usize,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Extra adversaries for super-solutions, tried first.
    #[arg(long)]
    pub adversary_policy: Vec<PathBuf>,
    /// Only the supplied adversaries (no corners, no random policies).
    #[arg(long)]
    pub supplied_only: bool,
    #[arg(long)]
    pub stop_on_failure: bool,
    #[arg(long, default_value = "report.json")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BracketArgs {
    /// Certification report of the sub-solution candidate.
    #[arg(long)]
    pub sub: PathBuf,
    /// Certification report of the super-solution candidate.
    #[arg(long = "super")]
    pub sup: PathBuf,
    /// CSV with columns `t, x1[, x2]`.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    #[arg(long, default_value = "bracket.json")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Space,
    Time,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub refinements: usize,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[arg(long, default_value = "convergence.json")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    Merton,
    Heat,
    Constant,
    DenseReference,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// `key=value` pairs: merton `mu, sigma, p, T, B`; heat `sigma, T,
    /// payoff=square|affine, a, b`; constant `c`.
    #[arg(long, default_value = "")]
    pub params: String,
    /// `t,x` to evaluate at.
    #[arg(long)]
    pub eval: Option<String>,
    /// For `dense-reference`.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub fine_factor: usize,
    #[arg(long, default_value = "reference.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineArgs {
    /// Pipeline document.
    #[arg(long)]
    pub spec: PathBuf,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Convergence { .. } | Error::Numerical { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Outcome of one subcommand: lines for stdout and the exit code.
struct Outcome {
    stdout: Vec<String>,
    code: i32,
}

impl Outcome {
    fn ok(stdout: Vec<String>) -> Self {
        Self { stdout, code: EXIT_OK }
    }
}

/// Parses `argv` (program name first) and runs it; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let (mut command, seed, threads) = match (&cli.manifest, cli.command) {
        (Some(path), None) => {
            let m = read_manifest(path)?;
            let command: Command = serde_json::from_value(m.command.clone())?;
            check_inputs(&m)?;
            (command, m.seed, cli.threads.or(m.threads))
        }
        (None, Some(c)) => (c, cli.seed, cli.threads),
        (Some(_), Some(_)) => return Err(Error::config("--manifest replays a recorded command; give no subcommand")),
        (None, None) => return Err(Error::config("no subcommand (see --help)")),
    };
    command.absolutize();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let value = serde_json::to_value(&command)?;
    let mut ctx = RunContext::new(cli.out_dir.clone(), command.name(), value, seed, threads);
    let result = pool.install(|| dispatch(&command, &mut ctx));
    let (code, message) = match result {
        Ok(out) => {
            for line in &out.stdout {
                println!("{line}");
            }
            (out.code, None)
        }
        Err(e) => {
            eprintln!("error: {e}");
            (exit_code(&e), Some(e.to_string()))
        }
    };
    ctx.finish(code, message)?;
    Ok(code)
}

/// Refuses to replay when a recorded input changed on disk.
fn check_inputs(m: &RunManifest) -> Result<()> {
    for rec in &m.inputs {
        let bytes = std::fs::read(&rec.path)?;
        if manifest::sha256_hex(&bytes) != rec.sha256 {
            return Err(Error::config(format!("input {} changed since the recorded run", rec.path)));
        }
    }
    Ok(())
}

fn dispatch(command: &Command, ctx: &mut RunContext) -> Result<Outcome> {
    match command {
        Command::Facelift(a) => cmd_facelift(a, ctx),
        Command::Solve(a) => cmd_solve(a, ctx),
        Command::Simulate(a) => cmd_simulate(a, ctx),
        Command::Certify(a) => cmd_certify(a, ctx),
        Command::Bracket(a) => cmd_bracket(a, ctx),
        Command::Convergence(a) => cmd_convergence(a, ctx),
        Command::Oracle(a) => cmd_oracle(a, ctx),
        Command::Pipeline(a) => cmd_pipeline(a, ctx),
    }
}

fn load_grid_doc(ctx: &mut RunContext, path: &Path) -> Result<GridDoc> {
    let doc: GridDoc = load_json(ctx, path)?;
    ctx.record_config("grid", &doc);
    Ok(doc)
}

fn cmd_facelift(a: &FaceliftArgs, ctx: &mut RunContext) -> Result<Outcome> {
    ctx.stage("load");
    let (spec, problem) = load_problem(ctx, &a.problem)?;
    ctx.record_config("problem", &spec);
    let grid = load_grid_doc(ctx, &a.grid)?.grid()?;
    ctx.stage("facelift");
    let g = terminal_data(&problem, &grid, TerminalMode::Raw, 0.0)?;
    let w = facelift(&g, &problem, a.max_iters, a.tol)?;
    let check = verify_facelift(&w, &g, &problem, (10.0 * a.tol).max(1e-9))?;
    let distance = w.sup_distance(&g)?;
    let mut buf = Vec::new();
    w.write_csv(&mut buf)?;
    ctx.write(&a.out, &buf)?;
    ctx.write_json("facelift-report.json", &serde_json::json!({ "sup_distance_to_payoff": distance, "check": check }))?;
    Ok(Outcome::ok(vec![format!("sup |g_hat - g| = {distance}"), format!("checks passed: {}", check.passed())]))
}

fn cmd_solve(a: &SolveArgs, ctx: &mut RunContext) -> Result<Outcome> {
    ctx.stage("load");
    let (spec, problem) = load_problem(ctx, &a.problem)?;
    ctx.record_config("problem", &spec);
    let doc = load_grid_doc(ctx, &a.grid)?;
    let grid = doc.grid()?;
    let scheme = doc.scheme()?;
    let mode = a.terminal.map(TerminalMode::from).unwrap_or(doc.terminal);
    ctx.record_config("terminal", mode);
    ctx.stage("terminal data");
    let g = terminal_data(&problem, &grid, mode, 1e-12)?;
    ctx.stage("solve");
    let sol = solve_hjb(&problem, &g, &scheme)?;
    let mut buf = Vec::new();
    sol.write_csv(&mut buf)?;
    ctx.write(&a.out, &buf)?;
    ctx.write_json("solve-report.json", &serde_json::json!({ "metadata": sol.metadata, "trust_region": sol.trust_region }))?;
    Ok(Outcome::ok(vec![format!("wrote {} ({} time nodes × {} nodes)", a.out, sol.times.len(), grid.len())]))
}

#[derive(Serialize)]
struct EnsembleSummary<'a> {
    estimate: crate::sim::ValueEstimate,
    n_paths: usize,
    n_steps: usize,
    t0: f64,
    x0: &'a [f64],
    seed: u64,
    policy: &'a str,
    log_coordinates: bool,
    max_control: f64,
    exits: usize,
    /// SHA-256 of the terminal states (little-endian f64 bytes).
    terminal_sha256: String,
    gauge: Option<crate::sim::GaugeReport>,
}

fn cmd_simulate(a: &SimulateArgs, ctx: &mut RunContext) -> Result<Outcome> {
    ctx.stage("load");
    let (spec, problem) = load_problem(ctx, &a.problem)?;
    ctx.record_config("problem", &spec);
    let policy = load_policy(ctx, &a.policy)?;
    let x0 = parse_list(&a.x0)?;
    let opts = SimOptions {
        record: if a.gauge { Record::Full } else { Record::Terminal },
        sim_box: a.sim_box.as_deref().map(parse_box).transpose()?,
        log_coordinates: !a.no_log,
    };
    ctx.record_config("sim", &opts);
    ctx.stage("simulate");
    let ens = simulate_paths(&problem, &policy, a.t0, &x0, a.paths, a.steps, ctx.manifest.seed, &opts)?;
    let est = estimate_value(&ens, &problem.payoff);
    let gauge = if a.gauge { Some(gauge_check(&ens, &problem.gauge)?) } else { None };
    let bytes: Vec<u8> = ens.terminal.iter().flat_map(|v| v.to_le_bytes()).collect();
    let summary = EnsembleSummary {
        estimate: est,
        n_paths: ens.n_paths,
        n_steps: ens.n_steps,
        t0: a.t0,
        x0: &x0,
        seed: ens.seed,
        policy: &ens.policy_label,
        log_coordinates: ens.log_coordinates,
        max_control: ens.max_control,
        exits: ens.exits.iter().filter(|e| e.is_some()).count(),
        terminal_sha256: manifest::sha256_hex(&bytes),
        gauge,
    };
    ctx.write_json(&a.out, &summary)?;
    Ok(Outcome::ok(vec![format!(
        "value {} ± {} (exit fraction {})",
        est.mean, est.half_width_95, est.exit_fraction
    )]))
}

/// `certify` output: the report plus what is needed to rebuild the candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifyFile {
    pub report: CertificationReport,
    pub candidate: docs::CandidateDoc,
    pub problem: crate::problem::ProblemSpec,
}

fn cmd_certify(a: &CertifyArgs, ctx: &mut RunContext) -> Result<Outcome> {
    ctx.stage("load");
    let (spec, problem) = load_problem(ctx, &a.problem)?;
    ctx.record_config("problem", &spec);
    let kind = match a.kind {
        KindArg::Sub => CandidateKind::Sub,
        KindArg::Super => CandidateKind::Super,
    };
    let (doc, w) = candidate_from_file(ctx, &a.candidate, &problem, kind)?;
    ctx.record_config("candidate", &doc);
    let mut cfg = TestConfig::new(parse_box(&a.test_box)?);
    cfg.budget = a.budget;
    cfg.alpha = a.alpha;
    cfg.seed = ctx.manifest.seed;
    ctx.stage("certify");
    let report = match kind {
        CandidateKind::Sub => certify_subsolution(&w, &problem, &cfg)?,
        CandidateKind::Super => {
            let supplied = a.adversary_policy.iter().map(|p| load_policy(ctx, p)).collect::<Result<Vec<_>>>()?;
            let mut adv = if a.supplied_only {
                AdversaryConfig { supplied, ..Default::default() }
            } else {
                AdversaryConfig::standard(supplied)
            };
            adv.stop_on_failure = a.stop_on_failure;
            ctx.record_config("adversaries", &adv);
            certify_supersolution(&w, &problem, &cfg, &adv)?
        }
    };
    let mut lines = vec![format!("{}: {}", report.candidate, report.verdict)];
    for name in report.failing() {
        lines.push(format!("FAILED {name}"));
    }
    let code = if report.passed { EXIT_OK } else { EXIT_CERTIFICATION };
    ctx.write_json(&a.out, &CertifyFile { report, candidate: doc, problem: spec })?;
    Ok(Outcome { stdout: lines, code })
}

fn cmd_bracket(a: &BracketArgs, ctx: &mut RunContext) -> Result<Outcome> {
    ctx.stage("load");
    let sub: CertifyFile = load_json(ctx, &a.sub)?;
    let sup: CertifyFile = load_json(ctx, &a.sup)?;
    if sub.problem != sup.problem {
        return Err(Error::arg("the two reports certify against different problems"));
    }
    let problem = sub.problem.build()?;
    let ws = sub.candidate.load(ctx, &problem, CandidateKind::Sub)?;
    let wp = sup.candidate.load(ctx, &problem, CandidateKind::Super)?;
    let bytes = ctx.read(&a.points)?;
    let points = read_points(&bytes)?;
    let cfg = BracketConfig { paths: a.paths, steps: a.steps, seed: ctx.manifest.seed, ..BracketConfig::default() };
    ctx.stage("bracket");
    let report = bracket_report(&ws, &sub.report, &wp, &sup.report, &problem, &points, &cfg, None)?;
    let lines = report
        .points
        .iter()
        .map(|p| format!("t={} x={:?}: {} <= {} ± {} <= {} (gap {})", p.t, p.x, p.sub, p.mc.mean, p.mc.half_width_95, p.sup, p.gap))
        .collect();
    let code = if report.passed { EXIT_OK } else { EXIT_CERTIFICATION };
    ctx.write_json(&a.out, &report)?;
    Ok(Outcome { stdout: lines, code })
}

fn cmd_convergence(a: &ConvergenceArgs, ctx: &mut RunContext) -> Result<Outcome> {
    ctx.stage("load");
    let (spec, problem) = load_problem(ctx, &a.problem)?;
    ctx.record_config("problem", &spec);
    let doc = load_grid_doc(ctx, &a.grid)?;
    let mode = match a.mode {
        ModeArg::Space => RefineMode::Space,
        ModeArg::Time => RefineMode::Time,
        ModeArg::Both => RefineMode::Both,
    };
    ctx.stage("convergence");
    let report = convergence_study(&problem, doc.terminal, &doc.grid()?, &doc.scheme()?, a.refinements, mode)?;
    ctx.write_json(&a.out, &report)?;
    Ok(Outcome::ok(vec![format!("differences {:?}; orders {:?}", report.differences, report.orders)]))
}

fn parse_params(s: &str) -> Result<Vec<(String, String)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::arg(format!("expected key=value, got '{p}'")))
        })
        .collect()
}

fn param(params: &[(String, String)], key: &str, default: Option<f64>) -> Result<f64> {
    match params.iter().find(|(k, _)| k == key) {
        Some((_, v)) => v.parse::<f64>().map_err(|e| Error::arg(format!("parameter {key}: {e}"))),
        None => default.ok_or_else(|| Error::arg(format!("missing parameter {key}"))),
    }
}

fn eval_point(a: &OracleArgs) -> Result<(f64, f64)> {
    let v = parse_list(a.eval.as_deref().ok_or_else(|| Error::arg("--eval t,x is required"))?)?;
    match v[..] {
        [t, x] => Ok((t, x)),
        _ => Err(Error::arg("--eval takes t,x")),
    }
}

fn cmd_oracle(a: &OracleArgs, ctx: &mut RunContext) -> Result<Outcome> {
    let params = parse_params(&a.params)?;
    ctx.record_config("params", &params);
    let value = match a.family {
        FamilyArg::Merton => {
            let m = MertonParams::new(
                param(&params, "mu", None)?,
                param(&params, "sigma", None)?,
                param(&params, "p", None)?,
                param(&params, "T", Some(1.0))?,
                param(&params, "B", None)?,
            )?;
            let (t, x) = eval_point(a)?;
            m.value(t, x)?
        }
        FamilyArg::Heat => {
            let payoff = match params.iter().find(|(k, _)| k == "payoff").map(|(_, v)| v.as_str()) {
                None | Some("square") => HeatPayoff::Square,
                Some("affine") => HeatPayoff::Affine { intercept: param(&params, "a", Some(0.0))?, slope: param(&params, "b", Some(1.0))? },
                Some(other) => return Err(Error::Unsupported(format!("heat payoff '{other}'"))),
            };
            let (t, x) = eval_point(a)?;
            heat_value(t, x, param(&params, "sigma", Some(1.0))?, param(&params, "T", Some(1.0))?, &payoff)?
        }
        FamilyArg::Constant => param(&params, "c", None)?,
        FamilyArg::DenseReference => {
            let problem_path = a.problem.as_ref().ok_or_else(|| Error::arg("dense-reference needs --problem"))?;
            let grid_path = a.grid.as_ref().ok_or_else(|| Error::arg("dense-reference needs --grid"))?;
            let (spec, problem) = load_problem(ctx, problem_path)?;
            ctx.record_config("problem", &spec);
            let doc = load_grid_doc(ctx, grid_path)?;
            ctx.stage("dense reference");
            let r = dense_reference(&problem, &doc.grid()?, &doc.scheme()?, doc.terminal, a.fine_factor)?;
            let mut buf = Vec::new();
            r.write_csv(&mut buf)?;
            ctx.write(&a.out, &buf)?;
            return Ok(Outcome::ok(vec![format!("wrote {}", a.out)]));
        }
    };
    ctx.write_json("oracle.json", &serde_json::json!({ "value": value }))?;
    Ok(Outcome::ok(vec![format!("{value}")]))
}

fn cmd_pipeline(a: &PipelineArgs, ctx: &mut RunContext) -> Result<Outcome> {
    ctx.stage("load");
    let (spec, problem) = pipeline::load_pipeline_spec(ctx, &a.spec)?;
    let report = pipeline::run_pipeline(ctx, &spec, &problem)?;
    let mut lines = Vec::new();
    for b in &report.bracket {
        lines.push(format!(
            "t={} x={:?}: lower {:?} upper {:?} mc {} ± {} gap {:?}",
            b.t, b.x, b.lower, b.upper, b.mc.mean, b.mc.half_width_95, b.relative_gap
        ));
    }
    let code = if report.passed { EXIT_OK } else { EXIT_CERTIFICATION };
    Ok(Outcome { stdout: lines, code })
}
