//! facelift → solve → extract policy → simulate → certify → bracket, as one
//! run with one consolidated report.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::docs::{solution_candidate, CandidateDoc, GridDoc};
use super::manifest::RunContext;
use crate::certify::{
    certify_subsolution, certify_supersolution, AdversaryConfig, CandidateFunction, CandidateKind, CertificationReport,
    TestConfig,
};
use crate::error::{Error, Result};
use crate::facelift::{verify_facelift, FaceliftReport};
use crate::problem::ProblemSpec;
use crate::sim::{estimate_value, simulate_paths, SimOptions, ValueEstimate};
use crate::solver::{extract_policy, solve_hjb, terminal_data, SolveMetadata, TerminalMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Inline(ProblemSpec),
    File(PathBuf),
}

fn d_budget() -> usize {
    100_000
}
fn d_paths() -> usize {
    100_000
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub problem: ProblemSource,
    pub grid: GridDoc,
    /// `[t, x1(, x2)]` per point.
    pub points: Vec<Vec<f64>>,
    /// Start box of the certification battery.
    pub test_box: Vec<(f64, f64)>,
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_paths")]
    pub paths: usize,
    /// Euler steps over `[0, T]`; defaults to the solver's time steps.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Certify the interpolated solver values (with the argmax policy) as a
    /// sub-solution candidate.
    #[serde(default = "yes")]
    pub solver_candidate: bool,
    #[serde(default)]
    pub sub_candidates: Vec<CandidateDoc>,
    #[serde(default)]
    pub super_candidates: Vec<CandidateDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceliftStage {
    /// `sup |ĝ − g|` over the grid.
    pub distance: f64,
    pub check: FaceliftReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStage {
    pub metadata: SolveMetadata,
    /// `sup |v(T − Δt) − ĝ|` and `sup |v(T − Δt) − g|` on the trust region.
    pub last_slice_to_facelift: f64,
    pub last_slice_to_payoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub solver_value: f64,
    /// Paths stopped (and flagged) on leaving the solver's truncation box.
    pub in_box: ValueEstimate,
    pub free: ValueEstimate,
    pub steps: usize,
    /// Solver value inside the 95% interval of the in-box estimate.
    pub solver_within_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub lower: Option<f64>,
    pub lower_from: Option<String>,
    pub upper: Option<f64>,
    pub upper_from: Option<String>,
    pub mc: ValueEstimate,
    pub gap: Option<f64>,
    pub relative_gap: Option<f64>,
    pub lower_below_mc: bool,
    pub mc_below_upper: bool,
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub facelift: FaceliftStage,
    pub solve: SolveStage,
    pub simulation: Vec<SimulationPoint>,
    pub sub_reports: Vec<CertificationReport>,
    pub super_reports: Vec<CertificationReport>,
    pub bracket: Vec<GapPoint>,
    pub passed: bool,
}

fn sup_on(a: &[f64], b: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    a.iter().zip(b).enumerate().filter(|(i, _)| keep(*i)).fold(0.0_f64, |m, (_, (x, y))| m.max((x - y).abs()))
}

pub fn load_pipeline_spec(ctx: &mut RunContext, path: &Path) -> Result<(PipelineSpec, ProblemSpec)> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut spec: PipelineSpec = super::docs::load_json(ctx, path)?;
    let problem = match &spec.problem {
        ProblemSource::Inline(p) => p.clone(),
        ProblemSource::File(f) => super::docs::load_json(ctx, &super::docs::resolve(&base, f))?,
    };
    for c in spec.sub_candidates.iter_mut().chain(spec.super_candidates.iter_mut()) {
        c.rebase(&base);
    }
    Ok((spec, problem))
}

pub fn run_pipeline(ctx: &mut RunContext, spec: &PipelineSpec, problem_spec: &ProblemSpec) -> Result<PipelineReport> {
    ctx.stage("setup");
    let problem = problem_spec.build()?;
    ctx.record_config("problem", problem_spec);
    ctx.record_config("pipeline", spec);
    let grid = spec.grid.grid()?;
    let scheme = spec.grid.scheme()?;
    if spec.points.iter().any(|p| p.len() != problem.dim() + 1) {
        return Err(Error::arg("pipeline points must be [t, x..] rows"));
    }
    let seed = ctx.manifest.seed;

    ctx.stage("facelift");
    let g = terminal_data(&problem, &grid, TerminalMode::Raw, 0.0)?;
    let g_hat = terminal_data(&problem, &grid, spec.grid.terminal, 1e-12)?;
    let facelift = FaceliftStage {
        distance: sup_on(&g_hat.values, &g.values, |_| true),
        check: verify_facelift(&g_hat, &g, &problem, 1e-9)?,
    };
    let mut buf = Vec::new();
    g_hat.write_csv(&mut buf)?;
    ctx.write("facelift.csv", &buf)?;

    ctx.stage("solve");
    let sol = Arc::new(solve_hjb(&problem, &g_hat, &scheme)?);
    let mut buf = Vec::new();
    sol.write_csv(&mut buf)?;
    ctx.write("solution.csv", &buf)?;
    let n = sol.times.len();
    let trust = |i: usize| grid.in_region(i, &sol.trust_region);
    let solve = SolveStage {
        metadata: sol.metadata.clone(),
        last_slice_to_facelift: sup_on(&sol.slices[n - 2], &g_hat.values, trust),
        last_slice_to_payoff: sup_on(&sol.slices[n - 2], &g.values, trust),
    };

    ctx.stage("extract_policy");
    let policy = extract_policy(&sol)?;

    ctx.stage("simulate");
    let steps_total = spec.steps.unwrap_or(scheme.time_nodes - 1);
    let boxed = SimOptions { sim_box: Some(grid.bounds()), ..SimOptions::default() };
    let mut simulation = Vec::new();
    for (i, p) in spec.points.iter().enumerate() {
        let (t, x) = (p[0], &p[1..]);
        let steps = ((steps_total as f64 * (problem.horizon - t) / problem.horizon).round() as usize).max(1);
        let s = crate::sim::derive_seed(seed, i as u64);
        let in_box = estimate_value(&simulate_paths(&problem, &policy, t, x, spec.paths, steps, s, &boxed)?, &problem.payoff);
        let free = estimate_value(
            &simulate_paths(&problem, &policy, t, x, spec.paths, steps, s, &SimOptions::default())?,
            &problem.payoff,
        );
        let solver_value = sol.value(t, x);
        simulation.push(SimulationPoint {
            t,
            x: x.to_vec(),
            solver_value,
            solver_within_ci: (solver_value - in_box.mean).abs() <= in_box.half_width_95,
            in_box,
            free,
            steps,
        });
    }

    ctx.stage("certify");
    let mut cfg = TestConfig::new(spec.test_box.clone());
    cfg.budget = spec.budget;
    cfg.seed = seed;
    let mut subs: Vec<CandidateFunction> = Vec::new();
    if spec.solver_candidate {
        subs.push(
            solution_candidate(&problem, sol.clone(), CandidateKind::Sub, "solver values".into(), None)
                .with_policy(policy.clone()),
        );
    }
    for c in &spec.sub_candidates {
        subs.push(c.load(ctx, &problem, CandidateKind::Sub)?);
    }
    let mut supers = Vec::new();
    for c in &spec.super_candidates {
        supers.push(c.load(ctx, &problem, CandidateKind::Super)?);
    }
    let sub_reports = subs.iter().map(|w| certify_subsolution(w, &problem, &cfg)).collect::<Result<Vec<_>>>()?;
    let adversaries = AdversaryConfig::standard(vec![policy.clone()]);
    let super_reports = supers
        .iter()
        .map(|w| certify_supersolution(w, &problem, &cfg, &adversaries))
        .collect::<Result<Vec<_>>>()?;

    ctx.stage("bracket");
    let certified = |ws: &[CandidateFunction], rs: &[CertificationReport]| -> Vec<usize> {
        (0..ws.len()).filter(|&i| rs[i].passed).collect()
    };
    let good_subs = certified(&subs, &sub_reports);
    let good_supers = certified(&supers, &super_reports);
    let bracket = spec
        .points
        .iter()
        .zip(&simulation)
        .map(|(p, simp)| gap_point(p, simp.free, &subs, &good_subs, &supers, &good_supers, cfg.tol_cert))
        .collect::<Vec<_>>();
    let passed = !bracket.is_empty()
        && bracket.iter().all(|b| b.gap.is_some() && b.lower_below_mc && b.mc_below_upper && b.ordered);
    let report = PipelineReport { facelift, solve, simulation, sub_reports, super_reports, bracket, passed };
    ctx.write_json("pipeline-report.json", &report)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn gap_point(
    p: &[f64],
    mc: ValueEstimate,
    subs: &[CandidateFunction],
    good_subs: &[usize],
    supers: &[CandidateFunction],
    good_supers: &[usize],
    tol: f64,
) -> GapPoint {
    let (t, x) = (p[0], &p[1..]);
    let best = |ws: &[CandidateFunction], idx: &[usize], better: fn(f64, f64) -> bool| {
        let mut out: Option<(f64, String)> = None;
        for &i in idx {
            let v = ws[i].value(t, x);
            if out.as_ref().is_none_or(|(b, _)| better(v, *b)) {
                out = Some((v, ws[i].label.clone()));
            }
        }
        out
    };
    let lower = best(subs, good_subs, |a, b| a > b);
    let upper = best(supers, good_supers, |a, b| a < b);
    let lo = lower.as_ref().map(|l| l.0);
    let hi = upper.as_ref().map(|u| u.0);
    let gap = lo.zip(hi).map(|(l, h)| h - l);
    GapPoint {
        t,
        x: x.to_vec(),
        lower: lo,
        lower_from: lower.map(|l| l.1),
        upper: hi,
        upper_from: upper.map(|u| u.1),
        mc,
        gap,
        relative_gap: gap.zip(hi).map(|(g, h)| g / h.abs()),
        lower_below_mc: lo.is_none_or(|l| l <= mc.mean + mc.half_width_95),
        mc_below_upper: hi.is_none_or(|h| mc.mean <= h + mc.half_width_95),
        ordered: lo.zip(hi).is_none_or(|(l, h)| l <= h + tol),
    }
}
