//! Backward monotone finite-difference solver for
//! `min{-v_t - H(t, x, Dv, D²v), G} = 0` on a truncated box.
//!
//! The box edges carry Dirichlet values frozen at the terminal data. Each
//! backward step maximizes the discrete generator over a control grid and
//! is followed by a constraint step that pushes the slice back into
//! `{G_h ≥ 0}`.

mod convergence;
mod stencil;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facelift::{concave_envelope_values, discrete_constraint, local_steps, relax_with_steps};
use crate::grid::{interpolate, GridFunction, SpatialGrid};
use crate::policy::{FeedbackPolicy, PolicyTable};
use crate::problem::{Constraint, ControlGrid, ControlProblem};

pub use convergence::{convergence_study, ConvergenceLevel, ConvergenceReport, RefineMode};
pub use stencil::{discrete_generator, GeneratorOutput};
use stencil::{node_stencil, Scratch, Stencil};

/// Nodes × controls above which stencils are recomputed instead of cached.
const STENCIL_CACHE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substeps {
    /// Smallest count meeting the CFL bound.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeStepping {
    /// Explicit Euler; each row must satisfy `Δt Σ_j w_j ≤ 1`.
    Explicit { substeps: Substeps },
    /// Fully implicit Euler with Howard policy iteration; monotone for any
    /// `Δt`.
    Implicit { max_policy_iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// Off for a positive constant `G`, project for `G = -M` in 1-D,
    /// penalize otherwise.
    #[default]
    Auto,
    Project,
    Penalize,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    Raw,
    #[default]
    Facelift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Number of time nodes `N + 1`, so `Δt = T / N`.
    pub time_nodes: usize,
    pub controls: ControlGrid,
    pub stepping: TimeStepping,
    #[serde(default)]
    pub constraint: ConstraintMode,
    /// Penalty weight `ρ`: each penalize sweep moves by at most `Δt ρ |G_h|`.
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default = "default_constraint_tol")]
    pub constraint_tol: f64,
    #[serde(default = "default_max_constraint_iterations")]
    pub max_constraint_iterations: usize,
    #[serde(default = "default_true")]
    pub upwind: bool,
    /// Fraction of each axis (about its centre) on which results are trusted.
    #[serde(default = "default_trust")]
    pub trust_fraction: f64,
}

fn default_penalty() -> f64 {
    1e6
}
fn default_constraint_tol() -> f64 {
    1e-10
}
fn default_max_constraint_iterations() -> usize {
    1_000_000
}
fn default_true() -> bool {
    true
}
fn default_trust() -> f64 {
    0.6
}

impl SchemeConfig {
    pub fn explicit(time_nodes: usize, controls: ControlGrid) -> Self {
        Self::with_stepping(time_nodes, controls, TimeStepping::Explicit { substeps: Substeps::Auto })
    }

    pub fn implicit(time_nodes: usize, controls: ControlGrid) -> Self {
        Self::with_stepping(time_nodes, controls, TimeStepping::Implicit { max_policy_iterations: 100 })
    }

    fn with_stepping(time_nodes: usize, controls: ControlGrid, stepping: TimeStepping) -> Self {
        Self {
            time_nodes,
            controls,
            stepping,
            constraint: ConstraintMode::Auto,
            penalty: default_penalty(),
            constraint_tol: default_constraint_tol(),
            max_constraint_iterations: default_max_constraint_iterations(),
            upwind: true,
            trust_fraction: default_trust(),
        }
    }

    pub fn time_step(&self, horizon: f64) -> f64 {
        horizon / (self.time_nodes - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.time_nodes < 2 {
            return Err(Error::config("need at least two time nodes"));
        }
        match self.controls {
            ControlGrid::Resolution(n) if n == 0 => return Err(Error::config("control resolution must be positive")),
            ControlGrid::Spacing(h) if !(h > 0.0) => return Err(Error::config("control spacing must be positive")),
            _ => {}
        }
        if let TimeStepping::Explicit { substeps: Substeps::Fixed(0) } = self.stepping {
            return Err(Error::config("substep count must be positive"));
        }
        if !(self.penalty > 0.0) {
            return Err(Error::config("penalty weight must be positive"));
        }
        if !(self.trust_fraction > 0.0 && self.trust_fraction <= 1.0) {
            return Err(Error::config("trust fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveMetadata {
    pub stepping: String,
    pub constraint_mode: String,
    pub time_step: f64,
    /// Explicit substeps per time step (1 for implicit stepping).
    pub substeps: usize,
    /// Largest `Σ_j w_j` seen over nodes × controls before stepping.
    pub max_rate: f64,
    pub control_points: usize,
    /// Howard iterations per backward step.
    pub policy_iterations: Vec<usize>,
    pub constraint_sweeps: usize,
    /// Interior nodes whose stencil has a negative weight (cross terms).
    pub non_monotone_nodes: usize,
    /// "payoff" when the terminal slice equals `g` on the grid.
    pub terminal_label: String,
}

/// Discrete value function: slice `N` is the supplied terminal data (the
/// limit `v(T-, ·)`), while [`payoff`](Self::payoff) keeps `g = V(T, ·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeSolution {
    pub grid: SpatialGrid,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
    pub payoff: Vec<f64>,
    /// Argmax control per node per time node, flattened `nodes × k`.
    pub policy: Vec<Vec<f64>>,
    pub control_dim: usize,
    pub trust_region: Vec<(f64, f64)>,
    pub metadata: SolveMetadata,
}

impl SpaceTimeSolution {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn slice(&self, n: usize) -> GridFunction {
        GridFunction { grid: self.grid.clone(), values: self.slices[n].clone() }
    }

    /// `v(T-, ·)`
    pub fn terminal_limit(&self) -> GridFunction {
        self.slice(self.slices.len() - 1)
    }

    /// `V(T, ·) = g` on the grid.
    pub fn payoff_slice(&self) -> GridFunction {
        GridFunction { grid: self.grid.clone(), values: self.payoff.clone() }
    }

    /// Space-multilinear, time-linear interpolation of the slices; at `t = T`
    /// this returns the terminal limit.
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        let n = self.times.len();
        if t >= self.times[n - 1] {
            return interpolate(&self.grid, &self.slices[n - 1], x);
        }
        if t <= self.times[0] {
            return interpolate(&self.grid, &self.slices[0], x);
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let f = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        let a = interpolate(&self.grid, &self.slices[j], x);
        if f == 0.0 {
            return a;
        }
        let b = interpolate(&self.grid, &self.slices[j + 1], x);
        (1.0 - f) * a + f * b
    }

    /// As [`value`](Self::value) but returning `g` at `t = T`.
    pub fn strong_value(&self, t: f64, x: &[f64]) -> f64 {
        if t >= self.horizon() {
            interpolate(&self.grid, &self.payoff, x)
        } else {
            self.value(t, x)
        }
    }

    /// Columns `t, x1[, x2], value, u1[, u2]`, one row per space-time node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.grid.dim();
        let k = self.control_dim;
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.push("value".into());
        header.extend((1..=k).map(|i| format!("u{i}")));
        wr.write_record(&header)?;
        for (n, t) in self.times.iter().enumerate() {
            for i in 0..self.grid.len() {
                let mut row = vec![t.to_string()];
                row.extend(self.grid.point(i).iter().map(|v| v.to_string()));
                row.push(self.slices[n][i].to_string());
                row.extend(self.policy[n][i * k..(i + 1) * k].iter().map(|v| v.to_string()));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a solution CSV back; the payoff slice is not part of the file and
    /// is left equal to the terminal slice.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let d = header.iter().filter(|h| h.starts_with('x')).count();
        let k = header.iter().filter(|h| h.starts_with('u')).count();
        if d == 0 || header.get(0) != Some("t") || header.get(d + 1) != Some("value") {
            return Err(Error::arg("not a solution CSV (expected t, x.., value, u..)"));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|e| Error::arg(format!("bad number in solution CSV: {e}")))?);
        }
        let mut times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let mut axes = Vec::new();
        for c in 0..d {
            let mut a: Vec<f64> = rows.iter().map(|r| r[1 + c]).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            a.dedup();
            axes.push(a);
        }
        let grid = SpatialGrid::new(axes)?;
        if rows.len() != times.len() * grid.len() {
            return Err(Error::arg("solution CSV is not a full space-time lattice"));
        }
        let mut slices = vec![vec![f64::NAN; grid.len()]; times.len()];
        let mut policy = vec![vec![0.0; grid.len() * k]; times.len()];
        for r in &rows {
            let n = times.partition_point(|&s| s < r[0]);
            let idx: Vec<usize> = (0..d).map(|c| grid.axis(c).partition_point(|&a| a < r[1 + c])).collect();
            let flat = grid.flat_index(&idx);
            slices[n][flat] = r[1 + d];
            policy[n][flat * k..(flat + 1) * k].copy_from_slice(&r[2 + d..2 + d + k]);
        }
        if slices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg("solution CSV has missing or non-finite values"));
        }
        let payoff = slices.last().unwrap().clone();
        let trust_region = grid.trust_region(default_trust());
        Ok(Self {
            grid,
            times,
            slices,
            payoff,
            policy,
            control_dim: k,
            trust_region,
            metadata: SolveMetadata { terminal_label: "read from csv".into(), ..Default::default() },
        })
    }
}

/// Terminal data on `grid`: `g` itself or its face-lift.
pub fn terminal_data(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    mode: TerminalMode,
    tol: f64,
) -> Result<GridFunction> {
    let g = GridFunction::from_fn(grid, |x| problem.payoff.eval(x))?;
    match mode {
        TerminalMode::Raw => Ok(g),
        TerminalMode::Facelift => crate::facelift::facelift(&g, problem, 10_000_000, tol),
    }
}

struct Context<'a> {
    problem: &'a ControlProblem,
    grid: &'a SpatialGrid,
    controls: Vec<f64>,
    k: usize,
    interior: Vec<usize>,
    upwind: bool,
}

impl Context<'_> {
    fn n_controls(&self) -> usize {
        self.controls.len() / self.k
    }

    fn control(&self, c: usize) -> &[f64] {
        &self.controls[c * self.k..(c + 1) * self.k]
    }

    /// Stencils for every (interior node, control) pair at time `t`,
    /// cached when small enough.
    fn bank(&self, t: f64) -> Bank {
        let nc = self.n_controls();
        if self.interior.len() * nc > STENCIL_CACHE_LIMIT {
            return Bank { t, cache: None, nc };
        }
        let cache: Vec<Stencil> = self
            .interior
            .par_iter()
            .map_init(
                || Scratch::new(self.problem),
                |scratch, &i| {
                    (0..nc)
                        .map(|c| node_stencil(self.problem, self.grid, t, i, self.control(c), self.upwind, scratch))
                        .collect::<Vec<_>>()
                },
            )
            .flatten()
            .collect();
        Bank { t, cache: Some(cache), nc }
    }
}

struct Bank {
    t: f64,
    cache: Option<Vec<Stencil>>,
    nc: usize,
}

impl Bank {
    /// Stencil of interior node number `r` (index into `Context::interior`).
    fn get(&self, ctx: &Context, r: usize, c: usize, scratch: &mut Scratch) -> Stencil {
        match &self.cache {
            Some(cache) => cache[r * self.nc + c],
            None => node_stencil(ctx.problem, ctx.grid, self.t, ctx.interior[r], ctx.control(c), ctx.upwind, scratch),
        }
    }

    /// Best control (first maximizer) for `L^u v` at interior node `r`,
    /// keeping `current` unless another control is strictly better.
    fn argmax(&self, ctx: &Context, r: usize, v: &[f64], current: Option<usize>, scratch: &mut Scratch) -> (usize, Stencil) {
        let i = ctx.interior[r];
        let (mut best_c, mut best_st, mut best) = match current {
            Some(c) => {
                let st = self.get(ctx, r, c, scratch);
                (c, st, st.apply(v, i))
            }
            None => (usize::MAX, Stencil::default(), f64::NEG_INFINITY),
        };
        let keep = best;
        for c in 0..self.nc {
            if Some(c) == current {
                continue;
            }
            let st = self.get(ctx, r, c, scratch);
            let val = st.apply(v, i);
            let margin = if current.is_some() { 1e-13 * keep.abs().max(1e-300) } else { 0.0 };
            if val > best && val > keep + margin {
                best = val;
                best_c = c;
                best_st = st;
            }
        }
        (best_c, best_st)
    }

    fn max_rate(&self, ctx: &Context) -> (f64, usize) {
        let mut scratch = Scratch::new(ctx.problem);
        let mut rate = 0.0_f64;
        let mut bad = 0;
        for r in 0..ctx.interior.len() {
            let mut node_bad = false;
            for c in 0..self.nc {
                let st = self.get(ctx, r, c, &mut scratch);
                rate = rate.max(st.total());
                node_bad |= !st.is_monotone();
            }
            bad += node_bad as usize;
        }
        (rate, bad)
    }
}

fn resolve_constraint_mode(problem: &ControlProblem, mode: ConstraintMode) -> Result<ConstraintMode> {
    Ok(match mode {
        ConstraintMode::Auto => match problem.constraint {
            Constraint::Positive { value } if value > 0.0 => ConstraintMode::Off,
            Constraint::Concavity if problem.dim() == 1 => ConstraintMode::Project,
            _ => ConstraintMode::Penalize,
        },
        ConstraintMode::Project => {
            if !(problem.constraint == Constraint::Concavity && problem.dim() == 1) {
                return Err(Error::config("project mode needs G = -M in one dimension"));
            }
            ConstraintMode::Project
        }
        m => m,
    })
}

fn check_finite(values: &[f64], slice: usize) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical { slice, message: format!("non-finite value {} at node {i}", values[i]) });
    }
    Ok(())
}

/// Backward solve from `terminal` at `t = T` to `t = 0`.
pub fn solve_hjb(problem: &ControlProblem, terminal: &GridFunction, config: &SchemeConfig) -> Result<SpaceTimeSolution> {
    config.validate()?;
    let grid = &terminal.grid;
    if grid.dim() != problem.dim() {
        return Err(Error::arg("terminal grid dimension differs from the state dimension"));
    }
    if let Some(x) = grid.points().find(|x| !problem.domain.contains(x)) {
        return Err(Error::domain(format!("grid node {x:?} lies outside the state domain")));
    }
    let mode = resolve_constraint_mode(problem, config.constraint)?;
    let controls = problem.controls.grid(config.controls);
    if controls.is_empty() {
        return Err(Error::config("control grid is empty"));
    }
    let ctx = Context {
        problem,
        grid,
        k: problem.control_dim(),
        controls,
        interior: (0..grid.len()).filter(|&i| !grid.is_boundary(i)).collect(),
        upwind: config.upwind,
    };
    let horizon = problem.horizon;
    let n_steps = config.time_nodes - 1;
    let dt = config.time_step(horizon);
    let times: Vec<f64> =
        (0..=n_steps).map(|n| if n == n_steps { horizon } else { horizon * n as f64 / n_steps as f64 }).collect();
    let payoff: Vec<f64> = grid.points().map(|x| problem.payoff.eval(&x)).collect();

    // Rates over the whole lattice, before any stepping.
    let mut max_rate = 0.0_f64;
    let mut non_monotone = 0;
    for &t in &times[..n_steps] {
        let (r, bad) = ctx.bank(t).max_rate(&ctx);
        max_rate = max_rate.max(r);
        non_monotone = non_monotone.max(bad);
    }
    if matches!(config.stepping, TimeStepping::Explicit { .. }) {
        // Explicit steps read coefficients at the later time of each step.
        let (r, bad) = ctx.bank(horizon).max_rate(&ctx);
        max_rate = max_rate.max(r);
        non_monotone = non_monotone.max(bad);
    }
    let substeps = match config.stepping {
        TimeStepping::Explicit { substeps: Substeps::Auto } => ((dt * max_rate - 1e-9).ceil() as usize).max(1),
        TimeStepping::Explicit { substeps: Substeps::Fixed(m) } => {
            if dt / m as f64 * max_rate > 1.0 + 1e-12 {
                return Err(Error::config(format!(
                    "CFL violated: Δt/{m} = {:e} exceeds 1/max rate = {:e}",
                    dt / m as f64,
                    1.0 / max_rate
                )));
            }
            m
        }
        TimeStepping::Implicit { .. } => 1,
    };

    let constraint_steps = match mode {
        ConstraintMode::Penalize => {
            let cap = dt * config.penalty;
            local_steps(grid, &problem.constraint, 0.0).into_iter().map(|s| s.min(cap)).collect()
        }
        _ => Vec::new(),
    };

    let mut slices = vec![Vec::new(); n_steps + 1];
    let mut policy_idx: Vec<Vec<usize>> = vec![Vec::new(); n_steps + 1];
    slices[n_steps] = terminal.values.clone();
    check_finite(&slices[n_steps], n_steps)?;
    let mut meta = SolveMetadata {
        stepping: match config.stepping {
            TimeStepping::Explicit { .. } => "explicit".into(),
            TimeStepping::Implicit { .. } => "implicit-howard".into(),
        },
        constraint_mode: format!("{mode:?}").to_lowercase(),
        time_step: dt,
        substeps,
        max_rate,
        control_points: ctx.n_controls(),
        policy_iterations: Vec::with_capacity(n_steps),
        constraint_sweeps: 0,
        non_monotone_nodes: non_monotone,
        terminal_label: if terminal.values == payoff { "payoff".into() } else { "supplied terminal data".into() },
    };

    let mut prev_policy: Option<Vec<usize>> = None;
    for n in (0..n_steps).rev() {
        let (mut v, pol) = match config.stepping {
            TimeStepping::Explicit { .. } => explicit_step(&ctx, &slices[n + 1], times[n + 1], dt, substeps, n)?,
            TimeStepping::Implicit { max_policy_iterations } => {
                let (v, pol, iters) =
                    implicit_step(&ctx, &slices[n + 1], times[n], dt, prev_policy.as_deref(), max_policy_iterations, n)?;
                meta.policy_iterations.push(iters);
                (v, pol)
            }
        };
        match mode {
            ConstraintMode::Project => {
                v = concave_envelope_values(grid.axis(0), &v);
            }
            ConstraintMode::Penalize => {
                v = relax_with_steps(
                    grid,
                    &v,
                    &problem.constraint,
                    times[n],
                    &constraint_steps,
                    config.max_constraint_iterations,
                    config.constraint_tol,
                )?;
                meta.constraint_sweeps += 1;
            }
            ConstraintMode::Off | ConstraintMode::Auto => {}
        }
        check_finite(&v, n)?;
        slices[n] = v;
        prev_policy = Some(pol.clone());
        policy_idx[n] = pol;
    }
    meta.policy_iterations.reverse();
    policy_idx[n_steps] = policy_idx[n_steps - 1].clone();

    let policy = policy_idx.iter().map(|p| expand_policy(&ctx, p)).collect();
    Ok(SpaceTimeSolution {
        grid: grid.clone(),
        times,
        slices,
        payoff,
        policy,
        control_dim: ctx.k,
        trust_region: grid.trust_region(config.trust_fraction),
        metadata: meta,
    })
}

/// Full-grid control table; edge nodes copy the nearest interior node.
fn expand_policy(ctx: &Context, pol: &[usize]) -> Vec<f64> {
    let grid = ctx.grid;
    let d = grid.dim();
    let k = ctx.k;
    let mut row_of = vec![usize::MAX; grid.len()];
    for (r, &i) in ctx.interior.iter().enumerate() {
        row_of[i] = r;
    }
    let mut out = vec![0.0; grid.len() * k];
    for i in 0..grid.len() {
        let mut idx = grid.multi_index(i);
        for (c, slot) in idx.iter_mut().enumerate().take(d) {
            *slot = (*slot).clamp(1, grid.axis(c).len() - 2);
        }
        let r = row_of[grid.flat_index(&idx[..d])];
        out[i * k..(i + 1) * k].copy_from_slice(ctx.control(pol[r]));
    }
    out
}

fn explicit_step(
    ctx: &Context,
    v_next: &[f64],
    t_next: f64,
    dt: f64,
    substeps: usize,
    slice: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let h = dt / substeps as f64;
    let mut v = v_next.to_vec();
    let mut pol = vec![0usize; ctx.interior.len()];
    for s in 0..substeps {
        let t = t_next - s as f64 * h;
        let bank = ctx.bank(t);
        let rows: Vec<(usize, f64, f64)> = (0..ctx.interior.len())
            .into_par_iter()
            .map_init(
                || Scratch::new(ctx.problem),
                |scratch, r| {
                    let i = ctx.interior[r];
                    let (c, st) = bank.argmax(ctx, r, &v, None, scratch);
                    (c, v[i] + h * st.apply(&v, i), st.total())
                },
            )
            .collect();
        let mut next = v.clone();
        for (r, &(c, val, rate)) in rows.iter().enumerate() {
            if h * rate > 1.0 + 1e-12 {
                return Err(Error::config(format!(
                    "CFL violated at slice {slice}: Δt·Σw = {:.3} > 1",
                    h * rate
                )));
            }
            pol[r] = c;
            next[ctx.interior[r]] = val;
        }
        v = next;
    }
    Ok((v, pol))
}

/// Solves `(I - Δt L^π) δ = Δt L^π v_next` for the increment and improves
/// `π` until it is stable.
fn implicit_step(
    ctx: &Context,
    v_next: &[f64],
    t: f64,
    dt: f64,
    warm: Option<&[usize]>,
    max_iters: usize,
    slice: usize,
) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let bank = ctx.bank(t);
    let improve = |v: &[f64], current: Option<&[usize]>| -> Vec<(usize, Stencil)> {
        (0..ctx.interior.len())
            .into_par_iter()
            .map_init(
                || Scratch::new(ctx.problem),
                |scratch, r| bank.argmax(ctx, r, v, current.map(|p| p[r]), scratch),
            )
            .collect()
    };
    let mut choice = match warm {
        Some(p) => improve(v_next, Some(p)),
        None => improve(v_next, None),
    };
    let mut v = v_next.to_vec();
    for iter in 1..=max_iters {
        let stencils: Vec<Stencil> = choice.iter().map(|(_, s)| *s).collect();
        v = solve_increment(ctx, &stencils, v_next, dt, slice)?;
        let current: Vec<usize> = choice.iter().map(|(c, _)| *c).collect();
        let next = improve(&v, Some(&current));
        if next.iter().zip(&current).all(|((a, _), b)| a == b) {
            return Ok((v, current, iter));
        }
        choice = next;
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual: f64::NAN,
        last: Box::new(GridFunction { grid: ctx.grid.clone(), values: v }),
    })
}

fn solve_increment(ctx: &Context, stencils: &[Stencil], v_next: &[f64], dt: f64, slice: usize) -> Result<Vec<f64>> {
    let n = ctx.grid.len();
    let mut rhs = vec![0.0; n];
    for (r, st) in stencils.iter().enumerate() {
        let i = ctx.interior[r];
        rhs[i] = dt * st.apply(v_next, i);
    }
    let delta = if ctx.grid.dim() == 1 {
        // Tridiagonal; edge rows are δ = 0.
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        for (r, st) in stencils.iter().enumerate() {
            let i = ctx.interior[r];
            for (j, w) in st.entries() {
                diag[i] += dt * w;
                if j < i {
                    lower[i] -= dt * w;
                } else {
                    upper[i] -= dt * w;
                }
            }
        }
        thomas(&lower, &diag, &upper, &rhs)
    } else {
        gauss_seidel(ctx, stencils, &rhs, dt, slice)?
    };
    Ok(v_next.iter().zip(&delta).map(|(a, b)| a + b).collect())
}

fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

fn gauss_seidel(ctx: &Context, stencils: &[Stencil], rhs: &[f64], dt: f64, slice: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; ctx.grid.len()];
    let scale = rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(x);
    }
    const MAX_SWEEPS: usize = 200_000;
    for _ in 0..MAX_SWEEPS {
        let mut change = 0.0_f64;
        for (r, st) in stencils.iter().enumerate() {
            let i = ctx.interior[r];
            let mut num = rhs[i];
            let mut den = 1.0;
            for (j, w) in st.entries() {
                num += dt * w * x[j];
                den += dt * w;
            }
            let new = num / den;
            change = change.max((new - x[i]).abs());
            x[i] = new;
        }
        if !change.is_finite() {
            return Err(Error::Numerical { slice, message: "Gauss-Seidel diverged".into() });
        }
        if change <= 1e-14 * scale.max(x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
            return Ok(x);
        }
    }
    Err(Error::Convergence {
        iterations: MAX_SWEEPS,
        residual: f64::NAN,
        last: Box::new(GridFunction { grid: ctx.grid.clone(), values: x }),
    })
}

/// Feedback rule read off the argmax table.
pub fn extract_policy(solution: &SpaceTimeSolution) -> Result<FeedbackPolicy> {
    let table = PolicyTable::new(
        solution.grid.clone(),
        solution.times.clone(),
        solution.policy.clone(),
        solution.control_dim,
    )?;
    Ok(FeedbackPolicy::table(table, "hjb-argmax"))
}

/// `G_h` at the interior nodes of slice `n`.
pub fn constraint_residuals(problem: &ControlProblem, solution: &SpaceTimeSolution, n: usize) -> Vec<f64> {
    let grid = &solution.grid;
    (0..grid.len())
        .filter(|&i| !grid.is_boundary(i))
        .map(|i| discrete_constraint(grid, &solution.slices[n], &problem.constraint, solution.times[n], i))
        .collect()
}
