//! Monte-Carlo certification of stochastic sub- and super-solutions.
//!
//! A candidate `w` is tested on a battery of start times `τ` and stopping
//! rules `ρ`: from starts `ξ` drawn uniformly on a test box, the paired
//! differences `w(ρ, X_ρ) − w(τ, ξ)` must not be significantly negative
//! (sub-solutions, under the companion policy) or positive (super-solutions,
//! under every adversary). Significance is one-sided with a Bonferroni
//! correction over all battery entries, so the test only ever errs toward
//! rejecting.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::policy::FeedbackPolicy;
use crate::problem::ControlProblem;
use crate::sim::{check_policy, derive_seed, path_rng, simulate_paths, estimate_value, SimOptions, Stepper, ValueEstimate};

pub type CandidateEval = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Sub,
    Super,
}

/// How a sub-solution picks its control from a start `(τ, ξ)`.
#[derive(Debug, Clone)]
pub enum Companion {
    Policy(FeedbackPolicy),
    /// Follow the first candidate's companion where it is the larger one,
    /// otherwise the second's.
    Switch(Arc<CandidateFunction>, Arc<CandidateFunction>),
}

impl Companion {
    pub fn select(&self, t: f64, x: &[f64]) -> &FeedbackPolicy {
        match self {
            Companion::Policy(p) => p,
            Companion::Switch(a, b) => {
                let next = if (a.eval)(t, x) >= (b.eval)(t, x) { a } else { b };
                next.companion.as_ref().expect("lattice members carry companions").select(t, x)
            }
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            Companion::Policy(p) => p.bound,
            Companion::Switch(a, b) => a.policy_bound().max(b.policy_bound()),
        }
    }
}

#[derive(Clone)]
pub struct CandidateFunction {
    pub eval: CandidateEval,
    pub growth_constant: f64,
    pub kind: CandidateKind,
    pub companion: Option<Companion>,
    pub label: String,
}

impl fmt::Debug for CandidateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CandidateFunction")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .field("growth_constant", &self.growth_constant)
            .field("companion", &self.companion)
            .finish()
    }
}

impl CandidateFunction {
    pub fn new(
        kind: CandidateKind,
        growth_constant: f64,
        label: impl Into<String>,
        eval: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { eval: Arc::new(eval), growth_constant, kind, companion: None, label: label.into() }
    }

    /// `w ≡ c`; the growth constant assumes `ψ ≥ 1`.
    pub fn constant(kind: CandidateKind, c: f64) -> Self {
        Self::new(kind, c.abs(), format!("constant {c}"), move |_, _| c)
    }

    pub fn with_policy(mut self, policy: FeedbackPolicy) -> Self {
        self.companion = Some(Companion::Policy(policy));
        self
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.eval)(t, x)
    }

    /// `L(v)`: 0 without a companion.
    pub fn policy_bound(&self) -> f64 {
        self.companion.as_ref().map_or(0.0, Companion::bound)
    }
}

/// `w1 ∨ w2` with the switching companion chosen at the start of each test.
pub fn lattice_max(w1: Arc<CandidateFunction>, w2: Arc<CandidateFunction>) -> Result<CandidateFunction> {
    if w1.kind != CandidateKind::Sub || w2.kind != CandidateKind::Sub {
        return Err(Error::arg("lattice_max takes two sub-solution candidates"));
    }
    if w1.companion.is_none() || w2.companion.is_none() {
        return Err(Error::arg("lattice_max needs companion policies on both candidates"));
    }
    let (a, b) = (w1.clone(), w2.clone());
    Ok(CandidateFunction {
        eval: Arc::new(move |t, x| (a.eval)(t, x).max((b.eval)(t, x))),
        growth_constant: w1.growth_constant.max(w2.growth_constant),
        kind: CandidateKind::Sub,
        label: format!("max({}, {})", w1.label, w2.label),
        companion: Some(Companion::Switch(w1, w2)),
    })
}

/// `w1 ∧ w2`.
pub fn lattice_min(w1: Arc<CandidateFunction>, w2: Arc<CandidateFunction>) -> Result<CandidateFunction> {
    if w1.kind != CandidateKind::Super || w2.kind != CandidateKind::Super {
        return Err(Error::arg("lattice_min takes two super-solution candidates"));
    }
    let label = format!("min({}, {})", w1.label, w2.label);
    let growth_constant = w1.growth_constant.max(w2.growth_constant);
    Ok(CandidateFunction {
        eval: Arc::new(move |t, x| (w1.eval)(t, x).min((w2.eval)(t, x))),
        growth_constant,
        kind: CandidateKind::Super,
        companion: None,
        label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Paths per battery (per adversary), split evenly over the entries.
    pub budget: usize,
    pub seed: u64,
    /// Starts are uniform on this box.
    pub test_box: Vec<(f64, f64)>,
    /// Start times `iT/starts`, `i < starts`.
    pub starts: usize,
    /// Euler steps per horizon length.
    pub steps_per_horizon: usize,
    /// Ball radius as a fraction of the smallest test-box width.
    pub ball_fraction: f64,
    /// Family-wise level of the battery.
    pub alpha: f64,
    pub tol_cert: f64,
    /// Nodes per dimension for the terminal and growth checks.
    pub check_nodes: usize,
    #[serde(default)]
    pub sim: SimOptions,
}

impl TestConfig {
    pub fn new(test_box: Vec<(f64, f64)>) -> Self {
        Self {
            budget: 100_000,
            seed: 0,
            test_box,
            starts: 4,
            steps_per_horizon: 64,
            ball_fraction: 0.25,
            alpha: 0.01,
            tol_cert: 1e-6,
            check_nodes: 101,
            sim: SimOptions::default(),
        }
    }

    fn validate(&self, problem: &ControlProblem) -> Result<()> {
        if self.test_box.len() != problem.dim() {
            return Err(Error::arg("test box dimension differs from the problem"));
        }
        for &(lo, hi) in &self.test_box {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::arg("test box must be finite with lo ≤ hi"));
            }
        }
        let lo: Vec<f64> = self.test_box.iter().map(|b| b.0).collect();
        let hi: Vec<f64> = self.test_box.iter().map(|b| b.1).collect();
        if !problem.domain.contains(&lo) || !problem.domain.contains(&hi) {
            return Err(Error::domain("test box must lie inside the state domain"));
        }
        if self.starts == 0 || self.steps_per_horizon == 0 || self.check_nodes < 2 {
            return Err(Error::arg("starts, steps_per_horizon and check_nodes must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::arg("alpha must lie in (0, 1)"));
        }
        if self.budget < 2 * self.starts * 3 {
            return Err(Error::arg("budget too small for the battery"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdversaryConfig {
    /// Random piecewise-constant (in time) policies.
    pub random_policies: usize,
    pub pieces: usize,
    /// Constant policies at the corners of the control box.
    pub corners: bool,
    /// Stop at the first adversary that refutes the candidate.
    #[serde(default)]
    pub stop_on_failure: bool,
    /// Tried first, e.g. a solver's argmax policy.
    #[serde(skip)]
    pub supplied: Vec<FeedbackPolicy>,
}

impl AdversaryConfig {
    pub fn standard(supplied: Vec<FeedbackPolicy>) -> Self {
        Self { random_policies: 4, pieces: 8, corners: true, stop_on_failure: false, supplied }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    Fixed { rho: f64 },
    Horizon,
    BallExit { radius: f64 },
}

impl fmt::Display for StopRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopRule::Fixed { rho } => write!(f, "rho={rho}"),
            StopRule::Horizon => f.write_str("rho=T"),
            StopRule::BallExit { radius } => write!(f, "ball exit r={radius}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub name: String,
    pub tau: f64,
    pub stop: StopRule,
    pub policy: String,
    pub n: usize,
    pub steps: usize,
    pub mean_start: f64,
    pub mean_end: f64,
    /// Mean of the paired differences, oriented so that negative is bad.
    pub margin: f64,
    pub std_error: f64,
    /// Lowest passing margin: `−z·se − tol_cert`.
    pub threshold: f64,
    pub exit_fraction: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCheck {
    pub points: usize,
    /// Largest violation (0 when none).
    pub worst: f64,
    pub worst_at: Option<Vec<f64>>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub candidate: String,
    pub kind: CandidateKind,
    pub passed: bool,
    pub verdict: String,
    pub z: f64,
    pub adversary_class: Vec<String>,
    pub tests: Vec<TestRecord>,
    pub terminal: PointCheck,
    pub growth: PointCheck,
    pub config: TestConfig,
}

impl CertificationReport {
    pub fn failing(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.tests.iter().filter(|t| !t.passed).map(|t| t.name.as_str()).collect();
        if !self.terminal.passed {
            out.push("terminal check");
        }
        if !self.growth.passed {
            out.push("growth check");
        }
        out
    }
}

struct Case {
    tau: f64,
    stop: StopRule,
}

fn battery(problem: &ControlProblem, cfg: &TestConfig) -> Vec<Case> {
    let t_end = problem.horizon;
    let width = cfg.test_box.iter().map(|(lo, hi)| hi - lo).fold(f64::INFINITY, f64::min);
    let radius = cfg.ball_fraction * width;
    let mut cases = Vec::new();
    for i in 0..cfg.starts {
        let tau = i as f64 * t_end / cfg.starts as f64;
        let short = tau + t_end / (2 * cfg.starts) as f64;
        cases.push(Case { tau, stop: StopRule::Fixed { rho: short } });
        cases.push(Case { tau, stop: StopRule::Horizon });
        cases.push(Case { tau, stop: StopRule::BallExit { radius } });
    }
    cases
}

fn bonferroni_z(alpha: f64, tests: usize) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / tests as f64)
}

fn check_nodes(cfg: &TestConfig) -> Vec<Vec<f64>> {
    let n = cfg.check_nodes;
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> { (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect() };
    let axes: Vec<Vec<f64>> = cfg.test_box.iter().map(|&b| axis(b)).collect();
    match axes.len() {
        1 => axes[0].iter().map(|&x| vec![x]).collect(),
        _ => axes[0].iter().flat_map(|&a| axes[1].iter().map(move |&b| vec![a, b])).collect(),
    }
}

fn terminal_check(w: &CandidateFunction, problem: &ControlProblem, cfg: &TestConfig) -> PointCheck {
    let pts = check_nodes(cfg);
    let t_end = problem.horizon;
    let mut worst = 0.0;
    let mut worst_at = None;
    for x in &pts {
        let g = problem.payoff.eval(x);
        let v = w.value(t_end, x);
        let excess = match w.kind {
            CandidateKind::Sub => v - g,
            CandidateKind::Super => g - v,
        };
        if excess > worst {
            worst = excess;
            worst_at = Some(x.clone());
        }
    }
    PointCheck { points: pts.len(), worst, worst_at, passed: worst <= cfg.tol_cert }
}

fn growth_check(w: &CandidateFunction, problem: &ControlProblem, cfg: &TestConfig) -> PointCheck {
    let pts = check_nodes(cfg);
    let times: Vec<f64> = (0..=cfg.starts).map(|i| i as f64 * problem.horizon / cfg.starts as f64).collect();
    let mut worst = 0.0;
    let mut worst_at = None;
    for x in &pts {
        let cap = w.growth_constant * problem.gauge.eval(x);
        for &t in &times {
            let excess = w.value(t, x).abs() - cap * (1.0 + 1e-12);
            if excess > worst {
                worst = excess;
                let mut at = vec![t];
                at.extend_from_slice(x);
                worst_at = Some(at);
            }
        }
    }
    let passed = worst_at.is_none();
    PointCheck { points: pts.len() * times.len(), worst, worst_at, passed }
}

/// Picks the policy for one path from its start.
enum Driver<'a> {
    Companion(&'a Companion),
    Fixed(&'a FeedbackPolicy),
}

#[allow(clippy::too_many_arguments)]
fn run_case(
    w: &CandidateFunction,
    problem: &ControlProblem,
    cfg: &TestConfig,
    stepper: &Stepper,
    case: &Case,
    case_seed: u64,
    n: usize,
    driver: &Driver,
    z: f64,
) -> Result<TestRecord> {
    let t_end = problem.horizon;
    let dt = t_end / cfg.steps_per_horizon as f64;
    let (rho_max, ball) = match case.stop {
        StopRule::Fixed { rho } => (rho.min(t_end), None),
        StopRule::Horizon => (t_end, None),
        StopRule::BallExit { radius } => (t_end, Some(radius)),
    };
    let steps = (((rho_max - case.tau) / dt).round() as usize).max(1);
    let sign = match w.kind {
        CandidateKind::Sub => 1.0,
        CandidateKind::Super => -1.0,
    };
    let d = problem.dim();
    let samples: Vec<(f64, f64, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(case_seed, i as u64);
            let mut xi = [0.0; 2];
            for (k, &(lo, hi)) in cfg.test_box.iter().enumerate() {
                xi[k] = lo + (hi - lo) * rng.random::<f64>();
            }
            let xi = &xi[..d];
            let policy = match driver {
                Driver::Companion(c) => c.select(case.tau, xi),
                Driver::Fixed(p) => p,
            };
            let end = stepper.run(policy, &mut rng, case.tau, xi, rho_max, steps, ball.map(|r| (xi, r)), None)?;
            let start = w.value(case.tau, xi);
            let stop = w.value(end.t, &end.x[..d]);
            Ok((start, stop, sign * (stop - start), end.exit.is_some()))
        })
        .collect::<Result<_>>()?;
    let diffs: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let exits = samples.iter().filter(|s| s.3).count();
    let est = ValueEstimate::from_samples(&diffs, exits as f64 / n as f64);
    let threshold = -z * est.std_error - cfg.tol_cert;
    let policy = match driver {
        Driver::Companion(Companion::Policy(p)) => p.label.clone(),
        Driver::Fixed(p) => p.label.clone(),
        Driver::Companion(Companion::Switch(..)) => "switching companion".into(),
    };
    Ok(TestRecord {
        name: format!("tau={} {} [{}]", case.tau, case.stop, policy),
        tau: case.tau,
        stop: case.stop,
        policy,
        n,
        steps,
        mean_start: samples.iter().map(|s| s.0).sum::<f64>() / n as f64,
        mean_end: samples.iter().map(|s| s.1).sum::<f64>() / n as f64,
        margin: est.mean,
        std_error: est.std_error,
        threshold,
        exit_fraction: est.exit_fraction,
        passed: est.mean >= threshold,
    })
}

fn finish(
    w: &CandidateFunction,
    problem: &ControlProblem,
    cfg: &TestConfig,
    z: f64,
    adversary_class: Vec<String>,
    tests: Vec<TestRecord>,
) -> CertificationReport {
    let terminal = terminal_check(w, problem, cfg);
    let growth = growth_check(w, problem, cfg);
    let passed = terminal.passed && growth.passed && tests.iter().all(|t| t.passed);
    let verdict = match (passed, w.kind) {
        (false, _) => "not certified".to_string(),
        (true, CandidateKind::Sub) => "certified (statistical)".to_string(),
        (true, CandidateKind::Super) => {
            format!("certified (statistical, adversary class: {})", adversary_class.join(", "))
        }
    };
    CertificationReport {
        candidate: w.label.clone(),
        kind: w.kind,
        passed,
        verdict,
        z,
        adversary_class,
        tests,
        terminal,
        growth,
        config: cfg.clone(),
    }
}

pub fn certify_subsolution(w: &CandidateFunction, problem: &ControlProblem, cfg: &TestConfig) -> Result<CertificationReport> {
    if w.kind != CandidateKind::Sub {
        return Err(Error::arg("certify_subsolution needs a sub-solution candidate"));
    }
    let companion = w
        .companion
        .as_ref()
        .ok_or_else(|| Error::arg(format!("candidate '{}' has no companion policy", w.label)))?;
    cfg.validate(problem)?;
    check_companion(problem, companion)?;
    let stepper = Stepper::new(problem, &cfg.sim);
    let cases = battery(problem, cfg);
    let z = bonferroni_z(cfg.alpha, cases.len());
    let n = cfg.budget / cases.len();
    let tests = cases
        .iter()
        .enumerate()
        .map(|(c, case)| {
            run_case(w, problem, cfg, &stepper, case, derive_seed(cfg.seed, c as u64), n, &Driver::Companion(companion), z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(w, problem, cfg, z, vec!["companion".into()], tests))
}

fn check_companion(problem: &ControlProblem, c: &Companion) -> Result<()> {
    match c {
        Companion::Policy(p) => check_policy(problem, p),
        Companion::Switch(a, b) => {
            for w in [a, b] {
                check_companion(problem, w.companion.as_ref().ok_or_else(|| Error::arg("lattice member without companion"))?)?;
            }
            Ok(())
        }
    }
}

/// Constant controls at the corners of `U ∩ [−B, B]^k`.
fn corner_policies(problem: &ControlProblem) -> Vec<FeedbackPolicy> {
    let set = &problem.controls;
    let k = set.dim();
    let b = set.bound;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for bx in &set.boxes {
        let lo: Vec<f64> = bx.lo.iter().map(|v| v.max(-b)).collect();
        let hi: Vec<f64> = bx.hi.iter().map(|v| v.min(b)).collect();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            continue;
        }
        for mask in 0..(1usize << k) {
            let u: Vec<f64> = (0..k).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect();
            if !out.contains(&u) {
                out.push(u);
            }
        }
    }
    out.into_iter().map(FeedbackPolicy::constant).collect()
}

/// Piecewise-constant-in-time policy with levels drawn uniformly from a
/// random box of `U ∩ [−B, B]^k`.
fn random_policy(problem: &ControlProblem, pieces: usize, seed: u64, index: usize) -> FeedbackPolicy {
    let set = &problem.controls;
    let k = set.dim();
    let b = set.bound;
    let mut rng = path_rng(seed, index as u64);
    let usable: Vec<_> = set
        .boxes
        .iter()
        .filter(|bx| bx.lo.iter().zip(&bx.hi).all(|(l, h)| l.max(-b) <= h.min(b)))
        .collect();
    let levels: Vec<f64> = (0..pieces)
        .flat_map(|_| {
            let bx = usable[rng.random_range(0..usable.len())];
            (0..k)
                .map(|i| {
                    let (lo, hi) = (bx.lo[i].max(-b), bx.hi[i].min(b));
                    lo + (hi - lo) * rng.random::<f64>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let horizon = problem.horizon;
    FeedbackPolicy::analytic(k, b, format!("random piecewise-constant #{index}"), move |t, _, u| {
        let j = ((t / horizon * pieces as f64) as usize).min(pieces - 1);
        u.copy_from_slice(&levels[j * k..(j + 1) * k]);
    })
}

pub fn certify_supersolution(
    w: &CandidateFunction,
    problem: &ControlProblem,
    cfg: &TestConfig,
    adversaries: &AdversaryConfig,
) -> Result<CertificationReport> {
    if w.kind != CandidateKind::Super {
        return Err(Error::arg("certify_supersolution needs a super-solution candidate"));
    }
    cfg.validate(problem)?;
    let mut class: Vec<FeedbackPolicy> = adversaries.supplied.clone();
    if adversaries.corners {
        class.extend(corner_policies(problem));
    }
    let adv_seed = derive_seed(cfg.seed, u64::MAX);
    class.extend((0..adversaries.random_policies).map(|i| random_policy(problem, adversaries.pieces.max(1), adv_seed, i)));
    if class.is_empty() {
        return Err(Error::arg("empty adversary class"));
    }
    for p in &class {
        check_policy(problem, p)?;
    }
    let stepper = Stepper::new(problem, &cfg.sim);
    let cases = battery(problem, cfg);
    let z = bonferroni_z(cfg.alpha, cases.len() * class.len());
    let n = cfg.budget / cases.len();
    let mut tests = Vec::new();
    let mut tried = Vec::new();
    for policy in &class {
        tried.push(policy.label.clone());
        let mut refuted = false;
        for (c, case) in cases.iter().enumerate() {
            // common random numbers across adversaries
            let rec = run_case(w, problem, cfg, &stepper, case, derive_seed(cfg.seed, c as u64), n, &Driver::Fixed(policy), z)?;
            refuted |= !rec.passed;
            tests.push(rec);
        }
        if refuted && adversaries.stop_on_failure {
            break;
        }
    }
    Ok(finish(w, problem, cfg, z, tried, tests))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub tol_cert: f64,
    #[serde(default)]
    pub sim: SimOptions,
}

impl Default for BracketConfig {
    fn default() -> Self {
        Self { paths: 100_000, steps: 64, seed: 0, tol_cert: 1e-6, sim: SimOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub sub: f64,
    pub sup: f64,
    pub mc: ValueEstimate,
    pub policy: String,
    /// `sup − sub`
    pub gap: f64,
    pub relative_gap: f64,
    pub sub_below_mc: bool,
    pub mc_below_sup: bool,
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    pub sub: String,
    pub sup: String,
    pub points: Vec<BracketPoint>,
    pub passed: bool,
    pub config: BracketConfig,
}

/// Sandwich `sub ≤ V̂ ≤ sup` at each point, `V̂` the Monte-Carlo value of the
/// sub-solution's companion (or `policy`, when given).
#[allow(clippy::too_many_arguments)]
pub fn bracket_report(
    sub: &CandidateFunction,
    sub_report: &CertificationReport,
    sup: &CandidateFunction,
    sup_report: &CertificationReport,
    problem: &ControlProblem,
    points: &[(f64, Vec<f64>)],
    cfg: &BracketConfig,
    policy: Option<&FeedbackPolicy>,
) -> Result<BracketReport> {
    for (w, r, kind) in [(sub, sub_report, CandidateKind::Sub), (sup, sup_report, CandidateKind::Super)] {
        if w.kind != kind || r.kind != kind {
            return Err(Error::arg("bracket needs a sub candidate and a super candidate"));
        }
        if r.candidate != w.label {
            return Err(Error::arg(format!("report for '{}' attached to candidate '{}'", r.candidate, w.label)));
        }
        if !r.passed {
            return Err(Error::arg(format!("candidate '{}' is not certified", w.label)));
        }
    }
    if policy.is_none() && sub.companion.is_none() {
        return Err(Error::arg("no policy for the Monte-Carlo value"));
    }
    let mut out = Vec::with_capacity(points.len());
    for (i, (t, x)) in points.iter().enumerate() {
        let p = match policy {
            Some(p) => p,
            None => sub.companion.as_ref().unwrap().select(*t, x),
        };
        let ens = simulate_paths(problem, p, *t, x, cfg.paths, cfg.steps, derive_seed(cfg.seed, i as u64), &cfg.sim)?;
        let mc = estimate_value(&ens, &problem.payoff);
        let lo = sub.value(*t, x);
        let hi = sup.value(*t, x);
        let gap = hi - lo;
        out.push(BracketPoint {
            t: *t,
            x: x.clone(),
            sub: lo,
            sup: hi,
            mc,
            policy: p.label.clone(),
            gap,
            relative_gap: gap / hi.abs().max(f64::MIN_POSITIVE),
            sub_below_mc: lo <= mc.mean + mc.half_width_95,
            mc_below_sup: mc.mean <= hi + mc.half_width_95,
            ordered: lo <= hi + cfg.tol_cert,
        });
    }
    let passed = out.iter().all(|p| p.sub_below_mc && p.mc_below_sup && p.ordered);
    Ok(BracketReport { sub: sub.label.clone(), sup: sup.label.clone(), points: out, passed, config: cfg.clone() })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::oracles::MertonParams;

    fn merton() -> MertonParams {
        MertonParams::new(0.1, 0.2, 0.5, 1.0, 10.0).unwrap()
    }

    fn config(budget: usize, seed: u64) -> TestConfig {
        TestConfig { budget, seed, ..TestConfig::new(vec![(0.5, 2.0)]) }
    }

    fn u_star_only() -> AdversaryConfig {
        AdversaryConfig { stop_on_failure: true, supplied: vec![merton().policy()], ..Default::default() }
    }

    #[test]
    fn constant_below_payoff_is_a_subsolution() {
        let m = merton();
        let p = m.problem().unwrap();
        // g = √x ≥ √0.5 on the test box
        let w = CandidateFunction::constant(CandidateKind::Sub, 0.5).with_policy(FeedbackPolicy::constant(vec![1.0]));
        let r = certify_subsolution(&w, &p, &config(12_000, 1)).unwrap();
        assert!(r.passed, "{:?}", r.failing());
        assert!(r.tests.iter().all(|t| t.margin == 0.0 && t.std_error == 0.0));
        assert_eq!(r.tests.len(), 12);

        let w = CandidateFunction::constant(CandidateKind::Sub, 0.8).with_policy(FeedbackPolicy::constant(vec![1.0]));
        let r = certify_subsolution(&w, &p, &config(12_000, 1)).unwrap();
        assert!(!r.terminal.passed && !r.passed);
        assert_eq!(r.failing(), vec!["terminal check"]);
    }

    #[test]
    fn merton_subsolution_power() {
        let m = merton();
        let p = m.problem().unwrap();
        let exact = certify_subsolution(&m.candidate(CandidateKind::Sub, 0.0), &p, &config(100_000, 7)).unwrap();
        assert!(exact.passed, "{:?}", exact.failing());
        assert!(exact.verdict.starts_with("certified"));
        let inflated = certify_subsolution(&m.candidate(CandidateKind::Sub, 0.05), &p, &config(100_000, 7)).unwrap();
        assert!(!inflated.passed);
        assert!(inflated.failing().iter().any(|n| n.contains("rho=T")));
    }

    #[test]
    fn merton_supersolution_power() {
        let m = merton();
        let p = m.problem().unwrap();
        let exact = m.candidate(CandidateKind::Super, 0.0);
        let r = certify_supersolution(&exact, &p, &config(24_000, 3), &AdversaryConfig::standard(vec![m.policy()])).unwrap();
        assert!(r.passed, "{:?}", r.failing());
        // u*, two corners, four random policies
        assert_eq!(r.adversary_class.len(), 7);
        assert_eq!(r.tests.len(), 7 * 12);
        assert!(r.verdict.contains("adversary class"));

        let deflated = m.candidate(CandidateKind::Super, -0.05);
        let r = certify_supersolution(&deflated, &p, &config(100_000, 3), &u_star_only()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.adversary_class.len(), 1);
    }

    #[test]
    fn constant_above_payoff_is_a_supersolution() {
        let m = merton();
        let p = m.problem().unwrap();
        let w = CandidateFunction::constant(CandidateKind::Super, 3.0);
        let mut cfg = config(12_000, 2);
        // the terminal check only covers the test box, where √x ≤ √2
        cfg.test_box = vec![(0.5, 2.0)];
        let r = certify_supersolution(&w, &p, &cfg, &AdversaryConfig::standard(Vec::new())).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn argument_errors() {
        let m = merton();
        let p = m.problem().unwrap();
        let bare = CandidateFunction::constant(CandidateKind::Sub, 0.1);
        assert!(matches!(certify_subsolution(&bare, &p, &config(1200, 0)), Err(Error::Argument(_))));
        let sup = m.candidate(CandidateKind::Super, 0.0);
        assert!(matches!(certify_subsolution(&sup, &p, &config(1200, 0)), Err(Error::Argument(_))));
        let sub = Arc::new(m.candidate(CandidateKind::Sub, 0.0));
        assert!(lattice_max(sub.clone(), Arc::new(sup.clone())).is_err());
        assert!(lattice_min(sub.clone(), Arc::new(sup)).is_err());
        assert!(lattice_max(sub, Arc::new(bare)).is_err());
        let mut wide = config(1200, 0);
        wide.test_box = vec![(-1.0, 2.0)];
        assert!(matches!(certify_subsolution(&m.candidate(CandidateKind::Sub, 0.0), &p, &wide), Err(Error::Domain(_))));
    }

    #[test]
    fn lattice_constructions() {
        let m = merton();
        let p = m.problem().unwrap();
        let exact = Arc::new(m.candidate(CandidateKind::Sub, 0.0));
        let low = Arc::new(CandidateFunction::constant(CandidateKind::Sub, 0.5).with_policy(FeedbackPolicy::constant(vec![0.0])));
        let w = lattice_max(exact.clone(), low.clone()).unwrap();
        assert_abs_diff_eq!(w.policy_bound(), 5.0, epsilon = 1e-12);
        for x in [0.5, 1.0, 2.0] {
            assert_eq!(w.value(0.3, &[x]), exact.value(0.3, &[x]));
            assert_eq!(w.companion.as_ref().unwrap().select(0.3, &[x]).label, m.policy().label);
        }
        let r = certify_subsolution(&w, &p, &config(24_000, 5)).unwrap();
        assert!(r.passed, "{:?}", r.failing());

        let same = lattice_max(exact.clone(), exact.clone()).unwrap();
        assert_eq!(same.value(0.0, &[1.3]), exact.value(0.0, &[1.3]));

        let c1 = Arc::new(CandidateFunction::constant(CandidateKind::Sub, 0.3).with_policy(FeedbackPolicy::constant(vec![1.0])));
        let c2 = Arc::new(CandidateFunction::constant(CandidateKind::Sub, 0.6).with_policy(FeedbackPolicy::constant(vec![2.0])));
        let w = lattice_max(c1, c2).unwrap();
        assert_eq!(w.value(0.0, &[1.0]), 0.6);
        assert_eq!(w.companion.as_ref().unwrap().select(0.0, &[1.0]).label, "constant[2.0]");

        let sup = Arc::new(m.candidate(CandidateKind::Super, 0.0));
        let big = Arc::new(CandidateFunction::constant(CandidateKind::Super, 10.0));
        let w = lattice_min(sup.clone(), big).unwrap();
        assert_eq!(w.value(0.2, &[1.7]), sup.value(0.2, &[1.7]));
        assert_eq!(w.growth_constant, 10.0);
        let r = certify_supersolution(&w, &p, &config(24_000, 5), &u_star_only()).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn bracket_on_closed_forms() {
        let m = merton();
        let p = m.problem().unwrap();
        let sub = m.candidate(CandidateKind::Sub, 0.0);
        let sup = m.candidate(CandidateKind::Super, 0.0);
        let cfg = config(24_000, 9);
        let rs = certify_subsolution(&sub, &p, &cfg).unwrap();
        let rp = certify_supersolution(&sup, &p, &cfg, &u_star_only()).unwrap();
        let bc = BracketConfig { paths: 20_000, steps: 4, seed: 4, ..Default::default() };
        let points = vec![(0.0, vec![1.0]), (0.5, vec![1.5])];
        let b = bracket_report(&sub, &rs, &sup, &rp, &p, &points, &bc, None).unwrap();
        for pt in &b.points {
            assert_eq!(pt.gap, 0.0);
            assert!(pt.ordered);
            let v = m.value(pt.t, pt.x[0]).unwrap();
            assert!((pt.mc.mean - v).abs() <= 4.0 * pt.mc.std_error);
            assert_eq!(pt.sub_below_mc, v <= pt.mc.mean + pt.mc.half_width_95);
        }

        let delta = 0.05;
        let wide = m.candidate(CandidateKind::Super, delta);
        let rw = certify_supersolution(&wide, &p, &cfg, &u_star_only()).unwrap();
        let b = bracket_report(&sub, &rs, &wide, &rw, &p, &points, &bc, None).unwrap();
        for pt in &b.points {
            let x: f64 = pt.x[0];
            let l = m.lambda();
            let analytic = x.sqrt() * (((l + delta) * (1.0 - pt.t)).exp() - (l * (1.0 - pt.t)).exp());
            assert!((pt.gap - analytic).abs() < 1e-12);
        }

        let bad = m.candidate(CandidateKind::Sub, 0.05);
        let rb = certify_subsolution(&bad, &p, &cfg).unwrap();
        assert!(matches!(bracket_report(&bad, &rb, &sup, &rp, &p, &points, &bc, None), Err(Error::Argument(_))));
        assert!(matches!(bracket_report(&sub, &rp, &sup, &rp, &p, &points, &bc, None), Err(Error::Argument(_))));
    }

    #[test]
    fn reports_are_reproducible() {
        let m = merton();
        let p = m.problem().unwrap();
        let w = m.candidate(CandidateKind::Sub, 0.0);
        let a = certify_subsolution(&w, &p, &config(6000, 11)).unwrap();
        let b = certify_subsolution(&w, &p, &config(6000, 11)).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: CertificationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
    }
}
