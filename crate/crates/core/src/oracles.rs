//! Closed-form and over-refined reference values.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{CandidateFunction, CandidateKind};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpatialGrid};
use crate::policy::FeedbackPolicy;
use crate::problem::dynamics::DynamicsSpec;
use crate::problem::spec::{BoxSpec, ControlSetSpec};
use crate::problem::{Constraint, ControlProblem, Gauge, Payoff, ProblemSpec};
use crate::solver::{solve_hjb, terminal_data, SchemeConfig, TerminalMode};

/// Power utility `x^p` of wealth invested in proportion `u` in one asset:
/// `dX = uμX dt + uσX dW` on `(0, ∞)`, `|u| ≤ B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MertonParams {
    pub mu: f64,
    pub sigma: f64,
    pub p: f64,
    pub horizon: f64,
    pub bound: f64,
}

impl MertonParams {
    pub fn new(mu: f64, sigma: f64, p: f64, horizon: f64, bound: f64) -> Result<Self> {
        let m = Self { mu, sigma, p, horizon, bound };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::arg("merton: need 0 < p < 1"));
        }
        if !(self.sigma > 0.0) || !self.mu.is_finite() {
            return Err(Error::arg("merton: need sigma > 0 and finite mu"));
        }
        if !(self.horizon > 0.0) || !(self.bound >= 0.0) || !self.bound.is_finite() {
            return Err(Error::arg("merton: need T > 0 and a finite bound B ≥ 0"));
        }
        Ok(())
    }

    /// Maximizer of `p(uμ − ½(1−p)u²σ²)` over `|u| ≤ B`: the unconstrained
    /// fraction `μ/((1−p)σ²)` clamped to the bound (the exponent is concave).
    pub fn optimal_control(&self) -> f64 {
        (self.mu / ((1.0 - self.p) * self.sigma * self.sigma)).clamp(-self.bound, self.bound)
    }

    pub fn exponent(&self, u: f64) -> f64 {
        self.p * (u * self.mu - 0.5 * (1.0 - self.p) * u * u * self.sigma * self.sigma)
    }

    /// `Λ_B`
    pub fn lambda(&self) -> f64 {
        self.exponent(self.optimal_control())
    }

    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::domain(format!("merton value needs x > 0, got {x}")));
        }
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(x.powf(self.p) * (self.lambda() * (self.horizon - t)).exp())
    }

    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec {
            dynamics: DynamicsSpec::ProportionalControl { mu: vec![self.mu], sigma: vec![self.sigma] },
            controls: ControlSetSpec { bound: self.bound, boxes: Vec::new() },
            domain: BoxSpec { lo: vec![Some(0.0)], hi: vec![None] },
            horizon: self.horizon,
            payoff: Payoff::Power { exponent: self.p, scale: 1.0 },
            gauge: Gauge::OnePlusNorm { power: 1.0 },
            growth_constant: 1.0,
            constraint: Constraint::Concavity,
        }
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        self.spec().build()
    }

    pub fn policy(&self) -> FeedbackPolicy {
        let mut p = FeedbackPolicy::constant(vec![self.optimal_control()]);
        p.label = format!("merton u={}", self.optimal_control());
        p
    }

    /// `x^p exp((Λ_B + δ)(T − t))`; sub-solution candidates carry the
    /// optimal constant policy.
    pub fn candidate(&self, kind: CandidateKind, delta: f64) -> CandidateFunction {
        let rate = self.lambda() + delta;
        let (p, horizon) = (self.p, self.horizon);
        let growth = (rate.max(0.0) * horizon).exp();
        let w = CandidateFunction::new(kind, growth, format!("merton closed form, exponent {rate}"), move |t, x| {
            x[0].powf(p) * (rate * (horizon - t)).exp()
        });
        match kind {
            CandidateKind::Sub => w.with_policy(self.policy()),
            CandidateKind::Super => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeatPayoff {
    Square,
    Affine { intercept: f64, slope: f64 },
}

/// `E g(x + σ W_{T−t})`.
pub fn heat_value(t: f64, x: f64, sigma: f64, horizon: f64, payoff: &HeatPayoff) -> Result<f64> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::domain(format!("time {t} outside [0, {horizon}]")));
    }
    Ok(match payoff {
        HeatPayoff::Square => x * x + sigma * sigma * (horizon - t),
        HeatPayoff::Affine { intercept, slope } => intercept + slope * x,
    })
}

fn cache() -> &'static Mutex<HashMap<String, GridFunction>> {
    static CACHE: OnceLock<Mutex<HashMap<String, GridFunction>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn reference_key(spec: &ProblemSpec, grid: &SpatialGrid, config: &SchemeConfig, terminal: TerminalMode, factor: usize) -> String {
    let mut h = Sha256::new();
    h.update(spec.content_hash().as_bytes());
    h.update(serde_json::to_vec(grid.axes()).expect("axes serialize"));
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(serde_json::to_vec(&terminal).expect("mode serializes"));
    h.update(factor.to_le_bytes());
    hex::encode(h.finalize())
}

/// `t = 0` values of a solve on `grid` refined `fine_factor` times in space
/// and time, read back at the nodes of `grid`. Results for problems built
/// from a JSON spec are cached by content hash.
pub fn dense_reference(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    config: &SchemeConfig,
    terminal: TerminalMode,
    fine_factor: usize,
) -> Result<GridFunction> {
    if fine_factor == 0 {
        return Err(Error::arg("fine factor must be positive"));
    }
    let key = problem.spec.as_ref().map(|s| reference_key(s, grid, config, terminal, fine_factor));
    if let Some(k) = &key {
        if let Some(hit) = cache().lock().unwrap().get(k) {
            return Ok(hit.clone());
        }
    }
    let fine = grid.refine(fine_factor)?;
    let mut cfg = config.clone();
    cfg.time_nodes = (config.time_nodes - 1) * fine_factor + 1;
    let g = terminal_data(problem, &fine, terminal, 1e-12)?;
    let sol = solve_hjb(problem, &g, &cfg)?;
    let values = (0..grid.len())
        .map(|i| {
            let idx = grid.multi_index(i);
            let fidx: Vec<usize> = (0..grid.dim()).map(|k| idx[k] * fine_factor).collect();
            sol.slices[0][fine.flat_index(&fidx)]
        })
        .collect();
    let out = GridFunction::new(grid.clone(), values)?;
    if let Some(k) = key {
        cache().lock().unwrap().insert(k, out.clone());
    }
    Ok(out)
}
