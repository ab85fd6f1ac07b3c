//! JSON problem documents.
//!
//! ```json
//! {
//!   "dynamics": {"family": "proportional_control", "mu": [0.1], "sigma": [0.2]},
//!   "controls": {"bound": 10.0},
//!   "domain": {"lo": [0.0], "hi": [null]},
//!   "horizon": 1.0,
//!   "payoff": {"kind": "power", "exponent": 0.5},
//!   "gauge": {"kind": "one_plus_norm", "power": 1.0},
//!   "growth_constant": 1.0,
//!   "constraint": {"kind": "concavity"}
//! }
//! ```
//!
//! `null` bounds are infinite. An empty `boxes` list means `U = ℝ^k`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dynamics::DynamicsSpec;
use super::{Constraint, ControlBox, ControlProblem, ControlSet, Gauge, Payoff, StateDomain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lo: Vec<Option<f64>>,
    pub hi: Vec<Option<f64>>,
}

impl BoxSpec {
    fn resolve(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.lo.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect(),
            self.hi.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect(),
        )
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Self {
        let wrap = |v: &f64| if v.is_finite() { Some(*v) } else { None };
        Self { lo: lo.iter().map(wrap).collect(), hi: hi.iter().map(wrap).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSetSpec {
    pub bound: f64,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub dynamics: DynamicsSpec,
    pub controls: ControlSetSpec,
    pub domain: BoxSpec,
    pub horizon: f64,
    pub payoff: Payoff,
    #[serde(default)]
    pub gauge: Gauge,
    #[serde(default = "unit")]
    pub growth_constant: f64,
    #[serde(default = "positive")]
    pub constraint: Constraint,
}

fn unit() -> f64 {
    1.0
}

fn positive() -> Constraint {
    Constraint::Positive { value: 1.0 }
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<ControlProblem> {
        let dynamics = self.dynamics.build()?;
        let k = dynamics.control_dim();
        let boxes = if self.controls.boxes.is_empty() {
            vec![ControlBox { lo: vec![f64::NEG_INFINITY; k], hi: vec![f64::INFINITY; k] }]
        } else {
            self.controls
                .boxes
                .iter()
                .map(|b| {
                    let (lo, hi) = b.resolve();
                    ControlBox { lo, hi }
                })
                .collect()
        };
        let controls = ControlSet::new(boxes, self.controls.bound)?;
        let (lo, hi) = self.domain.resolve();
        let domain = StateDomain::new(lo, hi)?;
        if matches!(self.payoff, Payoff::Custom(_)) || matches!(self.gauge, Gauge::Custom(_)) {
            return Err(Error::arg("custom functions cannot come from JSON"));
        }
        let mut problem = ControlProblem::new(
            dynamics,
            controls,
            domain,
            self.horizon,
            self.payoff.clone(),
            self.gauge.clone(),
            self.growth_constant,
            self.constraint.clone(),
        )?;
        problem.spec = Some(self.clone());
        Ok(problem)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("problem spec serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
