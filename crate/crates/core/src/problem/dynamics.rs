//! Coefficient families for the controlled state equation
//! `dX = b(t, X, u) dt + σ(t, X, u) dW`.
//!
//! Diffusion matrices are written row-major, `d × d'`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Dynamics: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);

    fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);

    /// True when every coefficient row `i` is proportional to `x_i`, so the
    /// log-state has state-independent coefficients.
    fn proportional(&self) -> bool {
        false
    }
}

/// Control-independent constant coefficients.
#[derive(Debug, Clone)]
pub struct ConstantCoefficients {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub noise_dim: usize,
    pub control_dim: usize,
}

impl Dynamics for ConstantCoefficients {
    fn state_dim(&self) -> usize {
        self.drift.len()
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn drift(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.drift);
    }
    fn diffusion(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.diffusion);
    }
}

/// `b = A x + K u + c`, `σ = S` constant.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    pub state_matrix: Vec<f64>,
    pub control_matrix: Vec<f64>,
    pub offset: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub noise_dim: usize,
    pub control_dim: usize,
}

impl Dynamics for LinearDrift {
    fn state_dim(&self) -> usize {
        self.offset.len()
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn drift(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let d = self.offset.len();
        let k = self.control_dim;
        for i in 0..d {
            let mut acc = self.offset[i];
            for j in 0..d {
                acc += self.state_matrix[i * d + j] * x[j];
            }
            for j in 0..k {
                acc += self.control_matrix[i * k + j] * u[j];
            }
            out[i] = acc;
        }
    }
    fn diffusion(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.diffusion);
    }
}

/// One-dimensional wealth with `k` risky assets held in proportions `u`:
/// `b = x Σ u_j μ_j`, `σ_{1j} = x u_j σ_j`.
#[derive(Debug, Clone)]
pub struct ProportionalControl {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Dynamics for ProportionalControl {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        self.sigma.len()
    }
    fn control_dim(&self) -> usize {
        self.mu.len()
    }
    fn drift(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] * u.iter().zip(&self.mu).map(|(u, m)| u * m).sum::<f64>();
    }
    fn diffusion(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        for (j, s) in self.sigma.iter().enumerate() {
            out[j] = x[0] * u[j] * s;
        }
    }
    fn proportional(&self) -> bool {
        true
    }
}

/// Volatility chosen directly: `b = drift`, `σ = scale · diag(u)`.
#[derive(Debug, Clone)]
pub struct ControlledVolatility {
    pub drift: Vec<f64>,
    pub scale: f64,
}

impl Dynamics for ControlledVolatility {
    fn state_dim(&self) -> usize {
        self.drift.len()
    }
    fn noise_dim(&self) -> usize {
        self.drift.len()
    }
    fn control_dim(&self) -> usize {
        self.drift.len()
    }
    fn drift(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.drift);
    }
    fn diffusion(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        let d = self.drift.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d + i] = self.scale * u[i];
        }
    }
}

/// Scalar coefficients tabulated on a `(x, u)` lattice, bilinear in between
/// and clamped outside.
#[derive(Debug, Clone)]
pub struct TableCoefficients {
    pub x_nodes: Vec<f64>,
    pub u_nodes: Vec<f64>,
    /// `drift[i * u_nodes.len() + j]` at `(x_i, u_j)`.
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
}

impl TableCoefficients {
    pub fn new(
        x_nodes: Vec<f64>,
        u_nodes: Vec<f64>,
        drift: Vec<f64>,
        diffusion: Vec<f64>,
    ) -> Result<Self> {
        let n = x_nodes.len() * u_nodes.len();
        if x_nodes.len() < 2 || u_nodes.len() < 2 {
            return Err(Error::arg("coefficient tables need at least 2 nodes per axis"));
        }
        if drift.len() != n || diffusion.len() != n {
            return Err(Error::arg(format!(
                "coefficient tables must have {n} entries"
            )));
        }
        for axis in [&x_nodes, &u_nodes] {
            if axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::arg("table nodes must be strictly increasing"));
            }
        }
        Ok(Self { x_nodes, u_nodes, drift, diffusion })
    }

    fn lookup(&self, table: &[f64], x: f64, u: f64) -> f64 {
        let (i, fx) = bracket(&self.x_nodes, x);
        let (j, fu) = bracket(&self.u_nodes, u);
        let m = self.u_nodes.len();
        let v00 = table[i * m + j];
        let v01 = table[i * m + j + 1];
        let v10 = table[(i + 1) * m + j];
        let v11 = table[(i + 1) * m + j + 1];
        (1.0 - fx) * ((1.0 - fu) * v00 + fu * v01) + fx * ((1.0 - fu) * v10 + fu * v11)
    }
}

fn bracket(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    if x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let i = nodes.partition_point(|&v| v <= x) - 1;
    let i = i.min(n - 2);
    (i, (x - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

impl Dynamics for TableCoefficients {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn drift(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.lookup(&self.drift, x[0], u[0]);
    }
    fn diffusion(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.lookup(&self.diffusion, x[0], u[0]);
    }
}

pub type CoefficientFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Coefficients given by closures, for problems outside the built-in families.
#[derive(Clone)]
pub struct FnDynamics {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub control_dim: usize,
    pub drift: CoefficientFn,
    pub diffusion: CoefficientFn,
    pub proportional: bool,
}

impl fmt::Debug for FnDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDynamics")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("control_dim", &self.control_dim)
            .finish_non_exhaustive()
    }
}

impl Dynamics for FnDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn control_dim(&self) -> usize {
        self.control_dim
    }
    fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, u, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, u, out)
    }
    fn proportional(&self) -> bool {
        self.proportional
    }
}

/// JSON description of a coefficient family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DynamicsSpec {
    Constant {
        drift: Vec<f64>,
        /// Rows of the `d × d'` matrix.
        diffusion: Vec<Vec<f64>>,
        #[serde(default = "one")]
        control_dim: usize,
    },
    LinearDrift {
        state_matrix: Vec<Vec<f64>>,
        control_matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        diffusion: Vec<Vec<f64>>,
    },
    ProportionalControl {
        mu: Vec<f64>,
        sigma: Vec<f64>,
    },
    ControlledVolatility {
        drift: Vec<f64>,
        #[serde(default = "unit")]
        scale: f64,
    },
    Table {
        x_nodes: Vec<f64>,
        u_nodes: Vec<f64>,
        drift: Vec<Vec<f64>>,
        diffusion: Vec<Vec<f64>>,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn flatten_matrix(rows: &[Vec<f64>], what: &str) -> Result<(Vec<f64>, usize)> {
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::arg(format!("{what}: rows must be non-empty and equal length")));
    }
    Ok((rows.iter().flatten().copied().collect(), ncols))
}

impl DynamicsSpec {
    pub fn build(&self) -> Result<Arc<dyn Dynamics>> {
        Ok(match self {
            DynamicsSpec::Constant { drift, diffusion, control_dim } => {
                let (sig, dp) = flatten_matrix(diffusion, "diffusion")?;
                if diffusion.len() != drift.len() {
                    return Err(Error::arg("diffusion must have one row per state dimension"));
                }
                Arc::new(ConstantCoefficients {
                    drift: drift.clone(),
                    diffusion: sig,
                    noise_dim: dp,
                    control_dim: *control_dim,
                })
            }
            DynamicsSpec::LinearDrift { state_matrix, control_matrix, offset, diffusion } => {
                let d = offset.len();
                let (a, na) = flatten_matrix(state_matrix, "state_matrix")?;
                let (k, nk) = flatten_matrix(control_matrix, "control_matrix")?;
                let (s, ns) = flatten_matrix(diffusion, "diffusion")?;
                if state_matrix.len() != d || na != d || control_matrix.len() != d || diffusion.len() != d {
                    return Err(Error::arg("linear_drift matrices must have one row per state dimension"));
                }
                Arc::new(LinearDrift {
                    state_matrix: a,
                    control_matrix: k,
                    offset: offset.clone(),
                    diffusion: s,
                    noise_dim: ns,
                    control_dim: nk,
                })
            }
            DynamicsSpec::ProportionalControl { mu, sigma } => {
                if mu.is_empty() || mu.len() != sigma.len() {
                    return Err(Error::arg("proportional_control needs matching mu and sigma"));
                }
                Arc::new(ProportionalControl { mu: mu.clone(), sigma: sigma.clone() })
            }
            DynamicsSpec::ControlledVolatility { drift, scale } => {
                if drift.is_empty() {
                    return Err(Error::arg("controlled_volatility needs a drift vector"));
                }
                Arc::new(ControlledVolatility { drift: drift.clone(), scale: *scale })
            }
            DynamicsSpec::Table { x_nodes, u_nodes, drift, diffusion } => {
                let (b, nb) = flatten_matrix(drift, "drift table")?;
                let (s, ns) = flatten_matrix(diffusion, "diffusion table")?;
                if nb != u_nodes.len() || ns != u_nodes.len() {
                    return Err(Error::arg("table rows must have one entry per control node"));
                }
                Arc::new(TableCoefficients::new(x_nodes.clone(), u_nodes.clone(), b, s)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_coefficients() {
        let dynamics = ProportionalControl { mu: vec![0.1], sigma: vec![0.2] };
        let mut b = [0.0];
        let mut s = [0.0];
        dynamics.drift(0.0, &[2.0], &[3.0], &mut b);
        dynamics.diffusion(0.0, &[2.0], &[3.0], &mut s);
        assert!((b[0] - 0.6).abs() < 1e-15);
        assert!((s[0] - 1.2).abs() < 1e-15);
        assert!(dynamics.proportional());
    }

    #[test]
    fn table_interpolates_bilinearly() {
        let t = TableCoefficients::new(
            vec![0.0, 1.0],
            vec![0.0, 2.0],
            vec![0.0, 2.0, 1.0, 3.0],
            vec![1.0; 4],
        )
        .unwrap();
        let mut b = [0.0];
        t.drift(0.0, &[0.5], &[1.0], &mut b);
        assert!((b[0] - 1.5).abs() < 1e-15);
        // clamped outside the table
        t.drift(0.0, &[5.0], &[-1.0], &mut b);
        assert!((b[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spec_rejects_ragged_matrices() {
        let spec = DynamicsSpec::Constant {
            drift: vec![0.0, 0.0],
            diffusion: vec![vec![1.0, 0.0], vec![1.0]],
            control_dim: 1,
        };
        assert!(spec.build().is_err());
    }
}
