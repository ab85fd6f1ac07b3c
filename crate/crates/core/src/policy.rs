//! Bounded feedback rules `u(t, x)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

pub type ControlFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Argmax controls on a space-time lattice; one flattened `nodes × k` block
/// per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub grid: SpatialGrid,
    pub times: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    pub control_dim: usize,
}

impl PolicyTable {
    pub fn new(grid: SpatialGrid, times: Vec<f64>, controls: Vec<Vec<f64>>, control_dim: usize) -> Result<Self> {
        if times.is_empty() || times.len() != controls.len() {
            return Err(Error::arg("policy table needs one control block per time node"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("policy table times must increase"));
        }
        if controls.iter().any(|c| c.len() != grid.len() * control_dim) {
            return Err(Error::arg("policy table block has the wrong length"));
        }
        Ok(Self { grid, times, controls, control_dim })
    }

    /// Control stored at the nearest node, at the latest time node `≤ t`.
    pub fn lookup(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let n = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        let mut idx = [0usize; 2];
        for (k, slot) in idx.iter_mut().enumerate().take(self.grid.dim()) {
            *slot = self.grid.nearest(k, x[k]);
        }
        let flat = self.grid.flat_index(&idx[..self.grid.dim()]);
        let k = self.control_dim;
        out.copy_from_slice(&self.controls[n][flat * k..(flat + 1) * k]);
    }

    pub fn max_abs(&self) -> f64 {
        self.controls.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone)]
pub enum PolicyRule {
    Constant(Vec<f64>),
    Table(Arc<PolicyTable>),
    Analytic(ControlFn),
}

impl fmt::Debug for PolicyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyRule::Constant(u) => f.debug_tuple("Constant").field(u).finish(),
            PolicyRule::Table(t) => write!(f, "Table({} times × {} nodes)", t.times.len(), t.grid.len()),
            PolicyRule::Analytic(_) => f.write_str("Analytic(..)"),
        }
    }
}

/// A feedback control with a declared sup-norm bound.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    pub rule: PolicyRule,
    pub control_dim: usize,
    pub bound: f64,
    pub label: String,
}

impl FeedbackPolicy {
    pub fn constant(u: Vec<f64>) -> Self {
        let bound = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let label = format!("constant{u:?}");
        Self { control_dim: u.len(), rule: PolicyRule::Constant(u), bound, label }
    }

    pub fn table(table: PolicyTable, label: impl Into<String>) -> Self {
        Self {
            control_dim: table.control_dim,
            bound: table.max_abs(),
            rule: PolicyRule::Table(Arc::new(table)),
            label: label.into(),
        }
    }

    pub fn analytic(
        control_dim: usize,
        bound: f64,
        label: impl Into<String>,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { rule: PolicyRule::Analytic(Arc::new(f)), control_dim, bound, label: label.into() }
    }

    pub fn representation(&self) -> &'static str {
        match self.rule {
            PolicyRule::Constant(_) | PolicyRule::Analytic(_) => "analytic",
            PolicyRule::Table(_) => "grid-table",
        }
    }

    pub fn control(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.rule {
            PolicyRule::Constant(u) => out.copy_from_slice(u),
            PolicyRule::Table(table) => table.lookup(t, x, out),
            PolicyRule::Analytic(f) => f(t, x, out),
        }
    }

    /// Evaluates the rule and enforces the declared bound.
    pub fn checked_control(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.control(t, x, out);
        let norm = out.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(norm <= self.bound * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::arg(format!(
                "policy '{}' returned {out:?} at t={t}, x={x:?}, beyond its bound {}",
                self.label, self.bound
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_lookup_uses_latest_time_and_nearest_node() {
        let grid = SpatialGrid::uniform(0.0, 1.0, 3).unwrap();
        let table = PolicyTable::new(
            grid,
            vec![0.0, 0.5, 1.0],
            vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]],
            1,
        )
        .unwrap();
        let mut u = [0.0];
        table.lookup(0.49, &[0.3], &mut u);
        assert_eq!(u[0], 2.0);
        table.lookup(0.5, &[0.2], &mut u);
        assert_eq!(u[0], 4.0);
        table.lookup(0.7, &[9.0], &mut u);
        assert_eq!(u[0], 6.0);
        table.lookup(-1.0, &[-9.0], &mut u);
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn bound_is_enforced() {
        let p = FeedbackPolicy::analytic(1, 1.0, "ramp", |_, x, u| u[0] = x[0]);
        let mut u = [0.0];
        assert!(p.checked_control(0.0, &[0.5], &mut u).is_ok());
        assert!(matches!(p.checked_control(0.0, &[2.0], &mut u), Err(Error::Argument(_))));
        let c = FeedbackPolicy::constant(vec![-3.0, 2.0]);
        assert_eq!(c.bound, 3.0);
        assert_eq!(c.representation(), "analytic");
    }
}
