//! Empirical convergence orders under dyadic refinement.

use serde::{Deserialize, Serialize};

use super::{solve_hjb, terminal_data, SchemeConfig, TerminalMode};
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::problem::ControlProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    Space,
    Time,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub shape: Vec<usize>,
    pub time_nodes: usize,
    /// Values at `t = 0` on the coarse trust-region nodes.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: RefineMode,
    pub levels: Vec<ConvergenceLevel>,
    /// Sup-norm differences between successive levels.
    pub differences: Vec<f64>,
    /// `log2` of successive difference ratios.
    pub orders: Vec<f64>,
}

impl ConvergenceReport {
    /// Ratios `d_ℓ / d_{ℓ+1}`.
    pub fn ratios(&self) -> Vec<f64> {
        self.differences.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

/// Solves on `refinements + 1` dyadically refined lattices and compares the
/// `t = 0` slices on the coarse nodes inside the trust region.
pub fn convergence_study(
    problem: &ControlProblem,
    terminal: TerminalMode,
    grid: &SpatialGrid,
    config: &SchemeConfig,
    refinements: usize,
    mode: RefineMode,
) -> Result<ConvergenceReport> {
    if refinements < 2 {
        return Err(Error::arg("a convergence study needs at least two refinements"));
    }
    let region = grid.trust_region(config.trust_fraction);
    let coarse_nodes: Vec<usize> = (0..grid.len()).filter(|&i| grid.in_region(i, &region)).collect();
    let mut levels = Vec::with_capacity(refinements + 1);
    for level in 0..=refinements {
        let f = 1usize << level;
        let (space, time) = match mode {
            RefineMode::Space => (f, 1),
            RefineMode::Time => (1, f),
            RefineMode::Both => (f, f),
        };
        let fine = grid.refine(space)?;
        let mut cfg = config.clone();
        cfg.time_nodes = (config.time_nodes - 1) * time + 1;
        let g = terminal_data(problem, &fine, terminal, 1e-12)?;
        let sol = solve_hjb(problem, &g, &cfg)?;
        let values = coarse_nodes
            .iter()
            .map(|&i| {
                let idx = grid.multi_index(i);
                let fidx: Vec<usize> = (0..grid.dim()).map(|k| idx[k] * space).collect();
                sol.slices[0][fine.flat_index(&fidx)]
            })
            .collect();
        levels.push(ConvergenceLevel { shape: fine.shape(), time_nodes: cfg.time_nodes, values });
    }
    let differences: Vec<f64> = levels
        .windows(2)
        .map(|w| w[0].values.iter().zip(&w[1].values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
        .collect();
    let orders = differences.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(ConvergenceReport { mode, levels, differences, orders })
}
