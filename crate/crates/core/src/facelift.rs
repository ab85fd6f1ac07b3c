//! Face-lifted terminal data: the smallest function above `g` satisfying
//! `G(T, x, Dw, D²w) ≥ 0`, computed on a truncation box whose edge nodes are
//! clamped to `g`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{interior_derivatives, GridFunction, SpatialGrid};
use crate::problem::{Constraint, ControlProblem};

/// Least concave majorant of the piecewise-linear interpolant of a 1-D
/// grid function, sampled at the nodes.
pub fn concave_envelope(g: &GridFunction) -> Result<GridFunction> {
    if g.grid.dim() != 1 {
        return Err(Error::Unsupported(
            "concave_envelope is one-dimensional; use facelift_general".into(),
        ));
    }
    let x = g.grid.axis(0);
    let values = concave_envelope_values(x, &g.values);
    Ok(GridFunction { grid: g.grid.clone(), values })
}

pub(crate) fn concave_envelope_values(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let hull = upper_hull(x, y);
    let mut out = y.to_vec();
    for seg in hull.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let slope = (y[b] - y[a]) / (x[b] - x[a]);
        for k in a + 1..b {
            out[k] = (y[a] + slope * (x[k] - x[a])).max(y[k]);
        }
    }
    debug_assert_eq!(hull.last(), Some(&(n - 1)));
    out
}

/// Monotone-chain upper hull; returns vertex indices in increasing `x`.
/// Vertices collinear up to rounding are dropped.
fn upper_hull(x: &[f64], y: &[f64]) -> Vec<usize> {
    let mut h: Vec<usize> = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        while h.len() >= 2 {
            let (a, b) = (h[h.len() - 2], h[h.len() - 1]);
            let l = (x[b] - x[a]) * (y[i] - y[a]);
            let r = (y[b] - y[a]) * (x[i] - x[a]);
            if l - r >= -1e-14 * (l.abs() + r.abs()) {
                h.pop();
            } else {
                break;
            }
        }
        h.push(i);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// Largest explicit step keeping the sweep monotone, per node.
    #[default]
    Auto,
    Fixed(f64),
}

/// Sensitivities of `G` to `M_kk` and `p_k`, by unit bumps about zero.
fn constraint_sensitivities(constraint: &Constraint, t: f64, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    let zp = vec![0.0; d];
    let zm = vec![0.0; d * d];
    let base = constraint.eval(t, x, &zp, &zm);
    let cm = (0..d)
        .map(|k| {
            let mut m = zm.clone();
            m[k * d + k] = 1.0;
            (constraint.eval(t, x, &zp, &m) - base).abs()
        })
        .collect();
    let cp = (0..d)
        .map(|k| {
            let mut p = zp.clone();
            p[k] = 1.0;
            (constraint.eval(t, x, &p, &zm) - base).abs()
        })
        .collect();
    (cm, cp)
}

/// Stable explicit step for raising `w` where `G_h(w) < 0`; zero at edges
/// and wherever `G` ignores the derivatives.
pub(crate) fn local_steps(grid: &SpatialGrid, constraint: &Constraint, t: f64) -> Vec<f64> {
    let d = grid.dim();
    (0..grid.len())
        .map(|i| {
            if grid.is_boundary(i) {
                return 0.0;
            }
            let x = grid.point(i);
            let idx = grid.multi_index(i);
            let (cm, cp) = constraint_sensitivities(constraint, t, &x);
            let mut rate = 0.0;
            for k in 0..d {
                let (hm, hp) = grid.spacings(k, idx[k]);
                rate += cm[k] * 2.0 / (hm * hp) + cp[k] * (1.0 / hm + 1.0 / hp);
            }
            if rate > 0.0 {
                1.0 / rate
            } else {
                0.0
            }
        })
        .collect()
}

/// `G_h` at an interior node.
pub(crate) fn discrete_constraint(
    grid: &SpatialGrid,
    values: &[f64],
    constraint: &Constraint,
    t: f64,
    flat: usize,
) -> f64 {
    let d = grid.dim();
    let mut p = [0.0; 2];
    let mut m = [0.0; 4];
    interior_derivatives(grid, values, flat, &mut p[..d], &mut m[..d * d]);
    constraint.eval(t, &grid.point(flat), &p[..d], &m[..d * d])
}

/// Monotone relaxation `w ← max(g, w + s·max(0, -G_h(w)))`, Jacobi sweeps,
/// started from `w = g`, stopped when both the sup-norm update and the
/// geometric estimate of the remaining distance fall below `tol`.
pub fn facelift_general(
    g: &GridFunction,
    problem: &ControlProblem,
    relaxation: Relaxation,
    max_iters: usize,
    tol: f64,
) -> Result<GridFunction> {
    relax_to_supersolution(g, &problem.constraint, problem.horizon, relaxation, max_iters, tol)
}

pub(crate) fn relax_to_supersolution(
    g: &GridFunction,
    constraint: &Constraint,
    t: f64,
    relaxation: Relaxation,
    max_iters: usize,
    tol: f64,
) -> Result<GridFunction> {
    let grid = &g.grid;
    let steps: Vec<f64> = match relaxation {
        Relaxation::Auto => local_steps(grid, constraint, t),
        Relaxation::Fixed(s) => (0..grid.len()).map(|i| if grid.is_boundary(i) { 0.0 } else { s }).collect(),
    };
    let values = relax_with_steps(grid, &g.values, constraint, t, &steps, max_iters, tol)?;
    GridFunction::new(grid.clone(), values)
}

/// Core of the relaxation with caller-chosen per-node steps (zero = frozen).
pub(crate) fn relax_with_steps(
    grid: &SpatialGrid,
    obstacle: &[f64],
    constraint: &Constraint,
    t: f64,
    steps: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let mut w = obstacle.to_vec();
    if steps.iter().all(|&s| s == 0.0) {
        return Ok(w);
    }
    let mut prev_delta = f64::INFINITY;
    let mut delta = f64::INFINITY;
    for _ in 0..max_iters {
        let next: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                if steps[i] == 0.0 {
                    return obstacle[i];
                }
                let gh = discrete_constraint(grid, &w, constraint, t, i);
                (w[i] + steps[i] * (-gh).max(0.0)).max(obstacle[i])
            })
            .collect();
        delta = next.iter().zip(&w).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        w = next;
        if delta == 0.0 {
            return Ok(w);
        }
        let q = delta / prev_delta;
        let remaining = if q < 1.0 { delta * q / (1.0 - q) } else { f64::INFINITY };
        if delta < tol && remaining < tol {
            return Ok(w);
        }
        prev_delta = delta;
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual: delta,
        last: Box::new(GridFunction { grid: grid.clone(), values: w }),
    })
}

/// Face-lift by the cheapest applicable route: identity for a positive
/// constant `G`, the concave envelope for `G = -M` in 1-D, relaxation
/// otherwise.
pub fn facelift(g: &GridFunction, problem: &ControlProblem, max_iters: usize, tol: f64) -> Result<GridFunction> {
    match problem.constraint {
        Constraint::Positive { value } if value > 0.0 => Ok(g.clone()),
        Constraint::Concavity if g.grid.dim() == 1 => concave_envelope(g),
        _ => facelift_general(g, problem, Relaxation::Auto, max_iters, tol),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceliftReport {
    pub dominance_ok: bool,
    pub complementarity_ok: bool,
    pub minimal_ok: bool,
    /// Nodes with `w < g - tol`.
    pub below_payoff: Vec<usize>,
    /// `(node, min(w - g, G_h))` outside `[-tol, tol]`.
    pub complementarity_violations: Vec<(usize, f64)>,
    /// Nodes where lowering `w` keeps the complementarity condition.
    pub non_minimal: Vec<usize>,
}

impl FaceliftReport {
    pub fn passed(&self) -> bool {
        self.dominance_ok && self.complementarity_ok && self.minimal_ok
    }
}

/// Checks `w ≥ g`, discrete complementarity `min(w - g, G_h(w)) ≈ 0` and
/// minimality (a small dent at any node strictly above `g` breaks
/// complementarity there). `G_h` is measured in payoff units, scaled by
/// the local relaxation step, wherever `G` depends on the derivatives.
pub fn verify_facelift(
    w: &GridFunction,
    g: &GridFunction,
    problem: &ControlProblem,
    tol: f64,
) -> Result<FaceliftReport> {
    if w.grid != g.grid {
        return Err(Error::arg("face-lift and payoff live on different grids"));
    }
    let grid = &w.grid;
    let t = problem.horizon;
    let steps = local_steps(grid, &problem.constraint, t);
    let scaled = |values: &[f64], i: usize| {
        let gh = discrete_constraint(grid, values, &problem.constraint, t, i);
        if steps[i] > 0.0 {
            steps[i] * gh
        } else {
            gh
        }
    };
    let dent = 3.0 * tol;
    let mut report = FaceliftReport {
        dominance_ok: true,
        complementarity_ok: true,
        minimal_ok: true,
        below_payoff: Vec::new(),
        complementarity_violations: Vec::new(),
        non_minimal: Vec::new(),
    };
    let mut probe = w.values.clone();
    for i in 0..grid.len() {
        let gap = w.values[i] - g.values[i];
        if gap < -tol {
            report.below_payoff.push(i);
        }
        if grid.is_boundary(i) {
            continue;
        }
        let c = gap.min(scaled(&w.values, i));
        if c.abs() > tol {
            report.complementarity_violations.push((i, c));
        }
        if gap > tol {
            probe[i] = w.values[i] - dent;
            let dented = (gap - dent).min(scaled(&probe, i));
            probe[i] = w.values[i];
            if dented >= -tol {
                report.non_minimal.push(i);
            }
        }
    }
    report.dominance_ok = report.below_payoff.is_empty();
    report.complementarity_ok = report.complementarity_violations.is_empty();
    report.minimal_ok = report.non_minimal.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::problem::dynamics::ControlledVolatility;
    use crate::problem::{ControlSet, Gauge, Payoff, StateDomain};

    /// Brute force: the least concave majorant at `x_k` is the largest chord
    /// value over all node pairs straddling `x_k`.
    fn hull_oracle(x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut best = y[k];
                for i in 0..=k {
                    for j in k..n {
                        if i < j {
                            let v = y[i] + (y[j] - y[i]) / (x[j] - x[i]) * (x[k] - x[i]);
                            best = best.max(v);
                        }
                    }
                }
                best
            })
            .collect()
    }

    fn vol_problem(constraint: Constraint) -> ControlProblem {
        ControlProblem::new(
            Arc::new(ControlledVolatility { drift: vec![0.0], scale: 1.0 }),
            ControlSet::unbounded(1, 1.0).unwrap(),
            StateDomain::whole_space(1),
            1.0,
            Payoff::Abs { center: 1.0 },
            Gauge::default(),
            1.0,
            constraint,
        )
        .unwrap()
    }

    #[test]
    fn concave_payoff_is_its_own_envelope() {
        let grid = SpatialGrid::uniform(0.25, 4.0, 61).unwrap();
        let g = GridFunction::from_fn(&grid, |p| p[0].sqrt()).unwrap();
        let e = concave_envelope(&g).unwrap();
        for (a, b) in e.values.iter().zip(&g.values) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kink_becomes_chord() {
        let grid = SpatialGrid::uniform(0.0, 2.0, 21).unwrap();
        let g = GridFunction::from_fn(&grid, |p| (p[0] - 1.0).abs()).unwrap();
        let e = concave_envelope(&g).unwrap();
        let oracle = hull_oracle(grid.axis(0), &g.values);
        assert_eq!(e.values, oracle);
        assert!(e.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn single_spike_gives_tent() {
        let grid = SpatialGrid::uniform(0.0, 1.0, 11).unwrap();
        let mut values = vec![0.0; 11];
        values[3] = 1.0;
        let g = GridFunction::new(grid.clone(), values).unwrap();
        let e = concave_envelope(&g).unwrap();
        let x = grid.axis(0);
        for (k, v) in e.values.iter().enumerate() {
            let tent = if k <= 3 { x[k] / x[3] } else { (1.0 - x[k]) / (1.0 - x[3]) };
            assert!((v - tent).abs() < 1e-14, "node {k}: {v} vs {tent}");
        }
        assert_eq!(e.values, hull_oracle(x, &g.values));
    }

    #[test]
    fn two_dimensional_envelope_is_unsupported() {
        let grid = SpatialGrid::new(vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]]).unwrap();
        let g = GridFunction::from_fn(&grid, |p| p[0] + p[1]).unwrap();
        assert!(matches!(concave_envelope(&g), Err(Error::Unsupported(_))));
    }

    #[test]
    fn positive_constraint_leaves_payoff_unchanged() {
        let grid = SpatialGrid::uniform(0.0, 2.0, 41).unwrap();
        let g = GridFunction::from_fn(&grid, |p| (p[0] - 1.0).abs()).unwrap();
        let prob = vol_problem(Constraint::Positive { value: 1.0 });
        let w = facelift_general(&g, &prob, Relaxation::Auto, 10, 1e-10).unwrap();
        assert_eq!(w.values, g.values);
    }

    #[test]
    fn relaxation_matches_envelope_for_kink() {
        let tol = 1e-8;
        let grid = SpatialGrid::uniform(0.0, 2.0, 41).unwrap();
        let g = GridFunction::from_fn(&grid, |p| (p[0] - 1.0).abs()).unwrap();
        let prob = vol_problem(Constraint::Concavity);
        let w = facelift_general(&g, &prob, Relaxation::Auto, 1_000_000, tol).unwrap();
        let e = concave_envelope(&g).unwrap();
        assert!(w.sup_distance(&e).unwrap() <= 10.0 * tol);
    }

    #[test]
    fn supersolution_payoff_is_fixed_point() {
        let grid = SpatialGrid::uniform(0.25, 4.0, 31).unwrap();
        let g = GridFunction::from_fn(&grid, |p| p[0].sqrt()).unwrap();
        let prob = vol_problem(Constraint::Concavity);
        let w = facelift_general(&g, &prob, Relaxation::Auto, 100, 1e-10).unwrap();
        assert!(w.sup_distance(&g).unwrap() <= 1e-10);
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let grid = SpatialGrid::uniform(0.0, 2.0, 41).unwrap();
        let g = GridFunction::from_fn(&grid, |p| (p[0] - 1.0).abs()).unwrap();
        let prob = vol_problem(Constraint::Concavity);
        match facelift_general(&g, &prob, Relaxation::Auto, 3, 1e-12) {
            Err(Error::Convergence { iterations, last, .. }) => {
                assert_eq!(iterations, 3);
                assert!(last.values.iter().zip(&g.values).all(|(w, g)| w >= g));
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn two_dimensional_directional_concavity() {
        // G = -M_11: each row in x1 is lifted to its own concave envelope.
        let grid = SpatialGrid::new(vec![
            (0..21).map(|i| i as f64 * 0.1).collect(),
            vec![0.0, 0.5, 1.0, 1.5],
        ])
        .unwrap();
        let g = GridFunction::from_fn(&grid, |p| (p[0] - 1.0).abs() * (1.0 + p[1])).unwrap();
        let mut prob = vol_problem(Constraint::custom(|_, _, _, m| -m[0]));
        prob.dynamics = Arc::new(ControlledVolatility { drift: vec![0.0, 0.0], scale: 1.0 });
        prob.domain = StateDomain::whole_space(2);
        prob.controls = ControlSet::unbounded(2, 1.0).unwrap();
        let w = facelift_general(&g, &prob, Relaxation::Auto, 1_000_000, 1e-9).unwrap();
        for i in 0..grid.len() {
            let idx = grid.multi_index(i);
            if idx[1] == 0 || idx[1] == 3 {
                // edge rows are clamped to g
                assert_eq!(w.values[i], g.values[i]);
            } else if idx[0] > 0 && idx[0] < 20 {
                let y = grid.axis(1)[idx[1]];
                assert!((w.values[i] - (1.0 + y)).abs() < 1e-6, "node {i}");
            }
        }
    }

    #[test]
    fn verify_accepts_envelope_and_rejects_lifted_copy() {
        let prob = vol_problem(Constraint::Concavity);
        let tol = 1e-9;

        let grid = SpatialGrid::uniform(0.0, 2.0, 41).unwrap();
        let g = GridFunction::from_fn(&grid, |p| (p[0] - 1.0).abs()).unwrap();
        let e = concave_envelope(&g).unwrap();
        assert!(verify_facelift(&e, &g, &prob, tol).unwrap().passed());

        let grid = SpatialGrid::uniform(0.25, 4.0, 41).unwrap();
        let g = GridFunction::from_fn(&grid, |p| p[0].sqrt()).unwrap();
        assert!(verify_facelift(&g, &g, &prob, tol).unwrap().passed());

        let lifted = GridFunction::from_fn(&grid, |p| p[0].sqrt() + 1.0).unwrap();
        let r = verify_facelift(&lifted, &g, &prob, tol).unwrap();
        assert!(r.dominance_ok);
        assert!(!r.minimal_ok);
        assert!(!r.passed());

        let other = GridFunction::from_fn(&SpatialGrid::uniform(0.0, 1.0, 5).unwrap(), |_| 0.0).unwrap();
        assert!(matches!(verify_facelift(&other, &g, &prob, tol), Err(Error::Argument(_))));
    }

    fn payoff_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0..2.0f64, 5..40)
    }

    proptest! {
        #[test]
        fn envelope_properties(ys in payoff_strategy(), shift in -3.0..3.0f64) {
            let n = ys.len();
            let grid = SpatialGrid::uniform(-1.0, 1.0, n).unwrap();
            let g = GridFunction::new(grid.clone(), ys.clone()).unwrap();
            let e = concave_envelope(&g).unwrap();
            // dominance
            prop_assert!(e.values.iter().zip(&ys).all(|(a, b)| a >= b));
            // non-positive second differences
            for k in 1..n - 1 {
                prop_assert!(e.values[k - 1] - 2.0 * e.values[k] + e.values[k + 1] <= 1e-12);
            }
            // idempotence
            let ee = concave_envelope(&e).unwrap();
            for (a, b) in ee.values.iter().zip(&e.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // translation equivariance
            let shifted = GridFunction::new(grid.clone(), ys.iter().map(|v| v + shift).collect()).unwrap();
            let es = concave_envelope(&shifted).unwrap();
            for (a, b) in es.values.iter().zip(&e.values) {
                prop_assert!((a - (b + shift)).abs() < 1e-12);
            }
        }

        #[test]
        fn envelope_is_monotone(ys in payoff_strategy(), bumps in prop::collection::vec(0.0..1.0f64, 40)) {
            let n = ys.len();
            let grid = SpatialGrid::uniform(0.0, 1.0, n).unwrap();
            let g1 = GridFunction::new(grid.clone(), ys.clone()).unwrap();
            let g2 = GridFunction::new(grid, ys.iter().zip(&bumps).map(|(a, b)| a + b).collect()).unwrap();
            let (e1, e2) = (concave_envelope(&g1).unwrap(), concave_envelope(&g2).unwrap());
            prop_assert!(e1.values.iter().zip(&e2.values).all(|(a, b)| a <= b));
        }
    }
}
