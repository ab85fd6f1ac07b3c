//! Hamiltonian evaluation by exhaustive control search, and sampled checks
//! of the standing assumptions on `H`, `G` and the coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ControlGrid, ControlProblem};
use crate::error::{Error, Result};

/// Default relative growth per bound doubling above which `H` is declared `+∞`.
pub const DIVERGENCE_TOL_REL: f64 = 1e-3;
/// Number of doublings `B, 2B, ..., 2^6 B` examined by the divergence probe.
pub const DIVERGENCE_DOUBLINGS: u32 = 6;
pub const COMPATIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValue {
    /// `f64::INFINITY` when the control search diverges.
    pub value: f64,
    pub argmax_control: Option<Vec<f64>>,
}

impl HamiltonianValue {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// `b·p + ½ Tr(σσᵀ M)` for one control.
pub fn generator_integrand(
    problem: &ControlProblem,
    t: f64,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    m: &[f64],
) -> f64 {
    let d = problem.dim();
    let dp = problem.noise_dim();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * dp];
    problem.dynamics.drift(t, x, u, &mut b);
    problem.dynamics.diffusion(t, x, u, &mut s);
    let mut acc: f64 = b.iter().zip(p).map(|(b, p)| b * p).sum();
    for i in 0..d {
        for j in 0..d {
            let a: f64 = (0..dp).map(|l| s[i * dp + l] * s[j * dp + l]).sum();
            acc += 0.5 * a * m[i * d + j];
        }
    }
    acc
}

fn grid_max(
    problem: &ControlProblem,
    t: f64,
    x: &[f64],
    p: &[f64],
    m: &[f64],
    bound: f64,
    resolution: usize,
) -> (f64, Vec<f64>) {
    let k = problem.control_dim();
    let grid = problem.controls.grid_with_bound(bound, ControlGrid::Resolution(resolution));
    let mut best = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    for u in grid.chunks(k) {
        let v = generator_integrand(problem, t, x, u, p, m);
        if v > best {
            best = v;
            arg = u.to_vec();
        }
    }
    (best, arg)
}

/// `H(t, x, p, M)` maximized over the control grid of `U ∩ [-B, B]^k`.
pub fn hamiltonian(
    problem: &ControlProblem,
    t: f64,
    x: &[f64],
    p: &[f64],
    m: &[f64],
    resolution: usize,
) -> Result<HamiltonianValue> {
    hamiltonian_with_tol(problem, t, x, p, m, resolution, DIVERGENCE_TOL_REL)
}

pub fn hamiltonian_with_tol(
    problem: &ControlProblem,
    t: f64,
    x: &[f64],
    p: &[f64],
    m: &[f64],
    resolution: usize,
    tol_rel: f64,
) -> Result<HamiltonianValue> {
    let d = problem.dim();
    problem.check_point(t, x)?;
    if p.len() != d || m.len() != d * d {
        return Err(Error::arg(format!("gradient/Hessian sizes must be {d} and {}", d * d)));
    }
    let scale = m.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            if (m[i * d + j] - m[j * d + i]).abs() > 1e-12 * scale {
                return Err(Error::arg("Hessian argument is not symmetric"));
            }
        }
    }
    let base = problem.controls.bound;
    let (value, arg) = grid_max(problem, t, x, p, m, base, resolution);
    if problem.controls.is_unbounded() && base > 0.0 {
        let mut prev = value;
        let mut diverging = true;
        for j in 1..=DIVERGENCE_DOUBLINGS {
            let (v, _) = grid_max(problem, t, x, p, m, base * 2f64.powi(j as i32), resolution);
            if v - prev <= tol_rel * prev.abs().max(1.0) {
                diverging = false;
                break;
            }
            prev = v;
        }
        if diverging {
            return Ok(HamiltonianValue { value: f64::INFINITY, argmax_control: None });
        }
    }
    Ok(HamiltonianValue { value, argmax_control: Some(arg) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilitySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub m: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompatibilityRule {
    /// `H < ∞ ⟹ G ≥ 0`
    FiniteImpliesNonNegative,
    /// `G > 0 ⟹ H < ∞`
    PositiveImpliesFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityViolation {
    pub sample: usize,
    pub rule: CompatibilityRule,
    pub hamiltonian: f64,
    pub constraint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub checked: usize,
    pub violations: Vec<CompatibilityViolation>,
}

impl CompatibilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks both implications linking finiteness of `H` to the sign of `G`.
pub fn check_compatibility(
    problem: &ControlProblem,
    samples: &[CompatibilitySample],
    resolution: usize,
    tol: f64,
) -> Result<CompatibilityReport> {
    if samples.is_empty() {
        return Err(Error::arg("no samples"));
    }
    let mut violations = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let h = hamiltonian(problem, s.t, &s.x, &s.p, &s.m, resolution)?;
        let g = problem.constraint.eval(s.t, &s.x, &s.p, &s.m);
        if h.is_finite() && g < -tol {
            violations.push(CompatibilityViolation {
                sample: i,
                rule: CompatibilityRule::FiniteImpliesNonNegative,
                hamiltonian: h.value,
                constraint: g,
            });
        }
        if g > tol && !h.is_finite() {
            violations.push(CompatibilityViolation {
                sample: i,
                rule: CompatibilityRule::PositiveImpliesFinite,
                hamiltonian: h.value,
                constraint: g,
            });
        }
    }
    Ok(CompatibilityReport { checked: samples.len(), violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientProbe {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_pairs: usize,
    pub seed: u64,
    pub lipschitz_threshold: f64,
    pub growth_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientProbeReport {
    pub max_lipschitz_drift: f64,
    pub max_lipschitz_diffusion: f64,
    pub max_growth_drift: f64,
    pub max_growth_diffusion: f64,
    pub flags: Vec<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Empirical Lipschitz and linear-growth ratios of `b` and `σ` on a bounded
/// sub-box of the domain.
pub fn probe_coefficients(
    problem: &ControlProblem,
    probe: &CoefficientProbe,
) -> Result<CoefficientProbeReport> {
    let d = problem.dim();
    let dp = problem.noise_dim();
    let k = problem.control_dim();
    if probe.n_pairs == 0 {
        return Err(Error::arg("n_pairs must be at least 1"));
    }
    if probe.lo.len() != d
        || probe.hi.len() != d
        || probe.lo.iter().zip(&probe.hi).any(|(a, b)| !a.is_finite() || !b.is_finite() || !(a < b))
    {
        return Err(Error::arg("probe box is degenerate"));
    }
    if !problem.domain.contains_box(&probe.lo, &probe.hi) {
        return Err(Error::arg("probe box is not inside the state domain"));
    }
    let origin = vec![0.0; d];
    let anchor: Vec<f64> = if problem.domain.contains(&origin) {
        origin
    } else {
        probe.lo.iter().zip(&probe.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let bound = problem.controls.bound;
    let mut report = CoefficientProbeReport {
        max_lipschitz_drift: 0.0,
        max_lipschitz_diffusion: 0.0,
        max_growth_drift: 0.0,
        max_growth_diffusion: 0.0,
        flags: Vec::new(),
    };
    let (mut bx, mut by, mut b0) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut sx, mut sy, mut s0) = (vec![0.0; d * dp], vec![0.0; d * dp], vec![0.0; d * dp]);
    for _ in 0..probe.n_pairs {
        let t = rng.random::<f64>() * problem.horizon;
        let cbox = &problem.controls.boxes[rng.random_range(0..problem.controls.boxes.len())];
        let u: Vec<f64> = (0..k)
            .map(|i| {
                let lo = cbox.lo[i].max(-bound);
                let hi = cbox.hi[i].min(bound);
                lo + (hi - lo) * rng.random::<f64>()
            })
            .collect();
        let x: Vec<f64> = (0..d).map(|i| probe.lo[i] + (probe.hi[i] - probe.lo[i]) * rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..d).map(|i| probe.lo[i] + (probe.hi[i] - probe.lo[i]) * rng.random::<f64>()).collect();
        let dist = diff_norm(&x, &y);
        problem.dynamics.drift(t, &x, &u, &mut bx);
        problem.dynamics.drift(t, &y, &u, &mut by);
        problem.dynamics.drift(t, &anchor, &u, &mut b0);
        problem.dynamics.diffusion(t, &x, &u, &mut sx);
        problem.dynamics.diffusion(t, &y, &u, &mut sy);
        problem.dynamics.diffusion(t, &anchor, &u, &mut s0);
        if dist > 0.0 {
            report.max_lipschitz_drift = report.max_lipschitz_drift.max(diff_norm(&bx, &by) / dist);
            report.max_lipschitz_diffusion = report.max_lipschitz_diffusion.max(diff_norm(&sx, &sy) / dist);
        }
        let unorm = 1.0 + norm(&u);
        report.max_growth_drift = report.max_growth_drift.max(norm(&b0) / unorm);
        report.max_growth_diffusion = report.max_growth_diffusion.max(norm(&s0) / unorm);
    }
    let checks = [
        ("drift Lipschitz ratio", report.max_lipschitz_drift, probe.lipschitz_threshold),
        ("diffusion Lipschitz ratio", report.max_lipschitz_diffusion, probe.lipschitz_threshold),
        ("drift growth ratio", report.max_growth_drift, probe.growth_threshold),
        ("diffusion growth ratio", report.max_growth_diffusion, probe.growth_threshold),
    ];
    for (name, value, threshold) in checks {
        if value > threshold {
            report.flags.push(format!("{name} {value:.6} exceeds {threshold}"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::problem::dynamics::{ConstantCoefficients, FnDynamics, ProportionalControl};
    use crate::problem::{Constraint, ControlSet, Gauge, Payoff, StateDomain};

    fn utility(bound: f64) -> ControlProblem {
        ControlProblem::new(
            Arc::new(ProportionalControl { mu: vec![1.0], sigma: vec![1.0] }),
            ControlSet::unbounded(1, bound).unwrap(),
            StateDomain::positive_orthant(1),
            1.0,
            Payoff::Power { exponent: 0.5, scale: 1.0 },
            Gauge::default(),
            1.0,
            Constraint::Concavity,
        )
        .unwrap()
    }

    fn zero_problem() -> ControlProblem {
        ControlProblem::new(
            Arc::new(ConstantCoefficients {
                drift: vec![0.0],
                diffusion: vec![0.0],
                noise_dim: 1,
                control_dim: 1,
            }),
            ControlSet::interval(-1.0, 1.0).unwrap(),
            StateDomain::whole_space(1),
            1.0,
            Payoff::Constant { value: 0.0 },
            Gauge::default(),
            1.0,
            Constraint::Positive { value: 1.0 },
        )
        .unwrap()
    }

    /// max_u (u p + ½ u² M) = -p² / (2M) for M < 0, attained at u = -p / M.
    fn quadratic_max(p: f64, m: f64) -> f64 {
        -p * p / (2.0 * m)
    }

    #[test]
    fn utility_hamiltonian_matches_calculus() {
        let prob = utility(10.0);
        let exact = quadratic_max(1.0, -1.0);
        let mut last = f64::NEG_INFINITY;
        for res in [11, 21, 41, 81, 161, 2001] {
            let h = hamiltonian(&prob, 0.0, &[1.0], &[1.0], &[-1.0], res).unwrap();
            assert!(h.is_finite());
            assert!(h.value <= exact + 1e-12);
            assert!(h.value >= last);
            last = h.value;
        }
        assert!((last - exact).abs() < 1e-12);
    }

    #[test]
    fn zero_integrand_gives_zero() {
        let h = hamiltonian(&zero_problem(), 0.3, &[0.7], &[0.0], &[0.0], 11).unwrap();
        assert_eq!(h.value, 0.0);
        assert!(h.argmax_control.is_some());
    }

    #[test]
    fn divergence_probe() {
        let prob = utility(1.0);
        let flat = hamiltonian(&prob, 0.0, &[1.0], &[0.0], &[0.0], 21).unwrap();
        assert_eq!(flat.value, 0.0);
        let linear = hamiltonian(&prob, 0.0, &[1.0], &[1.0], &[0.0], 21).unwrap();
        assert!(!linear.is_finite());
        assert!(linear.argmax_control.is_none());
    }

    #[test]
    fn argument_errors() {
        let prob = utility(1.0);
        assert!(matches!(
            hamiltonian(&prob, 0.0, &[-1.0], &[1.0], &[-1.0], 11),
            Err(Error::Domain(_))
        ));
        let two_d = ControlProblem::new(
            Arc::new(ConstantCoefficients {
                drift: vec![0.0, 0.0],
                diffusion: vec![1.0, 0.0, 0.0, 1.0],
                noise_dim: 2,
                control_dim: 1,
            }),
            ControlSet::interval(-1.0, 1.0).unwrap(),
            StateDomain::whole_space(2),
            1.0,
            Payoff::Quadratic,
            Gauge::default(),
            1.0,
            Constraint::Positive { value: 1.0 },
        )
        .unwrap();
        let err = hamiltonian(&two_d, 0.0, &[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0, 0.0, 1.0], 5);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn compatibility_examples() {
        let prob = utility(10.0);
        let samples = vec![
            CompatibilitySample { t: 0.0, x: vec![1.0], p: vec![1.0], m: vec![-1.0] },
            CompatibilitySample { t: 0.0, x: vec![1.0], p: vec![1.0], m: vec![1.0] },
        ];
        let r = check_compatibility(&prob, &samples, 201, COMPATIBILITY_TOL).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert!(check_compatibility(&prob, &[], 201, COMPATIBILITY_TOL).is_err());

        let zero = zero_problem();
        let s = vec![CompatibilitySample { t: 0.5, x: vec![3.0], p: vec![2.0], m: vec![5.0] }];
        assert!(check_compatibility(&zero, &s, 11, COMPATIBILITY_TOL).unwrap().passed());
    }

    #[test]
    fn compatibility_reports_violations() {
        // G = -1 everywhere while H stays finite: rule (1) fails on every sample.
        let mut prob = zero_problem();
        prob.constraint = Constraint::Positive { value: -1.0 };
        let s = vec![CompatibilitySample { t: 0.0, x: vec![0.0], p: vec![0.0], m: vec![0.0] }];
        let r = check_compatibility(&prob, &s, 5, COMPATIBILITY_TOL).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, CompatibilityRule::FiniteImpliesNonNegative);
    }

    #[test]
    fn linear_drift_lipschitz_constant() {
        let (mu, bound) = (0.3, 2.0);
        let mut prob = utility(bound);
        prob.dynamics = Arc::new(ProportionalControl { mu: vec![mu], sigma: vec![0.0] });
        let r = probe_coefficients(
            &prob,
            &CoefficientProbe {
                lo: vec![0.5],
                hi: vec![2.0],
                n_pairs: 500,
                seed: 7,
                lipschitz_threshold: bound * mu * 1.01,
                growth_threshold: f64::INFINITY,
            },
        )
        .unwrap();
        assert!(r.flags.is_empty(), "{:?}", r.flags);
        assert!(r.max_lipschitz_drift <= bound * mu + 1e-12);
        assert!(r.max_lipschitz_drift > 0.9 * bound * mu);
    }

    #[test]
    fn constant_coefficients_have_zero_lipschitz_ratio() {
        let r = probe_coefficients(
            &zero_problem(),
            &CoefficientProbe {
                lo: vec![-1.0],
                hi: vec![1.0],
                n_pairs: 50,
                seed: 1,
                lipschitz_threshold: 0.0,
                growth_threshold: 0.0,
            },
        )
        .unwrap();
        assert_eq!(r.max_lipschitz_drift, 0.0);
        assert_eq!(r.max_lipschitz_diffusion, 0.0);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn quadratic_drift_is_flagged() {
        let mut prob = zero_problem();
        prob.dynamics = Arc::new(FnDynamics {
            state_dim: 1,
            noise_dim: 1,
            control_dim: 1,
            drift: Arc::new(|_t, x, _u, out| out[0] = x[0] * x[0]),
            diffusion: Arc::new(|_t, _x, _u, out| out[0] = 0.0),
            proportional: false,
        });
        let r = probe_coefficients(
            &prob,
            &CoefficientProbe {
                lo: vec![0.5],
                hi: vec![2.0],
                n_pairs: 2000,
                seed: 3,
                lipschitz_threshold: 1.0,
                growth_threshold: f64::INFINITY,
            },
        )
        .unwrap();
        assert!(!r.flags.is_empty());
        // mean-value bound: sup |2x| on [0.5, 2] is 4
        assert!(r.max_lipschitz_drift <= 4.0 && r.max_lipschitz_drift > 3.0);
    }

    #[test]
    fn degenerate_probe_box() {
        let err = probe_coefficients(
            &zero_problem(),
            &CoefficientProbe {
                lo: vec![1.0],
                hi: vec![1.0],
                n_pairs: 5,
                seed: 0,
                lipschitz_threshold: 1.0,
                growth_threshold: 1.0,
            },
        );
        assert!(matches!(err, Err(Error::Argument(_))));
    }
}
