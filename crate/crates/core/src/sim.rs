//! Euler–Maruyama simulation of the controlled state under feedback rules,
//! and Monte-Carlo value estimates.
//!
//! Every path owns a ChaCha stream selected by its index, so results do not
//! depend on thread count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::FeedbackPolicy;
use crate::problem::{ControlGrid, ControlProblem, Gauge, Payoff};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    #[default]
    Terminal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    #[serde(default)]
    pub record: Record,
    /// Closed box; paths leaving it are stopped and flagged like domain exits.
    #[serde(default)]
    pub sim_box: Option<Vec<(f64, f64)>>,
    /// Step `ln x` exactly for proportional dynamics on `(0, ∞)`.
    #[serde(default = "yes")]
    pub log_coordinates: bool,
}

fn yes() -> bool {
    true
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { record: Record::Terminal, sim_box: None, log_coordinates: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Domain,
    SimulationBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exit {
    /// Index of the step whose proposal left; the path stays at the state
    /// reached after `step` steps.
    pub step: usize,
    pub reason: ExitReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    /// Final (or stopped) state of every path, flattened `n_paths × d`.
    pub terminal: Vec<f64>,
    /// `n_paths × (n_steps + 1) × d` when recorded in full.
    pub paths: Option<Vec<f64>>,
    pub exits: Vec<Option<Exit>>,
    pub seed: u64,
    pub policy_label: String,
    pub log_coordinates: bool,
    /// Largest sup-norm of any control applied.
    pub max_control: f64,
}

impl PathEnsemble {
    pub fn terminal_state(&self, path: usize) -> &[f64] {
        &self.terminal[path * self.dim..(path + 1) * self.dim]
    }

    pub fn exit_fraction(&self) -> f64 {
        self.exits.iter().filter(|e| e.is_some()).count() as f64 / self.n_paths as f64
    }
}

/// Where a single path stopped.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PathEnd {
    pub t: f64,
    pub x: [f64; 2],
    pub exit: Option<Exit>,
    pub max_control: f64,
}

/// Per-run invariants shared by all paths.
pub(crate) struct Stepper<'a> {
    pub problem: &'a ControlProblem,
    pub sim_box: Option<&'a [(f64, f64)]>,
    pub log: bool,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(problem: &'a ControlProblem, opts: &'a SimOptions) -> Self {
        let log = opts.log_coordinates && problem.dynamics.proportional() && problem.domain.is_positive_orthant();
        Self { problem, sim_box: opts.sim_box.as_deref(), log }
    }

    fn outside_box(&self, x: &[f64]) -> bool {
        self.sim_box.is_some_and(|b| x.iter().zip(b).any(|(v, (lo, hi))| v < lo || v > hi))
    }

    /// Runs one path from `(t0, x0)` to `t_end` in `n_steps` steps, stopping
    /// early when it leaves the ball `‖X - c‖ < r` (at the first state
    /// outside) or the domain / simulation box (at the last state inside).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn run(
        &self,
        policy: &FeedbackPolicy,
        rng: &mut ChaCha8Rng,
        t0: f64,
        x0: &[f64],
        t_end: f64,
        n_steps: usize,
        ball: Option<(&[f64], f64)>,
        mut record: Option<&mut [f64]>,
    ) -> Result<PathEnd> {
        let p = self.problem;
        let d = p.dim();
        let dp = p.noise_dim();
        let h = (t_end - t0) / n_steps as f64;
        let sq = h.sqrt();
        let mut x = [0.0; 2];
        x[..d].copy_from_slice(x0);
        let mut next = [0.0; 2];
        let mut u = vec![0.0; p.control_dim()];
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * dp];
        let mut z = vec![0.0; dp];
        let mut max_control = 0.0_f64;
        if let Some(r) = record.as_deref_mut() {
            r[..d].copy_from_slice(&x[..d]);
        }
        let mut end = None;
        for k in 0..n_steps {
            let t = t0 + k as f64 * h;
            policy.checked_control(t, &x[..d], &mut u)?;
            if !p.controls.contains(&u) {
                return Err(Error::arg(format!("policy '{}' left the control set: {u:?}", policy.label)));
            }
            max_control = u.iter().fold(max_control, |m, v| m.max(v.abs()));
            for zl in z.iter_mut() {
                *zl = StandardNormal.sample(rng);
            }
            p.dynamics.drift(t, &x[..d], &u, &mut b);
            p.dynamics.diffusion(t, &x[..d], &u, &mut s);
            for i in 0..d {
                let row = &s[i * dp..(i + 1) * dp];
                if self.log {
                    let xi = x[i];
                    let mut var = 0.0;
                    let mut noise = 0.0;
                    for l in 0..dp {
                        let r = row[l] / xi;
                        var += r * r;
                        noise += r * z[l];
                    }
                    next[i] = xi * ((b[i] / xi - 0.5 * var) * h + noise * sq).exp();
                } else {
                    let noise: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                    next[i] = x[i] + b[i] * h + noise * sq;
                }
            }
            let reason = if !p.domain.contains(&next[..d]) {
                Some(ExitReason::Domain)
            } else if self.outside_box(&next[..d]) {
                Some(ExitReason::SimulationBox)
            } else {
                None
            };
            if let Some(reason) = reason {
                end = Some(PathEnd { t, x, exit: Some(Exit { step: k, reason }), max_control });
                if let Some(r) = record.as_deref_mut() {
                    for j in k + 1..=n_steps {
                        r[j * d..(j + 1) * d].copy_from_slice(&x[..d]);
                    }
                }
                break;
            }
            x = next;
            if let Some(r) = record.as_deref_mut() {
                r[(k + 1) * d..(k + 2) * d].copy_from_slice(&x[..d]);
            }
            if let Some((c, radius)) = ball {
                let dist = x[..d].iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if dist >= radius {
                    let t_stop = if k + 1 == n_steps { t_end } else { t0 + (k + 1) as f64 * h };
                    end = Some(PathEnd { t: t_stop, x, exit: None, max_control });
                    if let Some(r) = record.as_deref_mut() {
                        for j in k + 2..=n_steps {
                            r[j * d..(j + 1) * d].copy_from_slice(&x[..d]);
                        }
                    }
                    break;
                }
            }
        }
        Ok(end.unwrap_or(PathEnd { t: t_end, x, exit: None, max_control }))
    }
}

/// Generator for path `index` under `seed`.
pub(crate) fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a tag into a seed (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn check_policy(problem: &ControlProblem, policy: &FeedbackPolicy) -> Result<()> {
    if policy.control_dim != problem.control_dim() {
        return Err(Error::arg("policy control dimension differs from the problem"));
    }
    if policy.bound > problem.controls.bound * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::arg(format!(
            "policy bound {} exceeds the control bound {}",
            policy.bound, problem.controls.bound
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_paths(
    problem: &ControlProblem,
    policy: &FeedbackPolicy,
    t0: f64,
    x0: &[f64],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    if x0.len() != problem.dim() {
        return Err(Error::arg("initial state has the wrong dimension"));
    }
    problem.check_point(t0, x0)?;
    if t0 >= problem.horizon {
        return Err(Error::domain("start time must precede the horizon"));
    }
    if n_steps == 0 || n_paths == 0 {
        return Err(Error::arg("need at least one path and one step"));
    }
    check_policy(problem, policy)?;
    let stepper = Stepper::new(problem, opts);
    if stepper.outside_box(x0) {
        return Err(Error::domain("initial state lies outside the simulation box"));
    }
    let d = problem.dim();
    let t_end = problem.horizon;
    let h = (t_end - t0) / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| if k == n_steps { t_end } else { t0 + k as f64 * h }).collect();
    let full = opts.record == Record::Full;
    let results: Vec<(PathEnd, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let mut rec = if full { vec![0.0; (n_steps + 1) * d] } else { Vec::new() };
            let end = stepper.run(
                policy,
                &mut rng,
                t0,
                x0,
                t_end,
                n_steps,
                None,
                if full { Some(&mut rec) } else { None },
            )?;
            Ok((end, rec))
        })
        .collect::<Result<_>>()?;
    let mut terminal = Vec::with_capacity(n_paths * d);
    let mut exits = Vec::with_capacity(n_paths);
    let mut max_control = 0.0_f64;
    let mut paths = full.then(|| Vec::with_capacity(n_paths * (n_steps + 1) * d));
    for (end, rec) in results {
        terminal.extend_from_slice(&end.x[..d]);
        exits.push(end.exit);
        max_control = max_control.max(end.max_control);
        if let Some(p) = paths.as_mut() {
            p.extend(rec);
        }
    }
    Ok(PathEnsemble {
        n_paths,
        n_steps,
        dim: d,
        times,
        terminal,
        paths,
        exits,
        seed,
        policy_label: policy.label.clone(),
        log_coordinates: stepper.log,
        max_control,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub half_width_95: f64,
    pub exit_fraction: f64,
    pub n: usize,
}

impl ValueEstimate {
    /// Mean and standard error of a sample, summed in order.
    pub fn from_samples(samples: &[f64], exit_fraction: f64) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let std_error = (var / n as f64).sqrt();
        Self { mean, std_error, half_width_95: Z95 * std_error, exit_fraction, n }
    }
}

/// Sample mean of `g` at the terminal (or stopped) states.
pub fn estimate_value(ensemble: &PathEnsemble, payoff: &Payoff) -> ValueEstimate {
    let samples: Vec<f64> = (0..ensemble.n_paths).map(|i| payoff.eval(ensemble.terminal_state(i))).collect();
    ValueEstimate::from_samples(&samples, ensemble.exit_fraction())
}

#[derive(Debug, Clone)]
pub struct PolicySearch {
    pub best: usize,
    pub policy: FeedbackPolicy,
    pub estimate: ValueEstimate,
    pub estimates: Vec<ValueEstimate>,
}

/// Constant policies on the control grid.
pub fn constant_family(problem: &ControlProblem, spec: ControlGrid) -> Vec<FeedbackPolicy> {
    let k = problem.control_dim();
    problem.controls.grid(spec).chunks(k).map(|u| FeedbackPolicy::constant(u.to_vec())).collect()
}

/// Best member of a finite family under common random numbers; its estimate
/// is a statistical lower bound for `V(t0, x0)`.
#[allow(clippy::too_many_arguments)]
pub fn optimize_policy(
    problem: &ControlProblem,
    family: &[FeedbackPolicy],
    t0: f64,
    x0: &[f64],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PolicySearch> {
    if family.is_empty() {
        return Err(Error::arg("policy family is empty"));
    }
    let mut estimates = Vec::with_capacity(family.len());
    for policy in family {
        let ens = simulate_paths(problem, policy, t0, x0, n_paths, n_steps, seed, opts)?;
        estimates.push(estimate_value(&ens, &problem.payoff));
    }
    let mut best = 0;
    for (i, e) in estimates.iter().enumerate() {
        if e.mean > estimates[best].mean {
            best = i;
        }
    }
    Ok(PolicySearch { best, policy: family[best].clone(), estimate: estimates[best], estimates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    /// Mean over paths of `sup_t ψ(X_t)`.
    pub mean_sup: f64,
    /// Share of the total carried by the top 1% of paths.
    pub tail_ratio: f64,
    pub heavy_tail: bool,
}

pub fn gauge_check(ensemble: &PathEnsemble, gauge: &Gauge) -> Result<GaugeReport> {
    let paths = ensemble
        .paths
        .as_ref()
        .ok_or_else(|| Error::arg("gauge check needs fully recorded paths"))?;
    let d = ensemble.dim;
    let per_path = (ensemble.n_steps + 1) * d;
    let mut sups: Vec<f64> = paths
        .chunks(per_path)
        .map(|p| p.chunks(d).map(|x| gauge.eval(x)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let total: f64 = sups.iter().sum();
    let mean_sup = total / sups.len() as f64;
    sups.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = sups.len().div_ceil(100);
    let tail_ratio = sups[..top].iter().sum::<f64>() / total;
    Ok(GaugeReport { mean_sup, tail_ratio, heavy_tail: tail_ratio > 0.5 })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::problem::dynamics::{ConstantCoefficients, ProportionalControl};
    use crate::problem::{Constraint, ControlSet, StateDomain};

    fn constant(drift: f64, vol: f64, payoff: Payoff) -> ControlProblem {
        ControlProblem::new(
            Arc::new(ConstantCoefficients { drift: vec![drift], diffusion: vec![vol], noise_dim: 1, control_dim: 1 }),
            ControlSet::interval(-1.0, 1.0).unwrap(),
            StateDomain::whole_space(1),
            1.0,
            payoff,
            Gauge::OnePlusNorm { power: 2.0 },
            1.0,
            Constraint::Positive { value: 1.0 },
        )
        .unwrap()
    }

    fn geometric() -> ControlProblem {
        ControlProblem::new(
            Arc::new(ProportionalControl { mu: vec![0.1], sigma: vec![0.2] }),
            ControlSet::unbounded(1, 10.0).unwrap(),
            StateDomain::positive_orthant(1),
            1.0,
            Payoff::Power { exponent: 0.5, scale: 1.0 },
            Gauge::default(),
            1.0,
            Constraint::Concavity,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_drift_lands_exactly() {
        let p = constant(1.0, 0.0, Payoff::Quadratic);
        let pol = FeedbackPolicy::constant(vec![0.7]);
        for steps in [1, 8, 64] {
            let e = simulate_paths(&p, &pol, 0.0, &[0.0], 50, steps, 3, &SimOptions::default()).unwrap();
            assert!(e.terminal.iter().all(|&x| x == 1.0));
            assert_eq!(e.times.last(), Some(&1.0));
        }
    }

    #[test]
    fn brownian_moments() {
        let p = constant(0.0, 1.0, Payoff::Quadratic);
        let pol = FeedbackPolicy::constant(vec![0.0]);
        let n = 20_000;
        let e = simulate_paths(&p, &pol, 0.0, &[0.0], n, 16, 11, &SimOptions::default()).unwrap();
        let mean = e.terminal.iter().sum::<f64>() / n as f64;
        let var = e.terminal.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (1.0 / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se);
        // Var of the sample variance of N(0,1) is 2/(n-1).
        assert!((var - 1.0).abs() < 4.0 * (2.0 / (n - 1) as f64).sqrt());
        let est = estimate_value(&e, &p.payoff);
        assert!((est.mean - 1.0).abs() < est.half_width_95 * 2.0);
    }

    #[test]
    fn lognormal_mean_in_log_coordinates() {
        let p = geometric();
        let pol = FeedbackPolicy::constant(vec![3.0]);
        let n = 20_000;
        let e = simulate_paths(&p, &pol, 0.25, &[2.0], n, 4, 5, &SimOptions::default()).unwrap();
        assert!(e.log_coordinates);
        assert_eq!(e.exit_fraction(), 0.0);
        let est = estimate_value(&e, &Payoff::Power { exponent: 1.0, scale: 1.0 });
        let exact = 2.0 * (3.0_f64 * 0.1 * 0.75).exp();
        assert!((est.mean - exact).abs() < est.half_width_95, "{} vs {exact}", est.mean);
    }

    #[test]
    fn constant_payoff_has_no_spread() {
        let p = constant(0.0, 1.0, Payoff::Constant { value: 2.5 });
        let e = simulate_paths(&p, &FeedbackPolicy::constant(vec![0.0]), 0.0, &[0.0], 100, 4, 1, &SimOptions::default()).unwrap();
        let est = estimate_value(&e, &p.payoff);
        assert_eq!(est.mean, 2.5);
        assert_eq!(est.half_width_95, 0.0);
    }

    #[test]
    fn reproducible_bitwise_and_thread_independent() {
        let p = geometric();
        let pol = FeedbackPolicy::analytic(1, 5.0, "ramp", |t, x, u| u[0] = (5.0 * x[0] * (1.0 - t)).min(5.0));
        let opts = SimOptions { record: Record::Full, ..Default::default() };
        let a = simulate_paths(&p, &pol, 0.0, &[1.0], 300, 32, 99, &opts).unwrap();
        let b = simulate_paths(&p, &pol, 0.0, &[1.0], 300, 32, 99, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simulate_paths(&p, &pol, 0.0, &[1.0], 300, 32, 99, &opts).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
        let d = simulate_paths(&p, &pol, 0.0, &[1.0], 300, 32, 100, &opts).unwrap();
        assert_ne!(a.terminal, d.terminal);
    }

    #[test]
    fn exits_stop_and_flag() {
        // Physical-coordinate Euler with large volatility leaves (0, ∞).
        let p = geometric();
        let pol = FeedbackPolicy::constant(vec![10.0]);
        let opts = SimOptions { log_coordinates: false, record: Record::Full, ..Default::default() };
        let e = simulate_paths(&p, &pol, 0.0, &[1.0], 2000, 4, 7, &opts).unwrap();
        assert!(e.exit_fraction() > 0.0);
        assert!(e.terminal.iter().all(|&x| x > 0.0));
        let paths = e.paths.as_ref().unwrap();
        for (i, ex) in e.exits.iter().enumerate() {
            if let Some(ex) = ex {
                assert_eq!(ex.reason, ExitReason::Domain);
                let row = &paths[i * 5..(i + 1) * 5];
                assert!(row[ex.step..].iter().all(|&x| x == row[ex.step]));
            }
        }
        let boxed = SimOptions { sim_box: Some(vec![(0.5, 2.0)]), ..Default::default() };
        let e = simulate_paths(&p, &FeedbackPolicy::constant(vec![5.0]), 0.0, &[1.0], 2000, 16, 7, &boxed).unwrap();
        assert!(e.exits.iter().flatten().all(|x| x.reason == ExitReason::SimulationBox));
        assert!(e.terminal.iter().all(|&x| (0.5..=2.0).contains(&x)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = geometric();
        let pol = FeedbackPolicy::constant(vec![1.0]);
        let o = SimOptions::default();
        assert!(matches!(simulate_paths(&p, &pol, 0.0, &[-1.0], 10, 4, 0, &o), Err(Error::Domain(_))));
        assert!(matches!(simulate_paths(&p, &pol, 0.0, &[1.0], 10, 0, 0, &o), Err(Error::Argument(_))));
        let wide = FeedbackPolicy::constant(vec![11.0]);
        assert!(matches!(simulate_paths(&p, &wide, 0.0, &[1.0], 10, 4, 0, &o), Err(Error::Argument(_))));
        let liar = FeedbackPolicy::analytic(1, 1.0, "liar", |_, _, u| u[0] = 2.0);
        assert!(matches!(simulate_paths(&p, &liar, 0.0, &[1.0], 10, 4, 0, &o), Err(Error::Argument(_))));
    }

    #[test]
    fn best_constant_is_near_merton_fraction() {
        let p = geometric();
        let family = constant_family(&p, ControlGrid::Spacing(1.0));
        let r = optimize_policy(&p, &family, 0.0, &[1.0], 20_000, 1, 17, &SimOptions::default()).unwrap();
        let mut u = [0.0];
        r.policy.control(0.0, &[1.0], &mut u);
        assert!((u[0] - 5.0).abs() <= 1.0, "best constant {}", u[0]);

        // nested families under common random numbers
        let small: Vec<_> = family.iter().step_by(4).cloned().collect();
        let r_small = optimize_policy(&p, &small, 0.0, &[1.0], 20_000, 1, 17, &SimOptions::default()).unwrap();
        assert!(r.estimate.mean >= r_small.estimate.mean);

        let single = optimize_policy(&p, &family[3..4], 0.0, &[1.0], 1000, 1, 17, &SimOptions::default()).unwrap();
        assert_eq!(single.best, 0);
        assert!(optimize_policy(&p, &[], 0.0, &[1.0], 10, 1, 0, &SimOptions::default()).is_err());
    }

    #[test]
    fn gauge_reports() {
        let p = constant(0.0, 1.0, Payoff::Quadratic);
        let opts = SimOptions { record: Record::Full, ..Default::default() };
        let e = simulate_paths(&p, &FeedbackPolicy::constant(vec![0.0]), 0.0, &[0.0], 5000, 64, 2, &opts).unwrap();
        let r = gauge_check(&e, &Gauge::OnePlusNorm { power: 2.0 }).unwrap();
        // 1 + E sup W² with E sup_{t≤1} W² ≤ 4
        assert!(r.mean_sup > 1.0 && r.mean_sup < 5.0, "{}", r.mean_sup);
        assert!(!r.heavy_tail);

        let g = geometric();
        let e = simulate_paths(&g, &FeedbackPolicy::constant(vec![5.0]), 0.0, &[1.0], 5000, 32, 2, &opts).unwrap();
        let r = gauge_check(&e, &Gauge::Custom(crate::problem::ScalarFn(Arc::new(|x: &[f64]| x[0].sqrt())))).unwrap();
        assert!(r.mean_sup.is_finite() && !r.heavy_tail);

        let e = simulate_paths(&p, &FeedbackPolicy::constant(vec![0.0]), 0.0, &[0.0], 10, 4, 2, &SimOptions::default()).unwrap();
        assert!(gauge_check(&e, &Gauge::default()).is_err());
    }
}
