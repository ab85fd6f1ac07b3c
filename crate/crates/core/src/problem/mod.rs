//! Control-problem data model: coefficients, control set, state domain,
//! payoff, gauge and the constraint function `G`.

pub mod dynamics;
pub mod hamiltonian;
pub mod spec;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use dynamics::Dynamics;
pub use spec::ProblemSpec;

/// A real-valued function of the state.
#[derive(Clone)]
pub struct ScalarFn(pub Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarFn(..)")
    }
}

impl PartialEq for ScalarFn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Terminal payoff `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Constant {
        value: f64,
    },
    /// `scale · x^exponent` on the first coordinate.
    Power {
        exponent: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `|x - center|` on the first coordinate.
    Abs {
        center: f64,
    },
    /// `Σ x_i²`
    Quadratic,
    Affine {
        intercept: f64,
        slope: Vec<f64>,
    },
    /// Linear interpolation through `(x, y)` on the first coordinate, flat
    /// beyond the end nodes.
    PiecewiseLinear {
        x: Vec<f64>,
        y: Vec<f64>,
    },
    #[serde(skip)]
    Custom(ScalarFn),
}

fn unit() -> f64 {
    1.0
}

impl Payoff {
    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Payoff::Custom(ScalarFn(Arc::new(f)))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Payoff::Constant { value } => *value,
            Payoff::Power { exponent, scale } => scale * x[0].powf(*exponent),
            Payoff::Abs { center } => (x[0] - center).abs(),
            Payoff::Quadratic => x.iter().map(|v| v * v).sum(),
            Payoff::Affine { intercept, slope } => {
                intercept + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            Payoff::PiecewiseLinear { x: xs, y } => piecewise_linear(xs, y, x[0]),
            Payoff::Custom(f) => (f.0)(x),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Payoff::PiecewiseLinear { x, y } = self {
            if x.len() < 2 || x.len() != y.len() || x.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::arg(
                    "piecewise_linear payoff needs >= 2 strictly increasing nodes with matching values",
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn piecewise_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = (xs.partition_point(|&v| v <= x) - 1).min(n - 2);
    let f = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + f * (ys[i + 1] - ys[i])
}

/// Gauge `ψ > 0` bounding the admissible growth of payoffs and candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gauge {
    /// `1 + |x|^power` (Euclidean norm).
    OnePlusNorm { power: f64 },
    Constant { value: f64 },
    #[serde(skip)]
    Custom(ScalarFn),
}

impl Default for Gauge {
    fn default() -> Self {
        Gauge::OnePlusNorm { power: 1.0 }
    }
}

impl Gauge {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Gauge::OnePlusNorm { power } => {
                1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(*power)
            }
            Gauge::Constant { value } => *value,
            Gauge::Custom(f) => (f.0)(x),
        }
    }
}

#[derive(Clone)]
pub struct ConstraintFn(pub Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>);

impl fmt::Debug for ConstraintFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ConstraintFn(..)")
    }
}

impl PartialEq for ConstraintFn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// The constraint function `G(t, x, p, M)` whose non-negativity marks where
/// the Hamiltonian is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// `G = -M` in one dimension, `G = -λ_max(M)` in two.
    Concavity,
    /// `G ≡ value > 0` (compact controls).
    Positive { value: f64 },
    #[serde(skip)]
    Custom(ConstraintFn),
}

impl Constraint {
    pub fn custom(f: impl Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Constraint::Custom(ConstraintFn(Arc::new(f)))
    }

    /// `m` is the row-major `d × d` Hessian.
    pub fn eval(&self, t: f64, x: &[f64], p: &[f64], m: &[f64]) -> f64 {
        match self {
            Constraint::Concavity => -max_eigenvalue(m, x.len()),
            Constraint::Positive { value } => *value,
            Constraint::Custom(f) => (f.0)(t, x, p, m),
        }
    }
}

pub(crate) fn max_eigenvalue(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => {
            let (a, b, c) = (m[0], 0.5 * (m[1] + m[2]), m[3]);
            let mean = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            mean + rad
        }
        _ => unreachable!("state dimension > 2 is rejected at construction"),
    }
}

/// Open box `Π (lo_i, hi_i)`; infinite edges allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::arg("state domain bounds must be non-empty and of equal length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a.is_nan() || b.is_nan() || !(a < b)) {
            return Err(Error::arg("state domain must be a non-empty open box"));
        }
        Ok(Self { lo, hi })
    }

    pub fn whole_space(d: usize) -> Self {
        Self { lo: vec![f64::NEG_INFINITY; d], hi: vec![f64::INFINITY; d] }
    }

    pub fn positive_orthant(d: usize) -> Self {
        Self { lo: vec![0.0; d], hi: vec![f64::INFINITY; d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a < *v && *v < *b)
    }

    /// `(0, ∞)^d`, where log coordinates are available.
    pub fn is_positive_orthant(&self) -> bool {
        self.lo.iter().all(|&a| a == 0.0) && self.hi.iter().all(|b| b.is_infinite())
    }

    /// Closed box `[lo, hi]` is contained in the closure of the domain.
    pub fn contains_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        lo.len() == self.dim()
            && (0..self.dim()).all(|i| lo[i] >= self.lo[i] && hi[i] <= self.hi[i])
    }
}

/// Closed box of controls; infinite edges allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Control grid selection inside `U ∩ [-B, B]^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlGrid {
    /// `n` uniformly spaced points per dimension of each box.
    Resolution(usize),
    /// Integer multiples of a fixed step; grids for growing bounds are nested.
    Spacing(f64),
}

/// `U` as a finite union of boxes, intersected with `[-B, B]^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub boxes: Vec<ControlBox>,
    pub bound: f64,
}

impl ControlSet {
    pub fn new(boxes: Vec<ControlBox>, bound: f64) -> Result<Self> {
        let k = boxes.first().map(|b| b.lo.len()).ok_or_else(|| Error::arg("control set needs at least one box"))?;
        if k == 0 || k > 2 {
            return Err(Error::Unsupported(format!("control dimension {k} (supported: 1, 2)")));
        }
        for b in &boxes {
            if b.lo.len() != k || b.hi.len() != k {
                return Err(Error::arg("control boxes must share one dimension"));
            }
            if b.lo.iter().zip(&b.hi).any(|(a, c)| a.is_nan() || c.is_nan() || a > c) {
                return Err(Error::arg("control box with lo > hi"));
            }
        }
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(Error::arg("control bound must be finite and non-negative"));
        }
        Ok(Self { boxes, bound })
    }

    /// `U = ℝ^k` restricted to `[-bound, bound]^k`.
    pub fn unbounded(k: usize, bound: f64) -> Result<Self> {
        Self::new(
            vec![ControlBox { lo: vec![f64::NEG_INFINITY; k], hi: vec![f64::INFINITY; k] }],
            bound,
        )
    }

    /// `U = [lo, hi]` in one dimension.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![ControlBox { lo: vec![lo], hi: vec![hi] }], lo.abs().max(hi.abs()))
    }

    pub fn singleton(u: &[f64]) -> Result<Self> {
        let bound = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Self::new(vec![ControlBox { lo: u.to_vec(), hi: u.to_vec() }], bound)
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].lo.len()
    }

    pub fn is_unbounded(&self) -> bool {
        self.boxes.iter().any(|b| b.lo.iter().chain(&b.hi).any(|v| v.is_infinite()))
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        let tol = 1e-12 * (1.0 + self.bound);
        u.iter().all(|v| v.abs() <= self.bound + tol)
            && self.boxes.iter().any(|b| {
                u.iter().zip(b.lo.iter().zip(&b.hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
            })
    }

    /// Grid of `U ∩ [-B, B]^k`, flattened `n × k`.
    pub fn grid(&self, spec: ControlGrid) -> Vec<f64> {
        self.grid_with_bound(self.bound, spec)
    }

    pub fn grid_with_bound(&self, bound: f64, spec: ControlGrid) -> Vec<f64> {
        let k = self.dim();
        let mut points: Vec<f64> = Vec::new();
        for b in &self.boxes {
            let mut axes: Vec<Vec<f64>> = Vec::with_capacity(k);
            let mut empty = false;
            for i in 0..k {
                let lo = b.lo[i].max(-bound);
                let hi = b.hi[i].min(bound);
                if lo > hi {
                    empty = true;
                    break;
                }
                axes.push(axis_points(lo, hi, spec));
            }
            if empty || axes.iter().any(|a| a.is_empty()) {
                continue;
            }
            let mut idx = vec![0usize; k];
            loop {
                let p: Vec<f64> = (0..k).map(|i| axes[i][idx[i]]).collect();
                let dup = points.chunks(k).any(|q| q == p.as_slice());
                if !dup {
                    points.extend_from_slice(&p);
                }
                let mut carry = k;
                for i in (0..k).rev() {
                    idx[i] += 1;
                    if idx[i] < axes[i].len() {
                        carry = i;
                        break;
                    }
                    idx[i] = 0;
                }
                if carry == k {
                    break;
                }
            }
        }
        points
    }
}

fn axis_points(lo: f64, hi: f64, spec: ControlGrid) -> Vec<f64> {
    if lo == hi {
        return vec![lo];
    }
    match spec {
        ControlGrid::Resolution(n) => {
            let n = n.max(2);
            let d = hi - lo;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + d * i as f64 / (n - 1) as f64 })
                .collect()
        }
        ControlGrid::Spacing(step) => {
            let first = (lo / step - 1e-9).ceil() as i64;
            let last = (hi / step + 1e-9).floor() as i64;
            (first..=last).map(|j| (j as f64 * step).clamp(lo, hi)).collect()
        }
    }
}

/// One instance of the stochastic control problem.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub dynamics: Arc<dyn Dynamics>,
    pub controls: ControlSet,
    pub domain: StateDomain,
    pub horizon: f64,
    pub payoff: Payoff,
    pub gauge: Gauge,
    /// Declared `C` in `|g| ≤ C ψ`.
    pub growth_constant: f64,
    pub constraint: Constraint,
    /// JSON source, when the problem was read from one.
    pub spec: Option<ProblemSpec>,
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        controls: ControlSet,
        domain: StateDomain,
        horizon: f64,
        payoff: Payoff,
        gauge: Gauge,
        growth_constant: f64,
        constraint: Constraint,
    ) -> Result<Self> {
        let problem = Self {
            dynamics,
            controls,
            domain,
            horizon,
            payoff,
            gauge,
            growth_constant,
            constraint,
            spec: None,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > 2 {
            return Err(Error::Unsupported(format!("state dimension {d} (supported: 1, 2)")));
        }
        if self.domain.dim() != d {
            return Err(Error::arg("state domain dimension differs from the dynamics"));
        }
        if self.controls.dim() != self.dynamics.control_dim() {
            return Err(Error::arg("control set dimension differs from the dynamics"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::arg("horizon must be finite and positive"));
        }
        if !(self.growth_constant >= 0.0) {
            return Err(Error::arg("growth constant must be non-negative"));
        }
        self.payoff.validate()
    }

    pub fn dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.dynamics.noise_dim()
    }

    pub fn with_controls(&self, controls: ControlSet) -> Self {
        let mut p = self.clone();
        p.controls = controls;
        p.spec = None;
        p
    }

    pub fn with_payoff(&self, payoff: Payoff) -> Self {
        let mut p = self.clone();
        p.payoff = payoff;
        p.spec = None;
        p
    }

    pub fn check_point(&self, t: f64, x: &[f64]) -> Result<()> {
        if !self.domain.contains(x) {
            return Err(Error::domain(format!("state {x:?} is outside the domain")));
        }
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!("time {t} is outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// Points where `|g| ≤ C ψ` fails.
    pub fn growth_violations<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
        points
            .into_iter()
            .filter(|x| {
                let g = self.payoff.eval(x).abs();
                g > self.growth_constant * self.gauge.eval(x) * (1.0 + 1e-12)
            })
            .map(|x| x.to_vec())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_resolution_grids() {
        let u = ControlSet::unbounded(1, 2.0).unwrap();
        let coarse = u.grid(ControlGrid::Resolution(5));
        let fine = u.grid(ControlGrid::Resolution(9));
        for c in &coarse {
            assert!(fine.contains(c), "{c} missing from refined grid");
        }
    }

    #[test]
    fn spacing_grids_nest_across_bounds() {
        let small = ControlSet::unbounded(1, 0.5).unwrap().grid(ControlGrid::Spacing(0.025));
        let large = ControlSet::unbounded(1, 10.0).unwrap().grid(ControlGrid::Spacing(0.025));
        assert_eq!(small.len(), 41);
        assert_eq!(large.len(), 801);
        assert!(small.iter().all(|u| large.contains(u)));
    }

    #[test]
    fn union_of_boxes_is_deduplicated() {
        let set = ControlSet::new(
            vec![
                ControlBox { lo: vec![-1.0], hi: vec![0.0] },
                ControlBox { lo: vec![0.0], hi: vec![1.0] },
            ],
            1.0,
        )
        .unwrap();
        let g = set.grid(ControlGrid::Resolution(3));
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn singleton_control_grid() {
        let set = ControlSet::singleton(&[0.0]).unwrap();
        assert_eq!(set.grid(ControlGrid::Resolution(11)), vec![0.0]);
        assert!(!set.is_unbounded());
    }

    #[test]
    fn concavity_constraint_in_two_dimensions() {
        let g = Constraint::Concavity;
        // eigenvalues of [[1, 2], [2, 1]] are 3 and -1
        assert!((g.eval(0.0, &[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0, 2.0, 1.0]) + 3.0).abs() < 1e-12);
        assert_eq!(g.eval(0.0, &[1.0], &[0.0], &[-2.0]), 2.0);
    }

    #[test]
    fn domain_membership_is_strict() {
        let d = StateDomain::positive_orthant(1);
        assert!(!d.contains(&[0.0]));
        assert!(d.contains(&[1e-9]));
        assert!(d.is_positive_orthant());
        assert!(StateDomain::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn piecewise_linear_payoff_is_flat_outside() {
        let g = Payoff::PiecewiseLinear { x: vec![0.0, 1.0, 2.0], y: vec![1.0, 0.0, 1.0] };
        assert_eq!(g.eval(&[-1.0]), 1.0);
        assert_eq!(g.eval(&[0.5]), 0.5);
        assert_eq!(g.eval(&[3.0]), 1.0);
    }
}
