//! File formats read by the command line: grid documents, policy and
//! candidate descriptions. Relative paths inside a document resolve against
//! the document's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::manifest::RunContext;
use crate::certify::{lattice_max, lattice_min, CandidateFunction, CandidateKind};
use crate::error::{Error, Result};
use crate::grid::{AxisSpec, GridFunction, SpatialGrid};
use crate::oracles::MertonParams;
use crate::policy::{FeedbackPolicy, PolicyTable};
use crate::problem::{ControlProblem, ProblemSpec};
use crate::solver::{extract_policy, SchemeConfig, SpaceTimeSolution, TerminalMode};

/// `grid.json`: spatial axes plus, for solves, the scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub axes: Vec<AxisSpec>,
    #[serde(default)]
    pub scheme: Option<SchemeConfig>,
    #[serde(default)]
    pub terminal: TerminalMode,
}

impl GridDoc {
    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::from_specs(&self.axes)
    }

    pub fn scheme(&self) -> Result<SchemeConfig> {
        self.scheme.clone().ok_or_else(|| Error::config("grid document has no \"scheme\" section"))
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_json<T: for<'de> Deserialize<'de>>(ctx: &mut RunContext, path: &Path) -> Result<T> {
    let text = ctx.read_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::arg(format!("{}: {e}", path.display())))
}

pub fn load_problem(ctx: &mut RunContext, path: &Path) -> Result<(ProblemSpec, ControlProblem)> {
    let spec: ProblemSpec = load_json(ctx, path)?;
    let problem = spec.build()?;
    Ok((spec, problem))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyDoc {
    Constant { u: Vec<f64> },
    /// CSV with columns `t, x1[, x2], u1[, u2]` on a full space-time lattice.
    Table { csv: PathBuf },
    /// Argmax table of a solver CSV.
    FromSolution { csv: PathBuf },
    /// Optimal constant proportion of the closed-form problem.
    Merton { params: MertonParams },
}

impl PolicyDoc {
    /// Rewrites file references against `base`.
    pub fn rebase(&mut self, base: &Path) {
        match self {
            PolicyDoc::Table { csv } | PolicyDoc::FromSolution { csv } => *csv = absolute(&resolve(base, csv)),
            _ => {}
        }
    }

    pub fn load(&self, ctx: &mut RunContext) -> Result<FeedbackPolicy> {
        match self {
            PolicyDoc::Constant { u } => Ok(FeedbackPolicy::constant(u.clone())),
            PolicyDoc::Merton { params } => {
                params.validate()?;
                Ok(params.policy())
            }
            PolicyDoc::FromSolution { csv } => {
                let bytes = ctx.read(csv)?;
                extract_policy(&SpaceTimeSolution::read_csv(bytes.as_slice())?)
            }
            PolicyDoc::Table { csv } => {
                let bytes = ctx.read(csv)?;
                Ok(FeedbackPolicy::table(read_policy_table(&bytes)?, format!("table {}", csv.display())))
            }
        }
    }
}

pub fn load_policy(ctx: &mut RunContext, path: &Path) -> Result<FeedbackPolicy> {
    let mut doc: PolicyDoc = load_json(ctx, path)?;
    doc.rebase(&parent(path));
    doc.load(ctx)
}

fn read_policy_table(bytes: &[u8]) -> Result<PolicyTable> {
    let mut rd = csv::Reader::from_reader(bytes);
    let header = rd.headers()?.clone();
    let d = header.iter().filter(|h| h.starts_with('x')).count();
    let k = header.iter().filter(|h| h.starts_with('u')).count();
    if d == 0 || k == 0 || header.get(0) != Some("t") || header.len() != 1 + d + k {
        return Err(Error::arg("policy table CSV needs columns t, x.., u.."));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::arg(format!("bad number in policy table: {e}")))?);
    }
    let sorted_unique = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    };
    let times = sorted_unique(rows.iter().map(|r| r[0]).collect());
    let axes: Vec<Vec<f64>> = (0..d).map(|c| sorted_unique(rows.iter().map(|r| r[1 + c]).collect())).collect();
    let grid = SpatialGrid::new(axes)?;
    if rows.len() != times.len() * grid.len() {
        return Err(Error::arg("policy table is not a full space-time lattice"));
    }
    let mut controls = vec![vec![f64::NAN; grid.len() * k]; times.len()];
    for r in &rows {
        let n = times.partition_point(|&s| s < r[0]);
        let idx: Vec<usize> = (0..d).map(|c| grid.axis(c).partition_point(|&a| a < r[1 + c])).collect();
        let flat = grid.flat_index(&idx);
        controls[n][flat * k..(flat + 1) * k].copy_from_slice(&r[1 + d..]);
    }
    if controls.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::arg("policy table has missing entries"));
    }
    PolicyTable::new(grid, times, controls, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateDoc {
    Constant {
        value: f64,
        #[serde(default)]
        policy: Option<PolicyDoc>,
    },
    /// A named closed-form family; `merton` is `x^p exp((Λ_B + δ)(T − t))`.
    ClosedForm {
        family: String,
        params: MertonParams,
        #[serde(default)]
        delta: f64,
    },
    /// Time-independent values from a grid CSV (`x.., value`).
    GridTable {
        csv: PathBuf,
        #[serde(default)]
        growth_constant: Option<f64>,
        #[serde(default)]
        policy: Option<PolicyDoc>,
    },
    /// Interpolated solver values before `T`, `g` at `T`; the default
    /// companion is the solution's argmax policy.
    FromSolution {
        csv: PathBuf,
        #[serde(default)]
        growth_constant: Option<f64>,
        #[serde(default)]
        policy: Option<PolicyDoc>,
    },
    Max {
        of: Vec<CandidateDoc>,
    },
    Min {
        of: Vec<CandidateDoc>,
    },
}

impl CandidateDoc {
    pub fn rebase(&mut self, base: &Path) {
        match self {
            CandidateDoc::Constant { policy, .. } => {
                if let Some(p) = policy {
                    p.rebase(base)
                }
            }
            CandidateDoc::ClosedForm { .. } => {}
            CandidateDoc::GridTable { csv, policy, .. } | CandidateDoc::FromSolution { csv, policy, .. } => {
                *csv = absolute(&resolve(base, csv));
                if let Some(p) = policy {
                    p.rebase(base)
                }
            }
            CandidateDoc::Max { of } | CandidateDoc::Min { of } => of.iter_mut().for_each(|c| c.rebase(base)),
        }
    }

    pub fn load(&self, ctx: &mut RunContext, problem: &ControlProblem, kind: CandidateKind) -> Result<CandidateFunction> {
        let with_policy = |w: CandidateFunction, policy: Option<FeedbackPolicy>| match (kind, policy) {
            (CandidateKind::Sub, Some(p)) => w.with_policy(p),
            _ => w,
        };
        match self {
            CandidateDoc::Constant { value, policy } => {
                let p = policy.as_ref().map(|p| p.load(ctx)).transpose()?;
                Ok(with_policy(CandidateFunction::constant(kind, *value), p))
            }
            CandidateDoc::ClosedForm { family, params, delta } => {
                if family != "merton" {
                    return Err(Error::arg(format!("unknown closed-form family '{family}'")));
                }
                params.validate()?;
                Ok(params.candidate(kind, *delta))
            }
            CandidateDoc::GridTable { csv, growth_constant, policy } => {
                let bytes = ctx.read(csv)?;
                let g = GridFunction::read_csv(bytes.as_slice())?;
                let c = growth_constant.unwrap_or_else(|| fitted_growth(problem, &g.grid, |x| g.interpolate(x)));
                let label = format!("grid table {}", csv.display());
                let w = CandidateFunction::new(kind, c, label, move |_, x| g.interpolate(x));
                let p = policy.as_ref().map(|p| p.load(ctx)).transpose()?;
                Ok(with_policy(w, p))
            }
            CandidateDoc::FromSolution { csv, growth_constant, policy } => {
                let bytes = ctx.read(csv)?;
                let sol = Arc::new(SpaceTimeSolution::read_csv(bytes.as_slice())?);
                let p = match policy {
                    Some(p) => p.load(ctx)?,
                    None => extract_policy(&sol)?,
                };
                Ok(with_policy(solution_candidate(problem, sol, kind, format!("solution {}", csv.display()), *growth_constant), Some(p)))
            }
            CandidateDoc::Max { of } | CandidateDoc::Min { of } => {
                let mut members = of.iter().map(|c| c.load(ctx, problem, kind).map(Arc::new));
                let first = members.next().ok_or_else(|| Error::arg("lattice candidate needs members"))??;
                let mut acc = first;
                for m in members {
                    let m = m?;
                    acc = Arc::new(match self {
                        CandidateDoc::Max { .. } => lattice_max(acc, m)?,
                        _ => lattice_min(acc, m)?,
                    });
                }
                Ok(Arc::try_unwrap(acc).unwrap_or_else(|a| (*a).clone()))
            }
        }
    }
}

/// Smallest `C` with `|w| ≤ C ψ` on the grid nodes, padded by 1e-9.
fn fitted_growth(problem: &ControlProblem, grid: &SpatialGrid, w: impl Fn(&[f64]) -> f64) -> f64 {
    grid.points().map(|x| w(&x).abs() / problem.gauge.eval(&x)).fold(0.0_f64, f64::max) * (1.0 + 1e-9)
}

/// Solver values as a candidate: interpolated slices before `T` and the
/// payoff at `T`.
pub fn solution_candidate(
    problem: &ControlProblem,
    sol: Arc<SpaceTimeSolution>,
    kind: CandidateKind,
    label: String,
    growth_constant: Option<f64>,
) -> CandidateFunction {
    let horizon = sol.horizon();
    let c = growth_constant.unwrap_or_else(|| {
        sol.times
            .iter()
            .map(|&t| fitted_growth(problem, &sol.grid, |x| sol.value(t, x)))
            .fold(0.0_f64, f64::max)
            .max(problem.growth_constant)
    });
    let payoff = problem.payoff.clone();
    CandidateFunction::new(kind, c, label, move |t, x| if t >= horizon { payoff.eval(x) } else { sol.value(t, x) })
}

pub fn candidate_from_file(
    ctx: &mut RunContext,
    path: &Path,
    problem: &ControlProblem,
    kind: CandidateKind,
) -> Result<(CandidateDoc, CandidateFunction)> {
    let mut doc: CandidateDoc = load_json(ctx, path)?;
    doc.rebase(&parent(path));
    let w = doc.load(ctx, problem, kind)?;
    Ok((doc, w))
}

/// `lo:hi` per dimension, comma separated.
pub fn parse_box(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|part| {
            let (a, b) = part.split_once(':').ok_or_else(|| Error::arg(format!("expected lo:hi, got '{part}'")))?;
            let lo = a.trim().parse::<f64>().map_err(|e| Error::arg(format!("box bound '{a}': {e}")))?;
            let hi = b.trim().parse::<f64>().map_err(|e| Error::arg(format!("box bound '{b}': {e}")))?;
            Ok((lo, hi))
        })
        .collect()
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Error::arg(format!("number '{v}': {e}"))))
        .collect()
}

/// Points CSV: header `t, x1[, x2]`, one point per row.
pub fn read_points(bytes: &[u8]) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut rd = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::arg(format!("bad number in points CSV: {e}")))?;
        if row.len() < 2 {
            return Err(Error::arg("points CSV rows need t and at least one coordinate"));
        }
        out.push((row[0], row[1..].to_vec()));
    }
    if out.is_empty() {
        return Err(Error::arg("points CSV is empty"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_box("0.5:2, -1:1").unwrap(), vec![(0.5, 2.0), (-1.0, 1.0)]);
        assert!(parse_box("0.5-2").is_err());
        assert_eq!(parse_list("0,1.5").unwrap(), vec![0.0, 1.5]);
        assert!(parse_list("a").is_err());
        let pts = read_points(b"t,x1\n0,1\n0.5,1.5\n").unwrap();
        assert_eq!(pts, vec![(0.0, vec![1.0]), (0.5, vec![1.5])]);
        assert!(read_points(b"t,x1\n").is_err());
    }

    #[test]
    fn policy_table_csv() {
        let t = read_policy_table(b"t,x1,u1\n0,0,1\n0,1,2\n0,2,3\n0.5,0,4\n0.5,1,5\n0.5,2,6\n").unwrap();
        let p = FeedbackPolicy::table(t, "t");
        let mut u = [0.0];
        p.control(0.7, &[0.9], &mut u);
        assert_eq!(u[0], 5.0);
        assert_eq!(p.bound, 6.0);
        assert!(read_policy_table(b"t,x1,u1\n0,0,1\n0,1,2\n0,2,3\n0.5,0,4\n").is_err());
    }

    #[test]
    fn candidate_docs_deserialize() {
        let c: CandidateDoc = serde_json::from_str(
            r#"{"kind": "max", "of": [
                {"kind": "closed_form", "family": "merton",
                 "params": {"mu": 0.1, "sigma": 0.2, "p": 0.5, "horizon": 1, "bound": 10}},
                {"kind": "constant", "value": 0.5, "policy": {"kind": "constant", "u": [0]}}]}"#,
        )
        .unwrap();
        let mut ctx = RunContext::new(std::env::temp_dir(), "t", serde_json::Value::Null, 0, None);
        let m = MertonParams::new(0.1, 0.2, 0.5, 1.0, 10.0).unwrap();
        let w = c.load(&mut ctx, &m.problem().unwrap(), CandidateKind::Sub).unwrap();
        assert_eq!(w.value(1.0, &[4.0]), 2.0);
        assert_eq!(w.value(1.0, &[0.01]), 0.5);
        assert!(c.load(&mut ctx, &m.problem().unwrap(), CandidateKind::Super).is_err());
    }
}
