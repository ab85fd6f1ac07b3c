//! Finite-difference stencils for the controlled generator
//! `L^u v = b·Dv + ½ Tr(σσᵀ D²v)`, stored as weights on `v_j - v_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpatialGrid};
use crate::problem::ControlProblem;

const MAX_NEIGHBOURS: usize = 8;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    len: u8,
    idx: [u32; MAX_NEIGHBOURS],
    w: [f64; MAX_NEIGHBOURS],
}

impl Default for Stencil {
    fn default() -> Self {
        Self { len: 0, idx: [0; MAX_NEIGHBOURS], w: [0.0; MAX_NEIGHBOURS] }
    }
}

impl Stencil {
    fn add(&mut self, j: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        let j = j as u32;
        for k in 0..self.len as usize {
            if self.idx[k] == j {
                self.w[k] += w;
                return;
            }
        }
        let k = self.len as usize;
        self.idx[k] = j;
        self.w[k] = w;
        self.len += 1;
    }

    pub(crate) fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len as usize).map(move |k| (self.idx[k] as usize, self.w[k]))
    }

    /// `Σ w_j (v_j - v_i)`
    pub(crate) fn apply(&self, v: &[f64], i: usize) -> f64 {
        let vi = v[i];
        self.entries().map(|(j, w)| w * (v[j] - vi)).sum()
    }

    pub(crate) fn total(&self) -> f64 {
        self.entries().map(|(_, w)| w).sum()
    }

    pub(crate) fn is_monotone(&self) -> bool {
        self.entries().all(|(_, w)| w >= 0.0)
    }
}

/// Reusable buffers for coefficient evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    x: Vec<f64>,
    b: Vec<f64>,
    s: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(problem: &ControlProblem) -> Self {
        let d = problem.dim();
        Self { x: vec![0.0; d], b: vec![0.0; d], s: vec![0.0; d * problem.noise_dim()] }
    }
}

/// Drift and `a = σσᵀ` at node `i` under control `u`.
fn coefficients(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    t: f64,
    i: usize,
    u: &[f64],
    scratch: &mut Scratch,
) -> ([f64; 2], [f64; 4]) {
    let d = grid.dim();
    let idx = grid.multi_index(i);
    for k in 0..d {
        scratch.x[k] = grid.axis(k)[idx[k]];
    }
    problem.dynamics.drift(t, &scratch.x, u, &mut scratch.b);
    problem.dynamics.diffusion(t, &scratch.x, u, &mut scratch.s);
    let dp = problem.noise_dim();
    let mut b = [0.0; 2];
    let mut a = [0.0; 4];
    b[..d].copy_from_slice(&scratch.b);
    for r in 0..d {
        for c in 0..d {
            a[r * d + c] = (0..dp).map(|l| scratch.s[r * dp + l] * scratch.s[c * dp + l]).sum();
        }
    }
    (b, a)
}

/// Upwinded drift, central diffusion and a Kushner-type cross term at an
/// interior node.
fn interior_stencil(grid: &SpatialGrid, i: usize, b: &[f64; 2], a: &[f64; 4], upwind: bool) -> Stencil {
    let d = grid.dim();
    let idx = grid.multi_index(i);
    let mut st = Stencil::default();
    for k in 0..d {
        let s = grid.stride(k);
        let (hm, hp) = grid.spacings(k, idx[k]);
        let akk = a[k * d + k];
        let mut wm = akk / (hm * (hm + hp));
        let mut wp = akk / (hp * (hm + hp));
        if upwind {
            if b[k] > 0.0 {
                wp += b[k] / hp;
            } else {
                wm -= b[k] / hm;
            }
        } else {
            wp += b[k] / (hm + hp);
            wm -= b[k] / (hm + hp);
        }
        st.add(i - s, wm);
        st.add(i + s, wp);
    }
    if d == 2 && a[1] != 0.0 {
        let (s0, s1) = (grid.stride(0), grid.stride(1));
        let (hm0, hp0) = grid.spacings(0, idx[0]);
        let (hm1, hp1) = grid.spacings(1, idx[1]);
        let c = a[1].abs() / (0.5 * (hm0 + hp0) * (hm1 + hp1));
        if a[1] > 0.0 {
            st.add(i + s0 + s1, c);
            st.add(i - s0 - s1, c);
        } else {
            st.add(i + s0 - s1, c);
            st.add(i - s0 + s1, c);
        }
        for j in [i - s0, i + s0, i - s1, i + s1] {
            st.add(j, -c);
        }
    }
    st
}

/// One-sided differences along every axis on which node `i` sits at an
/// edge; the cross term is dropped there. Not monotone in general.
fn edge_stencil(grid: &SpatialGrid, i: usize, b: &[f64; 2], a: &[f64; 4]) -> Stencil {
    let d = grid.dim();
    let idx = grid.multi_index(i);
    let mut st = Stencil::default();
    for k in 0..d {
        let s = grid.stride(k);
        let n = grid.axis(k).len();
        let akk = a[k * d + k];
        if idx[k] == 0 || idx[k] + 1 == n {
            let (j1, j2) = if idx[k] == 0 { (i + s, i + 2 * s) } else { (i - s, i - 2 * s) };
            let x = grid.axis(k);
            let (k1, k2) = if idx[k] == 0 { (1, 2) } else { (n - 2, n - 3) };
            let x0 = x[idx[k]];
            let (h1, h2) = (x[k1] - x0, x[k2] - x0);
            st.add(j1, b[k] / h1 - akk / (h1 * (h2 - h1)));
            st.add(j2, akk / (h2 * (h2 - h1)));
        } else {
            let (hm, hp) = grid.spacings(k, idx[k]);
            let mut wm = akk / (hm * (hm + hp));
            let mut wp = akk / (hp * (hm + hp));
            if b[k] > 0.0 {
                wp += b[k] / hp;
            } else {
                wm -= b[k] / hm;
            }
            st.add(i - s, wm);
            st.add(i + s, wp);
        }
    }
    st
}

pub(crate) fn node_stencil(
    problem: &ControlProblem,
    grid: &SpatialGrid,
    t: f64,
    i: usize,
    u: &[f64],
    upwind: bool,
    scratch: &mut Scratch,
) -> Stencil {
    let (b, a) = coefficients(problem, grid, t, i, u, scratch);
    if grid.is_boundary(i) {
        edge_stencil(grid, i, &b, &a)
    } else {
        interior_stencil(grid, i, &b, &a, upwind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    #[serde(skip)]
    pub values: Option<GridFunction>,
    /// Nodes on the edge of the box, evaluated with one-sided differences.
    pub one_sided_nodes: Vec<usize>,
    /// Nodes whose stencil has a negative neighbour weight.
    pub non_monotone_nodes: Vec<usize>,
}

impl GeneratorOutput {
    pub fn grid_function(&self) -> &GridFunction {
        self.values.as_ref().expect("generator output carries values")
    }
}

/// `L^u v` at every node for one fixed control.
pub fn discrete_generator(problem: &ControlProblem, u: &[f64], v: &GridFunction, t: f64) -> Result<GeneratorOutput> {
    if u.len() != problem.control_dim() {
        return Err(Error::arg("control has the wrong dimension"));
    }
    if !problem.controls.contains(u) {
        return Err(Error::arg(format!("control {u:?} is outside the control set")));
    }
    if v.grid.dim() != problem.dim() {
        return Err(Error::arg("grid dimension differs from the state dimension"));
    }
    let grid = &v.grid;
    let mut scratch = Scratch::new(problem);
    let mut out = vec![0.0; grid.len()];
    let mut one_sided = Vec::new();
    let mut non_monotone = Vec::new();
    for (i, o) in out.iter_mut().enumerate() {
        let st = node_stencil(problem, grid, t, i, u, true, &mut scratch);
        *o = st.apply(&v.values, i);
        if grid.is_boundary(i) {
            one_sided.push(i);
        }
        if !st.is_monotone() {
            non_monotone.push(i);
        }
    }
    Ok(GeneratorOutput {
        values: Some(GridFunction::new(grid.clone(), out)?),
        one_sided_nodes: one_sided,
        non_monotone_nodes: non_monotone,
    })
}
