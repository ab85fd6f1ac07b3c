//! Rectangular lattices in one or two space dimensions and the functions
//! sampled on them.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    /// Constant ratio between neighbours (uniform in `ln x`).
    Geometric,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    axes: Vec<Vec<f64>>,
    spacing: Vec<Spacing>,
}

fn uniform_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let d = hi - lo;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + d * i as f64 / (n - 1) as f64 })
        .collect()
}

fn geometric_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

impl SpatialGrid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        let spacing = vec![Spacing::Custom; axes.len()];
        Self::with_spacing(axes, spacing)
    }

    fn with_spacing(axes: Vec<Vec<f64>>, spacing: Vec<Spacing>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Unsupported(format!("grid dimension {} (supported: 1, 2)", axes.len())));
        }
        for a in &axes {
            if a.len() < 3 {
                return Err(Error::arg("grids need at least 3 nodes per dimension"));
            }
            if a.iter().any(|v| !v.is_finite()) || a.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::arg("grid nodes must be finite and strictly increasing"));
            }
        }
        Ok(Self { axes, spacing })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::from_specs(&[AxisSpec { lo, hi, nodes: n, spacing: Spacing::Uniform }])
    }

    pub fn geometric(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::from_specs(&[AxisSpec { lo, hi, nodes: n, spacing: Spacing::Geometric }])
    }

    pub fn from_specs(specs: &[AxisSpec]) -> Result<Self> {
        let mut axes = Vec::with_capacity(specs.len());
        for s in specs {
            if !(s.lo < s.hi) || s.nodes < 3 {
                return Err(Error::arg("axis needs lo < hi and at least 3 nodes"));
            }
            axes.push(match s.spacing {
                Spacing::Uniform | Spacing::Custom => uniform_nodes(s.lo, s.hi, s.nodes),
                Spacing::Geometric => {
                    if !(s.lo > 0.0) {
                        return Err(Error::arg("geometric axis needs a positive lower bound"));
                    }
                    geometric_nodes(s.lo, s.hi, s.nodes)
                }
            });
        }
        Self::with_spacing(axes, specs.iter().map(|s| s.spacing).collect())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn spacing(&self, k: usize) -> Spacing {
        self.spacing[k]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.axes.iter().map(|a| (a[0], a[a.len() - 1])).collect()
    }

    /// Stride of axis `k` in the flat (row-major, last axis fastest) layout.
    pub fn stride(&self, k: usize) -> usize {
        self.axes[k + 1..].iter().map(|a| a.len()).product()
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        match self.dim() {
            1 => [flat, 0],
            _ => {
                let n1 = self.axes[1].len();
                [flat / n1, flat % n1]
            }
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        match self.dim() {
            1 => idx[0],
            _ => idx[0] * self.axes[1].len() + idx[1],
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        (0..self.dim()).map(|k| self.axes[k][idx[k]]).collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        (0..self.dim()).any(|k| idx[k] == 0 || idx[k] + 1 == self.axes[k].len())
    }

    /// Nodes inside the box obtained by shrinking every axis about its centre
    /// to `fraction` of its width (in `ln x` for geometric axes).
    pub fn trust_region(&self, fraction: f64) -> Vec<(f64, f64)> {
        self.axes
            .iter()
            .zip(&self.spacing)
            .map(|(a, s)| {
                let (lo, hi) = (a[0], a[a.len() - 1]);
                match s {
                    Spacing::Geometric => {
                        let (l, h) = (lo.ln(), hi.ln());
                        let c = 0.5 * (l + h);
                        let r = 0.5 * fraction * (h - l);
                        ((c - r).exp(), (c + r).exp())
                    }
                    _ => {
                        let c = 0.5 * (lo + hi);
                        let r = 0.5 * fraction * (hi - lo);
                        (c - r, c + r)
                    }
                }
            })
            .collect()
    }

    pub fn in_region(&self, flat: usize, region: &[(f64, f64)]) -> bool {
        let p = self.point(flat);
        p.iter().zip(region).all(|(v, (a, b))| *v >= *a - 1e-12 && *v <= *b + 1e-12)
    }

    /// Inserts `factor - 1` nodes between neighbours; original nodes keep
    /// indices multiplied by `factor`.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::arg("refinement factor must be positive"));
        }
        let mut axes = Vec::with_capacity(self.dim());
        for (a, s) in self.axes.iter().zip(&self.spacing) {
            let n = (a.len() - 1) * factor + 1;
            let (lo, hi) = (a[0], a[a.len() - 1]);
            axes.push(match s {
                Spacing::Uniform => uniform_nodes(lo, hi, n),
                Spacing::Geometric => geometric_nodes(lo, hi, n),
                Spacing::Custom => {
                    let mut out = Vec::with_capacity(n);
                    for w in a.windows(2) {
                        for j in 0..factor {
                            out.push(w[0] + (w[1] - w[0]) * j as f64 / factor as f64);
                        }
                    }
                    out.push(hi);
                    out
                }
            });
        }
        Self::with_spacing(axes, self.spacing.clone())
    }

    /// Index of the nearest node on axis `k`, clamped to the grid.
    pub fn nearest(&self, k: usize, x: f64) -> usize {
        let a = &self.axes[k];
        let j = a.partition_point(|&v| v < x);
        if j == 0 {
            0
        } else if j >= a.len() {
            a.len() - 1
        } else if (x - a[j - 1]) <= (a[j] - x) {
            j - 1
        } else {
            j
        }
    }

    /// Neighbour spacings `(h⁻, h⁺)` at interior index `i` of axis `k`.
    pub fn spacings(&self, k: usize, i: usize) -> (f64, f64) {
        let a = &self.axes[k];
        (a[i] - a[i - 1], a[i + 1] - a[i])
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
    let i = (nodes.partition_point(|&v| v <= x) - 1).min(n - 2);
    (i, (x - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

/// A scalar function sampled at every node of a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::arg(format!(
                "grid has {} nodes but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("grid function values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &SpatialGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.points().map(|p| f(&p)).collect();
        Self::new(grid.clone(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multilinear interpolation, clamped to the grid box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        interpolate(&self.grid, &self.values, x)
    }

    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        self.sup_distance_on(other, None)
    }

    pub fn sup_distance_on(&self, other: &GridFunction, region: Option<&[(f64, f64)]>) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::arg("grid functions live on different grids"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .filter(|(i, _)| region.is_none_or(|r| self.grid.in_region(*i, r)))
            .fold(0.0_f64, |m, (_, (a, b))| m.max((a - b).abs())))
    }

    /// One row per node: coordinates, then the value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        wtr.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.grid.point(i).iter().map(|c| c.to_string()).collect();
            row.push(v.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let ncols = rdr.headers()?.len();
        if !(2..=3).contains(&ncols) {
            return Err(Error::arg("grid CSV needs 1 or 2 coordinate columns plus a value column"));
        }
        let d = ncols - 1;
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::arg(format!("bad number {s:?}: {e}"))))
                .collect::<Result<_>>()?;
            rows.push((nums[..d].to_vec(), nums[d]));
        }
        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); d];
        for (c, _) in &rows {
            for k in 0..d {
                axes[k].push(c[k]);
            }
        }
        for a in &mut axes {
            a.sort_by(|x, y| x.total_cmp(y));
            a.dedup();
        }
        let grid = SpatialGrid::new(axes)?;
        if rows.len() != grid.len() {
            return Err(Error::arg("grid CSV is not a full rectangular lattice"));
        }
        let mut values = vec![f64::NAN; grid.len()];
        for (c, v) in rows {
            let idx: Vec<usize> = (0..d)
                .map(|k| grid.axis(k).partition_point(|&a| a < c[k]))
                .collect();
            values[grid.flat_index(&idx)] = v;
        }
        Self::new(grid, values)
    }
}

pub(crate) fn interpolate(grid: &SpatialGrid, values: &[f64], x: &[f64]) -> f64 {
    match grid.dim() {
        1 => {
            let (i, f) = bracket(grid.axis(0), x[0]);
            (1.0 - f) * values[i] + f * values[i + 1]
        }
        _ => {
            let (i, fx) = bracket(grid.axis(0), x[0]);
            let (j, fy) = bracket(grid.axis(1), x[1]);
            let n1 = grid.axis(1).len();
            let v = |a: usize, b: usize| values[a * n1 + b];
            (1.0 - fx) * ((1.0 - fy) * v(i, j) + fy * v(i, j + 1))
                + fx * ((1.0 - fy) * v(i + 1, j) + fy * v(i + 1, j + 1))
        }
    }
}

/// Discrete gradient and Hessian at an interior node: three-point central
/// first differences (second order on non-uniform axes), central second
/// differences and a four-point cross difference.
pub(crate) fn interior_derivatives(grid: &SpatialGrid, values: &[f64], flat: usize, p: &mut [f64], m: &mut [f64]) {
    let d = grid.dim();
    let idx = grid.multi_index(flat);
    for k in 0..d {
        let s = grid.stride(k);
        let (hm, hp) = grid.spacings(k, idx[k]);
        let (vm, v0, vp) = (values[flat - s], values[flat], values[flat + s]);
        p[k] = (-hp / (hm * (hm + hp))) * vm + ((hp - hm) / (hm * hp)) * v0 + (hm / (hp * (hm + hp))) * vp;
        m[k * d + k] = 2.0 / (hm + hp) * ((vp - v0) / hp - (v0 - vm) / hm);
    }
    if d == 2 {
        let (s0, s1) = (grid.stride(0), grid.stride(1));
        let (hm0, hp0) = grid.spacings(0, idx[0]);
        let (hm1, hp1) = grid.spacings(1, idx[1]);
        let vxy = (values[flat + s0 + s1] - values[flat + s0 - s1] - values[flat - s0 + s1]
            + values[flat - s0 - s1])
            / ((hm0 + hp0) * (hm1 + hp1));
        m[1] = vxy;
        m[2] = vxy;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_axis_endpoints_and_ratio() {
        let g = SpatialGrid::geometric(0.2, 5.0, 5).unwrap();
        let a = g.axis(0);
        assert_eq!(a[0], 0.2);
        assert_eq!(a[4], 5.0);
        assert!((a[2] - 1.0).abs() < 1e-14);
        let r = a[1] / a[0];
        assert!((a[4] / a[3] - r).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_or_unsorted_axes() {
        assert!(SpatialGrid::new(vec![vec![0.0, 1.0]]).is_err());
        assert!(SpatialGrid::new(vec![vec![0.0, 2.0, 1.0]]).is_err());
        assert!(matches!(
            SpatialGrid::new(vec![vec![0.0, 1.0, 2.0]; 3]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn refine_keeps_coarse_nodes() {
        let g = SpatialGrid::uniform(-1.0, 1.0, 5).unwrap();
        let f = g.refine(4).unwrap();
        assert_eq!(f.axis(0).len(), 17);
        for (i, x) in g.axis(0).iter().enumerate() {
            assert!((f.axis(0)[4 * i] - x).abs() < 1e-15);
        }
        let geo = SpatialGrid::geometric(0.2, 5.0, 9).unwrap().refine(2).unwrap();
        assert_eq!(geo.spacing(0), Spacing::Geometric);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_functions() {
        let g = SpatialGrid::new(vec![vec![0.0, 0.5, 2.0], vec![-1.0, 0.0, 1.0, 3.0]]).unwrap();
        let f = GridFunction::from_fn(&g, |p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1]).unwrap();
        let v = f.interpolate(&[1.3, 0.4]);
        assert!((v - (1.0 + 2.6 - 0.4 + 0.5 * 1.3 * 0.4)).abs() < 1e-13);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = SpatialGrid::new(vec![vec![0.1, 0.7, 1.3], vec![-2.0, 0.3, 5.0]]).unwrap();
        let f = GridFunction::from_fn(&g, |p| (p[0] * 3.7).sin() / (1.0 + p[1] * p[1])).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(back.grid.axes(), f.grid.axes());
    }

    #[test]
    fn derivatives_exact_for_quadratics_on_nonuniform_axes() {
        let g = SpatialGrid::geometric(0.5, 4.0, 7).unwrap();
        let f = GridFunction::from_fn(&g, |p| 3.0 * p[0] * p[0] - p[0] + 2.0).unwrap();
        let (mut p, mut m) = ([0.0], [0.0]);
        for i in 1..6 {
            interior_derivatives(&g, &f.values, i, &mut p, &mut m);
            let x = g.axis(0)[i];
            assert!((p[0] - (6.0 * x - 1.0)).abs() < 1e-10);
            assert!((m[0] - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trust_region_in_log_coordinates() {
        let g = SpatialGrid::geometric(0.2, 5.0, 11).unwrap();
        let r = g.trust_region(0.6);
        assert!((r[0].0 * r[0].1 - 1.0).abs() < 1e-12);
        assert!((r[0].1 - 5f64.powf(0.6)).abs() < 1e-12);
    }
}
