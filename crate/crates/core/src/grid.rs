//! Uniform cell-centered spatial grids on axis-aligned boxes.
//!
//! All spatial sampling and midpoint quadrature in the crate runs over these
//! grids: nodes sit at cell centers, so summing `value * cell_volume` is the
//! midpoint rule over the box.

use crate::error::{Result, StlError};

/// Uniform cell-centered grid on the box `[center - half_width, center + half_width]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceGrid {
    dim: usize,
    center: Vec<f64>,
    half_width: f64,
    cells_per_axis: usize,
}

impl SpaceGrid {
    /// Grid centered at the origin with approximately the requested cell width.
    pub fn centered(dim: usize, half_width: f64, cell_width: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], half_width, cell_width)
    }

    pub fn new(center: Vec<f64>, half_width: f64, cell_width: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(StlError::Config("grid dimension must be positive".into()));
        }
        if !(half_width > 0.0) || !(cell_width > 0.0) {
            return Err(StlError::Config(format!(
                "grid needs positive half_width and cell_width, got {half_width}, {cell_width}"
            )));
        }
        let cells = (2.0 * half_width / cell_width).round().max(1.0) as usize;
        Ok(SpaceGrid {
            dim: center.len(),
            center,
            half_width,
            cells_per_axis: cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    /// Actual cell width (the requested width rounded so cells tile the box).
    pub fn cell_width(&self) -> f64 {
        2.0 * self.half_width / self.cells_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_width().powi(self.dim as i32)
    }

    /// Total number of grid nodes.
    pub fn len(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinates of node `idx` (row-major over axes, cell centers).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.point_into(idx, &mut out);
        out
    }

    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let h = self.cell_width();
        let mut rem = idx;
        for axis in (0..self.dim).rev() {
            let i = rem % self.cells_per_axis;
            rem /= self.cells_per_axis;
            out[axis] = self.center[axis] - self.half_width + (i as f64 + 0.5) * h;
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.center)
            .all(|(xi, ci)| (xi - ci).abs() <= self.half_width + 1e-12)
    }

    /// Multilinear interpolation of node values at an arbitrary point.
    ///
    /// Queries outside the box are clamped to the outermost cell centers,
    /// which keeps interpolation of constants exact everywhere.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        debug_assert_eq!(x.len(), self.dim);
        let h = self.cell_width();
        let n = self.cells_per_axis;
        // Per-axis lower node index and fraction.
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for axis in 0..self.dim {
            let lo = self.center[axis] - self.half_width;
            let s = (x[axis] - lo) / h - 0.5;
            let s = s.clamp(0.0, (n - 1) as f64);
            let i0 = (s.floor() as usize).min(n.saturating_sub(2));
            base[axis] = i0;
            frac[axis] = if n == 1 { 0.0 } else { s - i0 as f64 };
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for axis in 0..self.dim {
                let up = (corner >> axis) & 1 == 1;
                let i = base[axis] + up as usize;
                let i = i.min(n - 1);
                w *= if up { frac[axis] } else { 1.0 - frac[axis] };
                idx = idx * n + i;
            }
            // idx above is built axis-major in the same order as `point`.
            acc += w * values[idx];
        }
        acc
    }

    /// Midpoint-rule integral of `g` over the box.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let vol = self.cell_volume();
        let mut buf = vec![0.0; self.dim];
        let mut acc = 0.0;
        for i in 0..self.len() {
            self.point_into(i, &mut buf);
            acc += g(&buf);
        }
        acc * vol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_centers_are_symmetric() {
        let g = SpaceGrid::centered(1, 1.0, 0.25).unwrap();
        let pts: Vec<f64> = g.points().map(|p| p[0]).collect();
        assert_eq!(pts.len(), 8);
        for (a, b) in pts.iter().zip(pts.iter().rev()) {
            assert!((a + b).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = SpaceGrid::centered(2, 2.0, 0.1).unwrap();
        let vals: Vec<f64> = g.points().map(|p| 3.0 * p[0] - 0.5 * p[1] + 1.0).collect();
        for q in [[0.3, -1.2], [1.9, 1.9], [-0.05, 0.0]] {
            let got = g.interpolate(&vals, &q);
            let want = 3.0 * q[0] - 0.5 * q[1] + 1.0;
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn interpolation_of_constants_is_exact_everywhere() {
        let g = SpaceGrid::centered(1, 1.0, 0.125).unwrap();
        let vals = vec![4.2; g.len()];
        for q in [-5.0, -1.0, 0.33, 0.999, 7.0] {
            assert_eq!(g.interpolate(&vals, &[q]), 4.2);
        }
    }

    #[test]
    fn midpoint_integral_of_quadratic() {
        let g = SpaceGrid::centered(1, 1.0, 1.0 / 512.0).unwrap();
        let got = g.integrate(|x| x[0] * x[0]);
        assert!((got - 2.0 / 3.0).abs() < 1e-5);
    }
}
