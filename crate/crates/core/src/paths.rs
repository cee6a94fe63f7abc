//! Reproducible discretized Brownian paths with bridge refinement.
//!
//! Increments come from streams keyed by `(master_seed, path_index, level)`,
//! so distinct paths can be generated concurrently, in any order, with
//! bit-identical results. Refinement halves the step and fills midpoints by
//! the Brownian-bridge rule from the next level's stream, leaving the coarse
//! nodes untouched; a single noise realization can therefore be observed at
//! several resolutions consistently.

use crate::error::{Result, StlError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

/// Uniform time grid `t_k = k T / N` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(StlError::Config(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 1 {
            return Err(StlError::Config("time grid needs at least one step".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    /// Index of the node equal to `t` (within rounding), if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt()).round();
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.node(k) - t).abs() <= 1e-9 * self.horizon.max(1.0)).then_some(k)
    }

    fn refined(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            steps: self.steps * 2,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 32-byte ChaCha seed derived from the (seed, path index, level) key.
fn stream_seed(master_seed: u64, path_index: u64, level: u32) -> [u8; 32] {
    let mut state = master_seed
        ^ path_index.wrapping_mul(0xa076_1d64_78bd_642f)
        ^ (level as u64).wrapping_mul(0xe703_7ed1_a0b4_28db);
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// One discretized d-dimensional Brownian trajectory, `B_0 = 0`.
#[derive(Clone, Debug)]
pub struct BrownianPath {
    dim: usize,
    grid: TimeGrid,
    /// Node values, flat layout `values[k * dim + i]`.
    values: Vec<f64>,
    master_seed: u64,
    path_index: u64,
    /// Refinement level: 0 for the originally sampled grid.
    level: u32,
    /// True for the identically-zero path used in noise-off runs.
    deterministic: bool,
}

impl BrownianPath {
    /// Draws a fresh path: independent `N(0, dt)` increments per coordinate.
    pub fn sample(master_seed: u64, path_index: u64, grid: TimeGrid, dim: usize) -> Result<Self> {
        if dim < 1 {
            return Err(StlError::Config("path dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::from_seed(stream_seed(master_seed, path_index, 0));
        let sd = grid.dt().sqrt();
        let mut values = vec![0.0; grid.len() * dim];
        for k in 1..grid.len() {
            for i in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                values[k * dim + i] = values[(k - 1) * dim + i] + sd * z;
            }
        }
        Ok(BrownianPath {
            dim,
            grid,
            values,
            master_seed,
            path_index,
            level: 0,
            deterministic: false,
        })
    }

    /// The identically-zero path on `grid` (noise switched off).
    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        BrownianPath {
            dim,
            grid,
            values: vec![0.0; grid.len() * dim],
            master_seed: 0,
            path_index: 0,
            level: 0,
            deterministic: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Value `B_{t_k}` as a coordinate slice.
    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Increment `B_{t_{k+1}} - B_{t_k}` for coordinate `i`.
    pub fn increment(&self, k: usize, i: usize) -> f64 {
        self.values[(k + 1) * self.dim + i] - self.values[k * self.dim + i]
    }

    /// Largest node max-norm along the path (used for box inflation).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Brownian-bridge refinement onto the grid with `2N` steps.
    ///
    /// Coarse nodes are copied exactly; each midpoint is the endpoint mean
    /// plus centered Gaussian noise of variance `dt/4`, drawn from the stream
    /// keyed by `(master_seed, path_index, level + 1)`.
    pub fn refine(&self) -> BrownianPath {
        let fine_grid = self.grid.refined();
        let mut values = vec![0.0; fine_grid.len() * self.dim];
        let mut rng = ChaCha8Rng::from_seed(stream_seed(
            self.master_seed,
            self.path_index,
            self.level + 1,
        ));
        let bridge_sd = (self.grid.dt() / 4.0).sqrt();
        for k in 0..self.grid.len() {
            for i in 0..self.dim {
                values[(2 * k) * self.dim + i] = self.values[k * self.dim + i];
            }
        }
        for k in 0..self.grid.steps() {
            for i in 0..self.dim {
                let mean = 0.5 * (self.values[k * self.dim + i] + self.values[(k + 1) * self.dim + i]);
                let noise = if self.deterministic {
                    0.0
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    bridge_sd * z
                };
                values[(2 * k + 1) * self.dim + i] = mean + noise;
            }
        }
        BrownianPath {
            dim: self.dim,
            grid: fine_grid,
            values,
            master_seed: self.master_seed,
            path_index: self.path_index,
            level: self.level + 1,
            deterministic: self.deterministic,
        }
    }

    /// CSV dump with columns `t, B1..Bd`, one row per node.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push('t');
        for i in 0..self.dim {
            out.push_str(&format!(",B{}", i + 1));
        }
        out.push('\n');
        for k in 0..self.grid.len() {
            out.push_str(&crate::csv::fmt(self.grid.node(k)));
            for i in 0..self.dim {
                out.push(',');
                out.push_str(&crate::csv::fmt(self.values[k * self.dim + i]));
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}
