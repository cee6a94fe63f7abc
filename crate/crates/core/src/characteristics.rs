//! The characteristic flow, its Jacobian and inverse, the reaction flow, and
//! the composed solution field.
//!
//! The flow solves `X_t = x + int_0^t b(s, X_s) ds + B_t` by Euler-Maruyama
//! with the exact Brownian increments of the shared path; additive noise makes
//! the scheme exact for zero or constant drift. The Jacobian solves the
//! variational equation along a trajectory, the inverse is found by damped
//! Newton (bisection fallback in d = 1), and the reaction flow integrates the
//! pathwise ODE for `Z` by classical Runge-Kutta.

use crate::error::{Result, StlError};
use crate::fields::{DriftField, InitialDatum, ReactionTerm, Smoothness, MAX_DIM};
use crate::grid::SpaceGrid;
use crate::paths::{BrownianPath, TimeGrid};
use nalgebra::DMatrix;

/// Sign convention for the reaction flow ODE.
///
/// The default integrates `dZ/ds = -F(s, X_s, Z_s)`, which is the convention
/// under which the composed field satisfies the weak form and the linear
/// closed forms (`F = lambda u` gives `e^{-lambda t}`). `PaperLiteral`
/// integrates `dZ/ds = +F` for side-by-side comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SignConvention {
    #[default]
    TransportConsistent,
    PaperLiteral,
}

impl SignConvention {
    pub fn factor(self) -> f64 {
        match self {
            SignConvention::TransportConsistent => -1.0,
            SignConvention::PaperLiteral => 1.0,
        }
    }
}

/// One characteristic trajectory `X_{t_k}(x)` on the path's time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    dim: usize,
    start: Vec<f64>,
    grid: TimeGrid,
    /// Flat node values, `values[k * dim + i]`.
    values: Vec<f64>,
    /// Identity of the driving noise: (master seed, path index).
    path_id: (u64, u64),
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn path_id(&self) -> (u64, u64) {
        self.path_id
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.grid.steps())
    }

    /// Piecewise-linear interpolation at an off-node time (RK stage times).
    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) {
        let dt = self.grid.dt();
        let s = (t / dt).clamp(0.0, self.grid.steps() as f64);
        let k = (s.floor() as usize).min(self.grid.steps().saturating_sub(1));
        let frac = s - k as f64;
        let a = self.node(k);
        let b = self.node(k + 1);
        for i in 0..self.dim {
            out[i] = a[i] + frac * (b[i] - a[i]);
        }
    }
}

/// Euler-Maruyama integration of the characteristic SDE up to node `k_end`.
fn integrate_flow_until(
    drift: &DriftField,
    path: &BrownianPath,
    x0: &[f64],
    k_end: usize,
) -> Result<Trajectory> {
    let d = drift.dim();
    if path.dim() != d {
        return Err(StlError::Config(format!(
            "path dimension {} does not match drift dimension {d}",
            path.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(StlError::Config(format!("non-finite start point {x0:?}")));
    }
    let grid = path.grid();
    let dt = grid.dt();
    // Always integrate at least one step so the trajectory grid is valid
    // even for queries at t = 0.
    let kk = k_end.max(1).min(grid.steps());
    let mut values = vec![0.0; (kk + 1) * d];
    values[..d].copy_from_slice(x0);
    let mut b = [0.0; MAX_DIM];
    for k in 0..kk {
        let t = grid.node(k);
        let (head, tail) = values.split_at_mut((k + 1) * d);
        let xk = &head[k * d..];
        drift.evaluate_into(t, xk, &mut b[..d])?;
        let bk = path.node(k);
        let bk1 = path.node(k + 1);
        for i in 0..d {
            tail[i] = xk[i] + b[i] * dt + (bk1[i] - bk[i]);
        }
    }
    Ok(Trajectory {
        dim: d,
        start: x0.to_vec(),
        grid: TimeGrid::new(grid.horizon() * kk as f64 / grid.steps() as f64, kk).unwrap_or(grid),
        values,
        path_id: (path.master_seed(), path.path_index()),
    })
}

/// Integrates the characteristic SDE over the whole path grid.
pub fn integrate_flow(drift: &DriftField, path: &BrownianPath, x0: &[f64]) -> Result<Trajectory> {
    integrate_flow_until(drift, path, x0, path.grid().steps())
}

/// Jacobian matrices and determinants of the flow along a trajectory.
#[derive(Clone, Debug)]
pub struct JacobianSeries {
    pub matrices: Vec<DMatrix<f64>>,
    pub determinants: Vec<f64>,
}

/// Solves the variational equation `D_{k+1} = (I + grad b(t_k, X_k) dt) D_k`.
///
/// `grad b` comes from the field's registered analytic gradient when present
/// (mollified fields), else central finite differences with step `h_jac`;
/// rough fields without a gradient are refused. A nonpositive determinant at
/// any node is reported as a degenerate flow.
pub fn integrate_jacobian(
    drift: &DriftField,
    traj: &Trajectory,
    h_jac: f64,
) -> Result<JacobianSeries> {
    if drift.smoothness() == Smoothness::Rough && !drift.has_gradient() {
        return Err(StlError::Config(
            "Jacobian of a rough drift is not defined at this resolution; mollify the drift".into(),
        ));
    }
    let d = traj.dim();
    let grid = traj.grid();
    let dt = grid.dt();
    let mut mats = Vec::with_capacity(grid.len());
    let mut dets = Vec::with_capacity(grid.len());
    let mut dmat = DMatrix::<f64>::identity(d, d);
    mats.push(dmat.clone());
    dets.push(1.0);
    let mut grad = vec![0.0; d * d];
    for k in 0..grid.steps() {
        let t = grid.node(k);
        drift.jacobian_into(t, traj.node(k), h_jac, &mut grad)?;
        let g = DMatrix::from_row_slice(d, d, &grad);
        let step = DMatrix::<f64>::identity(d, d) + g * dt;
        dmat = step * dmat;
        let det = dmat.determinant();
        if !(det > 0.0) {
            return Err(StlError::DegenerateFlow {
                t: grid.node(k + 1),
                det,
            });
        }
        mats.push(dmat.clone());
        dets.push(det);
    }
    Ok(JacobianSeries {
        matrices: mats,
        determinants: dets,
    })
}

/// Discretized flow over a grid of start points, with optional Jacobians.
pub struct FlowMap {
    drift: DriftField,
    path: BrownianPath,
    start_grid: SpaceGrid,
    trajectories: Vec<Trajectory>,
    jacobians: Option<Vec<JacobianSeries>>,
}

impl FlowMap {
    pub fn build(drift: &DriftField, path: &BrownianPath, start_grid: SpaceGrid) -> Result<Self> {
        let mut trajectories = Vec::with_capacity(start_grid.len());
        for x0 in start_grid.points() {
            trajectories.push(integrate_flow(drift, path, &x0)?);
        }
        Ok(FlowMap {
            drift: drift.clone(),
            path: path.clone(),
            start_grid,
            trajectories,
            jacobians: None,
        })
    }

    pub fn build_with_jacobians(
        drift: &DriftField,
        path: &BrownianPath,
        start_grid: SpaceGrid,
        h_jac: f64,
    ) -> Result<Self> {
        let mut flow = Self::build(drift, path, start_grid)?;
        let mut jacs = Vec::with_capacity(flow.trajectories.len());
        for traj in &flow.trajectories {
            jacs.push(integrate_jacobian(drift, traj, h_jac)?);
        }
        flow.jacobians = Some(jacs);
        Ok(flow)
    }

    pub fn drift(&self) -> &DriftField {
        &self.drift
    }

    pub fn path(&self) -> &BrownianPath {
        &self.path
    }

    pub fn start_grid(&self) -> &SpaceGrid {
        &self.start_grid
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn jacobians(&self) -> Option<&[JacobianSeries]> {
        self.jacobians.as_deref()
    }
}

/// Inversion tolerance: the accepted forward residual at the returned point.
pub fn inversion_tolerance(x: &[f64]) -> f64 {
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-8 * (1.0 + norm)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Finds `y` with `|X_t(y) - x| <= 1e-8 (1 + |x|)` by damped Newton on the
/// freshly integrated forward map, seeded at `y0 = x - B_t`; in d = 1 a
/// monotone bisection bracketed by the flow-map start points takes over if
/// Newton stalls.
pub fn invert_flow(flow: &FlowMap, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = flow.drift.dim();
    let grid = flow.path.grid();
    let k = grid.node_index(t).ok_or_else(|| {
        StlError::Config(format!("inversion time {t} is not a node of the path grid"))
    })?;
    let tol = inversion_tolerance(x);
    let bt = flow.path.node(k);
    let mut y: Vec<f64> = x.iter().zip(bt).map(|(xi, bi)| xi - bi).collect();

    let forward = |y: &[f64]| -> Result<(Trajectory, Vec<f64>)> {
        let traj = integrate_flow_until(&flow.drift, &flow.path, y, k)?;
        let res: Vec<f64> = traj.node(k).iter().zip(x).map(|(a, b)| a - b).collect();
        Ok((traj, res))
    };

    let (mut traj, mut res) = forward(&y)?;
    let mut best_res = norm(&res);
    let h_fd = 1e-6;
    for _ in 0..100 {
        if best_res <= tol {
            return Ok(y);
        }
        // Jacobian of the forward map at y.
        let jac = if flow.drift.has_gradient() {
            match integrate_jacobian(&flow.drift, &traj, 1e-5) {
                Ok(series) => series.matrices[k.min(series.matrices.len() - 1)].clone(),
                Err(_) => fd_flow_jacobian(flow, k, &y, h_fd)?,
            }
        } else {
            fd_flow_jacobian(flow, k, &y, h_fd)?
        };
        let rhs = nalgebra::DVector::from_column_slice(&res);
        let step = match jac.lu().solve(&rhs) {
            Some(s) => s,
            None => break,
        };
        // Backtracking line search on the residual norm.
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..25 {
            let cand: Vec<f64> = y.iter().zip(step.iter()).map(|(yi, si)| yi - lambda * si).collect();
            if let Ok((ct, cr)) = forward(&cand) {
                let cn = norm(&cr);
                if cn < best_res {
                    y = cand;
                    traj = ct;
                    res = cr;
                    best_res = cn;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if best_res <= tol {
        return Ok(y);
    }
    if d == 1 {
        if let Some(yb) = bisect_1d(flow, k, x[0], tol)? {
            return Ok(yb);
        }
    }
    Err(StlError::InversionFailure {
        t,
        point: x.to_vec(),
        residual: best_res,
    })
}

/// Central-difference Jacobian of the forward flow map `y -> X_{t_k}(y)`.
fn fd_flow_jacobian(flow: &FlowMap, k: usize, y: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let d = y.len();
    let mut jac = DMatrix::<f64>::zeros(d, d);
    let mut yp = y.to_vec();
    for j in 0..d {
        let step = h * (1.0 + y[j].abs());
        yp.copy_from_slice(y);
        yp[j] = y[j] + step;
        let fp = integrate_flow_until(&flow.drift, &flow.path, &yp, k)?;
        yp[j] = y[j] - step;
        let fm = integrate_flow_until(&flow.drift, &flow.path, &yp, k)?;
        for i in 0..d {
            jac[(i, j)] = (fp.node(k)[i] - fm.node(k)[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Monotone bisection in d = 1, bracketed by the flow-map start points.
fn bisect_1d(flow: &FlowMap, k: usize, x: f64, tol: f64) -> Result<Option<Vec<f64>>> {
    let ends: Vec<(f64, f64)> = flow
        .trajectories
        .iter()
        .map(|tr| (tr.start()[0], tr.node(k)[0]))
        .collect();
    let mut bracket = None;
    for w in ends.windows(2) {
        let (y0, f0) = w[0];
        let (y1, f1) = w[1];
        if (f0 - x) * (f1 - x) <= 0.0 {
            // Keep the invariant f(lo) <= x <= f(hi).
            bracket = if f0 <= x { Some((y0, y1)) } else { Some((y1, y0)) };
            break;
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Ok(None);
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let traj = integrate_flow_until(&flow.drift, &flow.path, &[mid], k)?;
        let fm = traj.node(k)[0];
        if (fm - x).abs() <= tol {
            return Ok(Some(vec![mid]));
        }
        if fm < x {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(None)
}

/// The reaction flow `Z` along one trajectory.
#[derive(Clone, Debug)]
pub struct ReactionFlow {
    start_value: f64,
    values: Vec<f64>,
}

impl ReactionFlow {
    pub fn start_value(&self) -> f64 {
        self.start_value
    }

    pub fn node(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Integrates the reaction ODE along `traj` by classical 4-stage Runge-Kutta,
/// with the trajectory interpolated linearly at stage times.
pub fn integrate_reaction(
    reaction: &ReactionTerm,
    traj: &Trajectory,
    r: f64,
    sign: SignConvention,
) -> Result<ReactionFlow> {
    let grid = traj.grid();
    let dt = grid.dt();
    let sgn = sign.factor();
    let d = traj.dim();
    let mut xm = [0.0; MAX_DIM];
    let mut values = Vec::with_capacity(grid.len());
    let mut z = r;
    values.push(z);
    for k in 0..grid.steps() {
        let t = grid.node(k);
        let x0 = traj.node(k);
        let x1 = traj.node(k + 1);
        traj.interpolate_into(t + 0.5 * dt, &mut xm[..d]);
        let k1 = sgn * reaction.evaluate(t, x0, z)?;
        let k2 = sgn * reaction.evaluate(t + 0.5 * dt, &xm[..d], z + 0.5 * dt * k1)?;
        let k3 = sgn * reaction.evaluate(t + 0.5 * dt, &xm[..d], z + 0.5 * dt * k2)?;
        let k4 = sgn * reaction.evaluate(t + dt, x1, z + dt * k3)?;
        z += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        values.push(z);
    }
    Ok(ReactionFlow {
        start_value: r,
        values,
    })
}

/// `u(t, .)` sampled on a spatial grid for one noise realization.
#[derive(Clone, Debug)]
pub struct SolutionField {
    time: f64,
    grid: SpaceGrid,
    values: Vec<f64>,
    /// (master seed, path index) of the realization.
    realization: (u64, u64),
}

impl SolutionField {
    pub fn new(time: f64, grid: SpaceGrid, values: Vec<f64>, realization: (u64, u64)) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        SolutionField {
            time,
            grid,
            values,
            realization,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn realization(&self) -> (u64, u64) {
        self.realization
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation of the field at an arbitrary point.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    /// CSV dump with columns `x1..xd, u`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let d = self.grid.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("u".into());
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut rows = Vec::with_capacity(self.grid.len());
        for (i, p) in self.grid.points().enumerate() {
            let mut row: Vec<String> = p.iter().map(|v| crate::csv::fmt(*v)).collect();
            row.push(crate::csv::fmt(self.values[i]));
            rows.push(row);
        }
        crate::csv::write_table(path, &header_refs, &rows)
    }
}

/// Start-grid half-width guaranteeing that inversions over the observation
/// box stay bracketed: observation half-width inflated by the drift range,
/// the path range, and a unit margin.
pub fn inflated_half_width(obs: &SpaceGrid, drift: &DriftField, path: &BrownianPath) -> f64 {
    obs.half_width() + drift.sup_bound() * path.grid().horizon() + path.max_abs() + 1.0
}

/// Composes the solution field `u(t, x) = Z_t(y, f(y))`, `y = X_t^{-1}(x)`,
/// over the observation grid.
pub fn solve_field(
    drift: &DriftField,
    reaction: &ReactionTerm,
    datum: &InitialDatum,
    path: &BrownianPath,
    t: f64,
    obs_grid: &SpaceGrid,
    sign: SignConvention,
) -> Result<SolutionField> {
    let k = path
        .grid()
        .node_index(t)
        .ok_or_else(|| StlError::Config(format!("observation time {t} is not a grid node")))?;
    let d = drift.dim();
    let hw = inflated_half_width(obs_grid, drift, path);
    // Bracketing start grid; coarse in d > 1 where only Newton is used.
    let starts = if d == 1 {
        SpaceGrid::centered(1, hw, hw / 32.0)?
    } else {
        SpaceGrid::centered(d, hw, hw)?
    };
    let flow = FlowMap::build(drift, path, starts)?;
    let mut values = Vec::with_capacity(obs_grid.len());
    for x in obs_grid.points() {
        let y = invert_flow(&flow, t, &x).map_err(|e| match e {
            StlError::InversionFailure { t, residual, .. } => StlError::InversionFailure {
                t,
                point: x.clone(),
                residual,
            },
            other => other,
        })?;
        let traj = integrate_flow_until(drift, path, &y, k)?;
        let z = integrate_reaction(reaction, &traj, datum.evaluate(&y), sign)?;
        values.push(z.node(k));
    }
    Ok(SolutionField::new(
        t,
        obs_grid.clone(),
        values,
        (path.master_seed(), path.path_index()),
    ))
}

/// Solution fields at every node of the path grid (d = 1 only).
///
/// Instead of inverting per query point and time, this integrates forward
/// characteristics and reaction flows from a fine start grid once, then uses
/// the monotone ordering of the d = 1 flow to interpolate `u(t_k, .)` onto
/// the observation grid. Used by residual and decay experiments that need the
/// full time series.
pub fn solve_field_series(
    drift: &DriftField,
    reaction: &ReactionTerm,
    datum: &InitialDatum,
    path: &BrownianPath,
    obs_grid: &SpaceGrid,
    sign: SignConvention,
) -> Result<Vec<SolutionField>> {
    if drift.dim() != 1 {
        return Err(StlError::Config(
            "solve_field_series supports d = 1 only; use solve_field per time".into(),
        ));
    }
    let hw = inflated_half_width(obs_grid, drift, path);
    let start_cell = obs_grid.cell_width() * 0.5;
    let starts = SpaceGrid::centered(1, hw, start_cell)?;
    let n_starts = starts.len();
    let grid = path.grid();

    let mut trajs = Vec::with_capacity(n_starts);
    let mut zflows = Vec::with_capacity(n_starts);
    for y in starts.points() {
        let traj = integrate_flow(drift, path, &y)?;
        let z = integrate_reaction(reaction, &traj, datum.evaluate(&y), sign)?;
        trajs.push(traj);
        zflows.push(z);
    }

    let mut fields = Vec::with_capacity(grid.len());
    let mut xs = vec![0.0; n_starts];
    for k in 0..grid.len() {
        for (i, traj) in trajs.iter().enumerate() {
            xs[i] = traj.node(k)[0];
        }
        let mut values = Vec::with_capacity(obs_grid.len());
        for q in obs_grid.points() {
            let x = q[0];
            if x < xs[0] || x > xs[n_starts - 1] {
                return Err(StlError::Coverage(format!(
                    "observation point {x} left the transported start range [{}, {}]",
                    xs[0],
                    xs[n_starts - 1]
                )));
            }
            // xs is increasing for monotone 1d flows; binary search the cell.
            let j = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
                Ok(j) => j.min(n_starts - 2),
                Err(j) => j.saturating_sub(1).min(n_starts - 2),
            };
            let (x0, x1) = (xs[j], xs[j + 1]);
            let (z0, z1) = (zflows[j].node(k), zflows[j + 1].node(k));
            let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 };
            values.push(z0 + w * (z1 - z0));
        }
        fields.push(SolutionField::new(
            grid.node(k),
            obs_grid.clone(),
            values,
            (path.master_seed(), path.path_index()),
        ));
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{mollify_drift, DivergenceMode, MollifierKernel};
    use std::sync::Arc;

    fn zero_drift(dim: usize) -> DriftField {
        DriftField::new(
            dim,
            Arc::new(|_t, _x, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            Some(Arc::new(|_t, _x, out: &mut [f64]| {
                out.iter_mut().for_each(|v| *v = 0.0)
            })),
            0.5,
            0.0,
            0.0,
            DivergenceMode::Analytic(Arc::new(|_, _| 0.0)),
            3.0,
            Smoothness::Smooth,
        )
        .unwrap()
    }

    fn constant_drift(dim: usize, c: Vec<f64>) -> DriftField {
        let sup = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        DriftField::new(
            dim,
            Arc::new(move |_t, _x, out: &mut [f64]| out.copy_from_slice(&c)),
            Some(Arc::new(|_t, _x, out: &mut [f64]| {
                out.iter_mut().for_each(|v| *v = 0.0)
            })),
            0.5,
            sup,
            0.0,
            DivergenceMode::Analytic(Arc::new(|_, _| 0.0)),
            3.0,
            Smoothness::Smooth,
        )
        .unwrap()
    }

    fn sine_drift() -> DriftField {
        DriftField::new(
            1,
            Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0].sin()),
            Some(Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0].cos())),
            1.0,
            1.0,
            1.0,
            DivergenceMode::Analytic(Arc::new(|_t, x: &[f64]| x[0].cos())),
            3.0,
            Smoothness::Smooth,
        )
        .unwrap()
    }

    fn linear_drift(c: f64) -> DriftField {
        DriftField::new(
            1,
            Arc::new(move |_t, x: &[f64], out: &mut [f64]| out[0] = c * x[0]),
            Some(Arc::new(move |_t, _x, out: &mut [f64]| out[0] = c)),
            1.0,
            100.0,
            c.abs(),
            DivergenceMode::Analytic(Arc::new(move |_, _| c)),
            3.0,
            Smoothness::Smooth,
        )
        .unwrap()
    }

    fn holder_drift(alpha: f64) -> DriftField {
        DriftField::new(
            1,
            Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                out[0] = x[0].signum() * x[0].abs().min(1.0).powf(alpha);
            }),
            None,
            alpha,
            1.0,
            2f64.powf(1.0 - alpha) * 1.001,
            DivergenceMode::Analytic(Arc::new(move |_t, x: &[f64]| {
                if x[0].abs() >= 1.0 {
                    0.0
                } else {
                    alpha * x[0].abs().powf(alpha - 1.0)
                }
            })),
            2.4,
            Smoothness::Rough,
        )
        .unwrap()
    }

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn zero_drift_flow_is_translation_by_noise() {
        let b = zero_drift(2);
        let p = BrownianPath::sample(1, 0, grid(1.0, 128), 2).unwrap();
        let traj = integrate_flow(&b, &p, &[0.3, -0.8]).unwrap();
        for k in 0..=128 {
            let bk = p.node(k);
            let got = traj.node(k);
            for (g, w) in got.iter().zip([0.3 + bk[0], -0.8 + bk[1]]) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn constant_drift_flow_is_exact() {
        let b = constant_drift(1, vec![0.5]);
        let p = BrownianPath::sample(2, 1, grid(2.0, 64), 1).unwrap();
        let traj = integrate_flow(&b, &p, &[1.0]).unwrap();
        for k in 0..=64 {
            let t = p.grid().node(k);
            let want = 1.0 + 0.5 * t + p.node(k)[0];
            assert!((traj.node(k)[0] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn euler_flow_converges_under_path_refinement() {
        // Self-refinement oracle: N = 2^12 vs a 2^16 reference on the same
        // bridge-coupled noise.
        let b = sine_drift();
        let coarse = BrownianPath::sample(7, 3, grid(1.0, 1 << 12), 1).unwrap();
        let mut fine = coarse.clone();
        for _ in 0..4 {
            fine = fine.refine();
        }
        let xc = integrate_flow(&b, &coarse, &[0.4]).unwrap();
        let xf = integrate_flow(&b, &fine, &[0.4]).unwrap();
        let err = (xc.last()[0] - xf.last()[0]).abs();
        assert!(err < 1e-3, "err = {err}");
    }

    #[test]
    fn drift_speed_bound_holds_along_trajectories() {
        let b = holder_drift(0.6);
        let p = BrownianPath::sample(3, 2, grid(1.0, 256), 1).unwrap();
        let traj = integrate_flow(&b, &p, &[0.2]).unwrap();
        for k in 0..=256 {
            let t = p.grid().node(k);
            let drift_part = (traj.node(k)[0] - 0.2 - p.node(k)[0]).abs();
            assert!(drift_part <= b.sup_bound() * t + 1e-12);
        }
    }

    #[test]
    fn jacobian_of_zero_drift_is_identity() {
        let b = zero_drift(2);
        let p = BrownianPath::sample(4, 0, grid(1.0, 32), 2).unwrap();
        let traj = integrate_flow(&b, &p, &[0.0, 0.0]).unwrap();
        let jac = integrate_jacobian(&b, &traj, 1e-5).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        for k in 0..=32 {
            assert_eq!(jac.determinants[k], 1.0);
            assert!((&jac.matrices[k] - &id).abs().max() < 1e-14);
        }
    }

    #[test]
    fn linear_drift_jacobian_matches_product_formula() {
        let c = 1.0;
        let b = linear_drift(c);
        let n = 1 << 10;
        let p = BrownianPath::sample(5, 0, grid(1.0, n), 1).unwrap();
        let traj = integrate_flow(&b, &p, &[0.0]).unwrap();
        let jac = integrate_jacobian(&b, &traj, 1e-5).unwrap();
        let dt = 1.0 / n as f64;
        let product = (1.0 + c * dt).powi(n as i32);
        let d_t = jac.determinants[n];
        assert!((d_t - product).abs() < 1e-10, "{d_t} vs {product}");
        assert!((d_t - c.exp()).abs() < 2e-3 * c.exp(), "{d_t} vs e^c");
    }

    #[test]
    fn rotation_flow_preserves_volume() {
        let b = DriftField::new(
            2,
            Arc::new(|_t, x: &[f64], out: &mut [f64]| {
                out[0] = x[1];
                out[1] = -x[0];
            }),
            Some(Arc::new(|_t, _x, out: &mut [f64]| {
                out.copy_from_slice(&[0.0, 1.0, -1.0, 0.0]);
            })),
            1.0,
            10.0,
            1.0,
            DivergenceMode::Analytic(Arc::new(|_, _| 0.0)),
            3.0,
            Smoothness::Smooth,
        )
        .unwrap();
        let p = BrownianPath::sample(6, 0, grid(1.0, 1 << 12), 2).unwrap();
        let traj = integrate_flow(&b, &p, &[0.5, 0.2]).unwrap();
        let jac = integrate_jacobian(&b, &traj, 1e-5).unwrap();
        let err = (jac.determinants[1 << 12] - 1.0).abs();
        assert!(err <= 1e-3, "|J - 1| = {err}");
    }

    #[test]
    fn inversion_of_pure_noise_flow_is_a_shift() {
        let b = zero_drift(1);
        let p = BrownianPath::sample(8, 0, grid(1.0, 64), 1).unwrap();
        let starts = SpaceGrid::centered(1, 5.0, 0.25).unwrap();
        let flow = FlowMap::build(&b, &p, starts).unwrap();
        let x = [0.7];
        let y = invert_flow(&flow, 1.0, &x).unwrap();
        assert!((y[0] - (0.7 - p.node(64)[0])).abs() < 1e-12);
    }

    #[test]
    fn inversion_of_constant_drift_flow() {
        let b = constant_drift(1, vec![0.8]);
        let p = BrownianPath::sample(9, 4, grid(1.0, 128), 1).unwrap();
        let starts = SpaceGrid::centered(1, 6.0, 0.25).unwrap();
        let flow = FlowMap::build(&b, &p, starts).unwrap();
        let x = [-0.4];
        let y = invert_flow(&flow, 0.5, &x).unwrap();
        let k = p.grid().node_index(0.5).unwrap();
        let want = -0.4 - 0.8 * 0.5 - p.node(k)[0];
        assert!((y[0] - want).abs() < 1e-10, "{} vs {want}", y[0]);
    }

    #[test]
    fn mollified_holder_inversion_round_trips() {
        let base = holder_drift(0.6);
        let kernel = MollifierKernel::standard(1, 4).unwrap();
        let b = mollify_drift(&base, &kernel, None).unwrap();
        let p = BrownianPath::sample(10, 1, grid(1.0, 256), 1).unwrap();
        let starts = SpaceGrid::centered(
            1,
            1.0 + b.sup_bound() + p.max_abs() + 1.0,
            0.1,
        )
        .unwrap();
        let flow = FlowMap::build(&b, &p, starts).unwrap();
        let queries = [-0.9, -0.33, 0.0, 0.41, 0.97];
        for x in queries.iter() {
            let y = invert_flow(&flow, 1.0, &[*x]).unwrap();
            let traj = integrate_flow(&b, &p, &y).unwrap();
            let resid = (traj.last()[0] - *x).abs();
            assert!(resid <= inversion_tolerance(&[*x]), "residual {resid}");
        }
    }

    #[test]
    fn reaction_flow_reference_solutions() {
        let b = zero_drift(1);
        let p = BrownianPath::sample(11, 0, grid(1.0, 1000), 1).unwrap();
        let traj = integrate_flow(&b, &p, &[0.0]).unwrap();

        let zero = ReactionTerm::zero();
        let z = integrate_reaction(&zero, &traj, 0.75, SignConvention::default()).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.75));

        // F = u: Z_T = r e^{-T} with RK4 accuracy ~1e-8 at dt = 1e-3.
        let lin = ReactionTerm::new(Arc::new(|_t, _x, u| u), 1.0, Arc::new(|_| 10.0)).unwrap();
        let z = integrate_reaction(&lin, &traj, 2.0, SignConvention::default()).unwrap();
        assert!((z.last() - 2.0 * (-1.0f64).exp()).abs() < 1e-8, "{}", z.last());

        // Literal sign gives the growing branch.
        let z = integrate_reaction(&lin, &traj, 2.0, SignConvention::PaperLiteral).unwrap();
        assert!((z.last() - 2.0 * 1.0f64.exp()).abs() < 1e-8);

        // F = 1: RK4 is exact on constants, Z_T = r - T.
        let one = ReactionTerm::new(Arc::new(|_t, _x, _u| 1.0), 0.0, Arc::new(|_| 1.0)).unwrap();
        let z = integrate_reaction(&one, &traj, 0.25, SignConvention::default()).unwrap();
        assert!((z.last() - (0.25 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn pure_noise_transport_solution() {
        let b = zero_drift(1);
        let f = InitialDatum::new(Arc::new(|x: &[f64]| x[0].cos()), 1.0).unwrap();
        let p = BrownianPath::sample(12, 2, grid(1.0, 1 << 10), 1).unwrap();
        let obs = SpaceGrid::centered(1, 1.0, 1.0 / 16.0).unwrap();
        let u = solve_field(&b, &ReactionTerm::zero(), &f, &p, 1.0, &obs, SignConvention::default())
            .unwrap();
        let bt = p.node(1 << 10)[0];
        for (i, x) in obs.points().enumerate() {
            let want = (x[0] - bt).cos();
            assert!((u.values()[i] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_drift_linear_reaction_closed_form() {
        let b = constant_drift(1, vec![0.5]);
        let lam = 1.0;
        let reaction = ReactionTerm::new(Arc::new(|_t, _x, u| u), 1.0, Arc::new(|_| 10.0)).unwrap();
        let f = InitialDatum::new(Arc::new(|x: &[f64]| x[0].cos()), 1.0).unwrap();
        let p = BrownianPath::sample(13, 0, grid(1.0, 1000), 1).unwrap();
        let obs = SpaceGrid::centered(1, 1.0, 0.25).unwrap();
        let u = solve_field(&b, &reaction, &f, &p, 1.0, &obs, SignConvention::default()).unwrap();
        let bt = p.node(1000)[0];
        for (i, x) in obs.points().enumerate() {
            let want = (-lam * 1.0f64).exp() * (x[0] - 0.5 - bt).cos();
            assert!((u.values()[i] - want).abs() < 1e-6, "{} vs {want}", u.values()[i]);
        }
    }

    #[test]
    fn frozen_reaction_reduces_to_the_linear_equation() {
        // F = 0 must reproduce u = f(Y_t) from the same code path.
        let b = sine_drift();
        let f = InitialDatum::new(Arc::new(|x: &[f64]| (2.0 * x[0]).sin()), 1.0).unwrap();
        let p = BrownianPath::sample(14, 5, grid(0.5, 512), 1).unwrap();
        let obs = SpaceGrid::centered(1, 1.0, 0.25).unwrap();
        let u = solve_field(&b, &ReactionTerm::zero(), &f, &p, 0.5, &obs, SignConvention::default())
            .unwrap();
        let hw = inflated_half_width(&obs, &b, &p);
        let flow = FlowMap::build(&b, &p, SpaceGrid::centered(1, hw, hw / 32.0).unwrap()).unwrap();
        for (i, x) in obs.points().enumerate() {
            let y = invert_flow(&flow, 0.5, &x).unwrap();
            assert!((u.values()[i] - f.evaluate(&y)).abs() < 1e-7);
        }
    }

    #[test]
    fn solution_sup_norm_bound() {
        let b = sine_drift();
        let reaction = ReactionTerm::new(
            Arc::new(|_t, x: &[f64], u: f64| x[0].cos() * u.tanh()),
            1.0,
            Arc::new(|_| 1.0),
        )
        .unwrap();
        let f = InitialDatum::new(Arc::new(|x: &[f64]| x[0].cos()), 1.0).unwrap();
        let p = BrownianPath::sample(15, 0, grid(1.0, 256), 1).unwrap();
        let obs = SpaceGrid::centered(1, 1.0, 0.25).unwrap();
        let u = solve_field(&b, &reaction, &f, &p, 1.0, &obs, SignConvention::default()).unwrap();
        let bound = f.sup_bound() + reaction.sup_mass(1.0);
        assert!(u.sup_norm() <= bound + 1e-9, "{} vs {bound}", u.sup_norm());
    }

    #[test]
    fn gronwall_stability_in_the_datum() {
        // Perturbing f by delta moves u by at most delta e^{Ct}.
        let b = sine_drift();
        let reaction = ReactionTerm::new(
            Arc::new(|_t, _x, u: f64| u.sin()),
            1.0,
            Arc::new(|_| 1.0),
        )
        .unwrap();
        let delta = 1e-3;
        let f = InitialDatum::new(Arc::new(|x: &[f64]| x[0].cos()), 1.0).unwrap();
        let g = InitialDatum::new(Arc::new(move |x: &[f64]| x[0].cos() + delta), 1.0 + delta).unwrap();
        let p = BrownianPath::sample(16, 0, grid(1.0, 512), 1).unwrap();
        let obs = SpaceGrid::centered(1, 1.0, 0.25).unwrap();
        let uf = solve_field(&b, &reaction, &f, &p, 1.0, &obs, SignConvention::default()).unwrap();
        let ug = solve_field(&b, &reaction, &g, &p, 1.0, &obs, SignConvention::default()).unwrap();
        let maxdiff = uf
            .values()
            .iter()
            .zip(ug.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let bound = delta * (reaction.lip_constant() * 1.0).exp() * (1.0 + 1e-3);
        assert!(maxdiff <= bound, "{maxdiff} vs {bound}");
    }

    #[test]
    fn one_dimensional_flow_is_monotone() {
        let b = sine_drift();
        let p = BrownianPath::sample(17, 0, grid(1.0, 512), 1).unwrap();
        let starts = SpaceGrid::centered(1, 2.0, 0.05).unwrap();
        let flow = FlowMap::build(&b, &p, starts).unwrap();
        for k in [128usize, 512] {
            let mut prev = f64::NEG_INFINITY;
            for traj in flow.trajectories() {
                let v = traj.node(k)[0];
                assert!(v > prev, "flow order violated at node {k}");
                prev = v;
            }
        }
    }

    #[test]
    fn series_solver_matches_pointwise_solver() {
        let b = sine_drift();
        let reaction = ReactionTerm::new(Arc::new(|_t, _x, u: f64| u.sin()), 1.0, Arc::new(|_| 1.0))
            .unwrap();
        let f = InitialDatum::new(Arc::new(|x: &[f64]| x[0].cos()), 1.0).unwrap();
        let p = BrownianPath::sample(18, 0, grid(1.0, 128), 1).unwrap();
        let obs = SpaceGrid::centered(1, 1.0, 1.0 / 64.0).unwrap();
        let series =
            solve_field_series(&b, &reaction, &f, &p, &obs, SignConvention::default()).unwrap();
        assert_eq!(series.len(), 129);
        let direct = solve_field(&b, &reaction, &f, &p, 1.0, &obs, SignConvention::default()).unwrap();
        let maxdiff = series[128]
            .values()
            .iter()
            .zip(direct.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        // Series values are linearly interpolated between transported starts.
        assert!(maxdiff < 5e-4, "maxdiff = {maxdiff}");
    }
}
