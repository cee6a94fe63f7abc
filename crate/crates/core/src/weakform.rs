//! Numerical verification of the weak-solution identity: Itô and Stratonovich
//! residuals of a solution time series against compactly supported test
//! functions, along one fixed noise realization.
//!
//! With `g_k = int u(t_k) g dx` denoting midpoint-rule pairings on the
//! solution grid, the Itô residual at `t_k` is
//!
//! ```text
//! R(t_k) = [P_k - P_0]
//!        - sum_{j<k} dt [ (u b·grad phi)_j + (u div b phi)_j
//!                         - (F phi)_j + 1/2 (u lap phi)_j ]
//!        - sum_i sum_{j<k} (u D_i phi)_j (B^i_{j+1} - B^i_j)
//! ```
//!
//! the left-point stochastic sum realizing the Itô integral. The Stratonovich
//! residual replaces the stochastic sum by the trapezoid-in-u (midpoint) sum
//! and drops the Laplacian correction. The reaction pairing enters with the
//! sign under which the composed characteristics field is a solution; the
//! literal-sign switch flips it together with the reaction flow.

use crate::characteristics::{SignConvention, SolutionField};
use crate::error::{Result, StlError};
use crate::fields::{DriftField, InitialDatum, ReactionTerm, TestFunction, MAX_DIM};
use crate::paths::BrownianPath;

/// Coefficients of the scenario a solution series is checked against.
pub struct WeakFormScenario<'a> {
    pub drift: Option<&'a DriftField>,
    pub reaction: Option<&'a ReactionTerm>,
    pub datum: &'a InitialDatum,
    pub sign: SignConvention,
}

/// Residuals of both weak forms per time node, plus normalized variants.
#[derive(Clone, Debug)]
pub struct WeakFormReport {
    pub test_function: String,
    pub times: Vec<f64>,
    pub residual_ito: Vec<f64>,
    pub residual_strat: Vec<f64>,
    pub normalized_ito: Vec<f64>,
    pub normalized_strat: Vec<f64>,
    /// Number of quadrature cells per axis used for the spatial pairings.
    pub quadrature_cells: usize,
}

impl WeakFormReport {
    pub fn max_abs_ito(&self) -> f64 {
        self.residual_ito.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_strat(&self) -> f64 {
        self.residual_strat.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn final_normalized_ito(&self) -> f64 {
        self.normalized_ito.last().copied().unwrap_or(0.0).abs()
    }

    pub fn final_normalized_strat(&self) -> f64 {
        self.normalized_strat.last().copied().unwrap_or(0.0).abs()
    }

    /// CSV with columns `t, residual_ito, residual_strat, normalized_ito,
    /// normalized_strat`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let header = [
            "t",
            "residual_ito",
            "residual_strat",
            "normalized_ito",
            "normalized_strat",
        ];
        let rows: Vec<Vec<String>> = (0..self.times.len())
            .map(|k| {
                vec![
                    crate::csv::fmt(self.times[k]),
                    crate::csv::fmt(self.residual_ito[k]),
                    crate::csv::fmt(self.residual_strat[k]),
                    crate::csv::fmt(self.normalized_ito[k]),
                    crate::csv::fmt(self.normalized_strat[k]),
                ]
            })
            .collect();
        crate::csv::write_table(path, &header, &rows)
    }
}

/// Midpoint-rule pairing `int u(t, x) phi(x) dx` over the field's grid.
pub fn spatial_pairing(field: &SolutionField, phi: &TestFunction) -> Result<f64> {
    require_support(field, phi)?;
    let grid = field.grid();
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    let mut buf = vec![0.0; grid.dim()];
    for i in 0..grid.len() {
        grid.point_into(i, &mut buf);
        let w = phi.evaluate(&buf);
        if w != 0.0 {
            acc += field.values()[i] * w;
        }
    }
    Ok(acc * vol)
}

fn require_support(field: &SolutionField, phi: &TestFunction) -> Result<()> {
    let grid = field.grid();
    if phi.dim() != grid.dim() {
        return Err(StlError::Config(format!(
            "test function dimension {} does not match field dimension {}",
            phi.dim(),
            grid.dim()
        )));
    }
    for (c, _) in phi.center().iter().zip(0..) {
        if c.abs() + phi.radius() > grid.half_width() + 1e-12 {
            return Err(StlError::Coverage(format!(
                "test-function support B({:?}, {}) escapes the field box of half-width {}",
                phi.center(),
                phi.radius(),
                grid.half_width()
            )));
        }
    }
    Ok(())
}

/// Assembles the Itô-form residual report (the Stratonovich columns are
/// filled from the same pairings at no extra cost).
pub fn ito_residual(
    series: &[SolutionField],
    scenario: &WeakFormScenario,
    path: &BrownianPath,
    phi: &TestFunction,
) -> Result<WeakFormReport> {
    assemble(series, scenario, path, phi)
}

/// Assembles the Stratonovich-form residual report.
pub fn stratonovich_residual(
    series: &[SolutionField],
    scenario: &WeakFormScenario,
    path: &BrownianPath,
    phi: &TestFunction,
) -> Result<WeakFormReport> {
    assemble(series, scenario, path, phi)
}

fn assemble(
    series: &[SolutionField],
    scenario: &WeakFormScenario,
    path: &BrownianPath,
    phi: &TestFunction,
) -> Result<WeakFormReport> {
    let grid = path.grid();
    if series.len() != grid.len() {
        return Err(StlError::Staleness(format!(
            "need a solution field at each of the {} path nodes, got {}",
            grid.len(),
            series.len()
        )));
    }
    for (k, field) in series.iter().enumerate() {
        if (field.time() - grid.node(k)).abs() > 1e-9 {
            return Err(StlError::Staleness(format!(
                "field {k} carries time {} but the path node is {}",
                field.time(),
                grid.node(k)
            )));
        }
    }
    let sgrid = series[0].grid();
    require_support(&series[0], phi)?;
    let d = sgrid.dim();
    let dt = grid.dt();
    let f_sign = scenario.sign.factor(); // -1 default: reaction enters as -F

    // Per-node pairings.
    let n = series.len();
    let mut pair = vec![0.0; n]; // int u phi
    let mut grad_pair = vec![0.0; n * d]; // int u D_i phi
    let mut lap_pair = vec![0.0; n]; // int u lap phi
    let mut drift_pair = vec![0.0; n]; // int u b . grad phi
    let mut div_pair = vec![0.0; n]; // int u div b phi
    let mut reac_pair = vec![0.0; n]; // int F(t, x, u) phi

    let vol = sgrid.cell_volume();
    let mut x = vec![0.0; d];
    let mut g = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    for i in 0..sgrid.len() {
        sgrid.point_into(i, &mut x);
        let w = phi.evaluate(&x);
        phi.gradient_into(&x, &mut g[..d]);
        let lap = phi.laplacian(&x);
        if w == 0.0 && lap == 0.0 && g[..d].iter().all(|v| *v == 0.0) {
            continue;
        }
        for (k, field) in series.iter().enumerate() {
            let u = field.values()[i];
            pair[k] += u * w * vol;
            lap_pair[k] += u * lap * vol;
            for j in 0..d {
                grad_pair[k * d + j] += u * g[j] * vol;
            }
            if let Some(drift) = scenario.drift {
                let t = grid.node(k);
                drift.evaluate_into(t, &x, &mut b[..d])?;
                let mut dot = 0.0;
                for j in 0..d {
                    dot += b[j] * g[j];
                }
                drift_pair[k] += u * dot * vol;
                if w != 0.0 {
                    div_pair[k] += u * drift.divergence(t, &x)? * w * vol;
                }
            }
            if let Some(reaction) = scenario.reaction {
                if w != 0.0 {
                    reac_pair[k] += reaction.evaluate(grid.node(k), &x, u)? * w * vol;
                }
            }
        }
    }

    // Cumulative assembly; left-endpoint time rule, left-point Itô sums,
    // trapezoid-in-u Stratonovich sums.
    let mut residual_ito = Vec::with_capacity(n);
    let mut residual_strat = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut det_acc = 0.0; // deterministic terms shared by both forms
    let mut lap_acc = 0.0;
    let mut ito_acc = 0.0;
    let mut strat_acc = 0.0;
    residual_ito.push(0.0);
    residual_strat.push(0.0);
    times.push(grid.node(0));
    for k in 1..n {
        let j = k - 1;
        det_acc += dt * (drift_pair[j] + div_pair[j] + f_sign * reac_pair[j]);
        lap_acc += dt * 0.5 * lap_pair[j];
        for i in 0..d {
            let db = path.increment(j, i);
            ito_acc += grad_pair[j * d + i] * db;
            strat_acc += 0.5 * (grad_pair[j * d + i] + grad_pair[k * d + i]) * db;
        }
        let lhs = pair[k] - pair[0];
        residual_ito.push(lhs - det_acc - lap_acc - ito_acc);
        residual_strat.push(lhs - det_acc - strat_acc);
        times.push(grid.node(k));
    }

    // Scale-free normalization by ||f||_inf int |phi|.
    let phi_mass = sgrid.integrate(|p| phi.evaluate(p).abs());
    let scale = (scenario.datum.sup_bound() * phi_mass).max(f64::MIN_POSITIVE);
    let normalized_ito = residual_ito.iter().map(|r| r / scale).collect();
    let normalized_strat = residual_strat.iter().map(|r| r / scale).collect();

    Ok(WeakFormReport {
        test_function: format!("bump(c={:?}, r={})", phi.center(), phi.radius()),
        times,
        residual_ito,
        residual_strat,
        normalized_ito,
        normalized_strat,
        quadrature_cells: sgrid.cells_per_axis(),
    })
}
