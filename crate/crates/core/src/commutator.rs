//! The mollification commutator `R_n(b, u) = (b·grad)(phi_n * u)
//! - phi_n * ((b·grad) u)`, its pairing along the characteristic flow, and the
//! commutator-lemma right-hand side with calibrated constant.
//!
//! `u` is merely bounded, so `(b·grad) u` is realized distributionally inside
//! the convolution: integrating by parts and using
//! `grad_y phi(x - y) = -(grad phi)(x - y)` gives
//!
//! ```text
//! phi_n * ((b·grad) u)(x)
//!   = int u(y) [ b(y) · (grad phi_n)(x - y) - div b(y) phi_n(x - y) ] dy
//! ```
//!
//! so no derivative of `u` is ever taken. Combining with the analytic kernel
//! gradient of the first term yields the single quadrature loop
//!
//! ```text
//! R_n(b, u)(x) = sum_i u(x - z_i) [ (b(x) - b(x - z_i)) · gw_i
//!                                   + div b(x - z_i) pw_i ]
//! ```
//!
//! with the kernel's probability weights `pw` and gradient weights `gw`. For
//! constant `b` both brackets vanish term by term, so annihilation is exact.

use crate::characteristics::{integrate_flow, FlowMap, SolutionField};
use crate::error::{Result, StlError};
use crate::fields::{DriftField, MollifierKernel, TestFunction, MAX_DIM};
use crate::grid::SpaceGrid;
use std::sync::Arc;

/// Default kernel quadrature resolution for commutator evaluation.
pub const COMMUTATOR_NODES_PER_AXIS: usize = 128;

/// Sup-norm grid cell width for ball-restricted norm estimation.
pub const NORM_CELL_WIDTH: f64 = 1.0 / 128.0;

/// A bounded scalar field with a declared evaluation domain.
#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    domain_half_width: f64,
}

impl ScalarField {
    pub fn new(eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, domain_half_width: f64) -> Self {
        ScalarField {
            eval,
            domain_half_width,
        }
    }

    /// Wraps a grid field; evaluation interpolates, the domain is its box.
    pub fn from_solution(field: &SolutionField) -> Self {
        let f = field.clone();
        ScalarField {
            domain_half_width: f.grid().half_width(),
            eval: Arc::new(move |x| f.interpolate(x)),
        }
    }

    pub fn domain_half_width(&self) -> f64 {
        self.domain_half_width
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

fn require_neighborhood(u: &ScalarField, x: &[f64], halo: f64) -> Result<()> {
    let reach = x.iter().fold(0.0f64, |m, v| m.max(v.abs())) + halo;
    if reach > u.domain_half_width {
        return Err(StlError::Coverage(format!(
            "commutator stencil of radius {halo} around {x:?} escapes the field domain \
             of half-width {}",
            u.domain_half_width
        )));
    }
    Ok(())
}

/// Evaluates `R_n(b, u)(x)` by the combined quadrature loop above.
pub fn commutator_field(
    b: &DriftField,
    u: &ScalarField,
    kernel: &MollifierKernel,
    x: &[f64],
) -> Result<f64> {
    let d = b.dim();
    if kernel.dim() != d || x.len() != d {
        return Err(StlError::Config(format!(
            "commutator dimensions disagree: drift {d}, kernel {}, point {}",
            kernel.dim(),
            x.len()
        )));
    }
    let quad = kernel.quadrature(COMMUTATOR_NODES_PER_AXIS);
    require_neighborhood(u, x, kernel.bandwidth() * 1.01)?;

    let mut bx = [0.0; MAX_DIM];
    b.evaluate_into(0.0, x, &mut bx[..d])?;
    let mut by = [0.0; MAX_DIM];
    let mut y = [0.0; MAX_DIM];
    let mut acc = 0.0;
    for i in 0..quad.len() {
        let z = quad.offset(i);
        for j in 0..d {
            y[j] = x[j] - z[j];
        }
        let uy = u.evaluate(&y[..d]);
        if uy == 0.0 {
            continue;
        }
        b.evaluate_into(0.0, &y[..d], &mut by[..d])?;
        let gw = quad.grad_weight(i);
        let mut bracket = 0.0;
        for j in 0..d {
            bracket += (bx[j] - by[j]) * gw[j];
        }
        bracket += b.divergence(0.0, &y[..d])? * quad.phi_weight(i);
        acc += uy * bracket;
    }
    Ok(acc)
}

/// Midpoint quadrature of `x -> R_n(b, u)(X_t(x)) rho(x)` over `supp rho`.
///
/// The drift and path are taken from the flow map; trajectories are integrated
/// fresh from the quadrature nodes, so the flow's own start grid only needs to
/// exist, not to resolve `supp rho`.
pub fn commutator_pairing(
    u: &ScalarField,
    kernel: &MollifierKernel,
    flow: &FlowMap,
    t: f64,
    rho: &TestFunction,
    cells_per_axis: usize,
) -> Result<f64> {
    let b = flow.drift();
    let d = b.dim();
    let k = flow.path().grid().node_index(t).ok_or_else(|| {
        StlError::Config(format!("pairing time {t} is not a node of the path grid"))
    })?;
    let qgrid = SpaceGrid::new(
        rho.center().to_vec(),
        rho.radius(),
        2.0 * rho.radius() / cells_per_axis as f64,
    )?;
    let vol = qgrid.cell_volume();
    let mut acc = 0.0;
    let mut x = vec![0.0; d];
    for i in 0..qgrid.len() {
        qgrid.point_into(i, &mut x);
        let w = rho.evaluate(&x);
        if w == 0.0 {
            continue;
        }
        let traj = integrate_flow(b, flow.path(), &x)?;
        let xt = traj.node(k.min(traj.grid().steps()));
        acc += commutator_field(b, u, kernel, xt)? * w * vol;
    }
    Ok(acc)
}

/// The norms entering the commutator-lemma bound, over balls tied to a
/// declared support radius `R`, plus the calibrated constant.
#[derive(Clone, Debug)]
pub struct NormEstimates {
    /// `||u||_{L_inf, R+1}`.
    pub u_sup_r1: f64,
    /// `||div b||_{L1, R+1}`.
    pub div_b_l1_r1: f64,
    /// `||b||_{L_inf, R+1}`.
    pub b_sup_r1: f64,
    /// `||J phi^{-1}||_{L_inf, R}`, the inverse-flow Jacobian determinant.
    pub inv_jac_sup_r: f64,
    /// `||D phi^{-1}||_{L_inf, R}`, the inverse-flow derivative.
    pub inv_grad_sup_r: f64,
    /// `||D J phi^{-1}||_{L1, R}`.
    pub inv_jac_grad_l1_r: f64,
    /// `||b||_{W^{1,1}, R+2}`, populated in d = 1 only.
    pub b_w11_r2: Option<f64>,
    /// `||u||_{L_inf, R+2}`, populated in d = 1 only.
    pub u_sup_r2: Option<f64>,
    /// Calibrated lemma constant.
    pub c_rho: f64,
    /// Declared support radius.
    pub radius: f64,
}

impl NormEstimates {
    fn check_finite(&self) -> Result<()> {
        let entries = [
            self.u_sup_r1,
            self.div_b_l1_r1,
            self.b_sup_r1,
            self.inv_jac_sup_r,
            self.inv_grad_sup_r,
            self.inv_jac_grad_l1_r,
            self.b_w11_r2.unwrap_or(0.0),
            self.u_sup_r2.unwrap_or(0.0),
            self.c_rho,
        ];
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(StlError::Validation(format!(
                "norm estimates must be nonnegative and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

/// The commutator-lemma right-hand side.
///
/// For `d > 1`:
/// `C_rho ||u||_{R+1} [ ||div b||_{L1,R+1} ||J phi^{-1}||_{R}
///   + ||b||_{R+1} ( ||D phi^{-1}||_{R} + ||D J phi^{-1}||_{L1,R} ) ]`;
/// for `d = 1`:
/// `C_rho ||u||_{R+2} ||b||_{W^{1,1},R+2} ||J phi^{-1}||_{R}`.
pub fn lemma_rhs(est: &NormEstimates, d: usize) -> Result<f64> {
    est.check_finite()?;
    if d == 1 {
        let (Some(b_w11), Some(u_sup)) = (est.b_w11_r2, est.u_sup_r2) else {
            return Err(StlError::Config(
                "d = 1 bound needs ||b||_{W^{1,1}, R+2} and ||u||_{L_inf, R+2}".into(),
            ));
        };
        Ok(est.c_rho * u_sup * b_w11 * est.inv_jac_sup_r)
    } else {
        Ok(est.c_rho
            * est.u_sup_r1
            * (est.div_b_l1_r1 * est.inv_jac_sup_r
                + est.b_sup_r1 * (est.inv_grad_sup_r + est.inv_jac_grad_l1_r)))
    }
}

/// Calibrates `C_rho` as the smallest constant making the bound hold for the
/// given pairing magnitude (intended for the coarsest bandwidth); the
/// estimates are returned with `c_rho` replaced.
pub fn calibrate_c_rho(est: &NormEstimates, d: usize, pairing_abs: f64) -> Result<NormEstimates> {
    let mut unit = est.clone();
    unit.c_rho = 1.0;
    let raw = lemma_rhs(&unit, d)?;
    if !(raw > 0.0) {
        return Err(StlError::Validation(format!(
            "cannot calibrate against a vanishing raw bound {raw}"
        )));
    }
    unit.c_rho = (pairing_abs / raw).max(f64::MIN_POSITIVE);
    Ok(unit)
}

/// Adaptive two-point Gauss quadrature of `int_a^b |g|`, refined where the
/// one-cell and two-cell estimates disagree. The Gauss nodes sit at
/// irrational offsets from the cell center, so bisection never evaluates the
/// integrand at a dyadic point; integrable singularities there (such as the
/// divergence of a Hölder drift at the origin) are handled safely.
fn adaptive_abs_integral(g: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn gauss2_abs(g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let off = (b - a) / (2.0 * 3.0f64.sqrt());
        0.5 * (b - a) * (g(mid - off).abs() + g(mid + off).abs())
    }
    let mid = 0.5 * (a + b);
    let coarse = gauss2_abs(g, a, b);
    let fine = gauss2_abs(g, a, mid) + gauss2_abs(g, mid, b);
    if depth >= 48 || (coarse - fine).abs() <= tol {
        return fine;
    }
    adaptive_abs_integral(g, a, mid, 0.5 * tol, depth + 1)
        + adaptive_abs_integral(g, mid, b, 0.5 * tol, depth + 1)
}

fn ball_sup(dim: usize, radius: f64, mut g: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let cell = if dim == 1 { NORM_CELL_WIDTH } else { 1.0 / 16.0 };
    let grid = SpaceGrid::centered(dim, radius, cell)?;
    let mut x = vec![0.0; dim];
    let mut sup = 0.0f64;
    for i in 0..grid.len() {
        grid.point_into(i, &mut x);
        if x.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
            sup = sup.max(g(&x)?.abs());
        }
    }
    Ok(sup)
}

/// Estimates every norm of the lemma bound for the flow's drift, the field
/// `u`, and the inverse flow at time `t`, over balls tied to radius `R`.
///
/// Sup norms are grid maxima restricted to the exact ball; `L1` norms use
/// adaptive midpoint quadrature in d = 1 (the divergence of a Hölder drift is
/// singular but integrable) and plain midpoint otherwise. The inverse flow is
/// tabulated by Newton/bisection inversion on a grid, and its derivative and
/// Jacobian-gradient fields by centered differences of that table.
pub fn norm_estimates(u: &ScalarField, flow: &FlowMap, t: f64, radius: f64) -> Result<NormEstimates> {
    let b = flow.drift();
    let d = b.dim();
    let r1 = radius + 1.0;
    let r2 = radius + 2.0;

    let u_sup_r1 = ball_sup(d, r1, |x| Ok(u.evaluate(x)))?;
    let b_sup_r1 = ball_sup(d, r1, |x| {
        let mut out = [0.0; MAX_DIM];
        b.evaluate_into(t, x, &mut out[..d])?;
        Ok(out[..d].iter().map(|v| v * v).sum::<f64>().sqrt())
    })?;

    let div_b_l1_r1 = if d == 1 {
        adaptive_abs_integral(&|x| b.divergence(t, &[x]).unwrap_or(f64::NAN), -r1, r1, 1e-7, 0)
    } else {
        let grid = SpaceGrid::centered(d, r1, 1.0 / 16.0)?;
        grid.integrate(|x| {
            if x.iter().map(|v| v * v).sum::<f64>() <= r1 * r1 {
                b.divergence(t, x).unwrap_or(0.0).abs()
            } else {
                0.0
            }
        })
    };

    // Tabulate the inverse flow on a grid over the R-ball plus one cell of
    // margin for the centered differences.
    let cell = if d == 1 { NORM_CELL_WIDTH } else { 1.0 / 8.0 };
    let tab = SpaceGrid::centered(d, radius + 2.0 * cell, cell)?;
    let n = tab.cells_per_axis();
    let mut inverse = vec![0.0; tab.len() * d];
    let mut x = vec![0.0; d];
    for i in 0..tab.len() {
        tab.point_into(i, &mut x);
        let y = crate::characteristics::invert_flow(flow, t, &x)?;
        inverse[i * d..(i + 1) * d].copy_from_slice(&y);
    }

    // D phi^{-1} and J phi^{-1} = det D phi^{-1} by centered differences.
    let h = tab.cell_width();
    let mut inv_grad_sup_r = 0.0f64;
    let mut jac = vec![f64::NAN; tab.len()];
    let mut deriv = nalgebra::DMatrix::<f64>::zeros(d, d);
    let stride = |axis: usize| n.pow((d - 1 - axis) as u32);
    for i in 0..tab.len() {
        tab.point_into(i, &mut x);
        if x.iter().any(|v| v.abs() > radius + cell + 1e-12) {
            continue;
        }
        let mut interior = true;
        for axis in 0..d {
            let idx_axis = (i / stride(axis)) % n;
            if idx_axis == 0 || idx_axis == n - 1 {
                interior = false;
            }
        }
        if !interior {
            continue;
        }
        for axis in 0..d {
            let s = stride(axis);
            for row in 0..d {
                deriv[(row, axis)] =
                    (inverse[(i + s) * d + row] - inverse[(i - s) * d + row]) / (2.0 * h);
            }
        }
        jac[i] = deriv.determinant();
        let in_ball = x.iter().map(|v| v * v).sum::<f64>() <= radius * radius;
        if in_ball {
            inv_grad_sup_r = inv_grad_sup_r.max(deriv.abs().max());
        }
    }

    let mut inv_jac_sup_r = 0.0f64;
    let mut inv_jac_grad_l1_r = 0.0;
    let vol = tab.cell_volume();
    for i in 0..tab.len() {
        if jac[i].is_nan() {
            continue;
        }
        tab.point_into(i, &mut x);
        if x.iter().map(|v| v * v).sum::<f64>() > radius * radius {
            continue;
        }
        inv_jac_sup_r = inv_jac_sup_r.max(jac[i].abs());
        // |grad J| by one-sided differences toward available neighbors.
        let mut gsq = 0.0;
        for axis in 0..d {
            let s = stride(axis);
            let (a, b2) = (jac.get(i.wrapping_sub(s)), jac.get(i + s));
            let g = match (a, b2) {
                (Some(a), Some(b2)) if !a.is_nan() && !b2.is_nan() => (b2 - a) / (2.0 * h),
                (Some(a), _) if !a.is_nan() => (jac[i] - a) / h,
                (_, Some(b2)) if !b2.is_nan() => (b2 - jac[i]) / h,
                _ => 0.0,
            };
            gsq += g * g;
        }
        inv_jac_grad_l1_r += gsq.sqrt() * vol;
    }

    let (b_w11_r2, u_sup_r2) = if d == 1 {
        let l1_b = adaptive_abs_integral(
            &|x| {
                let mut out = [0.0];
                b.evaluate_into(t, &[x], &mut out).map(|_| out[0]).unwrap_or(f64::NAN)
            },
            -r2,
            r2,
            1e-7,
            0,
        );
        let l1_db = adaptive_abs_integral(&|x| b.divergence(t, &[x]).unwrap_or(f64::NAN), -r2, r2, 1e-7, 0);
        (Some(l1_b + l1_db), Some(ball_sup(1, r2, |x| Ok(u.evaluate(x)))?))
    } else {
        (None, None)
    };

    let est = NormEstimates {
        u_sup_r1,
        div_b_l1_r1,
        b_sup_r1,
        inv_jac_sup_r,
        inv_grad_sup_r,
        inv_jac_grad_l1_r,
        b_w11_r2,
        u_sup_r2,
        c_rho: 1.0,
        radius,
    };
    est.check_finite()?;
    Ok(est)
}

/// One row of the commutator decay table.
#[derive(Clone, Debug)]
pub struct DecayRow {
    pub n: u32,
    pub epsilon: f64,
    pub pairing_abs: f64,
    pub lemma_rhs: f64,
    pub ratio: f64,
}

/// Writes the decay table CSV with columns
/// `n, epsilon, pairing_abs, lemma_rhs, ratio`.
pub fn write_decay_csv(path: &std::path::Path, rows: &[DecayRow]) -> Result<()> {
    let header = ["n", "epsilon", "pairing_abs", "lemma_rhs", "ratio"];
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                crate::csv::fmt(r.epsilon),
                crate::csv::fmt(r.pairing_abs),
                crate::csv::fmt(r.lemma_rhs),
                crate::csv::fmt(r.ratio),
            ]
        })
        .collect();
    crate::csv::write_table(path, &header, &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_bump, DivergenceMode, Smoothness};
    use crate::paths::{BrownianPath, TimeGrid};

    fn constant_drift(c: f64) -> DriftField {
        DriftField::new(
            1,
            Arc::new(move |_t, _x, out: &mut [f64]| out[0] = c),
            Some(Arc::new(|_t, _x, out: &mut [f64]| out[0] = 0.0)),
            0.5,
            c.abs(),
            0.0,
            DivergenceMode::Analytic(Arc::new(|_, _| 0.0)),
            3.0,
            Smoothness::Smooth,
        )
        .unwrap()
    }

    fn linear_drift() -> DriftField {
        DriftField::new(
            1,
            Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0]),
            Some(Arc::new(|_t, _x, out: &mut [f64]| out[0] = 1.0)),
            1.0,
            100.0,
            1.0,
            DivergenceMode::Analytic(Arc::new(|_, _| 1.0)),
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

    fn cos_field() -> ScalarField {
        ScalarField::new(Arc::new(|x: &[f64]| x[0].cos()), 50.0)
    }

    #[test]
    fn constant_drift_annihilates_for_every_bandwidth() {
        let b = constant_drift(0.7);
        let u = cos_field();
        for n in [1u32, 4, 8] {
            let kernel = MollifierKernel::standard(1, n).unwrap();
            let r = commutator_field(&b, &u, &kernel, &[0.3]).unwrap();
            assert!(r.abs() <= 1e-6, "n = {n}: {r}");
        }
    }

    #[test]
    fn constant_field_annihilates() {
        let b = linear_drift();
        let u = ScalarField::new(Arc::new(|_: &[f64]| 2.0), 50.0);
        let kernel = MollifierKernel::standard(1, 4).unwrap();
        let r = commutator_field(&b, &u, &kernel, &[0.3]).unwrap();
        assert!(r.abs() <= 1e-6, "{r}");
    }

    #[test]
    fn matches_direct_quadrature_of_the_definition() {
        // d = 1, b(x) = x, u = cos: u is smooth, so both terms of the
        // definition admit a direct high-resolution quadrature.
        let b = linear_drift();
        let u = cos_field();
        let kernel = MollifierKernel::standard(1, 4).unwrap();
        let x = 0.3;
        let got = commutator_field(&b, &u, &kernel, &[x]).unwrap();

        let eps = kernel.bandwidth();
        let m = 1_000_000usize;
        let h = 2.0 * eps / m as f64;
        let mut conv_grad = 0.0; // (phi * u)'(x) via the kernel gradient
        let mut conv_bdu = 0.0; // (phi * (b u'))(x), u' available directly
        let mut g = [0.0];
        for i in 0..m {
            let z = -eps + (i as f64 + 0.5) * h;
            kernel.gradient_into(&[z], &mut g);
            let y = x - z;
            conv_grad += (y).cos() * g[0] * h;
            conv_bdu += kernel.evaluate(&[z]) * (y * -(y).sin()) * h;
        }
        let want = x * conv_grad - conv_bdu;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn pairing_with_identity_flow_reduces_to_direct_quadrature() {
        let b = linear_drift();
        let u = cos_field();
        let kernel = MollifierKernel::standard(1, 4).unwrap();
        let rho = make_bump(vec![0.0], 1.0).unwrap();
        let path = BrownianPath::zero(TimeGrid::new(1.0, 8).unwrap(), 1);
        let starts = SpaceGrid::centered(1, 3.0, 0.5).unwrap();
        let flow = FlowMap::build(&b, &path, starts).unwrap();
        let got = commutator_pairing(&u, &kernel, &flow, 0.0, &rho, 128).unwrap();

        let qgrid = SpaceGrid::centered(1, 1.0, 2.0 / 128.0).unwrap();
        let mut want = 0.0;
        for p in qgrid.points() {
            let w = rho.evaluate(&p);
            if w != 0.0 {
                want += commutator_field(&b, &u, &kernel, &p).unwrap() * w;
            }
        }
        want *= qgrid.cell_volume();
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn pairing_of_constant_drift_vanishes() {
        let b = constant_drift(0.4);
        let u = cos_field();
        let rho = make_bump(vec![0.0], 1.0).unwrap();
        let path = BrownianPath::sample(21, 0, TimeGrid::new(1.0, 32).unwrap(), 1).unwrap();
        let starts = SpaceGrid::centered(1, 4.0, 0.5).unwrap();
        let flow = FlowMap::build(&b, &path, starts).unwrap();
        for n in [2u32, 6] {
            let kernel = MollifierKernel::standard(1, n).unwrap();
            let v = commutator_pairing(&u, &kernel, &flow, 1.0, &rho, 64).unwrap();
            assert!(v.abs() <= 1e-6, "n = {n}: {v}");
        }
    }

    #[test]
    fn lemma_rhs_arithmetic() {
        let zero = NormEstimates {
            u_sup_r1: 0.0,
            div_b_l1_r1: 0.0,
            b_sup_r1: 0.0,
            inv_jac_sup_r: 0.0,
            inv_grad_sup_r: 0.0,
            inv_jac_grad_l1_r: 0.0,
            b_w11_r2: Some(0.0),
            u_sup_r2: Some(0.0),
            c_rho: 1.0,
            radius: 1.0,
        };
        assert_eq!(lemma_rhs(&zero, 2).unwrap(), 0.0);

        let a = NormEstimates {
            u_sup_r1: 1.0,
            div_b_l1_r1: 2.0,
            b_sup_r1: 1.0,
            inv_jac_sup_r: 3.0,
            inv_grad_sup_r: 1.0,
            inv_jac_grad_l1_r: 4.0,
            b_w11_r2: None,
            u_sup_r2: None,
            c_rho: 1.0,
            radius: 1.0,
        };
        assert_eq!(lemma_rhs(&a, 2).unwrap(), 11.0);

        let b = NormEstimates {
            u_sup_r1: 0.0,
            div_b_l1_r1: 0.0,
            b_sup_r1: 0.0,
            inv_jac_sup_r: 1.0,
            inv_grad_sup_r: 0.0,
            inv_jac_grad_l1_r: 0.0,
            b_w11_r2: Some(3.0),
            u_sup_r2: Some(0.5),
            c_rho: 2.0,
            radius: 1.0,
        };
        assert_eq!(lemma_rhs(&b, 1).unwrap(), 3.0);

        // Missing d = 1 norms are a configuration error.
        assert!(matches!(lemma_rhs(&a, 1), Err(StlError::Config(_))));
    }

    #[test]
    fn translation_flow_norms() {
        let b = constant_drift(0.0);
        let u = cos_field();
        let path = BrownianPath::sample(22, 0, TimeGrid::new(1.0, 32).unwrap(), 1).unwrap();
        let starts = SpaceGrid::centered(1, 6.0, 0.5).unwrap();
        let flow = FlowMap::build(&b, &path, starts).unwrap();
        let est = norm_estimates(&u, &flow, 1.0, 1.0).unwrap();
        assert!((est.inv_jac_sup_r - 1.0).abs() <= 1e-6, "{}", est.inv_jac_sup_r);
        assert!((est.inv_grad_sup_r - 1.0).abs() <= 1e-6, "{}", est.inv_grad_sup_r);
        assert!(est.inv_jac_grad_l1_r.abs() <= 1e-6, "{}", est.inv_jac_grad_l1_r);
        assert!((est.u_sup_r1 - 1.0).abs() <= 1e-3, "{}", est.u_sup_r1);
    }

    #[test]
    fn holder_divergence_l1_telescopes_to_total_variation() {
        // int_{-2}^{2} |b'| = 2 for b = sgn(x) min(|x|, 1)^0.6, despite the
        // integrable singularity at 0.
        let b = holder_drift(0.6);
        let got = adaptive_abs_integral(&|x| b.divergence(0.0, &[x]).unwrap(), -2.0, 2.0, 1e-7, 0);
        assert!((got - 2.0).abs() < 1e-3, "{got}");
    }

    #[test]
    fn calibration_makes_the_bound_tight() {
        let est = NormEstimates {
            u_sup_r1: 1.0,
            div_b_l1_r1: 2.0,
            b_sup_r1: 1.0,
            inv_jac_sup_r: 3.0,
            inv_grad_sup_r: 1.0,
            inv_jac_grad_l1_r: 4.0,
            b_w11_r2: None,
            u_sup_r2: None,
            c_rho: 1.0,
            radius: 1.0,
        };
        let cal = calibrate_c_rho(&est, 2, 5.5).unwrap();
        assert!((lemma_rhs(&cal, 2).unwrap() - 5.5).abs() < 1e-12);
    }
}
