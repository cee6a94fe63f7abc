//! PDE coefficients: drift field, reaction term, initial datum, mollifier
//! kernels and compactly supported test functions.
//!
//! Coefficients are black-box evaluators with declared analytic metadata
//! (Hölder exponent, sup bound, Lipschitz constant, divergence access).
//! Validation is statistical: declared bounds are checked on seeded random
//! samples, since exact seminorms of black-box fields are not computable.

use crate::error::{Result, StlError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Maximum supported spatial dimension (fixed-size scratch buffers).
pub const MAX_DIM: usize = 8;

pub type VectorEval = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type MatrixEval = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarEval = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// How the divergence of a drift field is obtained.
#[derive(Clone)]
pub enum DivergenceMode {
    /// A registered analytic evaluator.
    Analytic(ScalarEval),
    /// Central finite differences of the field with the given step.
    FiniteDifference { h_div: f64 },
}

/// Whether finite-difference derivatives of the field are meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    /// Merely Hölder continuous; Jacobian integration refuses such fields.
    Rough,
}

/// The vector field `b(t, x)` with its declared regularity metadata.
#[derive(Clone)]
pub struct DriftField {
    dim: usize,
    eval: VectorEval,
    /// Optional analytic spatial Jacobian `grad[i*d + j] = d b_i / d x_j`.
    gradient: Option<MatrixEval>,
    alpha: f64,
    sup_bound: f64,
    holder_const: f64,
    divergence: DivergenceMode,
    div_p: f64,
    smoothness: Smoothness,
}

impl DriftField {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        eval: VectorEval,
        gradient: Option<MatrixEval>,
        alpha: f64,
        sup_bound: f64,
        holder_const: f64,
        divergence: DivergenceMode,
        div_p: f64,
        smoothness: Smoothness,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(StlError::Config(format!("drift dimension {dim} out of range 1..={MAX_DIM}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(StlError::Config(format!("Hölder exponent must lie in (0, 1], got {alpha}")));
        }
        if !(sup_bound >= 0.0) || !(holder_const >= 0.0) {
            return Err(StlError::Config("sup bound and Hölder constant must be nonnegative".into()));
        }
        if let DivergenceMode::FiniteDifference { h_div } = divergence {
            if !(h_div > 0.0) {
                return Err(StlError::Config(format!("h_div must be positive, got {h_div}")));
            }
        }
        Ok(DriftField {
            dim,
            eval,
            gradient,
            alpha,
            sup_bound,
            holder_const,
            divergence,
            div_p,
            smoothness,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }

    pub fn div_p(&self) -> f64 {
        self.div_p
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Evaluates `b(t, x)` into `out`, rejecting non-finite values.
    pub fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.eval)(t, x, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(StlError::Coefficient {
                t,
                point: x.to_vec(),
                detail: "drift evaluated to a non-finite value".into(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.evaluate_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Spatial Jacobian `d b_i / d x_j`, row-major. Analytic when registered,
    /// otherwise central finite differences with step `h`; rough fields
    /// without a registered gradient are refused.
    pub fn jacobian_into(&self, t: f64, x: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
        if let Some(g) = &self.gradient {
            g(t, x, out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(StlError::Coefficient {
                    t,
                    point: x.to_vec(),
                    detail: "drift gradient evaluated to a non-finite value".into(),
                });
            }
            return Ok(());
        }
        if self.smoothness == Smoothness::Rough {
            return Err(StlError::Config(
                "finite-difference Jacobian of a rough drift is meaningless; mollify first".into(),
            ));
        }
        let d = self.dim;
        let mut xp = [0.0; MAX_DIM];
        let mut bp = [0.0; MAX_DIM];
        let mut bm = [0.0; MAX_DIM];
        for j in 0..d {
            xp[..d].copy_from_slice(x);
            xp[j] = x[j] + h;
            self.evaluate_into(t, &xp[..d], &mut bp[..d])?;
            xp[j] = x[j] - h;
            self.evaluate_into(t, &xp[..d], &mut bm[..d])?;
            for i in 0..d {
                out[i * d + j] = (bp[i] - bm[i]) / (2.0 * h);
            }
        }
        Ok(())
    }

    /// `div b(t, x)`: analytic when registered, central differences otherwise.
    pub fn divergence(&self, t: f64, x: &[f64]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(StlError::Config("divergence query at a non-finite point".into()));
        }
        match &self.divergence {
            DivergenceMode::Analytic(f) => {
                let v = f(t, x);
                if !v.is_finite() {
                    return Err(StlError::Coefficient {
                        t,
                        point: x.to_vec(),
                        detail: "divergence evaluated to a non-finite value".into(),
                    });
                }
                Ok(v)
            }
            DivergenceMode::FiniteDifference { h_div } => {
                let d = self.dim;
                let mut xp = [0.0; MAX_DIM];
                let mut bp = [0.0; MAX_DIM];
                let mut bm = [0.0; MAX_DIM];
                let mut acc = 0.0;
                for j in 0..d {
                    xp[..d].copy_from_slice(x);
                    xp[j] = x[j] + h_div;
                    self.evaluate_into(t, &xp[..d], &mut bp[..d])?;
                    xp[j] = x[j] - h_div;
                    self.evaluate_into(t, &xp[..d], &mut bm[..d])?;
                    acc += (bp[j] - bm[j]) / (2.0 * h_div);
                }
                Ok(acc)
            }
        }
    }

    /// Statistical validation of the declared metadata on seeded samples.
    ///
    /// Checks `div_p > 2`, the sup bound, and that empirical Hölder ratios do
    /// not exceed the declared constant by more than 5%.
    pub fn validate(&self, horizon: f64, seed: u64) -> Result<()> {
        if !(self.div_p > 2.0) {
            return Err(StlError::Validation(format!(
                "divergence integrability exponent must exceed 2, got {}",
                self.div_p
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut x = vec![0.0; d];
        let mut b = vec![0.0; d];
        for _ in 0..300 {
            let t = rng.gen_range(0.0..=horizon.max(f64::MIN_POSITIVE));
            for xi in x.iter_mut() {
                *xi = rng.gen_range(-2.0..2.0);
            }
            self.evaluate_into(t, &x, &mut b)?;
            let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > self.sup_bound * (1.0 + 1e-9) + 1e-12 {
                return Err(StlError::Validation(format!(
                    "|b({t}, {x:?})| = {norm} exceeds declared sup bound {}",
                    self.sup_bound
                )));
            }
        }
        let est = holder_estimate_inner(self, horizon, seed ^ 0x9e37, 300)?;
        if est > self.holder_const * 1.05 {
            return Err(StlError::Validation(format!(
                "empirical Hölder ratio {est} exceeds declared constant {} by more than 5%",
                self.holder_const
            )));
        }
        Ok(())
    }
}

/// Empirical Hölder seminorm: max over sampled pairs of
/// `|b(t,x) - b(t,y)| / |x - y|^alpha`. Deterministic given the seed.
pub fn holder_estimate(field: &DriftField, sampler_seed: u64, n_pairs: usize) -> Result<f64> {
    if n_pairs < 100 {
        return Err(StlError::Config(format!("holder_estimate needs n_pairs >= 100, got {n_pairs}")));
    }
    holder_estimate_inner(field, 1.0, sampler_seed, n_pairs)
}

fn holder_estimate_inner(field: &DriftField, horizon: f64, seed: u64, n_pairs: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = field.dim();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut best = 0.0f64;
    for k in 0..n_pairs {
        let t = rng.gen_range(0.0..=horizon.max(f64::MIN_POSITIVE));
        for xi in x.iter_mut() {
            *xi = rng.gen_range(-2.0..2.0);
        }
        match k % 5 {
            // Global pairs.
            0 | 1 => {
                for yi in y.iter_mut() {
                    *yi = rng.gen_range(-2.0..2.0);
                }
            }
            // Local pairs at log-uniform separations.
            2 | 3 => {
                let r = 10f64.powf(rng.gen_range(-5.0..0.0));
                for (yi, xi) in y.iter_mut().zip(&x) {
                    *yi = xi + r * rng.gen_range(-1.0..1.0);
                }
            }
            // Mirrored pairs across the origin at small scales, where
            // odd kink-type fields attain their seminorm.
            _ => {
                let r = 10f64.powf(rng.gen_range(-5.0..0.0));
                for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
                    *xi = r * rng.gen_range(-1.0..1.0);
                    *yi = -*xi;
                }
            }
        }
        let dist: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-14 {
            continue;
        }
        field.evaluate_into(t, &x, &mut bx)?;
        field.evaluate_into(t, &y, &mut by)?;
        let diff: f64 = bx
            .iter()
            .zip(&by)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        best = best.max(diff / dist.powf(field.alpha()));
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Mollifier kernel
// ---------------------------------------------------------------------------

/// Normalization cache for the bump kernel, keyed by (dim, shape bits).
fn kernel_norm_const(dim: usize, shape: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (dim, shape.to_bits());
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return *v;
    }
    // Radial reduction: integral over the unit ball of exp(-s/(1-r^2))
    // equals S_d * int_0^1 r^{d-1} exp(-s/(1-r^2)) dr.
    let surface = match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            // S_d = 2 pi^{d/2} / Gamma(d/2); gamma via Stirling-free ladder.
            let mut g: f64 = if dim % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
            let mut a = if dim % 2 == 0 { 1.0 } else { 0.5 };
            while a < dim as f64 / 2.0 - 1e-12 {
                g *= a;
                a += 1.0;
            }
            2.0 * std::f64::consts::PI.powf(dim as f64 / 2.0) / g
        }
    };
    let m = 2_000_000usize;
    let h = 1.0 / m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        let r = (i as f64 + 0.5) * h;
        acc += r.powi(dim as i32 - 1) * (-shape / (1.0 - r * r)).exp();
    }
    let integral = surface * acc * h;
    let c = 1.0 / integral;
    cache.lock().unwrap().insert(key, c);
    c
}

/// Smooth probability kernel supported in the ball of radius `epsilon`,
/// scaled from the standard bump `exp(-s / (1 - |z|^2))` on the unit ball.
///
/// Bandwidths follow the dyadic ladder `epsilon_n = 2^{-n}`. The `shape`
/// parameter deforms the profile; two distinct shapes give two genuinely
/// different mollifier families for uniqueness-style comparisons.
#[derive(Clone, Debug)]
pub struct MollifierKernel {
    dim: usize,
    epsilon: f64,
    index: Option<u32>,
    shape: f64,
    norm_const: f64,
}

impl MollifierKernel {
    /// The standard kernel at bandwidth `2^{-n}`.
    pub fn standard(dim: usize, n: u32) -> Result<Self> {
        Self::with_shape(dim, n, 1.0)
    }

    pub fn with_shape(dim: usize, n: u32, shape: f64) -> Result<Self> {
        let mut k = Self::with_bandwidth(dim, 2f64.powi(-(n as i32)), shape)?;
        k.index = Some(n);
        Ok(k)
    }

    pub fn with_bandwidth(dim: usize, epsilon: f64, shape: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(StlError::Config(format!("kernel dimension {dim} out of range")));
        }
        if !(epsilon > 0.0) {
            return Err(StlError::Config(format!("kernel bandwidth must be positive, got {epsilon}")));
        }
        if !(shape > 0.0) {
            return Err(StlError::Config(format!("kernel shape must be positive, got {shape}")));
        }
        Ok(MollifierKernel {
            dim,
            epsilon,
            index: None,
            shape,
            norm_const: kernel_norm_const(dim, shape),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> f64 {
        self.epsilon
    }

    pub fn index(&self) -> Option<u32> {
        self.index
    }

    /// Kernel value; zero outside the ball of radius `epsilon`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| (v / self.epsilon).powi(2)).sum();
        if r2 >= 1.0 {
            return 0.0;
        }
        self.norm_const / self.epsilon.powi(self.dim as i32) * (-self.shape / (1.0 - r2)).exp()
    }

    /// Analytic kernel gradient.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| (v / self.epsilon).powi(2)).sum();
        if r2 >= 1.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let phi = self.norm_const / self.epsilon.powi(self.dim as i32) * (-self.shape / (1.0 - r2)).exp();
        let factor = -2.0 * self.shape / ((1.0 - r2) * (1.0 - r2)) / (self.epsilon * self.epsilon);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = phi * factor * xi;
        }
    }

    /// Tensor-product midpoint quadrature rule over the kernel support.
    ///
    /// `nodes_per_axis` spans the full support `[-eps, eps]`; weights are
    /// normalized to unit mass so convolution fixes constants exactly.
    pub fn quadrature(&self, nodes_per_axis: usize) -> KernelQuadrature {
        let d = self.dim;
        let m = nodes_per_axis.max(4);
        let h = 2.0 * self.epsilon / m as f64;
        let count = m.pow(d as u32);
        let mut offsets = Vec::new();
        let mut phi_w = Vec::new();
        let mut grad_w = Vec::new();
        let mut z = vec![0.0; d];
        let mut g = vec![0.0; d];
        for idx in 0..count {
            let mut rem = idx;
            for axis in (0..d).rev() {
                let i = rem % m;
                rem /= m;
                z[axis] = -self.epsilon + (i as f64 + 0.5) * h;
            }
            let w = self.evaluate(&z);
            if w == 0.0 {
                continue;
            }
            offsets.extend_from_slice(&z);
            phi_w.push(w);
            self.gradient_into(&z, &mut g);
            grad_w.extend_from_slice(&g);
        }
        let cell = h.powi(d as i32);
        let raw_mass: f64 = phi_w.iter().sum::<f64>() * cell;
        let corr = cell / raw_mass;
        for w in phi_w.iter_mut() {
            *w *= corr;
        }
        for w in grad_w.iter_mut() {
            *w *= corr;
        }
        KernelQuadrature {
            dim: d,
            offsets,
            phi_weights: phi_w,
            grad_weights: grad_w,
        }
    }
}

/// Discrete convolution rule: nodes `y_i` with probability weights
/// `w_i ~ phi(y_i) h^d` (normalized to sum 1) and matching gradient weights.
pub struct KernelQuadrature {
    dim: usize,
    offsets: Vec<f64>,
    phi_weights: Vec<f64>,
    grad_weights: Vec<f64>,
}

impl KernelQuadrature {
    pub fn len(&self) -> usize {
        self.phi_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_weights.is_empty()
    }

    pub fn offset(&self, i: usize) -> &[f64] {
        &self.offsets[i * self.dim..(i + 1) * self.dim]
    }

    pub fn phi_weight(&self, i: usize) -> f64 {
        self.phi_weights[i]
    }

    pub fn grad_weight(&self, i: usize) -> &[f64] {
        &self.grad_weights[i * self.dim..(i + 1) * self.dim]
    }
}

/// Spatial mollification `b_n = b * phi_n` at each frozen time.
///
/// The returned field carries an analytic Jacobian `b * grad(phi_n)` and, in
/// analytic divergence mode, the divergence `(div b) * phi_n`; in
/// finite-difference mode the divergence becomes `b * grad(phi_n)` summed over
/// coordinates. The sup bound survives unchanged (probability kernel), and the
/// result is smooth regardless of the base field's roughness.
pub fn mollify_drift(
    field: &DriftField,
    kernel: &MollifierKernel,
    nodes_per_axis: Option<usize>,
) -> Result<DriftField> {
    if field.dim() != kernel.dim() {
        return Err(StlError::Config(format!(
            "kernel dimension {} does not match drift dimension {}",
            kernel.dim(),
            field.dim()
        )));
    }
    // At least 8 nodes per bandwidth per axis; the support spans 2 bandwidths.
    let default_nodes = if field.dim() == 1 { 48 } else { 16 };
    let m = nodes_per_axis.unwrap_or(default_nodes);
    if m < 16 {
        return Err(StlError::Config(format!(
            "convolution quadrature needs >= 8 nodes per bandwidth per axis (16 over the support), got {m}"
        )));
    }
    let quad = Arc::new(kernel.quadrature(m));
    let d = field.dim();
    let base = field.eval.clone();

    let q = quad.clone();
    let b0 = base.clone();
    let eval: VectorEval = Arc::new(move |t, x, out| {
        let mut shifted = [0.0; MAX_DIM];
        let mut bv = [0.0; MAX_DIM];
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..q.len() {
            let y = q.offset(i);
            for j in 0..d {
                shifted[j] = x[j] - y[j];
            }
            b0(t, &shifted[..d], &mut bv[..d]);
            let w = q.phi_weight(i);
            for j in 0..d {
                out[j] += w * bv[j];
            }
        }
    });

    let q = quad.clone();
    let b0 = base.clone();
    let gradient: MatrixEval = Arc::new(move |t, x, out| {
        let mut shifted = [0.0; MAX_DIM];
        let mut bv = [0.0; MAX_DIM];
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..q.len() {
            let y = q.offset(i);
            for j in 0..d {
                shifted[j] = x[j] - y[j];
            }
            b0(t, &shifted[..d], &mut bv[..d]);
            let gw = q.grad_weight(i);
            for r in 0..d {
                for c in 0..d {
                    out[r * d + c] += bv[r] * gw[c];
                }
            }
        }
    });

    let divergence = match &field.divergence {
        DivergenceMode::Analytic(div0) => {
            let q = quad.clone();
            let div0 = div0.clone();
            DivergenceMode::Analytic(Arc::new(move |t, x| {
                let mut shifted = [0.0; MAX_DIM];
                let mut acc = 0.0;
                for i in 0..q.len() {
                    let y = q.offset(i);
                    for j in 0..d {
                        shifted[j] = x[j] - y[j];
                    }
                    acc += q.phi_weight(i) * div0(t, &shifted[..d]);
                }
                acc
            }))
        }
        DivergenceMode::FiniteDifference { .. } => {
            let q = quad.clone();
            let b0 = base.clone();
            DivergenceMode::Analytic(Arc::new(move |t, x| {
                let mut shifted = [0.0; MAX_DIM];
                let mut bv = [0.0; MAX_DIM];
                let mut acc = 0.0;
                for i in 0..q.len() {
                    let y = q.offset(i);
                    for j in 0..d {
                        shifted[j] = x[j] - y[j];
                    }
                    b0(t, &shifted[..d], &mut bv[..d]);
                    let gw = q.grad_weight(i);
                    for j in 0..d {
                        acc += bv[j] * gw[j];
                    }
                }
                acc
            }))
        }
    };

    DriftField::new(
        d,
        eval,
        Some(gradient),
        field.alpha,
        field.sup_bound,
        field.holder_const,
        divergence,
        field.div_p,
        Smoothness::Smooth,
    )
}

// ---------------------------------------------------------------------------
// Reaction term and initial datum
// ---------------------------------------------------------------------------

pub type ReactionEval = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
pub type ProfileEval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The semilinear term `F(t, x, u)` with its Lipschitz constant in `u` and a
/// time-integrable sup profile `M(t) >= |F(t, ., .)|`.
#[derive(Clone)]
pub struct ReactionTerm {
    eval: ReactionEval,
    lip_constant: f64,
    sup_profile: ProfileEval,
}

impl ReactionTerm {
    pub fn new(eval: ReactionEval, lip_constant: f64, sup_profile: ProfileEval) -> Result<Self> {
        if !(lip_constant >= 0.0) {
            return Err(StlError::Config("Lipschitz constant must be nonnegative".into()));
        }
        Ok(ReactionTerm {
            eval,
            lip_constant,
            sup_profile,
        })
    }

    pub fn zero() -> Self {
        ReactionTerm {
            eval: Arc::new(|_, _, _| 0.0),
            lip_constant: 0.0,
            sup_profile: Arc::new(|_| 0.0),
        }
    }

    pub fn lip_constant(&self) -> f64 {
        self.lip_constant
    }

    pub fn sup_profile(&self, t: f64) -> f64 {
        (self.sup_profile)(t)
    }

    /// Midpoint quadrature of `int_0^t M(s) ds`.
    pub fn sup_mass(&self, t: f64) -> f64 {
        let m = 512;
        let h = t / m as f64;
        (0..m).map(|i| (self.sup_profile)((i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    pub fn evaluate(&self, t: f64, x: &[f64], u: f64) -> Result<f64> {
        let v = (self.eval)(t, x, u);
        if !v.is_finite() {
            return Err(StlError::Coefficient {
                t,
                point: x.to_vec(),
                detail: format!("reaction term non-finite at u={u}"),
            });
        }
        Ok(v)
    }

    /// Statistical check of the Lipschitz constant and the sup profile.
    pub fn validate(&self, dim: usize, horizon: f64, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; dim];
        for _ in 0..300 {
            let t = rng.gen_range(0.0..=horizon.max(f64::MIN_POSITIVE));
            for xi in x.iter_mut() {
                *xi = rng.gen_range(-2.0..2.0);
            }
            let u = rng.gen_range(-2.0..2.0);
            let v = rng.gen_range(-2.0..2.0);
            let fu = self.evaluate(t, &x, u)?;
            let fv = self.evaluate(t, &x, v)?;
            if (u - v).abs() > 1e-12 {
                let ratio = (fu - fv).abs() / (u - v).abs();
                if ratio > self.lip_constant * 1.05 + 1e-12 {
                    return Err(StlError::Validation(format!(
                        "empirical Lipschitz ratio {ratio} exceeds declared constant {}",
                        self.lip_constant
                    )));
                }
            }
            let m = (self.sup_profile)(t);
            if fu.abs() > m * (1.0 + 1e-9) + 1e-12 {
                return Err(StlError::Validation(format!(
                    "|F({t}, x, {u})| = {} exceeds profile M(t) = {m}",
                    fu.abs()
                )));
            }
        }
        Ok(())
    }
}

/// Bounded initial datum `f`.
#[derive(Clone)]
pub struct InitialDatum {
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    sup_bound: f64,
}

impl InitialDatum {
    pub fn new(eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, sup_bound: f64) -> Result<Self> {
        if !(sup_bound >= 0.0) {
            return Err(StlError::Config("datum sup bound must be nonnegative".into()));
        }
        Ok(InitialDatum { eval, sup_bound })
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn validate(&self, dim: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; dim];
        for _ in 0..300 {
            for xi in x.iter_mut() {
                *xi = rng.gen_range(-3.0..3.0);
            }
            let v = self.evaluate(&x);
            if !v.is_finite() || v.abs() > self.sup_bound * (1.0 + 1e-9) + 1e-12 {
                return Err(StlError::Validation(format!(
                    "|f({x:?})| = {v} violates declared sup bound {}",
                    self.sup_bound
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Compactly supported smooth bump with analytic gradient and Laplacian:
/// `rho(x) = exp(1 - 1/(1 - |x-c|^2/r^2))` inside `B(c, r)`, zero outside.
#[derive(Clone, Debug)]
pub struct TestFunction {
    center: Vec<f64>,
    radius: f64,
}

/// Builds the standard bump test function on `B(center, radius)`.
pub fn make_bump(center: Vec<f64>, radius: f64) -> Result<TestFunction> {
    if center.is_empty() || center.len() > MAX_DIM {
        return Err(StlError::Config("bump center dimension out of range".into()));
    }
    if !(radius > 0.0) {
        return Err(StlError::Config(format!("bump radius must be positive, got {radius}")));
    }
    Ok(TestFunction { center, radius })
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Radius `R` with support contained in `B(0, R)`.
    pub fn support_radius(&self) -> f64 {
        let c: f64 = self.center.iter().map(|v| v * v).sum::<f64>().sqrt();
        c + self.radius
    }

    fn s(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(xi, ci)| (xi - ci) * (xi - ci))
            .sum::<f64>()
            / (self.radius * self.radius)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let s = self.s(x);
        if s >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s)).exp()
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let s = self.s(x);
        if s >= 1.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let rho = (1.0 - 1.0 / (1.0 - s)).exp();
        let gp = -1.0 / ((1.0 - s) * (1.0 - s));
        let scale = rho * gp * 2.0 / (self.radius * self.radius);
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
            *o = scale * (xi - ci);
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let s = self.s(x);
        if s >= 1.0 {
            return 0.0;
        }
        let rho = (1.0 - 1.0 / (1.0 - s)).exp();
        let gp = -1.0 / ((1.0 - s) * (1.0 - s));
        let gpp = -2.0 / ((1.0 - s) * (1.0 - s) * (1.0 - s));
        let r2 = self.radius * self.radius;
        let grad_s_sq = 4.0 * s / r2;
        let lap_s = 2.0 * self.dim() as f64 / r2;
        rho * ((gp * gp + gpp) * grad_s_sq + gp * lap_s)
    }
}
