//! Experiment drivers: Monte Carlo scenario runs, mollification convergence,
//! commutator decay, uniqueness distances, the noise demo, the cross-solver
//! comparison, and the weak-form check. Each driver writes CSV tables under
//! the configured output directory and returns its data for programmatic use.
//!
//! Determinism contract: parallelism is over path or bandwidth indices only,
//! results are collected in index order, and every aggregation runs
//! sequentially over that order, so output files are byte-identical for any
//! thread count.

use crate::characteristics::{
    integrate_flow, integrate_jacobian, solve_field, solve_field_series, FlowMap, SolutionField,
};
use crate::commutator::{
    commutator_field, lemma_rhs, norm_estimates, write_decay_csv, DecayRow, ScalarField,
};
use crate::error::{Result, StlError};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::scenarios::ScenarioSpec;
use crate::fields::{make_bump, mollify_drift, DriftField, MollifierKernel};
use crate::grid::SpaceGrid;
use crate::oracle::{l1_distance, upwind_solve, TransformedScenario};
use crate::paths::{BrownianPath, TimeGrid};
use crate::weakform::{ito_residual, spatial_pairing, WeakFormReport, WeakFormScenario};
use rayon::prelude::*;
use std::path::PathBuf;
use std::sync::Arc;

/// Kernel shapes of the two mollifier families used for uniqueness-style
/// comparisons; close enough that smooth scenarios collapse, distinct enough
/// that the families genuinely differ.
pub const KERNEL_SHAPE_A: f64 = 1.0;
pub const KERNEL_SHAPE_B: f64 = 1.4;

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| StlError::Config(format!("thread pool: {e}")))
}

fn make_path(cfg: &ExperimentConfig, noise: bool, index: u64, grid: TimeGrid) -> Result<BrownianPath> {
    if noise {
        BrownianPath::sample(cfg.master_seed, index, grid, cfg.dimension)
    } else {
        Ok(BrownianPath::zero(grid, cfg.dimension))
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// run_scenario
// ---------------------------------------------------------------------------

pub struct ScenarioRunOutput {
    pub files: Vec<PathBuf>,
    /// Per path, per observation time, in index order.
    pub fields: Vec<(u64, f64, SolutionField)>,
    /// Monte Carlo summary of `int_K |u(T)|`.
    pub abs_mean: f64,
    pub abs_se: f64,
    /// Monte Carlo summary of the bump pairing at the final time.
    pub pairing_mean: f64,
    pub pairing_se: f64,
}

/// Solves the configured scenario on every path at every observation time,
/// dumps the fields, and writes a Monte Carlo summary.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<ScenarioRunOutput> {
    cfg.validate()?;
    let spec = ScenarioSpec::resolve(cfg)?;
    let scn = spec.build()?;
    let grid = cfg.time_grid()?;
    let obs = cfg.observation_grid()?;
    let sign = cfg.sign();
    let bump = make_bump(vec![0.0; cfg.dimension], cfg.box_half_width.min(1.0))?;

    let indices: Vec<u64> = (0..cfg.paths as u64).collect();
    let per_path: Vec<(BrownianPath, Vec<SolutionField>)> = pool(cfg.threads)?.install(|| {
        indices
            .par_iter()
            .map(|&idx| {
                let path = make_path(cfg, scn.noise, idx, grid)?;
                let mut fields = Vec::with_capacity(cfg.observation_times.len());
                for &t in &cfg.observation_times {
                    let u = solve_field(&scn.drift, &scn.reaction, &scn.datum, &path, t, &obs, sign)?;
                    fields.push(u);
                }
                Ok((path, fields))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut files = Vec::new();
    let mut out_fields = Vec::new();
    let mut abs_vals = Vec::new();
    let mut pair_vals = Vec::new();
    let vol = obs.cell_volume();
    for (idx, (path, fields)) in per_path.into_iter().enumerate() {
        if cfg.dump_paths {
            let p = cfg.out_dir.join(format!("path_p{idx}.csv"));
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            path.write_csv(&p)?;
            files.push(p);
        }
        for u in fields {
            let p = cfg
                .out_dir
                .join(format!("u_t{:.4}_p{idx}.csv", u.time()));
            u.write_csv(&p)?;
            files.push(p);
            if (u.time() - *cfg.observation_times.last().unwrap()).abs() < 1e-12 {
                abs_vals.push(u.values().iter().map(|v| v.abs()).sum::<f64>() * vol);
                pair_vals.push(spatial_pairing(&u, &bump)?);
            }
            out_fields.push((idx as u64, u.time(), u));
        }
    }
    let (abs_mean, abs_se) = mean_and_se(&abs_vals);
    let (pairing_mean, pairing_se) = mean_and_se(&pair_vals);

    let summary = cfg.out_dir.join("mc_summary.csv");
    crate::csv::write_table(
        &summary,
        &["quantity", "mean", "std_error"],
        &[
            vec![
                "l1_abs".into(),
                crate::csv::fmt(abs_mean),
                crate::csv::fmt(abs_se),
            ],
            vec![
                "bump_pairing".into(),
                crate::csv::fmt(pairing_mean),
                crate::csv::fmt(pairing_se),
            ],
        ],
    )?;
    files.push(summary);

    Ok(ScenarioRunOutput {
        files,
        fields: out_fields,
        abs_mean,
        abs_se,
        pairing_mean,
        pairing_se,
    })
}

// ---------------------------------------------------------------------------
// run_convergence
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ConvRow {
    pub n: u32,
    pub epsilon: f64,
    pub flow_error: f64,
    pub jacobian_error: f64,
}

/// Mollified-flow convergence: `e(n) = mean over paths of
/// int_K sup_k |X^n_k - X^ref_k| dx` against the reference index
/// `n_max + 2`, plus the analogous Jacobian error.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ConvRow>> {
    cfg.validate()?;
    let spec = ScenarioSpec::resolve(cfg)?;
    let scn = spec.build()?;
    let grid = cfg.time_grid()?;
    let starts = cfg.observation_grid()?;
    let d = cfg.dimension;
    let n_ref = cfg.n_max + 2;
    let ns: Vec<u32> = (cfg.n_min..=cfg.n_max).collect();

    let indices: Vec<u64> = (0..cfg.paths as u64).collect();
    // Per path: for each n, (flow error, jacobian error).
    let per_path: Vec<Vec<(f64, f64)>> = pool(cfg.threads)?.install(|| {
        indices
            .par_iter()
            .map(|&idx| {
                let path = make_path(cfg, scn.noise, idx, grid)?;
                let reference = mollify_drift(&scn.drift, &MollifierKernel::standard(d, n_ref)?, None)?;
                let ref_data = flows_and_jacobians(&reference, &path, &starts)?;
                let mut rows = Vec::with_capacity(ns.len());
                for &n in &ns {
                    let bn = mollify_drift(&scn.drift, &MollifierKernel::standard(d, n)?, None)?;
                    let data = flows_and_jacobians(&bn, &path, &starts)?;
                    let mut flow_err = 0.0;
                    let mut jac_err = 0.0;
                    for (a, r) in data.iter().zip(&ref_data) {
                        let mut sup_x = 0.0f64;
                        for k in 0..=grid.steps() {
                            let diff: f64 = a
                                .0
                                .node(k)
                                .iter()
                                .zip(r.0.node(k))
                                .map(|(p, q)| (p - q) * (p - q))
                                .sum::<f64>()
                                .sqrt();
                            sup_x = sup_x.max(diff);
                        }
                        flow_err += sup_x;
                        let mut sup_j = 0.0f64;
                        for k in 0..=grid.steps() {
                            sup_j = sup_j.max((&a.1.matrices[k] - &r.1.matrices[k]).abs().max());
                        }
                        jac_err += sup_j;
                    }
                    let vol = starts.cell_volume();
                    rows.push((flow_err * vol, jac_err * vol));
                }
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(ns.len());
    for (j, &n) in ns.iter().enumerate() {
        let flow: Vec<f64> = per_path.iter().map(|p| p[j].0).collect();
        let jac: Vec<f64> = per_path.iter().map(|p| p[j].1).collect();
        rows.push(ConvRow {
            n,
            epsilon: 2f64.powi(-(n as i32)),
            flow_error: mean_and_se(&flow).0,
            jacobian_error: mean_and_se(&jac).0,
        });
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                crate::csv::fmt(r.epsilon),
                crate::csv::fmt(r.flow_error),
                crate::csv::fmt(r.jacobian_error),
            ]
        })
        .collect();
    crate::csv::write_table(
        &cfg.out_dir.join("converge.csv"),
        &["n", "epsilon", "flow_error", "jacobian_error"],
        &table,
    )?;
    Ok(rows)
}

type FlowData = Vec<(crate::characteristics::Trajectory, crate::characteristics::JacobianSeries)>;

fn flows_and_jacobians(b: &DriftField, path: &BrownianPath, starts: &SpaceGrid) -> Result<FlowData> {
    let mut out = Vec::with_capacity(starts.len());
    for x in starts.points() {
        let traj = integrate_flow(b, path, &x)?;
        let jac = integrate_jacobian(b, &traj, 1e-5)?;
        out.push((traj, jac));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// run_commutator_decay
// ---------------------------------------------------------------------------

/// Commutator decay along the flow: `w_n` is the difference of the two
/// kernel-family solutions at matched index `n`, and the reported value is
/// the left-endpoint time integral of the pairing
/// `int R_n(b_n, w_n(s))(X_s(x)) rho(x) dx` over the path grid. The bound
/// column is the time-horizon multiple of the commutator-lemma right-hand
/// side with `C_rho` calibrated at the coarsest index.
pub fn run_commutator_decay(cfg: &ExperimentConfig) -> Result<Vec<DecayRow>> {
    cfg.validate()?;
    if cfg.dimension != 1 {
        return Err(StlError::Config("commutator decay runs in d = 1".into()));
    }
    let spec = ScenarioSpec::resolve(cfg)?;
    let scn = spec.build()?;
    let grid = cfg.time_grid()?;
    let sign = cfg.sign();
    let path = make_path(cfg, scn.noise, 0, grid)?;
    let rho = make_bump(vec![0.0], cfg.box_half_width.min(1.0))?;
    let radius = rho.radius();

    // Solution grid wide enough for the transported support plus kernel halo.
    let hw = radius + scn.drift.sup_bound() * cfg.horizon + path.max_abs() + 1.5;
    let sgrid = SpaceGrid::centered(1, hw, cfg.cell_width)?;
    let qcells = 64usize;
    let qgrid = SpaceGrid::centered(1, radius, 2.0 * radius / qcells as f64)?;

    let ns: Vec<u32> = (cfg.n_min..=cfg.n_max).collect();
    // Per n: (|time-integrated pairing|, raw lemma rhs with C_rho = 1).
    let results: Vec<(f64, f64)> = pool(cfg.threads)?.install(|| {
        ns.par_iter()
            .map(|&n| {
                let k1 = MollifierKernel::with_shape(1, n, KERNEL_SHAPE_A)?;
                let k2 = MollifierKernel::with_shape(1, n, KERNEL_SHAPE_B)?;
                let b1 = mollify_drift(&scn.drift, &k1, None)?;
                let b2 = mollify_drift(&scn.drift, &k2, None)?;
                let s1 = solve_field_series(&b1, &scn.reaction, &scn.datum, &path, &sgrid, sign)?;
                let s2 = solve_field_series(&b2, &scn.reaction, &scn.datum, &path, &sgrid, sign)?;

                // Difference fields per node and their time-sup envelope.
                let diffs: Vec<SolutionField> = s1
                    .iter()
                    .zip(&s2)
                    .map(|(a, b)| {
                        SolutionField::new(
                            a.time(),
                            sgrid.clone(),
                            a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect(),
                            a.realization(),
                        )
                    })
                    .collect();

                // Trajectories from the quadrature nodes, shared by all times.
                let trajs: Vec<_> = qgrid
                    .points()
                    .map(|x| integrate_flow(&b1, &path, &x))
                    .collect::<Result<Vec<_>>>()?;
                let weights: Vec<f64> = qgrid.points().map(|x| rho.evaluate(&x)).collect();
                let vol = qgrid.cell_volume();
                let dt = grid.dt();
                let mut total = 0.0;
                for k in 0..grid.steps() {
                    let w_k = ScalarField::from_solution(&diffs[k]);
                    let mut pairing = 0.0;
                    for (traj, w) in trajs.iter().zip(&weights) {
                        if *w == 0.0 {
                            continue;
                        }
                        pairing += commutator_field(&b1, &w_k, &k1, traj.node(k))? * w * vol;
                    }
                    total += pairing * dt;
                }

                // Lemma right-hand side with the time-sup difference envelope.
                let envelope = {
                    let diffs = diffs.clone();
                    ScalarField::new(
                        Arc::new(move |x: &[f64]| {
                            diffs
                                .iter()
                                .fold(0.0f64, |m, f| m.max(f.interpolate(x).abs()))
                        }),
                        hw,
                    )
                };
                let inv_hw = crate::characteristics::inflated_half_width(&qgrid, &b1, &path);
                let flow = FlowMap::build(&b1, &path, SpaceGrid::centered(1, inv_hw, inv_hw / 32.0)?)?;
                let est = norm_estimates(&envelope, &flow, cfg.horizon, radius)?;
                let raw = lemma_rhs(&est, 1)? * cfg.horizon;
                Ok((total.abs(), raw))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // Calibrate C_rho at the coarsest index, then fill the bound column.
    let c_rho = if results[0].1 > 0.0 {
        (results[0].0 / results[0].1).max(f64::MIN_POSITIVE)
    } else {
        1.0
    };
    let rows: Vec<DecayRow> = ns
        .iter()
        .zip(&results)
        .map(|(&n, &(pairing, raw))| {
            let bound = c_rho * raw;
            DecayRow {
                n,
                epsilon: 2f64.powi(-(n as i32)),
                pairing_abs: pairing,
                lemma_rhs: bound,
                ratio: if bound > 0.0 { pairing / bound } else { 0.0 },
            }
        })
        .collect();
    write_decay_csv(&cfg.out_dir.join("decay.csv"), &rows)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// run_uniqueness
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct UniqRow {
    pub n: u32,
    pub epsilon: f64,
    pub distance: f64,
}

/// Uniqueness stability: `D(n)` is the mean over paths of the L1 distance on
/// K at time T between the two kernel-family solutions at matched index.
pub fn run_uniqueness(cfg: &ExperimentConfig) -> Result<Vec<UniqRow>> {
    cfg.validate()?;
    let spec = ScenarioSpec::resolve(cfg)?;
    let scn = spec.build()?;
    let grid = cfg.time_grid()?;
    let obs = cfg.observation_grid()?;
    let sign = cfg.sign();
    let t_end = *cfg.observation_times.last().unwrap();
    let ns: Vec<u32> = (cfg.n_min..=cfg.n_max).collect();
    let indices: Vec<u64> = (0..cfg.paths as u64).collect();

    let mut rows = Vec::with_capacity(ns.len());
    let p = pool(cfg.threads)?;
    for &n in &ns {
        let k1 = MollifierKernel::with_shape(cfg.dimension, n, KERNEL_SHAPE_A)?;
        let k2 = MollifierKernel::with_shape(cfg.dimension, n, KERNEL_SHAPE_B)?;
        let b1 = mollify_drift(&scn.drift, &k1, None)?;
        let b2 = mollify_drift(&scn.drift, &k2, None)?;
        let dists: Vec<f64> = p.install(|| {
            indices
                .par_iter()
                .map(|&idx| {
                    let path = make_path(cfg, scn.noise, idx, grid)?;
                    let u1 = solve_field(&b1, &scn.reaction, &scn.datum, &path, t_end, &obs, sign)?;
                    let u2 = solve_field(&b2, &scn.reaction, &scn.datum, &path, t_end, &obs, sign)?;
                    l1_distance(&u1, &u2)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        rows.push(UniqRow {
            n,
            epsilon: 2f64.powi(-(n as i32)),
            distance: mean_and_se(&dists).0,
        });
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                crate::csv::fmt(r.epsilon),
                crate::csv::fmt(r.distance),
            ]
        })
        .collect();
    crate::csv::write_table(
        &cfg.out_dir.join("unique.csv"),
        &["n", "epsilon", "distance"],
        &table,
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// run_noise_demo
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct NoiseRow {
    pub delta: f64,
    pub s_det: f64,
    pub s_sto: f64,
}

/// Regularization-by-noise demo for the Hölder drift: flow separation of the
/// starts `+delta` and `-delta` at time T, deterministically (noise off, fine
/// steps) and as a Monte Carlo mean over at least 100 noisy paths.
pub fn run_noise_demo(cfg: &ExperimentConfig) -> Result<Vec<NoiseRow>> {
    cfg.validate()?;
    let mut holder_cfg = cfg.clone();
    holder_cfg.drift = Some("holder-alpha".into());
    holder_cfg.dimension = 1;
    let spec = ScenarioSpec::resolve(&holder_cfg)?;
    let drift = spec.build()?.drift;

    let deltas = [1e-2, 1e-4, 1e-6];
    let det_grid = TimeGrid::new(cfg.horizon, cfg.steps.max(1 << 14))?;
    let sto_grid = TimeGrid::new(cfg.horizon, cfg.steps.max(1024))?;
    let n_paths = cfg.paths.max(100);
    let indices: Vec<u64> = (0..n_paths as u64).collect();

    let mut rows = Vec::new();
    let p = pool(cfg.threads)?;
    for &delta in &deltas {
        let zero = BrownianPath::zero(det_grid, 1);
        let xp = integrate_flow(&drift, &zero, &[delta])?;
        let xm = integrate_flow(&drift, &zero, &[-delta])?;
        let s_det = (xp.last()[0] - xm.last()[0]).abs();

        let seps: Vec<f64> = p.install(|| {
            indices
                .par_iter()
                .map(|&idx| {
                    let path = BrownianPath::sample(cfg.master_seed, idx, sto_grid, 1)?;
                    let a = integrate_flow(&drift, &path, &[delta])?;
                    let b = integrate_flow(&drift, &path, &[-delta])?;
                    Ok((a.last()[0] - b.last()[0]).abs())
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        let s_sto = mean_and_se(&seps).0;
        rows.push(NoiseRow { delta, s_det, s_sto });
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                crate::csv::fmt(r.delta),
                crate::csv::fmt(r.s_det),
                crate::csv::fmt(r.s_sto),
            ]
        })
        .collect();
    crate::csv::write_table(
        &cfg.out_dir.join("noise.csv"),
        &["delta", "s_det", "s_sto"],
        &table,
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// run_oracle_compare
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct OracleRow {
    pub h: f64,
    pub dt: f64,
    pub l1: f64,
    /// `log2` distance ratio against the previous (coarser) level.
    pub observed_order: Option<f64>,
}

/// Cross-solver comparison on a (h, dt) ladder with bridge-coupled paths:
/// characteristics solution vs the semi-Lagrangian oracle, mean pathwise L1
/// distance on K at time T per level, plus the empirical order.
pub fn run_oracle_compare(cfg: &ExperimentConfig) -> Result<Vec<OracleRow>> {
    cfg.validate()?;
    let spec = ScenarioSpec::resolve(cfg)?;
    let scn = spec.build()?;
    let kernel = MollifierKernel::standard(cfg.dimension, 5)?;
    let drift = mollify_drift(&scn.drift, &kernel, None)?;
    let sign = cfg.sign();
    let t_end = *cfg.observation_times.last().unwrap();
    let levels = 3usize;
    let indices: Vec<u64> = (0..cfg.paths as u64).collect();
    let base_grid = cfg.time_grid()?;

    // Per path, per level: the L1 distance.
    let per_path: Vec<Vec<f64>> = pool(cfg.threads)?.install(|| {
        indices
            .par_iter()
            .map(|&idx| {
                let mut path = make_path(cfg, scn.noise, idx, base_grid)?;
                let mut dists = Vec::with_capacity(levels);
                for level in 0..levels {
                    let h = cfg.cell_width / 2f64.powi(level as i32);
                    let obs = SpaceGrid::centered(cfg.dimension, cfg.box_half_width, h)?;
                    let u_char =
                        solve_field(&drift, &scn.reaction, &scn.datum, &path, t_end, &obs, sign)?;
                    let transformed =
                        TransformedScenario::new(Some(&drift), Some(&scn.reaction), &path, sign);
                    let u_grid = upwind_solve(&transformed, &scn.datum, &obs, t_end)?;
                    dists.push(l1_distance(&u_char, &u_grid)?);
                    if level + 1 < levels {
                        path = path.refine();
                    }
                }
                Ok(dists)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows: Vec<OracleRow> = Vec::with_capacity(levels);
    for level in 0..levels {
        let dists: Vec<f64> = per_path.iter().map(|p| p[level]).collect();
        let l1 = mean_and_se(&dists).0;
        let observed_order = if level == 0 {
            None
        } else {
            let prev = rows[level - 1].l1;
            (prev > 0.0 && l1 > 0.0).then(|| (prev / l1).log2())
        };
        rows.push(OracleRow {
            h: cfg.cell_width / 2f64.powi(level as i32),
            dt: cfg.horizon / (cfg.steps as f64 * 2f64.powi(level as i32)),
            l1,
            observed_order,
        });
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                crate::csv::fmt(r.h),
                crate::csv::fmt(r.dt),
                crate::csv::fmt(r.l1),
                r.observed_order
                    .map(crate::csv::fmt)
                    .unwrap_or_else(|| "nan".into()),
            ]
        })
        .collect();
    crate::csv::write_table(
        &cfg.out_dir.join("oracle_compare.csv"),
        &["h", "dt", "l1_distance", "observed_order"],
        &table,
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// run_weakcheck
// ---------------------------------------------------------------------------

/// Solves the configured scenario along one path and reports the weak-form
/// residuals of the emitted solution series against the registered bump.
pub fn run_weakcheck(cfg: &ExperimentConfig) -> Result<WeakFormReport> {
    cfg.validate()?;
    if cfg.dimension != 1 {
        return Err(StlError::Config("weakcheck runs in d = 1".into()));
    }
    let spec = ScenarioSpec::resolve(cfg)?;
    let scn = spec.build()?;
    let grid = cfg.time_grid()?;
    let sign = cfg.sign();
    let path = make_path(cfg, scn.noise, 0, grid)?;
    let obs = cfg.observation_grid()?;
    let series = solve_field_series(&scn.drift, &scn.reaction, &scn.datum, &path, &obs, sign)?;
    let phi = make_bump(vec![0.0], cfg.box_half_width.min(1.0))?;
    let wf_scn = WeakFormScenario {
        drift: Some(&scn.drift),
        reaction: Some(&scn.reaction),
        datum: &scn.datum,
        sign,
    };
    let report = ito_residual(&series, &wf_scn, &path, &phi)?;
    report.write_csv(&cfg.out_dir.join("weakform.csv"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn base_cfg(scenario: &str, out: &std::path::Path) -> ExperimentConfig {
        ExperimentConfig {
            scenario: scenario.into(),
            out_dir: out.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn pure_noise_scenario_fields_match_the_closed_form() {
        let dir = tempdir().unwrap();
        let mut cfg = base_cfg("pure-noise", dir.path());
        cfg.steps = 256;
        cfg.cell_width = 1.0 / 16.0;
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.fields.len(), 4);
        for (idx, t, u) in &out.fields {
            let path = BrownianPath::sample(cfg.master_seed, *idx, cfg.time_grid().unwrap(), 1)
                .unwrap();
            let k = path.grid().node_index(*t).unwrap();
            let bt = path.node(k)[0];
            for (i, x) in u.grid().points().enumerate() {
                assert!((u.values()[i] - (x[0] - bt).cos()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn scenario_rerun_is_byte_identical_across_thread_counts() {
        let d1 = tempdir().unwrap();
        let d8 = tempdir().unwrap();
        let mut c1 = base_cfg("pure-noise", d1.path());
        c1.steps = 64;
        c1.cell_width = 1.0 / 8.0;
        c1.threads = Some(1);
        c1.dump_paths = true;
        let mut c8 = c1.clone();
        c8.out_dir = d8.path().to_path_buf();
        c8.threads = Some(8);
        let o1 = run_scenario(&c1).unwrap();
        let o8 = run_scenario(&c8).unwrap();
        assert_eq!(o1.files.len(), o8.files.len());
        for (a, b) in o1.files.iter().zip(&o8.files) {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{a:?} differs"
            );
        }
    }

    #[test]
    fn convergence_reference_against_itself_vanishes() {
        let dir = tempdir().unwrap();
        let mut cfg = base_cfg("smooth-sine", dir.path());
        // Reference index n_max + 2 equals n_max's entry when the drift is
        // already smooth only in the limit; instead check the trivial bound
        // e(n) small for a smooth drift where mollification is near-identity.
        cfg.steps = 128;
        cfg.cell_width = 1.0 / 4.0;
        cfg.paths = 2;
        cfg.n_min = 4;
        cfg.n_max = 6;
        let rows = run_convergence(&cfg).unwrap();
        for r in &rows {
            assert!(r.flow_error <= 1e-3, "n = {}: {}", r.n, r.flow_error);
        }
        assert!(dir.path().join("converge.csv").exists());
    }

    #[test]
    fn noise_demo_matches_the_branching_closed_form() {
        let dir = tempdir().unwrap();
        let mut cfg = base_cfg("holder", dir.path());
        cfg.paths = 20; // keeps the test quick; the driver enforces >= 100
        cfg.steps = 256;
        let rows = run_noise_demo(&cfg).unwrap();
        // s_det(delta) = (delta^{0.4} + 0.4)^{2.5} - ... the two branches are
        // symmetric: separation = 2 (delta^{0.4} + 0.4 t)^{2.5} at t = 1.
        for r in &rows {
            let want = 2.0 * (r.delta.powf(0.4) + 0.4).powf(2.5);
            assert!(
                (r.s_det - want).abs() <= 0.05 * want,
                "delta {}: {} vs {want}",
                r.delta,
                r.s_det
            );
        }
        assert!(dir.path().join("noise.csv").exists());
    }

    #[test]
    fn weakcheck_pure_noise_is_small() {
        let dir = tempdir().unwrap();
        let mut cfg = base_cfg("pure-noise", dir.path());
        cfg.steps = 512;
        cfg.cell_width = 1.0 / 64.0;
        let report = run_weakcheck(&cfg).unwrap();
        assert!(
            report.final_normalized_ito() <= 0.1,
            "{}",
            report.final_normalized_ito()
        );
    }
}
