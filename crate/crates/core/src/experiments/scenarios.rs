//! Scenario registry: named coefficient bundles with selector overrides.

use crate::error::{Result, StlError};
use crate::experiments::config::ExperimentConfig;
use crate::fields::{make_bump, DivergenceMode, DriftField, InitialDatum, ReactionTerm, Smoothness};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftKind {
    Zero,
    Constant,
    SmoothSine,
    HolderAlpha,
    Rotation2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReactionKind {
    Zero,
    LinearLambda,
    Sine,
    CustomBounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatumKind {
    Cosine,
    Step,
    Bump,
}

/// Resolved scenario selectors plus numeric parameters.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub name: String,
    pub drift: DriftKind,
    pub reaction: ReactionKind,
    pub datum: DatumKind,
    pub noise: bool,
    pub alpha: f64,
    pub lambda: f64,
    pub dimension: usize,
}

/// Built coefficient bundle ready for the solvers.
pub struct Scenario {
    pub drift: DriftField,
    pub reaction: ReactionTerm,
    pub datum: InitialDatum,
    pub noise: bool,
}

/// Declared divergence integrability exponent of the Hölder drift; the
/// scenario invariant `alpha > 1 - 1/p` is checked at build time.
pub const HOLDER_DIV_P: f64 = 2.4;

fn parse_drift(s: &str) -> Result<DriftKind> {
    Ok(match s {
        "zero" => DriftKind::Zero,
        "constant" => DriftKind::Constant,
        "smooth-sine" => DriftKind::SmoothSine,
        "holder-alpha" => DriftKind::HolderAlpha,
        "rotation-2d" => DriftKind::Rotation2d,
        other => return Err(StlError::Config(format!("unknown drift selector '{other}'"))),
    })
}

fn parse_reaction(s: &str) -> Result<ReactionKind> {
    Ok(match s {
        "zero" => ReactionKind::Zero,
        "linear-lambda" => ReactionKind::LinearLambda,
        "sine" => ReactionKind::Sine,
        "custom-bounded" => ReactionKind::CustomBounded,
        other => return Err(StlError::Config(format!("unknown reaction selector '{other}'"))),
    })
}

fn parse_datum(s: &str) -> Result<DatumKind> {
    Ok(match s {
        "cosine" => DatumKind::Cosine,
        "step" => DatumKind::Step,
        "bump" => DatumKind::Bump,
        other => return Err(StlError::Config(format!("unknown datum selector '{other}'"))),
    })
}

impl ScenarioSpec {
    /// Looks up the named registry scenario and applies config overrides.
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self> {
        let mut spec = match cfg.scenario.as_str() {
            "pure-noise" => ScenarioSpec {
                name: cfg.scenario.clone(),
                drift: DriftKind::Zero,
                reaction: ReactionKind::Zero,
                datum: DatumKind::Cosine,
                noise: true,
                alpha: 0.6,
                lambda: 1.0,
                dimension: cfg.dimension,
            },
            "constant-linear" => ScenarioSpec {
                name: cfg.scenario.clone(),
                drift: DriftKind::Constant,
                reaction: ReactionKind::LinearLambda,
                datum: DatumKind::Cosine,
                noise: true,
                alpha: 0.6,
                lambda: 1.0,
                dimension: cfg.dimension,
            },
            "smooth-sine" => ScenarioSpec {
                name: cfg.scenario.clone(),
                drift: DriftKind::SmoothSine,
                reaction: ReactionKind::Sine,
                datum: DatumKind::Cosine,
                noise: true,
                alpha: 0.6,
                lambda: 1.0,
                dimension: cfg.dimension,
            },
            "holder" => ScenarioSpec {
                name: cfg.scenario.clone(),
                drift: DriftKind::HolderAlpha,
                reaction: ReactionKind::Zero,
                datum: DatumKind::Cosine,
                noise: true,
                alpha: 0.6,
                lambda: 1.0,
                dimension: cfg.dimension,
            },
            "rotation-2d" => ScenarioSpec {
                name: cfg.scenario.clone(),
                drift: DriftKind::Rotation2d,
                reaction: ReactionKind::Zero,
                datum: DatumKind::Bump,
                noise: true,
                alpha: 0.6,
                lambda: 1.0,
                dimension: cfg.dimension,
            },
            other => {
                return Err(StlError::Config(format!(
                    "unknown scenario '{other}'; registered: pure-noise, constant-linear, \
                     smooth-sine, holder, rotation-2d"
                )))
            }
        };
        if let Some(d) = &cfg.drift {
            spec.drift = parse_drift(d)?;
        }
        if let Some(r) = &cfg.reaction {
            spec.reaction = parse_reaction(r)?;
        }
        if let Some(f) = &cfg.datum {
            spec.datum = parse_datum(f)?;
        }
        if let Some(n) = cfg.noise {
            spec.noise = n;
        }
        if let Some(a) = cfg.alpha {
            spec.alpha = a;
        }
        if let Some(l) = cfg.lambda {
            spec.lambda = l;
        }
        if spec.drift == DriftKind::Rotation2d && spec.dimension != 2 {
            return Err(StlError::Config(
                "rotation-2d drift needs \"dimension\": 2 in the config".into(),
            ));
        }
        Ok(spec)
    }

    pub fn build(&self) -> Result<Scenario> {
        if self.drift == DriftKind::HolderAlpha && !(self.alpha > 1.0 - 1.0 / HOLDER_DIV_P) {
            return Err(StlError::Validation(format!(
                "holder-alpha scenario needs alpha > 1 - 1/p = {}, got {}",
                1.0 - 1.0 / HOLDER_DIV_P,
                self.alpha
            )));
        }
        Ok(Scenario {
            drift: self.build_drift()?,
            reaction: self.build_reaction()?,
            datum: self.build_datum()?,
            noise: self.noise,
        })
    }

    fn build_drift(&self) -> Result<DriftField> {
        let d = self.dimension;
        match self.drift {
            DriftKind::Zero => DriftField::new(
                d,
                Arc::new(|_t, _x, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
                Some(Arc::new(|_t, _x, out: &mut [f64]| {
                    out.iter_mut().for_each(|v| *v = 0.0)
                })),
                1.0,
                0.0,
                0.0,
                DivergenceMode::Analytic(Arc::new(|_, _| 0.0)),
                3.0,
                Smoothness::Smooth,
            ),
            DriftKind::Constant => DriftField::new(
                d,
                Arc::new(|_t, _x, out: &mut [f64]| {
                    out.iter_mut().for_each(|v| *v = 0.0);
                    out[0] = 0.5;
                }),
                Some(Arc::new(|_t, _x, out: &mut [f64]| {
                    out.iter_mut().for_each(|v| *v = 0.0)
                })),
                1.0,
                0.5,
                0.0,
                DivergenceMode::Analytic(Arc::new(|_, _| 0.0)),
                3.0,
                Smoothness::Smooth,
            ),
            DriftKind::SmoothSine => DriftField::new(
                d,
                Arc::new(|_t, x: &[f64], out: &mut [f64]| {
                    for (o, xi) in out.iter_mut().zip(x) {
                        *o = xi.sin();
                    }
                }),
                Some(Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    out.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..x.len() {
                        out[i * x.len() + i] = x[i].cos();
                    }
                })),
                1.0,
                (d as f64).sqrt(),
                1.01,
                DivergenceMode::Analytic(Arc::new(|_t, x: &[f64]| {
                    x.iter().map(|v| v.cos()).sum()
                })),
                3.0,
                Smoothness::Smooth,
            ),
            DriftKind::HolderAlpha => {
                if d != 1 {
                    return Err(StlError::Config(
                        "holder-alpha drift is one-dimensional".into(),
                    ));
                }
                let alpha = self.alpha;
                DriftField::new(
                    1,
                    Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                        out[0] = holder_core(x[0], alpha) * cutoff(x[0].abs());
                    }),
                    None,
                    alpha,
                    1.0,
                    2f64.powf(1.0 - alpha) * 1.02,
                    DivergenceMode::Analytic(Arc::new(move |_t, x: &[f64]| {
                        let r = x[0].abs();
                        let core = holder_core(x[0], alpha);
                        let dcore = if r >= 1.0 {
                            0.0
                        } else {
                            alpha * r.powf(alpha - 1.0)
                        };
                        dcore * cutoff(r) + core * cutoff_deriv(r) * x[0].signum()
                    })),
                    HOLDER_DIV_P,
                    Smoothness::Rough,
                )
            }
            DriftKind::Rotation2d => {
                if d != 2 {
                    return Err(StlError::Config("rotation-2d drift needs dimension 2".into()));
                }
                // b = q(|x|) (x2, -x1): divergence-free for any radial cutoff.
                let q_at = |r: f64| rotation_cutoff(r);
                DriftField::new(
                    2,
                    Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                        let q = q_at(r);
                        out[0] = q * x[1];
                        out[1] = -q * x[0];
                    }),
                    Some(Arc::new(|_t, x: &[f64], out: &mut [f64]| {
                        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                        let q = rotation_cutoff(r);
                        let qp = rotation_cutoff_deriv(r);
                        let (ux, uy) = if r > 1e-12 {
                            (x[0] / r, x[1] / r)
                        } else {
                            (0.0, 0.0)
                        };
                        out[0] = qp * ux * x[1];
                        out[1] = q + qp * uy * x[1];
                        out[2] = -q - qp * ux * x[0];
                        out[3] = -qp * uy * x[0];
                    })),
                    1.0,
                    3.5,
                    10.0,
                    DivergenceMode::Analytic(Arc::new(|_, _| 0.0)),
                    3.0,
                    Smoothness::Smooth,
                )
            }
        }
    }

    fn build_reaction(&self) -> Result<ReactionTerm> {
        match self.reaction {
            ReactionKind::Zero => Ok(ReactionTerm::zero()),
            ReactionKind::LinearLambda => {
                let lam = self.lambda;
                ReactionTerm::new(
                    Arc::new(move |_t, _x, u| lam * u),
                    lam.abs(),
                    Arc::new(move |_| lam.abs() * 2.0),
                )
            }
            ReactionKind::Sine => ReactionTerm::new(
                Arc::new(|_t, _x, u: f64| u.sin()),
                1.0,
                Arc::new(|_| 1.0),
            ),
            ReactionKind::CustomBounded => ReactionTerm::new(
                Arc::new(|_t, x: &[f64], u: f64| x[0].cos() * u.tanh()),
                1.0,
                Arc::new(|_| 1.0),
            ),
        }
    }

    fn build_datum(&self) -> Result<InitialDatum> {
        match self.datum {
            DatumKind::Cosine => InitialDatum::new(Arc::new(|x: &[f64]| x[0].cos()), 1.0),
            DatumKind::Step => InitialDatum::new(
                Arc::new(|x: &[f64]| if x[0] > 0.0 { 1.0 } else { 0.0 }),
                1.0,
            ),
            DatumKind::Bump => {
                let bump = make_bump(vec![0.0; self.dimension], 1.0)?;
                InitialDatum::new(Arc::new(move |x: &[f64]| bump.evaluate(x)), 1.0)
            }
        }
    }
}

/// `sgn(x) min(|x|, 1)^alpha`, the branching-prone Hölder core.
fn holder_core(x: f64, alpha: f64) -> f64 {
    x.signum() * x.abs().min(1.0).powf(alpha)
}

/// Smooth radial cutoff: 1 on [0, 2], bump transition on (2, 3), 0 beyond.
fn cutoff(r: f64) -> f64 {
    if r <= 2.0 {
        1.0
    } else if r >= 3.0 {
        0.0
    } else {
        let w = r - 2.0;
        (1.0 - 1.0 / (1.0 - w * w)).exp()
    }
}

fn cutoff_deriv(r: f64) -> f64 {
    if r <= 2.0 || r >= 3.0 {
        0.0
    } else {
        let w = r - 2.0;
        let one = 1.0 - w * w;
        cutoff(r) * (-2.0 * w / (one * one))
    }
}

/// Rotation cutoff: 1 on [0, 3], transition on (3, 4), 0 beyond.
fn rotation_cutoff(r: f64) -> f64 {
    if r <= 3.0 {
        1.0
    } else if r >= 4.0 {
        0.0
    } else {
        let w = r - 3.0;
        (1.0 - 1.0 / (1.0 - w * w)).exp()
    }
}

fn rotation_cutoff_deriv(r: f64) -> f64 {
    if r <= 3.0 || r >= 4.0 {
        0.0
    } else {
        let w = r - 3.0;
        let one = 1.0 - w * w;
        rotation_cutoff(r) * (-2.0 * w / (one * one))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(name: &str) -> ExperimentConfig {
        ExperimentConfig {
            scenario: name.into(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn registry_scenarios_build_and_validate() {
        for name in ["pure-noise", "constant-linear", "smooth-sine", "holder"] {
            let spec = ScenarioSpec::resolve(&cfg(name)).unwrap();
            let scn = spec.build().unwrap();
            scn.drift.validate(1.0, 7).unwrap();
            scn.reaction.validate(spec.dimension, 1.0, 7).unwrap();
            scn.datum.validate(spec.dimension, 7).unwrap();
        }
        let mut c = cfg("rotation-2d");
        assert!(ScenarioSpec::resolve(&c).is_err(), "needs dimension 2");
        c.dimension = 2;
        let spec = ScenarioSpec::resolve(&c).unwrap();
        assert_eq!(spec.dimension, 2);
        let scn = spec.build().unwrap();
        scn.drift.validate(1.0, 7).unwrap();
    }

    #[test]
    fn unknown_scenario_is_a_config_error() {
        let err = ScenarioSpec::resolve(&cfg("bogus")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_replace_registry_entries() {
        let mut c = cfg("pure-noise");
        c.drift = Some("constant".into());
        c.noise = Some(false);
        let spec = ScenarioSpec::resolve(&c).unwrap();
        assert_eq!(spec.drift, DriftKind::Constant);
        assert!(!spec.noise);
    }

    #[test]
    fn holder_alpha_below_integrability_boundary_is_rejected() {
        let mut c = cfg("holder");
        c.alpha = Some(0.5);
        let spec = ScenarioSpec::resolve(&c).unwrap();
        let err = spec.build().err().unwrap();
        assert!(matches!(err, StlError::Validation(_)));
    }

    #[test]
    fn holder_drift_cutoff_vanishes_beyond_three() {
        let spec = ScenarioSpec::resolve(&cfg("holder")).unwrap();
        let scn = spec.build().unwrap();
        for x in [3.0, 3.5, 10.0] {
            assert_eq!(scn.drift.evaluate(0.0, &[x]).unwrap()[0], 0.0);
            assert_eq!(scn.drift.evaluate(0.0, &[-x]).unwrap()[0], 0.0);
        }
        // Unaffected inside the cap region.
        assert_eq!(scn.drift.evaluate(0.0, &[1.5]).unwrap()[0], 1.0);
        let v = scn.drift.evaluate(0.0, &[0.5]).unwrap()[0];
        assert!((v - 0.5f64.powf(0.6)).abs() < 1e-15);
    }

    #[test]
    fn rotation_drift_is_divergence_free_and_volume_preserving_metadata() {
        let mut c = cfg("rotation-2d");
        c.dimension = 2;
        let spec = ScenarioSpec::resolve(&c).unwrap();
        let scn = spec.build().unwrap();
        for p in [[0.5, 0.2], [2.0, -1.5], [3.5, 0.0]] {
            assert_eq!(scn.drift.divergence(0.0, &p).unwrap(), 0.0);
        }
        // Analytic gradient close to finite differences of the field.
        let mut g = [0.0; 4];
        scn.drift.jacobian_into(0.0, &[1.2, -0.7], 1e-5, &mut g).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = [1.2, -0.7];
            xp[j] += h;
            let bp = scn.drift.evaluate(0.0, &xp).unwrap();
            xp[j] -= 2.0 * h;
            let bm = scn.drift.evaluate(0.0, &xp).unwrap();
            for i in 0..2 {
                let fd = (bp[i] - bm[i]) / (2.0 * h);
                assert!((g[i * 2 + j] - fd).abs() < 1e-6, "{} vs {fd}", g[i * 2 + j]);
            }
        }
    }
}
