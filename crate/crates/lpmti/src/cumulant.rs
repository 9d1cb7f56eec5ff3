//! Critical tilts, centering sequences and the example constants.
//!
//! The critical tilt of a model is the unique positive root of
//! g(a) = a nu'(a) - nu(a). Under the standing assumptions g is strictly
//! increasing with g(0) = -log E[N] < 0, so a sign change on (0, cap] pins
//! the root and bracketing bisection is globally safe. When g never reaches
//! zero the tilt is infinite and we keep the search certificate instead of a
//! sentinel float.

use serde::Serialize;

use crate::displacement::{DisplacementModel, Estimate};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRole};
use crate::simulator::Schedule;

pub const DEFAULT_CAP: f64 = 64.0;
pub const DEFAULT_TOL: f64 = 1e-10;
/// Band inside which a tilt is accepted as equal to the critical one.
pub const CRITICAL_TOLERANCE: f64 = 1e-8;

/// Result of solving for the critical tilt.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CriticalTilt {
    Finite {
        value: f64,
        bracket: (f64, f64),
        residual: f64,
    },
    /// No tangent from the origin up to `cap`; g stayed negative.
    Infinite { cap: f64, g_at_cap: f64 },
}

impl CriticalTilt {
    pub fn value(&self) -> Option<f64> {
        match self {
            CriticalTilt::Finite { value, .. } => Some(*value),
            CriticalTilt::Infinite { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, CriticalTilt::Finite { .. })
    }

    /// True when `theta` is strictly below this tilt.
    pub fn admits_subcritical(&self, theta: f64) -> bool {
        match self {
            CriticalTilt::Finite { value, .. } => theta < *value,
            CriticalTilt::Infinite { .. } => true,
        }
    }
}

fn g_of(model: &DisplacementModel, a: f64) -> Result<f64> {
    let (nu, d1, _) = model.nu_derivatives(a)?;
    Ok(a * d1 - nu)
}

/// Solve for the critical tilt of an assumption-valid model.
pub fn theta_star(model: &DisplacementModel, cap: f64, tol: f64) -> Result<CriticalTilt> {
    let report = model.validate();
    if !report.a2_ok {
        return Err(Error::InvalidModel(format!(
            "critical tilt needs a non-trivial point process; failed clause {}",
            report
                .a2_failure
                .map(|c| c.to_string())
                .unwrap_or_else(|| "?".into())
        )));
    }
    theta_star_unchecked(model, cap, tol)
}

/// Same as [`theta_star`] with default cap and tolerance.
pub fn theta_star_default(model: &DisplacementModel) -> Result<CriticalTilt> {
    theta_star(model, DEFAULT_CAP, DEFAULT_TOL)
}

/// Root search without the assumption gate. Monotonicity of g is not
/// guaranteed for invalid models; kept crate-private for tests.
pub(crate) fn theta_star_unchecked(
    model: &DisplacementModel,
    cap: f64,
    tol: f64,
) -> Result<CriticalTilt> {
    if cap.is_nan() || tol.is_nan() || cap <= 0.0 || tol <= 0.0 {
        return Err(Error::Mismatch("cap and tol must be positive".into()));
    }

    // Expand by doubling from tol until g changes sign or the cap is hit.
    // The change must be strict: bounded-displacement models have g -> 0
    // from below, which rounds to exactly 0.0 at large tilts.
    let mut lo = 0.0;
    let mut hi = f64::NAN;
    let mut a = tol.min(cap);
    loop {
        if g_of(model, a)? > 0.0 {
            hi = a;
            break;
        }
        lo = a;
        if a >= cap {
            break;
        }
        a = (a * 2.0).min(cap);
    }
    if hi.is_nan() {
        return Ok(CriticalTilt::Infinite {
            cap,
            g_at_cap: g_of(model, cap)?,
        });
    }

    // Bisect below tol so the residual lands under the tolerance even for
    // steep g (the slope at the root is theta * nu'').
    let width_target = tol / 16.0;
    while hi - lo > width_target {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g_of(model, mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let value = 0.5 * (lo + hi);
    Ok(CriticalTilt::Finite {
        value,
        bracket: (lo, hi),
        residual: g_of(model, value)?.abs(),
    })
}

/// Deterministic centering for the right-most perturbed position.
#[derive(Debug, Clone, Serialize)]
pub struct CenteringSpec {
    pub theta: f64,
    /// Per-block contributions q_i nu_i(theta) / theta.
    pub block_terms: Vec<f64>,
    pub critical: bool,
    /// -(1/(2 theta)) log q_1 in the critical regime, 0 otherwise.
    pub log_correction: f64,
    pub total: f64,
}

/// Compute the centering value for one schedule, validating the regime the
/// theta/critical combination claims.
pub fn centering(
    models: &[DisplacementModel],
    schedule: &Schedule,
    theta: f64,
    critical: bool,
) -> Result<CenteringSpec> {
    if models.len() != schedule.k() {
        return Err(Error::Mismatch(format!(
            "{} models vs {} schedule blocks",
            models.len(),
            schedule.k()
        )));
    }
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::Regime("theta must be positive and finite".into()));
    }

    let tilts: Vec<CriticalTilt> = models
        .iter()
        .map(theta_star_default)
        .collect::<Result<_>>()?;

    if critical {
        let first = tilts[0].value().ok_or_else(|| {
            Error::Regime("critical centering needs a finite first-block tilt".into())
        })?;
        if (theta - first).abs() > CRITICAL_TOLERANCE {
            return Err(Error::Regime(format!(
                "theta {theta} is not the first-block critical tilt {first}"
            )));
        }
        for (i, tilt) in tilts.iter().enumerate().skip(1) {
            if let Some(v) = tilt.value() {
                if v <= first {
                    return Err(Error::Regime(format!(
                        "critical regime needs the first tilt to be strictly smallest; block {} has {v} <= {first}",
                        i + 1
                    )));
                }
            }
        }
        if schedule.q()[0] == 0 {
            return Err(Error::Regime(
                "critical centering needs a non-empty first block".into(),
            ));
        }
    } else {
        for (i, tilt) in tilts.iter().enumerate() {
            if !tilt.admits_subcritical(theta) {
                return Err(Error::Regime(format!(
                    "theta {theta} is not below the critical tilt of block {}",
                    i + 1
                )));
            }
        }
    }

    let mut block_terms = Vec::with_capacity(models.len());
    for (model, &q) in models.iter().zip(schedule.q()) {
        block_terms.push(q as f64 * model.nu(theta)? / theta);
    }
    let log_correction = if critical {
        -(schedule.q()[0] as f64).ln() / (2.0 * theta)
    } else {
        0.0
    };
    let total = block_terms.iter().sum::<f64>() + log_correction;
    Ok(CenteringSpec {
        theta,
        block_terms,
        critical,
        log_correction,
        total,
    })
}

/// E[sum_v (theta S_v - nu(theta))^2 e^{theta S_v - nu(theta)}] over one
/// generation, in closed form where available.
pub fn tilted_quadratic_exact(model: &DisplacementModel, theta: f64) -> Result<Option<f64>> {
    Ok(match model {
        DisplacementModel::GaussianBinary { sigma } => {
            let s2t2 = sigma * sigma * theta * theta;
            let nu = model.nu(theta)?;
            let c = s2t2 - nu;
            Some(2.0 * (s2t2 / 2.0 - nu).exp() * (s2t2 + c * c))
        }
        DisplacementModel::DeterministicTwoPoint { a, b } => {
            let nu = model.nu(theta)?;
            let (ua, ub) = (theta * a - nu, theta * b - nu);
            Some(ua * ua * ua.exp() + ub * ub * ub.exp())
        }
        DisplacementModel::GenericIid(_) => None,
    })
}

/// Monte Carlo estimate of the same tilted second moment.
pub fn tilted_quadratic_mc(
    model: &DisplacementModel,
    theta: f64,
    mc_budget: u64,
    seed: u64,
) -> Result<Estimate> {
    if mc_budget < 2 {
        return Err(Error::Mismatch("mc_budget must be >= 2".into()));
    }
    let nu = model.nu(theta)?;
    let mut rng = stream(seed, StreamRole::CumulantMc);
    let mut buf = Vec::new();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..mc_budget {
        model.sample_into(&mut buf, &mut rng);
        let y: f64 = buf
            .iter()
            .map(|&x| {
                let u = theta * x - nu;
                u * u * u.exp()
            })
            .sum();
        sum += y;
        sum_sq += y * y;
    }
    let r = mc_budget as f64;
    let mean = sum / r;
    let var = ((sum_sq - r * mean * mean) / (r - 1.0)).max(0.0);
    Ok(Estimate {
        value: mean,
        std_error: (var / r).sqrt(),
    })
}

/// The dispersion constant entering the critical-regime limit: the tilted
/// quadratic evaluated at the first-block critical tilt. `theta1` must agree
/// with the model's own critical tilt within [`CRITICAL_TOLERANCE`].
pub fn sigma1_sq(model: &DisplacementModel, theta1: f64, mc_budget: u64) -> Result<Estimate> {
    let tilt = theta_star_default(model)?;
    let Some(value) = tilt.value() else {
        return Err(Error::Regime(
            "model has an infinite critical tilt; sigma_1^2 is undefined".into(),
        ));
    };
    if (theta1 - value).abs() > CRITICAL_TOLERANCE {
        return Err(Error::Regime(format!(
            "theta1 {theta1} does not match the critical tilt {value}"
        )));
    }
    match tilted_quadratic_exact(model, theta1)? {
        Some(v) => Ok(Estimate::exact(v)),
        None => {
            let seed = match model {
                DisplacementModel::GenericIid(g) => g.mc_seed,
                _ => crate::displacement::DEFAULT_MC_SEED,
            };
            tilted_quadratic_mc(model, theta1, mc_budget, seed)
        }
    }
}

/// The four constants of the Gaussian binary example with block variances
/// sigma1^2 > sigma2^2: the linear and logarithmic centering coefficients of
/// the perturbed walk, and the classical tightness coefficients quoted for
/// comparison.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExampleConstants {
    pub lpmti_linear: f64,
    pub lpmti_log: f64,
    pub fz_linear: f64,
    pub fz_log: f64,
}

pub fn fz_constants(sigma1: f64, sigma2: f64) -> Result<ExampleConstants> {
    if sigma1.is_nan() || sigma2.is_nan() || sigma1 <= sigma2 || sigma2 <= 0.0 {
        return Err(Error::Regime(format!(
            "need sigma1 > sigma2 > 0, got ({sigma1}, {sigma2})"
        )));
    }
    let ln2 = 2f64.ln();
    let root = (2.0 * ln2).sqrt();
    Ok(ExampleConstants {
        lpmti_linear: sigma1 * (ln2 / 2.0).sqrt()
            + root / (4.0 * sigma1) * (sigma1 * sigma1 + sigma2 * sigma2),
        lpmti_log: sigma1 / (2.0 * root),
        fz_linear: (sigma1 + sigma2) * (ln2 / 2.0).sqrt(),
        fz_log: 3.0 * (sigma1 + sigma2) / (2.0 * root),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::displacement::{GenericIid, OffspringLaw, StepLaw, DEFAULT_MC_SEED};
    use approx::assert_abs_diff_eq;

    const SQRT_2LN2: f64 = 1.1774100225154747;

    fn gb(sigma: f64) -> DisplacementModel {
        DisplacementModel::gaussian_binary(sigma).unwrap()
    }

    #[test]
    fn gaussian_tilt_closed_form() {
        for sigma in [0.5, 1.0, 2.0] {
            let tilt = theta_star_default(&gb(sigma)).unwrap();
            let value = tilt.value().unwrap();
            assert!(
                (value - SQRT_2LN2 / sigma).abs() < 1e-8,
                "sigma {sigma}: {value}"
            );
        }
    }

    #[test]
    fn scaling_law_across_sigmas() {
        for sigma in [0.5, 1.0, 2.0, 4.0] {
            let value = theta_star_default(&gb(sigma)).unwrap().value().unwrap();
            assert!((value * sigma - SQRT_2LN2).abs() < 1e-8);
        }
    }

    #[test]
    fn root_certificate_and_tangency() {
        let tol = DEFAULT_TOL;
        for sigma in [0.5, 1.0, 2.0, 4.0] {
            let model = gb(sigma);
            let tilt = theta_star_default(&model).unwrap();
            let CriticalTilt::Finite {
                value, residual, ..
            } = tilt
            else {
                panic!("expected finite tilt");
            };
            let g_lo = g_of(&model, value - tol).unwrap();
            let g_hi = g_of(&model, value + tol).unwrap();
            assert!(g_lo * g_hi <= 0.0);
            assert!(residual < 10.0 * tol, "residual {residual}");
            let (nu, d1, _) = model.nu_derivatives(value).unwrap();
            assert!((nu / value - d1).abs() < 10.0 * tol);
        }
    }

    #[test]
    fn invalid_model_is_rejected_but_bypass_reports_infinite() {
        let flat = DisplacementModel::generic_iid(GenericIid {
            offspring: OffspringLaw::Fixed { count: 2 },
            step: StepLaw::Constant { value: 0.0 },
            mc_budget: 1000,
            mc_seed: DEFAULT_MC_SEED,
            domain_bound: f64::INFINITY,
        })
        .unwrap();
        assert!(matches!(
            theta_star_default(&flat),
            Err(Error::InvalidModel(_))
        ));
        // g(a) = -log 2 for every a: no tangent up to the cap
        let tilt = theta_star_unchecked(&flat, 8.0, 1e-6).unwrap();
        let CriticalTilt::Infinite { cap, g_at_cap } = tilt else {
            panic!("expected infinite marker");
        };
        assert_eq!(cap, 8.0);
        assert!((g_at_cap + 2f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn symmetric_two_point_has_infinite_tilt() {
        let tp = DisplacementModel::deterministic_two_point(1.0, -1.0).unwrap();
        let tilt = theta_star_default(&tp).unwrap();
        assert!(!tilt.is_finite());
        assert!(tilt.admits_subcritical(5.0));
    }

    #[test]
    fn centering_subcritical_example() {
        let models = vec![gb(2.0), gb(1.0)];
        let schedule = Schedule::new(vec![16, 16]).unwrap();
        let spec = centering(&models, &schedule, 0.5, false).unwrap();
        assert_abs_diff_eq!(spec.total, 64.3614195558365, epsilon = 1e-9);
        assert_eq!(spec.log_correction, 0.0);
        // additivity is bit-exact: the total is the fold of the block terms
        assert_eq!(spec.total, spec.block_terms.iter().sum::<f64>());
    }

    #[test]
    fn centering_critical_example() {
        let models = vec![gb(2.0), gb(1.0)];
        let schedule = Schedule::new(vec![16, 16]).unwrap();
        let theta1 = theta_star_default(&models[0]).unwrap().value().unwrap();
        let sub = centering(&models, &schedule, theta1, false);
        assert!(matches!(sub, Err(Error::Regime(_))), "theta1 is not subcritical");
        let spec = centering(&models, &schedule, theta1, true).unwrap();
        assert_abs_diff_eq!(spec.log_correction, -2.3548200450309494, epsilon = 1e-7);
        assert_abs_diff_eq!(
            spec.total,
            spec.block_terms.iter().sum::<f64>() - 2.3548200450309494,
            epsilon = 1e-7
        );
    }

    #[test]
    fn centering_single_block_reduction() {
        let models = vec![gb(1.0)];
        let schedule = Schedule::new(vec![24]).unwrap();
        let spec = centering(&models, &schedule, 0.5, false).unwrap();
        let nu = models[0].nu(0.5).unwrap();
        assert_abs_diff_eq!(spec.total, 24.0 * nu / 0.5, epsilon = 1e-12);
    }

    #[test]
    fn centering_additivity_over_concatenation() {
        let m1 = gb(2.0);
        let m2 = gb(1.0);
        let joint = centering(
            &[m1, m2],
            &Schedule::new(vec![10, 6]).unwrap(),
            0.5,
            false,
        )
        .unwrap();
        let first = centering(&[m1], &Schedule::new(vec![10]).unwrap(), 0.5, false).unwrap();
        let second = centering(&[m2], &Schedule::new(vec![6]).unwrap(), 0.5, false).unwrap();
        assert_eq!(joint.total, first.total + second.total);
    }

    #[test]
    fn centering_rejects_wrong_critical_order() {
        // first-block tilt is the larger one here, so the critical regime
        // hypothesis fails
        let models = vec![gb(1.0), gb(2.0)];
        let schedule = Schedule::new(vec![8, 8]).unwrap();
        let theta1 = theta_star_default(&models[0]).unwrap().value().unwrap();
        assert!(matches!(
            centering(&models, &schedule, theta1, true),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn sigma1_sq_gaussian_closed_form() {
        let model = gb(1.0);
        let theta1 = theta_star_default(&model).unwrap().value().unwrap();
        let est = sigma1_sq(&model, theta1, 10_000).unwrap();
        assert_abs_diff_eq!(est.value, 2.0 * 2f64.ln(), epsilon = 1e-9);
        assert_eq!(est.std_error, 0.0);
        // any sigma gives the same constant
        let model = gb(2.0);
        let theta1 = theta_star_default(&model).unwrap().value().unwrap();
        let est = sigma1_sq(&model, theta1, 10_000).unwrap();
        assert_abs_diff_eq!(est.value, 2.0 * 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn sigma1_sq_rejects_off_tilt_theta() {
        let model = gb(1.0);
        assert!(matches!(
            sigma1_sq(&model, 0.9, 1000),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn tilted_quadratic_mc_agrees_with_closed_form() {
        let model = gb(1.0);
        let theta1 = theta_star_default(&model).unwrap().value().unwrap();
        let mc = tilted_quadratic_mc(&model, theta1, 200_000, 99).unwrap();
        let truth = 2.0 * 2f64.ln();
        assert!(
            (mc.value - truth).abs() < 3.0 * mc.std_error,
            "{} vs {truth} (se {})",
            mc.value,
            mc.std_error
        );
    }

    #[test]
    fn tilted_quadratic_degenerate_zero_tilt() {
        // at theta = 0 the weights collapse and the constant factors out:
        // N * (log E N)^2 / E N = (log 2)^2 for two deterministic children
        let model = gb(1.0);
        let v = tilted_quadratic_exact(&model, 0.0).unwrap().unwrap();
        assert_abs_diff_eq!(v, 2f64.ln().powi(2), epsilon = 1e-12);
    }

    #[test]
    fn tilted_quadratic_two_point_enumeration() {
        // independent two-term sum at a finite tilt
        let model = DisplacementModel::deterministic_two_point(1.0, -1.0).unwrap();
        let theta = 1.0;
        let nu = (1f64.exp() + (-1f64).exp()).ln();
        let expect =
            (theta - nu).powi(2) * (theta - nu).exp() + (-theta - nu).powi(2) * (-theta - nu).exp();
        let got = tilted_quadratic_exact(&model, theta).unwrap().unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        let mc = tilted_quadratic_mc(&model, theta, 100, 1).unwrap();
        assert_abs_diff_eq!(mc.value, expect, epsilon = 1e-12);
        assert_eq!(mc.std_error, 0.0);
    }

    #[test]
    fn example_constants_frozen_values() {
        let c = fz_constants(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(c.lpmti_linear, 1.9132912865876464, epsilon = 1e-12);
        assert_abs_diff_eq!(c.lpmti_log, 0.849321800288019, epsilon = 1e-12);
        assert_abs_diff_eq!(c.fz_linear, 1.766115033773212, epsilon = 1e-12);
        assert_abs_diff_eq!(c.fz_log, 3.8219481012960857, epsilon = 1e-12);
    }

    #[test]
    fn example_constants_boundary_rejected() {
        assert!(matches!(fz_constants(1.0, 1.0), Err(Error::Regime(_))));
        assert!(matches!(fz_constants(2.0, -1.0), Err(Error::Regime(_))));
    }
}
