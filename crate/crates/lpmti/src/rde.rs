//! Population dynamics for the smoothing-transform fixed point.
//!
//! The law of the fixed point is approximated by a pool of samples: each
//! iteration rebuilds every entry as sum_j e^{theta xi_j - nu_1(theta)} D_j
//! with a fresh first-block realization and D_j resampled uniformly from the
//! previous pool. The transform preserves the mean exactly, so the pool mean
//! is left untouched between steps and its drift is reported as a diagnostic
//! rather than renormalized away.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cumulant::{theta_star_default, CriticalTilt};
use crate::displacement::DisplacementModel;
use crate::error::{Error, Result};
use crate::rng::{mix, stream, StreamRole};

pub const DEFAULT_POPULATION: usize = 100_000;
pub const DEFAULT_ITERATIONS: u64 = 50;

/// A pool of positive reals approximating the fixed-point law.
#[derive(Debug, Clone, Serialize)]
pub struct Population {
    pool: Vec<f64>,
    pub generation: u64,
    /// Mean of log entries, tracked as a drift diagnostic.
    pub mean_log: f64,
}

impl Population {
    /// The customary start: every entry at the fixed point's mean.
    pub fn ones(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::EmptySample("population size must be >= 1".into()));
        }
        Ok(Population {
            pool: vec![1.0; size],
            generation: 0,
            mean_log: 0.0,
        })
    }

    pub fn pool(&self) -> &[f64] {
        &self.pool
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.pool.iter().sum::<f64>() / self.pool.len() as f64
    }

    /// Standard error of the pool mean, treating entries as i.i.d.
    pub fn std_error(&self) -> f64 {
        let n = self.pool.len() as f64;
        let mean = self.mean();
        let var = self
            .pool
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }
}

/// One first-block smoothing map with its regime checked once.
#[derive(Debug, Clone)]
pub struct SmoothingTransform {
    model: DisplacementModel,
    theta: f64,
    nu1: f64,
}

impl SmoothingTransform {
    /// Requires theta strictly below the model's critical tilt, where the
    /// mean-one fixed point is the unique one.
    pub fn new(model: DisplacementModel, theta: f64) -> Result<Self> {
        if !theta.is_finite() || theta <= 0.0 {
            return Err(Error::Regime("theta must be positive and finite".into()));
        }
        let tilt = theta_star_default(&model)?;
        match tilt {
            CriticalTilt::Finite { value, .. } if theta >= value => {
                return Err(Error::Regime(format!(
                    "theta {theta} is not below the critical tilt {value}"
                )));
            }
            _ => {}
        }
        let nu1 = model.nu(theta)?;
        Ok(SmoothingTransform { model, theta, nu1 })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Apply one smoothing step, reading the old pool immutably and writing a
    /// fresh one. Entry i draws from the stream addressed by
    /// `(seed, generation, i)`, so the result is identical for any worker
    /// count.
    pub fn step(&self, pop: &Population, seed: u64, workers: usize) -> Result<Population> {
        let m = pop.len();
        let old = pop.pool();
        let generation = pop.generation;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        let new_pool: Vec<f64> = pool.install(|| {
            (0..m)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(mix(&[seed, generation, i as u64]), StreamRole::Rde);
                    let mut kids = Vec::new();
                    self.model.sample_into(&mut kids, &mut rng);
                    let mut acc = 0.0;
                    for &xi in &kids {
                        let weight = (self.theta * xi - self.nu1).exp();
                        acc += weight * old[rng.random_range(0..m)];
                    }
                    acc
                })
                .collect()
        });
        let mean_log = new_pool.iter().map(|x| x.ln()).sum::<f64>() / m as f64;
        Ok(Population {
            pool: new_pool,
            generation: generation + 1,
            mean_log,
        })
    }

    /// Iterate `steps` times, handing each intermediate population to
    /// `observer` (for stability diagnostics or snapshots).
    pub fn evolve(
        &self,
        mut pop: Population,
        steps: u64,
        seed: u64,
        workers: usize,
        mut observer: impl FnMut(&Population),
    ) -> Result<Population> {
        for _ in 0..steps {
            pop = self.step(&pop, seed, workers)?;
            observer(&pop);
        }
        Ok(pop)
    }
}

/// Single-step convenience form of [`SmoothingTransform::step`].
pub fn smoothing_step(
    pop: &Population,
    model_1: &DisplacementModel,
    theta: f64,
    seed: u64,
) -> Result<Population> {
    SmoothingTransform::new(*model_1, theta)?.step(pop, seed, 1)
}

/// Subcritical limit-shift samples: (1/theta) log of each pool entry.
pub fn h_hat_subcritical(pop: &Population, theta: f64) -> Vec<f64> {
    pop.pool().iter().map(|d| d.ln() / theta).collect()
}

/// Critical limit-shift samples built from draws of the derivative-statistic
/// limit. Non-positive draws (possible in finite-depth proxies) are rejected
/// and counted.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalShiftSamples {
    pub values: Vec<f64>,
    pub rejected: usize,
}

impl CriticalShiftSamples {
    pub fn rejection_fraction(&self) -> f64 {
        self.rejected as f64 / (self.rejected + self.values.len()) as f64
    }
}

/// Samples of the centered-maximum limit law: a resampled shift plus an
/// independent Gumbel noise term -(1/theta) log E.
///
/// The scaling on the noise follows from the exact coupling
/// theta R*_n = log W_n - log E: after centering and dividing by theta, the
/// exponential enters through -(1/theta) log E, so the noise width depends
/// on the tilt.
pub fn limit_law_samples(shifts: &[f64], theta: f64, count: u64, seed: u64) -> Result<Vec<f64>> {
    if shifts.is_empty() {
        return Err(Error::EmptySample("limit-shift sample".into()));
    }
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::Regime("theta must be positive and finite".into()));
    }
    Ok((0..count)
        .map(|rep| {
            let mut rng = stream(
                crate::rng::replicate_seed(seed, rep),
                StreamRole::RdeMatchExp,
            );
            let idx = rng.random_range(0..shifts.len());
            shifts[idx] - crate::displacement::exp1(&mut rng).ln() / theta
        })
        .collect())
}

pub fn h_hat_critical(
    d_samples: &[f64],
    theta1: f64,
    sigma1_sq: f64,
) -> Result<CriticalShiftSamples> {
    if theta1.is_nan() || sigma1_sq.is_nan() || theta1 <= 0.0 || sigma1_sq <= 0.0 {
        return Err(Error::Regime(
            "theta1 and sigma1_sq must be positive".into(),
        ));
    }
    let correction = 0.5 * (2.0 / (std::f64::consts::PI * sigma1_sq)).ln();
    let mut values = Vec::with_capacity(d_samples.len());
    let mut rejected = 0usize;
    for &d in d_samples {
        if d > 0.0 {
            values.push((d.ln() + correction) / theta1);
        } else {
            rejected += 1;
        }
    }
    if values.is_empty() {
        return Err(Error::EmptySample(format!(
            "all {rejected} derivative-statistic draws were non-positive"
        )));
    }
    Ok(CriticalShiftSamples { values, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_point_weights_sum_to_one() {
        // e^{theta - nu} + e^{-theta - nu} = 1 by definition of nu
        let model = DisplacementModel::deterministic_two_point(1.0, -1.0).unwrap();
        let transform = SmoothingTransform::new(model, 0.8).unwrap();
        let pop = Population::ones(500).unwrap();
        let next = transform.step(&pop, 3, 2).unwrap();
        for &x in next.pool() {
            assert_abs_diff_eq!(x, 1.0, epsilon = 1e-12);
        }
        assert_eq!(next.generation, 1);
    }

    #[test]
    fn rejects_supercritical_theta() {
        let model = DisplacementModel::gaussian_binary(1.0).unwrap();
        assert!(matches!(
            SmoothingTransform::new(model, 1.2),
            Err(Error::Regime(_))
        ));
    }

    #[test]
    fn mean_stays_near_one() {
        let model = DisplacementModel::gaussian_binary(1.0).unwrap();
        let transform = SmoothingTransform::new(model, 0.5).unwrap();
        let mut pop = Population::ones(20_000).unwrap();
        for _ in 0..10 {
            pop = transform.step(&pop, 17, 2).unwrap();
            assert!(pop.pool().iter().all(|&x| x > 0.0));
        }
        // drift accumulates over steps; allow a few per-step standard errors
        assert!(
            (pop.mean() - 1.0).abs() < 10.0 * pop.std_error(),
            "mean {} se {}",
            pop.mean(),
            pop.std_error()
        );
    }

    #[test]
    fn iterate_distance_trend_is_non_increasing() {
        let model = DisplacementModel::gaussian_binary(1.0).unwrap();
        let transform = SmoothingTransform::new(model, 0.5).unwrap();
        let mut pop = Population::ones(4000).unwrap();
        let mut distances = Vec::new();
        for _ in 0..24 {
            let next = transform.step(&pop, 23, 2).unwrap();
            let ks = crate::verify::ks_two_sample(
                &crate::verify::EmpiricalDistribution::new(pop.pool().to_vec()).unwrap(),
                &crate::verify::EmpiricalDistribution::new(next.pool().to_vec()).unwrap(),
                0.05,
            );
            distances.push(ks.statistic);
            pop = next;
        }
        let early: f64 = distances[..8].iter().sum::<f64>() / 8.0;
        let late: f64 = distances[16..].iter().sum::<f64>() / 8.0;
        assert!(
            late <= early + 0.005,
            "early mean {early:.4}, late mean {late:.4}, distances {distances:?}"
        );
    }

    #[test]
    fn step_is_worker_invariant() {
        let model = DisplacementModel::gaussian_binary(1.0).unwrap();
        let transform = SmoothingTransform::new(model, 0.5).unwrap();
        let pop = Population::ones(1000).unwrap();
        let a = transform.step(&pop, 5, 1).unwrap();
        let b = transform.step(&pop, 5, 4).unwrap();
        assert_eq!(a.pool(), b.pool());
    }

    #[test]
    fn h_hat_subcritical_scaling() {
        let pop = Population::ones(10).unwrap();
        assert!(h_hat_subcritical(&pop, 0.5).iter().all(|&x| x == 0.0));
        let pop = Population {
            pool: vec![2.0, 4.0],
            generation: 0,
            mean_log: 0.0,
        };
        let at1 = h_hat_subcritical(&pop, 1.0);
        let at2 = h_hat_subcritical(&pop, 2.0);
        for (a, b) in at1.iter().zip(&at2) {
            assert_abs_diff_eq!(a / 2.0, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn limit_law_noise_scale_follows_the_tilt() {
        // degenerate shifts: the samples are pure -(1/theta) log E, whose
        // mean is the Euler-Mascheroni constant over theta
        const EULER_GAMMA: f64 = 0.5772156649015329;
        let shifts = vec![0.0; 4];
        for theta in [0.5, 1.0, 2.0] {
            let xs = limit_law_samples(&shifts, theta, 40_000, 5).unwrap();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            assert!(
                (mean - EULER_GAMMA / theta).abs() < 4.0 * se,
                "theta {theta}: mean {mean} vs {}",
                EULER_GAMMA / theta
            );
        }
        assert!(limit_law_samples(&[], 1.0, 10, 1).is_err());
    }

    #[test]
    fn h_hat_critical_cases() {
        // sigma1^2 = 2/pi makes the correction vanish
        let out = h_hat_critical(&[1.0, 1.0], 0.7, 2.0 / std::f64::consts::PI).unwrap();
        assert!(out.values.iter().all(|&x| x.abs() < 1e-14));
        assert_eq!(out.rejected, 0);

        // doubling every draw shifts every output by log 2 / theta1
        let theta1 = 1.1774100225154747;
        let s2 = 2.0 * 2f64.ln();
        let base = h_hat_critical(&[0.5, 1.5], theta1, s2).unwrap();
        let doubled = h_hat_critical(&[1.0, 3.0], theta1, s2).unwrap();
        for (a, b) in base.values.iter().zip(&doubled.values) {
            assert_abs_diff_eq!(b - a, 2f64.ln() / theta1, epsilon = 1e-12);
        }

        // non-positive draws are rejected and counted
        let mixed = h_hat_critical(&[-0.2, 0.0, 1.0], theta1, s2).unwrap();
        assert_eq!(mixed.rejected, 2);
        assert_eq!(mixed.values.len(), 1);
        assert_abs_diff_eq!(mixed.rejection_fraction(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(
            h_hat_critical(&[-1.0], theta1, s2),
            Err(Error::EmptySample(_))
        ));
    }
}
