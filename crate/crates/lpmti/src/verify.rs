//! Empirical distributions and the statistical tests that turn limit
//! theorems into pass/fail checks.
//!
//! Convergence in distribution is operationalized as a ladder of trend
//! checks plus a Kolmogorov-Smirnov threshold at the largest depth; exact
//! distributional identities get tight thresholds, asymptotic statements get
//! slack. Every function here is a pure computation over its input samples.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulator::{RunResult, Schedule};

/// A sorted sample supporting CDF, quantile and KS queries.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalDistribution {
    sorted_values: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample("empirical distribution".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidSample("sample contains NaN".into()));
        }
        values.sort_by(|a, b| a.total_cmp(b));
        Ok(EmpiricalDistribution {
            sorted_values: values,
        })
    }

    pub fn len(&self) -> usize {
        self.sorted_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted_values
    }

    /// Fraction of the sample <= x.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted_values.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    /// Order-statistic quantile for p in [0, 1].
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let idx = ((p * self.len() as f64).ceil() as usize).clamp(1, self.len());
        self.sorted_values[idx - 1]
    }

    /// Two-sample KS statistic: sup over x of |F_self(x) - F_other(x)|.
    pub fn ks_statistic(&self, other: &EmpiricalDistribution) -> f64 {
        let a = &self.sorted_values;
        let b = &other.sorted_values;
        let (m, n) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < a.len() || j < b.len() {
            let x = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) => x.min(y),
                (Some(&x), None) => x,
                (None, Some(&y)) => y,
                (None, None) => break,
            };
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / m - j as f64 / n).abs());
        }
        d
    }

    /// One-sample KS statistic against a continuous CDF.
    pub fn ks_statistic_cdf(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let n = self.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &x) in self.sorted_values.iter().enumerate() {
            let f = cdf(x);
            d = d.max(((i + 1) as f64 / n - f).abs());
            d = d.max((f - i as f64 / n).abs());
        }
        d
    }
}

/// Outcome of a KS test: statistic, the threshold it was held against and
/// the sample sizes involved.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub sizes: (usize, usize),
}

/// Critical coefficient c(alpha) of the asymptotic KS distribution. The two
/// standard levels are pinned to their customary table values.
pub fn ks_critical_coefficient(alpha: f64) -> f64 {
    if (alpha - 0.01).abs() < 1e-12 {
        1.628
    } else if (alpha - 0.05).abs() < 1e-12 {
        1.358
    } else {
        (-(alpha / 2.0).ln() / 2.0).sqrt()
    }
}

/// Two-sample KS test at level alpha with the asymptotic threshold
/// c(alpha) sqrt((m+n)/(mn)).
pub fn ks_two_sample(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    alpha: f64,
) -> KsResult {
    let statistic = a.ks_statistic(b);
    let (m, n) = (a.len() as f64, b.len() as f64);
    let threshold = ks_critical_coefficient(alpha) * ((m + n) / (m * n)).sqrt();
    KsResult {
        statistic,
        threshold,
        pass: statistic < threshold,
        sizes: (a.len(), b.len()),
    }
}

/// One-sample KS test against an analytic CDF at level alpha.
pub fn ks_one_sample(
    sample: &EmpiricalDistribution,
    cdf: impl Fn(f64) -> f64,
    alpha: f64,
) -> KsResult {
    let statistic = sample.ks_statistic_cdf(cdf);
    let n = sample.len() as f64;
    let threshold = ks_critical_coefficient(alpha) / n.sqrt();
    KsResult {
        statistic,
        threshold,
        pass: statistic < threshold,
        sizes: (sample.len(), 0),
    }
}

/// CDF of the unit-rate exponential law.
pub fn exp1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x).exp_m1()
    }
}

/// Gap between the two largest perturbed scores, per replicate, tested
/// against Exponential(1). Under the limiting point process the top-two gap
/// of the Poisson skeleton is exactly unit-exponential.
pub fn gap_test(results: &[RunResult], alpha: f64) -> Result<KsResult> {
    if results.is_empty() {
        return Err(Error::EmptySample("gap test needs replicates".into()));
    }
    let mut gaps = Vec::with_capacity(results.len());
    for r in results {
        if r.top_scores.len() < 2 {
            return Err(Error::InsufficientTopK {
                need: 2,
                have: r.top_scores.len(),
            });
        }
        gaps.push(r.top_scores[0] - r.top_scores[1]);
    }
    let sample = EmpiricalDistribution::new(gaps)?;
    Ok(ks_one_sample(&sample, exp1_cdf, alpha))
}

/// One row of a law-of-large-numbers ladder check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LlnRow {
    pub n: u64,
    pub mean: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LlnReport {
    pub target: f64,
    pub rows: Vec<LlnRow>,
    /// Deviations non-increasing along the ladder, within `allowance`.
    pub monotone_ok: bool,
    pub allowance: f64,
    pub final_deviation: f64,
}

/// Check per-depth means of R*_n / n against the limit target. Requires a
/// ladder of at least three strictly increasing depths.
pub fn lln_check(means: &[(u64, f64)], target: f64, allowance: f64) -> Result<LlnReport> {
    if means.len() < 3 {
        return Err(Error::Mismatch(format!(
            "law-of-large-numbers ladder needs >= 3 depths, got {}",
            means.len()
        )));
    }
    if means.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Mismatch("ladder depths must be increasing".into()));
    }
    let rows: Vec<LlnRow> = means
        .iter()
        .map(|&(n, mean)| LlnRow {
            n,
            mean,
            deviation: (mean - target).abs(),
        })
        .collect();
    let monotone_ok = rows
        .windows(2)
        .all(|w| w[1].deviation <= w[0].deviation + allowance);
    Ok(LlnReport {
        target,
        final_deviation: rows.last().unwrap().deviation,
        rows,
        monotone_ok,
        allowance,
    })
}

/// A centered sample tagged with the regime that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct CenteredSample {
    pub sample: EmpiricalDistribution,
    pub theta: f64,
    pub critical: bool,
}

impl CenteredSample {
    pub fn new(values: Vec<f64>, theta: f64, critical: bool) -> Result<Self> {
        Ok(CenteredSample {
            sample: EmpiricalDistribution::new(values)?,
            theta,
            critical,
        })
    }
}

/// Two-sample KS between centered samples from the same regime; a pass
/// indicates stabilization consistent with a weak limit.
pub fn limit_stability(a: &CenteredSample, b: &CenteredSample, alpha: f64) -> Result<KsResult> {
    if (a.theta - b.theta).abs() > 1e-12 || a.critical != b.critical {
        return Err(Error::Mismatch(format!(
            "centered samples from different regimes: theta {} vs {}, critical {} vs {}",
            a.theta, b.theta, a.critical, b.critical
        )));
    }
    Ok(ks_two_sample(&a.sample, &b.sample, alpha))
}

/// Per-depth report on the first-block partition-function ratio.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RatioReport {
    pub n: u64,
    pub eps: f64,
    pub exceed_fraction: f64,
    pub reps: usize,
}

/// Fraction of replicates whose normalized whole-tree to first-block
/// partition-function ratio strays from 1 by more than eps.
pub fn ratio_check(
    results: &[RunResult],
    theta: f64,
    nus: &[f64],
    schedule: &Schedule,
    eps: f64,
) -> Result<RatioReport> {
    if results.is_empty() {
        return Err(Error::EmptySample("ratio check needs replicates".into()));
    }
    if nus.len() != schedule.k() {
        return Err(Error::Mismatch(format!(
            "{} cumulant values vs {} blocks",
            nus.len(),
            schedule.k()
        )));
    }
    let whole_norm: f64 = nus
        .iter()
        .zip(schedule.q())
        .map(|(nu, &q)| q as f64 * nu)
        .sum();
    let first_norm = schedule.q()[0] as f64 * nus[0];
    let mut exceed = 0usize;
    for r in results {
        if (r.theta - theta).abs() > 1e-12 {
            return Err(Error::Mismatch(
                "replicate theta differs from the requested theta".into(),
            ));
        }
        if !r.first_block_log_w.is_finite() {
            return Err(Error::Mismatch(
                "ratio check needs record_first_block".into(),
            ));
        }
        let ratio = ((r.log_w - whole_norm) - (r.first_block_log_w - first_norm)).exp();
        if (ratio - 1.0).abs() > eps {
            exceed += 1;
        }
    }
    Ok(RatioReport {
        n: schedule.n(),
        eps,
        exceed_fraction: exceed as f64 / results.len() as f64,
        reps: results.len(),
    })
}
