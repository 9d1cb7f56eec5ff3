//! Per-generation reproduction-and-displacement laws.
//!
//! A [`DisplacementModel`] describes one generation's point process: how many
//! children a particle gets and which displacements they receive. Closed-form
//! cumulants are used where they exist; the generic i.i.d. model falls back to
//! Monte Carlo with common random numbers so repeated evaluations at nearby
//! tilts stay consistent.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRole};

pub const DEFAULT_MC_BUDGET: u64 = 1_000_000;
pub const DEFAULT_MC_SEED: u64 = 0x5EED_0001_D15F_ACED;
/// Step size for central-difference derivatives of Monte Carlo cumulants.
pub const FD_STEP: f64 = 1e-4;

/// A point estimate plus its standard error. Closed-form quantities carry a
/// standard error of zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
        }
    }
}

/// Offspring-count laws for the generic model. All of them put zero mass on
/// N = 0, so the underlying branching process never dies out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OffspringLaw {
    /// N is the constant `count`.
    Fixed { count: u32 },
    /// N = 1 + Poisson(lambda).
    OnePlusPoisson { lambda: f64 },
    /// N uniform on the integers lo..=hi.
    UniformRange { lo: u32, hi: u32 },
}

impl OffspringLaw {
    fn check(&self) -> Result<()> {
        match *self {
            OffspringLaw::Fixed { count } => {
                if count < 1 {
                    return Err(Error::InvalidModel("offspring count must be >= 1".into()));
                }
            }
            OffspringLaw::OnePlusPoisson { lambda } => {
                if !lambda.is_finite() || lambda <= 0.0 {
                    return Err(Error::InvalidModel(
                        "one-plus-poisson lambda must be positive and finite".into(),
                    ));
                }
            }
            OffspringLaw::UniformRange { lo, hi } => {
                if lo < 1 || hi < lo {
                    return Err(Error::InvalidModel(
                        "uniform offspring range needs 1 <= lo <= hi".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            OffspringLaw::Fixed { count } => count as f64,
            OffspringLaw::OnePlusPoisson { lambda } => 1.0 + lambda,
            OffspringLaw::UniformRange { lo, hi } => (lo as f64 + hi as f64) / 2.0,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            OffspringLaw::Fixed { count } => (count as f64).powi(2),
            OffspringLaw::OnePlusPoisson { lambda } => {
                // Var = lambda
                lambda + (1.0 + lambda).powi(2)
            }
            OffspringLaw::UniformRange { lo, hi } => {
                let m = (lo as f64 + hi as f64) / 2.0;
                let span = hi as f64 - lo as f64 + 1.0;
                (span * span - 1.0) / 12.0 + m * m
            }
        }
    }

    /// True when N = 1 almost surely.
    fn always_one(&self) -> bool {
        matches!(
            *self,
            OffspringLaw::Fixed { count: 1 } | OffspringLaw::UniformRange { lo: 1, hi: 1 }
        )
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        match *self {
            OffspringLaw::Fixed { count } => count,
            OffspringLaw::OnePlusPoisson { lambda } => {
                let p = Poisson::new(lambda).expect("validated lambda");
                1 + rng.sample::<f64, _>(p) as u32
            }
            OffspringLaw::UniformRange { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

/// Per-child displacement laws for the generic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepLaw {
    Constant { value: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl StepLaw {
    fn check(&self) -> Result<()> {
        match *self {
            StepLaw::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidModel("constant step must be finite".into()));
                }
            }
            StepLaw::Normal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
                    return Err(Error::InvalidModel(
                        "normal step needs finite mean and sd > 0".into(),
                    ));
                }
            }
            StepLaw::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(Error::InvalidModel("uniform step needs lo < hi".into()));
                }
            }
        }
        Ok(())
    }

    fn degenerate(&self) -> bool {
        matches!(*self, StepLaw::Constant { .. })
    }

    #[inline]
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            StepLaw::Constant { value } => value,
            StepLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            StepLaw::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }
}

/// Offspring count drawn from `offspring`, displacements i.i.d. from `step`
/// given the count. Cumulants are Monte Carlo estimates over `mc_budget`
/// realizations regenerated from `mc_seed` (common random numbers across
/// tilts), and the finiteness bound `domain_bound` is declared, not inferred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericIid {
    pub offspring: OffspringLaw,
    pub step: StepLaw,
    #[serde(default = "default_mc_budget")]
    pub mc_budget: u64,
    #[serde(default = "default_mc_seed")]
    pub mc_seed: u64,
    #[serde(default = "default_domain_bound")]
    pub domain_bound: f64,
}

fn default_mc_budget() -> u64 {
    DEFAULT_MC_BUDGET
}
fn default_mc_seed() -> u64 {
    DEFAULT_MC_SEED
}
fn default_domain_bound() -> f64 {
    f64::INFINITY
}

/// One generation's reproduction-and-displacement law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisplacementModel {
    /// Two children, displacements i.i.d. Normal(0, sigma^2).
    GaussianBinary { sigma: f64 },
    /// Two children, one displaced by `a`, the other by `b`.
    DeterministicTwoPoint { a: f64, b: f64 },
    /// Generic i.i.d. displacements with declared offspring law.
    GenericIid(GenericIid),
}

/// Which clause of the non-triviality assumption failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum A2Clause {
    /// P(N = 1) < 1 is violated.
    OffspringAlwaysOne,
    /// P(Z({a}) = N) < 1 for every a is violated.
    DegenerateDisplacement,
    /// P(N >= 1) = 1 is violated.
    ExtinctionPossible,
}

impl std::fmt::Display for A2Clause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            A2Clause::OffspringAlwaysOne => "P(N=1)<1",
            A2Clause::DegenerateDisplacement => "P(Z({a})=N)<1",
            A2Clause::ExtinctionPossible => "P(N>=1)=1",
        };
        f.write_str(s)
    }
}

/// Outcome of checking the three standing assumptions on a model.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// Cumulant finite on (-domain_bound, inf) with domain_bound > 0.
    pub a1_ok: bool,
    pub domain_bound: f64,
    /// Point process non-trivial and extinction-free.
    pub a2_ok: bool,
    pub a2_failure: Option<A2Clause>,
    /// Offspring count has a finite (1+p)-th moment.
    pub a3_ok: bool,
    pub moment_order: f64,
    pub messages: Vec<String>,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.a1_ok && self.a2_ok && self.a3_ok
    }
}

impl DisplacementModel {
    pub fn gaussian_binary(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidModel("sigma must be positive and finite".into()));
        }
        Ok(DisplacementModel::GaussianBinary { sigma })
    }

    /// `a == b` is allowed here so that `validate` can flag it.
    pub fn deterministic_two_point(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidModel("two-point values must be finite".into()));
        }
        Ok(DisplacementModel::DeterministicTwoPoint { a, b })
    }

    pub fn generic_iid(spec: GenericIid) -> Result<Self> {
        spec.offspring.check()?;
        spec.step.check()?;
        if spec.mc_budget == 0 {
            return Err(Error::InvalidModel("mc_budget must be >= 1".into()));
        }
        Ok(DisplacementModel::GenericIid(spec))
    }

    /// Declared lower finiteness bound: the cumulant is finite on
    /// (-domain_bound, inf).
    pub fn domain_bound(&self) -> f64 {
        match self {
            DisplacementModel::GaussianBinary { .. }
            | DisplacementModel::DeterministicTwoPoint { .. } => f64::INFINITY,
            DisplacementModel::GenericIid(g) => g.domain_bound,
        }
    }

    pub fn mean_offspring(&self) -> f64 {
        match self {
            DisplacementModel::GaussianBinary { .. }
            | DisplacementModel::DeterministicTwoPoint { .. } => 2.0,
            DisplacementModel::GenericIid(g) => g.offspring.mean(),
        }
    }

    fn check_domain(&self, a: f64) -> Result<()> {
        let bound = self.domain_bound();
        if !a.is_finite() || a <= -bound {
            return Err(Error::Domain { a, bound });
        }
        Ok(())
    }

    /// Draw one realization of the point process into `out`.
    #[inline]
    pub fn sample_into(&self, out: &mut Vec<f64>, rng: &mut ChaCha8Rng) {
        out.clear();
        match self {
            DisplacementModel::GaussianBinary { sigma } => {
                out.push(sigma * rng.sample::<f64, _>(StandardNormal));
                out.push(sigma * rng.sample::<f64, _>(StandardNormal));
            }
            DisplacementModel::DeterministicTwoPoint { a, b } => {
                out.push(*a);
                out.push(*b);
            }
            DisplacementModel::GenericIid(g) => {
                let n = g.offspring.sample(rng);
                for _ in 0..n {
                    out.push(g.step.sample(rng));
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut out = Vec::new();
        self.sample_into(&mut out, rng);
        out
    }

    /// Log moment-generating function of the point process at tilt `a`.
    pub fn nu(&self, a: f64) -> Result<f64> {
        Ok(self.nu_estimate(a)?.value)
    }

    /// Like [`nu`](Self::nu) but keeps the Monte Carlo standard error.
    pub fn nu_estimate(&self, a: f64) -> Result<Estimate> {
        self.check_domain(a)?;
        Ok(match self {
            DisplacementModel::GaussianBinary { sigma } => {
                Estimate::exact(2f64.ln() + sigma * sigma * a * a / 2.0)
            }
            DisplacementModel::DeterministicTwoPoint { a: x, b: y } => {
                Estimate::exact(log_sum_2(a * x, a * y))
            }
            DisplacementModel::GenericIid(g) => g.nu_mc(a),
        })
    }

    /// `(nu(a), nu'(a), nu''(a))`. Closed forms where available, central
    /// differences on the Monte Carlo estimate otherwise.
    pub fn nu_derivatives(&self, a: f64) -> Result<(f64, f64, f64)> {
        self.check_domain(a)?;
        Ok(match self {
            DisplacementModel::GaussianBinary { sigma } => {
                let s2 = sigma * sigma;
                (2f64.ln() + s2 * a * a / 2.0, s2 * a, s2)
            }
            DisplacementModel::DeterministicTwoPoint { a: x, b: y } => {
                let (lx, ly) = (a * x, a * y);
                let m = lx.max(ly);
                let (wx, wy) = ((lx - m).exp(), (ly - m).exp());
                let z = wx + wy;
                let nu = m + z.ln();
                let d1 = (x * wx + y * wy) / z;
                let d2 = (x * x * wx + y * y * wy) / z - d1 * d1;
                (nu, d1, d2)
            }
            DisplacementModel::GenericIid(g) => {
                self.check_domain(a - FD_STEP)?;
                let lo = g.nu_mc(a - FD_STEP).value;
                let mid = g.nu_mc(a).value;
                let hi = g.nu_mc(a + FD_STEP).value;
                let d1 = (hi - lo) / (2.0 * FD_STEP);
                let d2 = (hi - 2.0 * mid + lo) / (FD_STEP * FD_STEP);
                (mid, d1, d2)
            }
        })
    }

    /// Check the standing assumptions. Failures are reported, never thrown.
    pub fn validate(&self) -> AssumptionReport {
        let bound = self.domain_bound();
        let a1_ok = bound > 0.0;
        let mut messages = Vec::new();
        if a1_ok {
            messages.push(format!("cumulant declared finite on (-{bound}, inf)"));
        } else {
            messages.push("declared finiteness bound is not positive".into());
        }

        let mut a2_failure = None;
        match self {
            DisplacementModel::GaussianBinary { .. } => {}
            DisplacementModel::DeterministicTwoPoint { a, b } => {
                if a == b {
                    a2_failure = Some(A2Clause::DegenerateDisplacement);
                }
            }
            DisplacementModel::GenericIid(g) => {
                if g.offspring.always_one() {
                    a2_failure = Some(A2Clause::OffspringAlwaysOne);
                } else if g.step.degenerate() {
                    a2_failure = Some(A2Clause::DegenerateDisplacement);
                }
            }
        }
        if let Some(clause) = a2_failure {
            messages.push(format!("non-triviality failed: {clause}"));
        }

        let m2 = match self {
            DisplacementModel::GaussianBinary { .. }
            | DisplacementModel::DeterministicTwoPoint { .. } => 4.0,
            DisplacementModel::GenericIid(g) => g.offspring.second_moment(),
        };
        let a3_ok = m2.is_finite();
        messages.push(format!("offspring second moment {m2} (order p = 1)"));

        AssumptionReport {
            a1_ok,
            domain_bound: bound,
            a2_ok: a2_failure.is_none(),
            a2_failure,
            a3_ok,
            moment_order: 1.0,
            messages,
        }
    }
}

impl GenericIid {
    /// Monte Carlo cumulant: log of the sample mean of sum_j exp(a xi_j),
    /// regenerated from `mc_seed` so calls at different tilts share draws.
    fn nu_mc(&self, a: f64) -> Estimate {
        let mut rng = stream(self.mc_seed, StreamRole::CumulantMc);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut buf = Vec::new();
        let model = DisplacementModel::GenericIid(*self);
        for _ in 0..self.mc_budget {
            model.sample_into(&mut buf, &mut rng);
            let y: f64 = buf.iter().map(|&x| (a * x).exp()).sum();
            sum += y;
            sum_sq += y * y;
        }
        let r = self.mc_budget as f64;
        let mean = sum / r;
        let var = ((sum_sq - r * mean * mean) / (r - 1.0).max(1.0)).max(0.0);
        let se_mean = (var / r).sqrt();
        Estimate {
            value: mean.ln(),
            std_error: se_mean / mean,
        }
    }
}

/// log(e^x + e^y) without overflow.
#[inline]
fn log_sum_2(x: f64, y: f64) -> f64 {
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// Exponential(1) draw, rejecting the measure-zero 0.0 so logs stay finite.
#[inline]
pub(crate) fn exp1(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let e: f64 = rng.sample(Exp1);
        if e > 0.0 {
            return e;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rng() -> ChaCha8Rng {
        stream(11, StreamRole::Tree)
    }

    fn fixed(n: u32) -> OffspringLaw {
        OffspringLaw::Fixed { count: n }
    }

    fn generic(offspring: OffspringLaw, step: StepLaw) -> DisplacementModel {
        DisplacementModel::generic_iid(GenericIid {
            offspring,
            step,
            mc_budget: 20_000,
            mc_seed: DEFAULT_MC_SEED,
            domain_bound: f64::INFINITY,
        })
        .unwrap()
    }

    #[test]
    fn two_point_sample_is_deterministic() {
        let m = DisplacementModel::deterministic_two_point(1.0, -1.0).unwrap();
        let mut r = rng();
        for _ in 0..10 {
            assert_eq!(m.sample(&mut r), vec![1.0, -1.0]);
        }
    }

    #[test]
    fn constant_triple_offspring() {
        let m = generic(fixed(3), StepLaw::Constant { value: 0.0 });
        assert_eq!(m.sample(&mut rng()), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn gaussian_sample_moments() {
        let m = DisplacementModel::gaussian_binary(1.0).unwrap();
        let mut r = rng();
        let mut xs = Vec::new();
        for _ in 0..100_000 {
            xs.extend(m.sample(&mut r));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.97..1.03).contains(&var), "var {var}");
    }

    #[test]
    fn nu_closed_forms() {
        let gb1 = DisplacementModel::gaussian_binary(1.0).unwrap();
        assert_abs_diff_eq!(gb1.nu(0.0).unwrap(), 2f64.ln(), epsilon = 1e-15);

        let gb2 = DisplacementModel::gaussian_binary(2.0).unwrap();
        assert_abs_diff_eq!(gb2.nu(0.5).unwrap(), 1.1931471805599453, epsilon = 1e-15);

        let tp = DisplacementModel::deterministic_two_point(1.0, -1.0).unwrap();
        // log(2 cosh 1), computed independently at high precision
        assert_abs_diff_eq!(tp.nu(1.0).unwrap(), 1.1269280110429725, epsilon = 1e-14);
    }

    #[test]
    fn nu_derivative_closed_forms() {
        let gb = DisplacementModel::gaussian_binary(1.0).unwrap();
        let (_, d1, d2) = gb.nu_derivatives(0.5).unwrap();
        assert_abs_diff_eq!(d1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d2, 1.0, epsilon = 1e-15);

        let tp = DisplacementModel::deterministic_two_point(1.0, -1.0).unwrap();
        let (_, d1, _) = tp.nu_derivatives(1.0).unwrap();
        assert_abs_diff_eq!(d1, 0.7615941559557649, epsilon = 1e-14);
        // symmetric two-point drift vanishes at zero tilt
        let (_, d1, _) = tp.nu_derivatives(0.0).unwrap();
        assert_abs_diff_eq!(d1, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn finite_difference_matches_closed_form_derivative() {
        let h = 1e-4;
        let models = [
            DisplacementModel::gaussian_binary(1.0).unwrap(),
            DisplacementModel::gaussian_binary(2.0).unwrap(),
            DisplacementModel::deterministic_two_point(1.0, -1.0).unwrap(),
            DisplacementModel::deterministic_two_point(0.3, 2.0).unwrap(),
        ];
        for m in &models {
            for a in [-0.5, 0.5, 1.0, 2.0] {
                let (_, d1, d2) = m.nu_derivatives(a).unwrap();
                let fd = (m.nu(a + h).unwrap() - m.nu(a - h).unwrap()) / (2.0 * h);
                assert!((d1 - fd).abs() < 1e-6, "{m:?} at {a}: {d1} vs {fd}");
                assert!(d2 > 0.0, "{m:?} at {a}: nu'' = {d2}");
            }
        }
    }

    #[test]
    fn jensen_floor_at_zero_tilt() {
        // nu(a) >= log E[N] + a * (per-child mean drift), with equality at a = 0
        let cases = [
            (DisplacementModel::gaussian_binary(0.7).unwrap(), 0.0),
            (
                DisplacementModel::deterministic_two_point(1.0, -2.0).unwrap(),
                -0.5,
            ),
        ];
        for (m, drift) in &cases {
            let n0 = m.nu(0.0).unwrap();
            assert_abs_diff_eq!(n0, m.mean_offspring().ln(), epsilon = 1e-12);
            for a in [-0.5, 0.25, 1.0, 2.0] {
                let floor = m.mean_offspring().ln() + a * drift;
                assert!(m.nu(a).unwrap() >= floor - 1e-12, "{m:?} at {a}");
            }
        }
    }

    #[test]
    fn mc_nu_consistent_at_zero() {
        let m = generic(
            OffspringLaw::OnePlusPoisson { lambda: 1.5 },
            StepLaw::Normal { mean: 0.0, sd: 1.0 },
        );
        let est = m.nu_estimate(0.0).unwrap();
        let truth = 2.5f64.ln();
        assert!(
            (est.value - truth).abs() < 3.0 * est.std_error,
            "{} vs {truth} (se {})",
            est.value,
            est.std_error
        );
        assert!(est.std_error > 0.0);
    }

    #[test]
    fn mc_nu_matches_product_form() {
        // E[sum e^{a xi}] = E[N] * MGF(a) for iid steps independent of N
        let m = generic(fixed(2), StepLaw::Normal { mean: 0.0, sd: 1.0 });
        let est = m.nu_estimate(0.4).unwrap();
        let truth = 2f64.ln() + 0.4f64 * 0.4 / 2.0;
        assert!((est.value - truth).abs() < 4.0 * est.std_error.max(1e-4));
    }

    #[test]
    fn domain_error_outside_declared_bound() {
        let m = DisplacementModel::generic_iid(GenericIid {
            offspring: fixed(2),
            step: StepLaw::Normal { mean: 0.0, sd: 1.0 },
            mc_budget: 100,
            mc_seed: 1,
            domain_bound: 0.5,
        })
        .unwrap();
        assert!(matches!(m.nu(-0.6), Err(Error::Domain { .. })));
        assert!(m.nu(-0.4).is_ok());
    }

    #[test]
    fn validate_flags_the_right_clauses() {
        let ok = DisplacementModel::gaussian_binary(1.0).unwrap().validate();
        assert!(ok.all_ok());

        let single = generic(fixed(1), StepLaw::Normal { mean: 0.0, sd: 1.0 }).validate();
        assert!(!single.a2_ok);
        assert_eq!(single.a2_failure, Some(A2Clause::OffspringAlwaysOne));
        assert_eq!(single.a2_failure.unwrap().to_string(), "P(N=1)<1");

        let flat = DisplacementModel::deterministic_two_point(0.0, 0.0)
            .unwrap()
            .validate();
        assert!(!flat.a2_ok);
        assert_eq!(flat.a2_failure, Some(A2Clause::DegenerateDisplacement));
        assert_eq!(flat.a2_failure.unwrap().to_string(), "P(Z({a})=N)<1");

        let constant_steps = generic(fixed(2), StepLaw::Constant { value: 1.0 }).validate();
        assert!(!constant_steps.a2_ok);
        assert_eq!(
            constant_steps.a2_failure,
            Some(A2Clause::DegenerateDisplacement)
        );
    }
}
