//! Experiment configuration: a single TOML file with nested records.
//!
//! Unknown keys are hard errors; a silent typo in an experiment config would
//! quietly destroy reproducibility. The full schema is documented in the
//! repository README.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cumulant::{theta_star_default, CriticalTilt};
use crate::displacement::{DisplacementModel, GenericIid};
use crate::error::{Error, Result};
use crate::simulator::Schedule;

/// Environment variables that override seed and worker count.
pub const ENV_SEED: &str = "LPMTI_SEED";
pub const ENV_WORKERS: &str = "LPMTI_WORKERS";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Which named experiment to run under `verify`.
    #[serde(default)]
    pub preset: Option<String>,
    pub reps: u64,
    pub master_seed: u64,
    /// 0 means "use the available parallelism".
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_topk")]
    pub topk: usize,
    #[serde(default)]
    pub particle_budget: Option<u64>,
    #[serde(rename = "model")]
    pub models: Vec<ModelSpec>,
    /// Replacement non-first-block models for the limit-dependence swap.
    #[serde(default, rename = "alt_model")]
    pub alt_models: Vec<ModelSpec>,
    pub schedule: ScheduleSpec,
    pub theta: ThetaSpec,
    #[serde(default)]
    pub rde: RdeSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_topk() -> usize {
    2
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    GaussianBinary { sigma: f64 },
    DeterministicTwoPoint { a: f64, b: f64 },
    GenericIid(GenericIid),
}

impl ModelSpec {
    pub fn build(&self) -> Result<DisplacementModel> {
        match *self {
            ModelSpec::GaussianBinary { sigma } => DisplacementModel::gaussian_binary(sigma),
            ModelSpec::DeterministicTwoPoint { a, b } => {
                DisplacementModel::deterministic_two_point(a, b)
            }
            ModelSpec::GenericIid(g) => DisplacementModel::generic_iid(g),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Explicit block lengths; the ladder is the single depth they sum to.
    Explicit { q: Vec<u64> },
    /// q_i = floor(alpha_i n) with the remainder assigned to the last block,
    /// so the first block is never perturbed by rounding.
    Proportional { alphas: Vec<f64>, n_ladder: Vec<u64> },
    /// q_1 = floor(sqrt(n)); the rest of n splits along the remaining
    /// proportions. Exercises arbitrarily slow first-block growth.
    SlowFirst { alphas: Vec<f64>, n_ladder: Vec<u64> },
}

const ALPHA_SUM_TOL: f64 = 1e-12;

impl ScheduleSpec {
    pub fn k(&self) -> usize {
        match self {
            ScheduleSpec::Explicit { q } => q.len(),
            ScheduleSpec::Proportional { alphas, .. } | ScheduleSpec::SlowFirst { alphas, .. } => {
                alphas.len()
            }
        }
    }

    /// The depths this spec runs at.
    pub fn ladder(&self) -> Vec<u64> {
        match self {
            ScheduleSpec::Explicit { q } => vec![q.iter().sum()],
            ScheduleSpec::Proportional { n_ladder, .. }
            | ScheduleSpec::SlowFirst { n_ladder, .. } => n_ladder.clone(),
        }
    }

    pub fn alphas(&self) -> Option<&[f64]> {
        match self {
            ScheduleSpec::Explicit { .. } => None,
            ScheduleSpec::Proportional { alphas, .. } | ScheduleSpec::SlowFirst { alphas, .. } => {
                Some(alphas)
            }
        }
    }

    fn validate_alphas(alphas: &[f64]) -> Result<()> {
        if alphas.is_empty() {
            return Err(Error::Config {
                field: "schedule.alphas".into(),
                message: "at least one block proportion is required".into(),
            });
        }
        if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config {
                field: "schedule.alphas".into(),
                message: "proportions must be finite and non-negative".into(),
            });
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::Config {
                field: "schedule.alphas".into(),
                message: format!("proportions sum to {sum}, expected 1"),
            });
        }
        Ok(())
    }

    /// Split `total` across `alphas` by flooring, remainder to the last block.
    fn split(alphas: &[f64], total: u64) -> Vec<u64> {
        let k = alphas.len();
        let mut q = Vec::with_capacity(k);
        let mut used: u64 = 0;
        for &a in &alphas[..k - 1] {
            let qi = (a * total as f64).floor() as u64;
            q.push(qi);
            used += qi;
        }
        q.push(total - used);
        q
    }

    /// Resolve to a concrete schedule at depth `n`.
    pub fn resolve(&self, n: u64) -> Result<Schedule> {
        let q = match self {
            ScheduleSpec::Explicit { q } => {
                let total: u64 = q.iter().sum();
                if total != n {
                    return Err(Error::Config {
                        field: "schedule.q".into(),
                        message: format!("blocks sum to {total}, expected {n}"),
                    });
                }
                q.clone()
            }
            ScheduleSpec::Proportional { alphas, .. } => {
                Self::validate_alphas(alphas)?;
                let q = Self::split(alphas, n);
                for (i, (&qi, &a)) in q.iter().zip(alphas).enumerate() {
                    if qi == 0 && a > 0.0 {
                        return Err(Error::Config {
                            field: "schedule".into(),
                            message: format!(
                                "block {} resolves to zero generations at n = {n}",
                                i + 1
                            ),
                        });
                    }
                }
                q
            }
            ScheduleSpec::SlowFirst { alphas, .. } => {
                Self::validate_alphas(alphas)?;
                if alphas.len() < 2 {
                    return Err(Error::Config {
                        field: "schedule.alphas".into(),
                        message: "slow-first needs at least two blocks".into(),
                    });
                }
                let q1 = n.isqrt();
                if q1 == 0 {
                    return Err(Error::Config {
                        field: "schedule".into(),
                        message: format!("slow-first first block is empty at n = {n}"),
                    });
                }
                let tail: f64 = alphas[1..].iter().sum();
                let renorm: Vec<f64> = if tail > 0.0 {
                    alphas[1..].iter().map(|a| a / tail).collect()
                } else {
                    let m = alphas.len() - 1;
                    vec![1.0 / m as f64; m]
                };
                let mut q = vec![q1];
                q.extend(Self::split(&renorm, n - q1));
                q
            }
        };
        Schedule::new(q)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ThetaSpec {
    /// A fixed tilt value.
    Value { value: f64 },
    /// The first block's critical tilt, computed from the model.
    Critical,
}

impl ThetaSpec {
    pub fn is_critical(&self) -> bool {
        matches!(self, ThetaSpec::Critical)
    }

    /// Resolve against the configured models.
    pub fn resolve(&self, models: &[DisplacementModel]) -> Result<f64> {
        match *self {
            ThetaSpec::Value { value } => {
                if !value.is_finite() || value <= 0.0 {
                    return Err(Error::Config {
                        field: "theta.value".into(),
                        message: "tilt must be positive and finite".into(),
                    });
                }
                Ok(value)
            }
            ThetaSpec::Critical => {
                let first = models.first().ok_or_else(|| Error::Config {
                    field: "models".into(),
                    message: "critical tilt needs at least one model".into(),
                })?;
                match theta_star_default(first)? {
                    CriticalTilt::Finite { value, .. } => Ok(value),
                    CriticalTilt::Infinite { cap, .. } => Err(Error::Regime(format!(
                        "first-block critical tilt is infinite (no tangent up to {cap})"
                    ))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdeSpec {
    pub population: usize,
    pub iterations: u64,
    /// Earlier iterate kept for the stability comparison.
    pub snapshot_at: u64,
    /// First-block depths used as finite proxies for the derivative-statistic
    /// limit (leaf counts 2^q1 at binary branching).
    pub q1_proxies: Vec<u64>,
}

impl Default for RdeSpec {
    fn default() -> Self {
        RdeSpec {
            population: crate::rde::DEFAULT_POPULATION,
            iterations: crate::rde::DEFAULT_ITERATIONS,
            snapshot_at: 40,
            q1_proxies: vec![8, 10],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

/// Every test threshold the presets use, pinned to its default here and
/// overridable per config file.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Two-sample KS bound for the exact coupling identity.
    pub coupling_ks: f64,
    /// Standard-error multiplier for mean-one checks.
    pub se_multiplier: f64,
    /// Bound on |mean(R*_n/n) - target| at the largest depth.
    pub lln_final_deviation: f64,
    /// Noise allowance for the deviation ladder to count as non-increasing.
    pub lln_allowance: f64,
    /// Two-sample KS bound for subcritical limit stability.
    pub stability_ks: f64,
    /// KS bound when swapping later blocks while keeping the first.
    pub z1_swap_ks: f64,
    /// KS bound for critical-regime stability (log-correction converges
    /// slowly, so looser).
    pub critical_ks: f64,
    /// One-sample KS bound for the top-two gap against Exponential(1).
    pub gap_ks: f64,
    /// Relative excursion defining a ratio miss.
    pub ratio_eps: f64,
    /// Bound on the miss fraction at the largest depth.
    pub ratio_final_fraction: f64,
    /// KS bound between late fixed-point iterates.
    pub rde_iterate_ks: f64,
    /// KS bound between the fixed-point construction and centered maxima.
    pub rde_match_ks: f64,
    /// KS bound between slow-first and proportional centered samples.
    pub sheave_ks: f64,
    /// Level for exact equality-in-law tests.
    pub alpha_exact: f64,
    /// Level for asymptotic tests.
    pub alpha_asymptotic: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            coupling_ks: 0.04,
            se_multiplier: 3.0,
            lln_final_deviation: 0.1,
            lln_allowance: 0.01,
            stability_ks: 0.05,
            z1_swap_ks: 0.06,
            critical_ks: 0.07,
            gap_ks: 0.05,
            ratio_eps: 0.25,
            ratio_final_fraction: 0.2,
            rde_iterate_ks: 0.02,
            rde_match_ks: 0.08,
            sheave_ks: 0.1,
            alpha_exact: 0.01,
            alpha_asymptotic: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::ConfigParse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config {
                field: "models".into(),
                message: "at least one model is required".into(),
            });
        }
        if self.models.len() != self.schedule.k() {
            return Err(Error::Config {
                field: "schedule".into(),
                message: format!(
                    "{} models vs {} schedule blocks",
                    self.models.len(),
                    self.schedule.k()
                ),
            });
        }
        if self.reps == 0 {
            return Err(Error::Config {
                field: "reps".into(),
                message: "at least one replicate is required".into(),
            });
        }
        if self.topk == 0 {
            return Err(Error::Config {
                field: "topk".into(),
                message: "topk must be >= 1".into(),
            });
        }
        if self.schedule.ladder().is_empty() {
            return Err(Error::Config {
                field: "schedule.n_ladder".into(),
                message: "at least one depth is required".into(),
            });
        }
        for spec in self.models.iter().chain(&self.alt_models) {
            spec.build()?;
        }
        Ok(())
    }

    pub fn build_models(&self) -> Result<Vec<DisplacementModel>> {
        self.models.iter().map(|m| m.build()).collect()
    }

    /// Resolved worker count (0 means all available).
    pub fn effective_workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            self.workers
        }
    }

    /// Apply `LPMTI_SEED` / `LPMTI_WORKERS` if set; flags take precedence
    /// over these in the CLI layer.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(seed) = std::env::var(ENV_SEED) {
            self.master_seed = seed.parse().map_err(|_| Error::Config {
                field: ENV_SEED.into(),
                message: format!("cannot parse `{seed}` as a seed"),
            })?;
        }
        if let Ok(workers) = std::env::var(ENV_WORKERS) {
            self.workers = workers.parse().map_err(|_| Error::Config {
                field: ENV_WORKERS.into(),
                message: format!("cannot parse `{workers}` as a worker count"),
            })?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical serialized form, hex-encoded. Worker count
    /// and output location do not affect results, so they are excluded: the
    /// hash identifies the experiment, not the machine it ran on.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut canonical = self.clone();
        canonical.workers = 0;
        canonical.output = OutputSpec::default();
        let text = toml::to_string(&canonical).unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
