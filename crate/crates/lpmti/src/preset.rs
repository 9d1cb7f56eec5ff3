//! Named experiments: each preset wires simulator batches to the statistics
//! that check one limit statement, writes per-replicate artifacts and a
//! summary with per-test verdicts.
//!
//! Distinct batches inside a preset (different depths, the coupling arm, the
//! resampled pairing of fixed-point draws) run under salted master seeds so
//! every comparison is between independent samples. All file writes happen on
//! the calling thread after aggregation; outputs are byte-identical for any
//! worker count.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OutputFormat, ScheduleSpec};
use crate::cumulant::{
    centering, fz_constants, theta_star_default, tilted_quadratic_exact, tilted_quadratic_mc,
    CenteringSpec,
};
use crate::displacement::{exp1, DisplacementModel};
use crate::error::{Error, Result};
use crate::rde::{h_hat_critical, h_hat_subcritical, limit_law_samples, Population, SmoothingTransform};
use crate::rng::{mix, replicate_seed, stream, StreamRole};
use crate::simulator::{batch, centered_r_star, coupled_rightmost, RunConfig, RunResult, Schedule};
use crate::verify::{
    gap_test, ks_one_sample, ks_two_sample, limit_stability, lln_check, ratio_check,
    CenteredSample, EmpiricalDistribution,
};

/// The runnable experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Coupling,
    MeanOne,
    Lln,
    LimitStability,
    CriticalStability,
    RdeMatch,
    Gap,
    Ratio,
    FzExample,
    Sheave,
}

pub const PRESET_NAMES: [&str; 10] = [
    "coupling",
    "mean-one",
    "lln",
    "limit-stability",
    "critical-stability",
    "rde-match",
    "gap",
    "ratio",
    "fz-example",
    "sheave",
];

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "coupling" => Preset::Coupling,
            "mean-one" => Preset::MeanOne,
            "lln" => Preset::Lln,
            "limit-stability" => Preset::LimitStability,
            "critical-stability" => Preset::CriticalStability,
            "rde-match" => Preset::RdeMatch,
            "gap" => Preset::Gap,
            "ratio" => Preset::Ratio,
            "fz-example" => Preset::FzExample,
            "sheave" => Preset::Sheave,
            other => {
                return Err(Error::Config {
                    field: "preset".into(),
                    message: format!("unknown preset `{other}`; known: {PRESET_NAMES:?}"),
                })
            }
        })
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Coupling => "coupling",
            Preset::MeanOne => "mean-one",
            Preset::Lln => "lln",
            Preset::LimitStability => "limit-stability",
            Preset::CriticalStability => "critical-stability",
            Preset::RdeMatch => "rde-match",
            Preset::Gap => "gap",
            Preset::Ratio => "ratio",
            Preset::FzExample => "fz-example",
            Preset::Sheave => "sheave",
        }
    }
}

/// One named check with its statistic and the bound it was held to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRecord {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Informational records never fail the run.
    pub mandatory: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<String>,
}

impl TestRecord {
    fn bounded(name: &str, statistic: f64, threshold: f64) -> Self {
        TestRecord {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic < threshold,
            mandatory: true,
            details: None,
        }
    }

    fn informational(mut self) -> Self {
        self.mandatory = false;
        self
    }

    fn with_details(mut self, details: String) -> Self {
        self.details = Some(details);
        self
    }
}

/// Machine-readable run record written next to the per-replicate artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub reps: u64,
    pub tests: Vec<TestRecord>,
    pub passed: bool,
}

#[derive(Debug)]
pub struct PresetOutcome {
    pub summary: Summary,
    pub artifacts: Vec<PathBuf>,
}

/// Render a summary as an aligned text table.
pub fn render_table(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "preset {}   seed {}   reps {}   config {}",
        summary.preset,
        summary.master_seed,
        summary.reps,
        &summary.config_hash[..12.min(summary.config_hash.len())]
    );
    let width = summary
        .tests
        .iter()
        .map(|t| t.name.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>12}  {:>7}  note",
        "test", "statistic", "threshold", "verdict"
    );
    for t in &summary.tests {
        let verdict = if t.pass { "pass" } else { "FAIL" };
        let note = match (&t.details, t.mandatory) {
            (Some(d), true) => d.clone(),
            (Some(d), false) => format!("informational; {d}"),
            (None, true) => String::new(),
            (None, false) => "informational".into(),
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>12.6}  {:>12.6}  {:>7}  {}",
            t.name, t.statistic, t.threshold, verdict, note
        );
    }
    let _ = writeln!(
        out,
        "overall: {}",
        if summary.passed { "PASS" } else { "FAIL" }
    );
    out
}

/// Floats serialized with 17 significant digits so CSV round-trips exactly.
fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:.16e}")
    }
}

/// Write per-replicate results with the fixed column order.
pub fn write_results_csv(path: &Path, results: &[RunResult], topk: usize) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header =
        String::from("rep,r_n,r_star,log_w,first_block_log_w,d_stat,m_share,leaf_count");
    for i in 1..=topk {
        let _ = write!(header, ",top_{i}");
    }
    writeln!(file, "{header}")?;
    for (rep, r) in results.iter().enumerate() {
        let mut line = format!(
            "{rep},{},{},{},{},{},{},{}",
            fmt17(r.r_n),
            fmt17(r.r_star),
            fmt17(r.log_w),
            fmt17(r.first_block_log_w),
            fmt17(r.d_stat),
            fmt17(r.m_share),
            r.leaf_count
        );
        for i in 0..topk {
            let v = r.top_scores.get(i).copied().unwrap_or(f64::NAN);
            let _ = write!(line, ",{}", fmt17(v));
        }
        writeln!(file, "{line}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonRow<'a> {
    rep: usize,
    r_n: f64,
    r_star: f64,
    log_w: f64,
    first_block_log_w: f64,
    d_stat: f64,
    m_share: f64,
    leaf_count: u64,
    top_scores: &'a [f64],
}

/// Same rows as JSON lines.
pub fn write_results_jsonl(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (rep, r) in results.iter().enumerate() {
        let row = JsonRow {
            rep,
            r_n: r.r_n,
            r_star: r.r_star,
            log_w: r.log_w,
            first_block_log_w: r.first_block_log_w,
            d_stat: r.d_stat,
            m_share: r.m_share,
            leaf_count: r.leaf_count,
            top_scores: &r.top_scores,
        };
        writeln!(file, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

/// One value per line under a named header.
pub fn write_column_csv(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{header}")?;
    for v in values {
        writeln!(file, "{}", fmt17(*v))?;
    }
    Ok(())
}

struct Ctx {
    config: ExperimentConfig,
    models: Vec<DisplacementModel>,
    theta: f64,
    workers: usize,
    out_dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl Ctx {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let models = config.build_models()?;
        let theta = config.theta.resolve(&models)?;
        let out_dir = config.output.dir.clone();
        std::fs::create_dir_all(&out_dir)?;
        Ok(Ctx {
            config: config.clone(),
            models,
            theta,
            workers: config.effective_workers(),
            out_dir,
            artifacts: Vec::new(),
        })
    }

    fn run_config(&self, schedule: Schedule) -> Result<RunConfig> {
        self.run_config_for(self.models.clone(), schedule, self.theta)
    }

    fn run_config_for(
        &self,
        models: Vec<DisplacementModel>,
        schedule: Schedule,
        theta: f64,
    ) -> Result<RunConfig> {
        let mut rc = RunConfig::new(models, schedule, theta)?.with_topk(self.config.topk);
        if let Some(budget) = self.config.particle_budget {
            rc = rc.with_particle_budget(budget);
        }
        Ok(rc)
    }

    /// Independent master seed for a sub-experiment of this run.
    fn salted(&self, label: &str) -> u64 {
        let mut parts = vec![self.config.master_seed];
        parts.extend(label.bytes().map(u64::from));
        mix(&parts)
    }

    fn write_results(&mut self, name: &str, results: &[RunResult], topk: usize) -> Result<()> {
        let path = match self.config.output.format {
            OutputFormat::Csv => {
                let p = self.out_dir.join(format!("{name}.csv"));
                write_results_csv(&p, results, topk)?;
                p
            }
            OutputFormat::JsonLines => {
                let p = self.out_dir.join(format!("{name}.jsonl"));
                write_results_jsonl(&p, results)?;
                p
            }
        };
        self.artifacts.push(path);
        Ok(())
    }

    fn write_column(&mut self, name: &str, header: &str, values: &[f64]) -> Result<()> {
        let path = self.out_dir.join(format!("{name}.csv"));
        write_column_csv(&path, header, values)?;
        self.artifacts.push(path);
        Ok(())
    }

    /// Batch under a salted master seed and persist the rows.
    fn run_batch(&mut self, label: &str, rc: &RunConfig) -> Result<(Vec<RunResult>, u64)> {
        let seed = self.salted(label);
        let results = batch(rc, self.config.reps, seed, self.workers)?;
        self.write_results(label, &results, rc.topk)?;
        Ok((results, seed))
    }

    /// Centered perturbed maxima for one resolved schedule.
    fn centered_sample(
        &mut self,
        label: &str,
        models: Vec<DisplacementModel>,
        schedule: Schedule,
        critical: bool,
    ) -> Result<CenteredSample> {
        let spec: CenteringSpec = centering(&models, &schedule, self.theta, critical)?;
        let rc = self.run_config_for(models, schedule, self.theta)?;
        let (results, _) = self.run_batch(label, &rc)?;
        let centered: Vec<f64> = results
            .iter()
            .map(|r| centered_r_star(r, &spec))
            .collect::<Result<_>>()?;
        self.write_column(
            &format!("{label}_centered"),
            "centered_r_star",
            &centered,
        )?;
        CenteredSample::new(centered, self.theta, critical)
    }
}

/// Run a preset end to end: batches, statistics, artifacts, summary file.
pub fn run_preset(config: &ExperimentConfig) -> Result<PresetOutcome> {
    let name = config.preset.as_deref().ok_or_else(|| Error::Config {
        field: "preset".into(),
        message: "no preset named in config".into(),
    })?;
    let preset = Preset::from_str(name)?;
    let mut ctx = Ctx::new(config)?;

    let tests = match preset {
        Preset::Coupling => coupling(&mut ctx)?,
        Preset::MeanOne => mean_one(&mut ctx)?,
        Preset::Lln => lln(&mut ctx)?,
        Preset::LimitStability => limit_stability_preset(&mut ctx)?,
        Preset::CriticalStability => critical_stability(&mut ctx)?,
        Preset::RdeMatch => rde_match(&mut ctx)?,
        Preset::Gap => gap(&mut ctx)?,
        Preset::Ratio => ratio(&mut ctx)?,
        Preset::FzExample => fz_example(&mut ctx)?,
        Preset::Sheave => sheave(&mut ctx)?,
    };

    let passed = tests.iter().all(|t| t.pass || !t.mandatory);
    let summary = Summary {
        preset: preset.name().into(),
        config_hash: config.hash(),
        master_seed: config.master_seed,
        reps: config.reps,
        tests,
        passed,
    };
    let path = ctx.out_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    ctx.artifacts.push(path);
    Ok(PresetOutcome {
        summary,
        artifacts: ctx.artifacts,
    })
}

/// Exact identity theta R*_n = log W_n - log E: two independent arms, one
/// direct and one through the partition function, compared by two-sample KS.
fn coupling(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let n = ctx.config.schedule.ladder()[0];
    let rc = ctx.run_config(ctx.config.schedule.resolve(n)?)?;

    let (direct, _) = ctx.run_batch("coupling_direct", &rc)?;
    let direct_scores: Vec<f64> = direct.iter().map(|r| r.theta * r.r_star).collect();

    let arm_seed = ctx.salted("coupling_arm");
    let arm = batch(&rc, ctx.config.reps, arm_seed, ctx.workers)?;
    let coupled_scores: Vec<f64> = arm
        .iter()
        .enumerate()
        .map(|(rep, r)| {
            let mut rng = stream(replicate_seed(arm_seed, rep as u64), StreamRole::CouplingExp);
            ctx.theta * coupled_rightmost(r.log_w, ctx.theta, &mut rng)
        })
        .collect();
    ctx.write_column("coupling_arm", "theta_r_star_coupled", &coupled_scores)?;

    let ks = ks_two_sample(
        &EmpiricalDistribution::new(direct_scores)?,
        &EmpiricalDistribution::new(coupled_scores)?,
        ctx.config.thresholds.alpha_exact,
    );
    Ok(vec![TestRecord::bounded(
        "coupling_ks",
        ks.statistic,
        ctx.config.thresholds.coupling_ks,
    )
    .with_details(format!("n = {n}, alpha threshold {:.4}", ks.threshold))])
}

/// Normalized partition function has mean one at every depth.
fn mean_one(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let n = *ctx.config.schedule.ladder().last().unwrap();
    let rc = ctx.run_config(ctx.config.schedule.resolve(n)?)?;
    let norm: f64 = rc
        .nu_at_theta()
        .iter()
        .zip(rc.schedule.q())
        .map(|(nu, &q)| q as f64 * nu)
        .sum();
    let (results, _) = ctx.run_batch("mean_one", &rc)?;
    let xs: Vec<f64> = results.iter().map(|r| (r.log_w - norm).exp()).collect();
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    let se = (var / xs.len() as f64).sqrt();
    let mult = ctx.config.thresholds.se_multiplier;
    Ok(vec![TestRecord::bounded(
        "normalized_w_mean_one",
        (m - 1.0).abs(),
        mult * se,
    )
    .with_details(format!("mean {m:.6}, se {se:.6}, n = {n}"))])
}

/// R*_n / n against its in-probability limit along the depth ladder.
fn lln(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let alphas = ctx
        .config
        .schedule
        .alphas()
        .ok_or_else(|| Error::Config {
            field: "schedule".into(),
            message: "the lln preset needs proportional block specs".into(),
        })?
        .to_vec();
    let mut target = 0.0;
    for (model, &alpha) in ctx.models.iter().zip(&alphas) {
        target += alpha * model.nu(ctx.theta)? / ctx.theta;
    }

    let ladder = ctx.config.schedule.ladder();
    let mut rows = Vec::new();
    for &n in &ladder {
        let rc = ctx.run_config(ctx.config.schedule.resolve(n)?)?;
        let (results, _) = ctx.run_batch(&format!("lln_n{n}"), &rc)?;
        let mean =
            results.iter().map(|r| r.r_star).sum::<f64>() / results.len() as f64 / n as f64;
        rows.push((n, mean));
    }
    let report = lln_check(&rows, target, ctx.config.thresholds.lln_allowance)?;
    let ladder_rows: Vec<f64> = report.rows.iter().map(|r| r.deviation).collect();
    ctx.write_column("lln_deviations", "abs_deviation", &ladder_rows)?;

    let max_increase = report
        .rows
        .windows(2)
        .map(|w| w[1].deviation - w[0].deviation)
        .fold(0.0f64, f64::max)
        .max(0.0);
    Ok(vec![
        TestRecord::bounded(
            "lln_final_deviation",
            report.final_deviation,
            ctx.config.thresholds.lln_final_deviation,
        )
        .with_details(format!("target {target:.7}")),
        TestRecord {
            name: "lln_monotone_trend".into(),
            statistic: max_increase,
            threshold: report.allowance,
            pass: report.monotone_ok,
            mandatory: true,
            details: Some(format!(
                "deviations {:?}",
                report
                    .rows
                    .iter()
                    .map(|r| (r.n, (r.deviation * 1e4).round() / 1e4))
                    .collect::<Vec<_>>()
            )),
        },
    ])
}

/// Centered maxima stabilize across depths, and only the first block's law
/// matters for the limit.
fn limit_stability_preset(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let ladder = ctx.config.schedule.ladder();
    let (n_small, n_large) = (ladder[0], *ladder.last().unwrap());
    if n_small == n_large {
        return Err(Error::Config {
            field: "schedule.n_ladder".into(),
            message: "limit-stability needs two distinct depths".into(),
        });
    }
    let small = ctx.centered_sample(
        &format!("stability_n{n_small}"),
        ctx.models.clone(),
        ctx.config.schedule.resolve(n_small)?,
        false,
    )?;
    let large = ctx.centered_sample(
        &format!("stability_n{n_large}"),
        ctx.models.clone(),
        ctx.config.schedule.resolve(n_large)?,
        false,
    )?;
    let ks = limit_stability(&small, &large, ctx.config.thresholds.alpha_asymptotic)?;
    let mut tests = vec![TestRecord::bounded(
        "stability_small_vs_large",
        ks.statistic,
        ctx.config.thresholds.stability_ks,
    )
    .with_details(format!("n {n_small} vs {n_large}"))];

    if !ctx.config.alt_models.is_empty() {
        if ctx.config.alt_models.len() != ctx.models.len() - 1 {
            return Err(Error::Config {
                field: "alt_model".into(),
                message: format!(
                    "need {} replacement models for the non-first blocks",
                    ctx.models.len() - 1
                ),
            });
        }
        let mut swapped = vec![ctx.models[0]];
        for spec in &ctx.config.alt_models {
            swapped.push(spec.build()?);
        }
        let alt = ctx.centered_sample(
            &format!("stability_swap_n{n_large}"),
            swapped,
            ctx.config.schedule.resolve(n_large)?,
            false,
        )?;
        let swap_ks = limit_stability(&large, &alt, ctx.config.thresholds.alpha_asymptotic)?;
        tests.push(
            TestRecord::bounded(
                "z1_only_dependence",
                swap_ks.statistic,
                ctx.config.thresholds.z1_swap_ks,
            )
            .with_details("later blocks swapped, first block kept".into()),
        );
    }
    Ok(tests)
}

/// Critical-regime stabilization with the logarithmic correction included.
fn critical_stability(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let ladder = ctx.config.schedule.ladder();
    let (n_small, n_large) = (ladder[0], *ladder.last().unwrap());
    let small = ctx.centered_sample(
        &format!("critical_n{n_small}"),
        ctx.models.clone(),
        ctx.config.schedule.resolve(n_small)?,
        true,
    )?;
    let large = ctx.centered_sample(
        &format!("critical_n{n_large}"),
        ctx.models.clone(),
        ctx.config.schedule.resolve(n_large)?,
        true,
    )?;
    let ks = limit_stability(&small, &large, ctx.config.thresholds.alpha_asymptotic)?;
    Ok(vec![TestRecord::bounded(
        "critical_stability",
        ks.statistic,
        ctx.config.thresholds.critical_ks,
    )
    .with_details(format!("n {n_small} vs {n_large}, log correction applied"))])
}

/// Fixed-point construction: mean preservation, iterate stability, and the
/// match between the constructed limit and the centered maxima.
fn rde_match(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let transform = SmoothingTransform::new(ctx.models[0], ctx.theta)?;
    let rde_seed = ctx.salted("rde_iterations");
    let rde_spec = ctx.config.rde.clone();
    let mut snapshot: Option<Population> = None;
    let pop = Population::ones(rde_spec.population)?;
    let snapshot_at = rde_spec.snapshot_at.min(rde_spec.iterations.saturating_sub(1));
    let workers = ctx.workers;
    let pop = transform.evolve(pop, rde_spec.iterations, rde_seed, workers, |p| {
        if p.generation == snapshot_at {
            snapshot = Some(p.clone());
        }
    })?;
    ctx.write_column("rde_pool", "fixed_point_sample", pop.pool())?;

    let mut tests = Vec::new();
    let mult = ctx.config.thresholds.se_multiplier;
    tests.push(
        TestRecord::bounded(
            "rde_mean_one",
            (pop.mean() - 1.0).abs(),
            mult * pop.std_error(),
        )
        .with_details(format!(
            "mean {:.6} after {} steps, M = {}",
            pop.mean(),
            pop.generation,
            pop.len()
        )),
    );

    if let Some(snap) = &snapshot {
        let ks = ks_two_sample(
            &EmpiricalDistribution::new(snap.pool().to_vec())?,
            &EmpiricalDistribution::new(pop.pool().to_vec())?,
            ctx.config.thresholds.alpha_asymptotic,
        );
        tests.push(
            TestRecord::bounded(
                "rde_iterate_stability",
                ks.statistic,
                ctx.config.thresholds.rde_iterate_ks,
            )
            .with_details(format!(
                "iterate {} vs {}",
                snap.generation, pop.generation
            )),
        );
    }

    // subcritical match: hat-H - log E against the centered maxima
    let h_hat = h_hat_subcritical(&pop, ctx.theta);
    ctx.write_column("rde_h_hat", "h_hat_subcritical", &h_hat)?;
    let n = *ctx.config.schedule.ladder().last().unwrap();
    let sim = ctx.centered_sample(
        &format!("rde_sim_n{n}"),
        ctx.models.clone(),
        ctx.config.schedule.resolve(n)?,
        false,
    )?;
    let constructed = limit_law_samples(
        &h_hat,
        ctx.theta,
        ctx.config.reps,
        ctx.salted("rde_pairing"),
    )?;
    ctx.write_column("rde_constructed", "h_hat_plus_gumbel", &constructed)?;
    let ks = ks_two_sample(
        &sim.sample,
        &EmpiricalDistribution::new(constructed)?,
        ctx.config.thresholds.alpha_asymptotic,
    );
    tests.push(
        TestRecord::bounded(
            "rde_limit_match",
            ks.statistic,
            ctx.config.thresholds.rde_match_ks,
        )
        .with_details(format!("centered maxima at n = {n} vs construction")),
    );

    // critical-regime construction, reported for inspection: the
    // derivative-statistic proxies at small first-block depths carry a bias
    // with no known rate, so no threshold is asserted.
    tests.extend(critical_match_diagnostic(ctx).unwrap_or_default());
    Ok(tests)
}

fn critical_match_diagnostic(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let model1 = ctx.models[0];
    let Some(theta1) = theta_star_default(&model1)?.value() else {
        return Ok(vec![]);
    };
    let sigma_sq = match tilted_quadratic_exact(&model1, theta1)? {
        Some(v) => v,
        None => tilted_quadratic_mc(&model1, theta1, 100_000, ctx.salted("sigma_mc")).map(|e| e.value)?,
    };
    // informational only, so a reduced replicate count is enough
    let reps = ctx.config.reps.min(2000);

    let n = *ctx.config.schedule.ladder().last().unwrap();
    let crit_centered = {
        let schedule = Schedule::new(vec![n])?;
        let spec = centering(&[model1], &schedule, theta1, true)?;
        let rc = ctx
            .run_config_for(vec![model1], schedule, theta1)?;
        let seed = ctx.salted("critical_sim");
        let results = batch(&rc, reps, seed, ctx.workers)?;
        let xs: Vec<f64> = results
            .iter()
            .map(|r| centered_r_star(r, &spec))
            .collect::<Result<_>>()?;
        EmpiricalDistribution::new(xs)?
    };

    let mut tests = Vec::new();
    for &q1 in &ctx.config.rde.q1_proxies {
        let schedule = Schedule::new(vec![q1])?;
        let rc = ctx.run_config_for(vec![model1], schedule, theta1)?;
        let seed = ctx.salted(&format!("critical_proxy_{q1}"));
        let results = batch(&rc, reps, seed, ctx.workers)?;
        let d_draws: Vec<f64> = results.iter().map(|r| r.d_stat).collect();
        let shifts = match h_hat_critical(&d_draws, theta1, sigma_sq) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let constructed = limit_law_samples(
            &shifts.values,
            theta1,
            reps,
            ctx.salted(&format!("critical_pairing_{q1}")),
        )?;
        let ks = ks_two_sample(
            &crit_centered,
            &EmpiricalDistribution::new(constructed)?,
            ctx.config.thresholds.alpha_asymptotic,
        );
        tests.push(
            TestRecord::bounded("critical_match", ks.statistic, f64::INFINITY)
                .informational()
                .with_details(format!(
                    "first-block proxy depth {q1}, rejected fraction {:.4}",
                    shifts.rejection_fraction()
                )),
        );
    }
    Ok(tests)
}

/// Top-two gap of the perturbed scores is unit-exponential in the limit; the
/// synthetic Poisson-skeleton oracle must pass before the simulated test.
fn gap(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let reps = ctx.config.reps;
    let mut rng = stream(ctx.salted("synthetic_ppp"), StreamRole::SyntheticPpp);
    let synthetic: Vec<f64> = (0..reps)
        .map(|_| {
            let first = exp1(&mut rng);
            let second = exp1(&mut rng);
            ((first + second) / first).ln()
        })
        .collect();
    let oracle = ks_one_sample(
        &EmpiricalDistribution::new(synthetic)?,
        crate::verify::exp1_cdf,
        ctx.config.thresholds.alpha_exact,
    );

    let n = *ctx.config.schedule.ladder().last().unwrap();
    let rc = ctx
        .run_config(ctx.config.schedule.resolve(n)?)?
        .with_topk(ctx.config.topk.max(2));
    let (results, _) = ctx.run_batch("gap", &rc)?;
    let ks = gap_test(&results, ctx.config.thresholds.alpha_asymptotic)?;

    Ok(vec![
        TestRecord {
            name: "gap_synthetic_oracle".into(),
            statistic: oracle.statistic,
            threshold: oracle.threshold,
            pass: oracle.pass,
            mandatory: true,
            details: Some("unit-rate Poisson skeleton self-test".into()),
        },
        TestRecord::bounded("gap_exponential_ks", ks.statistic, ctx.config.thresholds.gap_ks)
            .with_details(format!("n = {n}")),
    ])
}

/// First-block ratio of normalized partition functions tends to one.
fn ratio(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let ladder = ctx.config.schedule.ladder();
    let eps = ctx.config.thresholds.ratio_eps;
    let mut fractions = Vec::new();
    for &n in &ladder {
        let schedule = ctx.config.schedule.resolve(n)?;
        let rc = ctx.run_config(schedule.clone())?;
        let (results, _) = ctx.run_batch(&format!("ratio_n{n}"), &rc)?;
        let report = ratio_check(&results, ctx.theta, rc.nu_at_theta(), &schedule, eps)?;
        fractions.push((n, report.exceed_fraction));
    }
    ctx.write_column(
        "ratio_fractions",
        "exceed_fraction",
        &fractions.iter().map(|&(_, f)| f).collect::<Vec<_>>(),
    )?;

    let max_increase = fractions
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let final_fraction = fractions.last().unwrap().1;
    Ok(vec![
        TestRecord {
            name: "ratio_trend_nonincreasing".into(),
            statistic: max_increase,
            threshold: 0.0,
            pass: fractions.windows(2).all(|w| w[1].1 <= w[0].1),
            mandatory: true,
            details: Some(format!("fractions {fractions:?}, eps {eps}")),
        },
        TestRecord::bounded(
            "ratio_final_fraction",
            final_fraction,
            ctx.config.thresholds.ratio_final_fraction,
        ),
    ])
}

/// Closed-form constants of the two-block Gaussian example.
fn fz_example(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let sigmas: Vec<f64> = ctx
        .models
        .iter()
        .map(|m| match m {
            DisplacementModel::GaussianBinary { sigma } => Ok(*sigma),
            _ => Err(Error::Config {
                field: "model".into(),
                message: "fz-example needs gaussian-binary models".into(),
            }),
        })
        .collect::<Result<_>>()?;
    if sigmas.len() != 2 {
        return Err(Error::Config {
            field: "model".into(),
            message: "fz-example needs exactly two models".into(),
        });
    }
    let (s1, s2) = (sigmas[0], sigmas[1]);
    let constants = fz_constants(s1, s2)?;
    let theta1 = theta_star_default(&ctx.models[0])?;
    let theta2 = theta_star_default(&ctx.models[1])?;

    #[derive(Serialize)]
    struct ConstantsArtifact {
        sigma1: f64,
        sigma2: f64,
        constants: crate::cumulant::ExampleConstants,
        theta_1: Option<f64>,
        theta_2: Option<f64>,
    }
    let path = ctx.out_dir.join("fz_constants.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&ConstantsArtifact {
            sigma1: s1,
            sigma2: s2,
            constants,
            theta_1: theta1.value(),
            theta_2: theta2.value(),
        })?,
    )?;
    ctx.artifacts.push(path);

    // independent algebraic route for the linear coefficient
    let ln2 = 2f64.ln();
    let alt_linear = (3.0 * s1 * s1 + s2 * s2) * ln2.sqrt() / (2.0 * 2f64.sqrt() * s1);
    Ok(vec![
        TestRecord {
            name: "fz_regime".into(),
            statistic: s2 - s1,
            threshold: 0.0,
            pass: s1 > s2,
            mandatory: true,
            details: Some(format!(
                "linear {:.7}, log {:.7}, reference linear {:.7}, reference log {:.7}",
                constants.lpmti_linear, constants.lpmti_log, constants.fz_linear, constants.fz_log
            )),
        },
        TestRecord::bounded(
            "fz_internal_consistency",
            (constants.lpmti_linear - alt_linear).abs(),
            1e-12,
        ),
    ])
}

/// Slow-first and proportional schedules with the same first block share the
/// same centered limit.
fn sheave(ctx: &mut Ctx) -> Result<Vec<TestRecord>> {
    let ScheduleSpec::SlowFirst { alphas, n_ladder } = &ctx.config.schedule else {
        return Err(Error::Config {
            field: "schedule".into(),
            message: "the sheave preset needs a slow-first schedule spec".into(),
        });
    };
    let alphas = alphas.clone();
    let n = *n_ladder.last().unwrap();
    let slow_schedule = ctx.config.schedule.resolve(n)?;
    let proportional = ScheduleSpec::Proportional {
        alphas,
        n_ladder: vec![n],
    }
    .resolve(n)?;

    let slow_q1 = slow_schedule.q()[0];
    let prop_q1 = proportional.q()[0];
    let slow = ctx.centered_sample("sheave_slow_first", ctx.models.clone(), slow_schedule, false)?;
    let prop = ctx.centered_sample("sheave_proportional", ctx.models.clone(), proportional, false)?;
    let ks = limit_stability(&slow, &prop, ctx.config.thresholds.alpha_asymptotic)?;
    Ok(vec![TestRecord::bounded(
        "sheave_mutual_stability",
        ks.statistic,
        ctx.config.thresholds.sheave_ks,
    )
    .with_details(format!("q1 {slow_q1} vs {prop_q1} at n = {n}"))])
}
