use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lpmti::config::{ExperimentConfig, OutputFormat};
use lpmti::cumulant::{sigma1_sq, theta_star_default, CriticalTilt};
use lpmti::displacement::DisplacementModel;
use lpmti::preset::{render_table, run_preset, write_results_csv, write_results_jsonl, Summary};
use lpmti::rde::{h_hat_subcritical, Population, SmoothingTransform};
use lpmti::simulator::batch;

#[derive(Parser)]
#[command(
    name = "lpmti",
    about = "Simulate last-progeny-modified time-inhomogeneous branching random walks and verify their limit behavior",
    version
)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true, default_value = "lpmti.toml")]
    config: PathBuf,

    /// Override the master seed (flag > LPMTI_SEED > config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the worker count (flag > LPMTI_WORKERS > config).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the per-replicate output format.
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<OutputFormat>,

    #[command(subcommand)]
    command: Command,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json-lines" => Ok(OutputFormat::JsonLines),
        other => Err(format!("unknown format `{other}` (csv | json-lines)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the critical tilt of every configured model.
    ThetaStar,
    /// Print the cumulant of every configured model at a tilt.
    Nu {
        /// The tilt to evaluate at.
        #[arg(long)]
        at: f64,
    },
    /// Print the two-block Gaussian example constants.
    Constants,
    /// Run the configured batch at one depth and write per-replicate rows.
    Simulate {
        /// Depth to run at; defaults to the largest ladder entry.
        #[arg(long)]
        n: Option<u64>,
    },
    /// Run the population dynamics and write the pool and shift samples.
    Rde,
    /// Run a named preset experiment and write artifacts plus a summary.
    Verify {
        /// Preset name; defaults to the one named in the config.
        preset: Option<String>,
    },
    /// Render a summary file as a table.
    Report {
        /// Path to a summary.json; defaults to <out>/summary.json.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> lpmti::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(&cli.config)?;
    config.apply_env_overrides()?;
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(format) = cli.format {
        config.output.format = format;
    }
    Ok(config)
}

fn tilt_json(tilt: &CriticalTilt) -> serde_json::Value {
    serde_json::to_value(tilt).unwrap_or_default()
}

fn run(cli: &Cli) -> lpmti::Result<ExitCode> {
    match &cli.command {
        Command::ThetaStar => {
            let config = load_config(cli)?;
            let models = config.build_models()?;
            let mut records = Vec::new();
            for (i, model) in models.iter().enumerate() {
                let tilt = theta_star_default(model)?;
                match &tilt {
                    CriticalTilt::Finite {
                        value, residual, ..
                    } => println!("block {}: theta_star = {value:.10} (residual {residual:.2e})", i + 1),
                    CriticalTilt::Infinite { cap, g_at_cap } => println!(
                        "block {}: theta_star = infinity (g({cap}) = {g_at_cap:.6} < 0)",
                        i + 1
                    ),
                }
                records.push(tilt_json(&tilt));
            }
            println!("{}", serde_json::Value::Array(records));
        }
        Command::Nu { at } => {
            let config = load_config(cli)?;
            let models = config.build_models()?;
            let mut records = Vec::new();
            for (i, model) in models.iter().enumerate() {
                let est = model.nu_estimate(*at)?;
                if est.std_error > 0.0 {
                    println!(
                        "block {}: nu({at}) = {:.10} +/- {:.2e}",
                        i + 1,
                        est.value,
                        est.std_error
                    );
                } else {
                    println!("block {}: nu({at}) = {:.10}", i + 1, est.value);
                }
                records.push(serde_json::json!({
                    "block": i + 1,
                    "at": at,
                    "value": est.value,
                    "std_error": est.std_error,
                }));
            }
            println!("{}", serde_json::Value::Array(records));
        }
        Command::Constants => {
            let config = load_config(cli)?;
            let models = config.build_models()?;
            let sigmas: Vec<f64> = models
                .iter()
                .filter_map(|m| match m {
                    DisplacementModel::GaussianBinary { sigma } => Some(*sigma),
                    _ => None,
                })
                .collect();
            if sigmas.len() < 2 {
                return Err(lpmti::Error::Config {
                    field: "model".into(),
                    message: "constants needs two gaussian-binary models".into(),
                });
            }
            let constants = lpmti::cumulant::fz_constants(sigmas[0], sigmas[1])?;
            let theta1 = theta_star_default(&models[0])?;
            println!("lpmti linear coefficient : {:.10}", constants.lpmti_linear);
            println!("lpmti log coefficient    : {:.10}", constants.lpmti_log);
            println!("classical linear         : {:.10}", constants.fz_linear);
            println!("classical log            : {:.10}", constants.fz_log);
            if let Some(t1) = theta1.value() {
                println!("theta_star (block 1)     : {t1:.10}");
                let s2 = sigma1_sq(&models[0], t1, 1_000_000)?;
                println!("sigma_1^2                : {:.10}", s2.value);
            }
            println!("{}", serde_json::to_string(&constants)?);
        }
        Command::Simulate { n } => {
            let config = load_config(cli)?;
            let models = config.build_models()?;
            let theta = config.theta.resolve(&models)?;
            let depth = n.unwrap_or(*config.schedule.ladder().last().unwrap());
            let schedule = config.schedule.resolve(depth)?;
            let mut rc = lpmti::simulator::RunConfig::new(models, schedule, theta)?
                .with_topk(config.topk);
            if let Some(budget) = config.particle_budget {
                rc = rc.with_particle_budget(budget);
            }
            let results = batch(&rc, config.reps, config.master_seed, config.effective_workers())?;
            std::fs::create_dir_all(&config.output.dir)?;
            let path = match config.output.format {
                OutputFormat::Csv => {
                    let p = config.output.dir.join(format!("simulate_n{depth}.csv"));
                    write_results_csv(&p, &results, rc.topk)?;
                    p
                }
                OutputFormat::JsonLines => {
                    let p = config.output.dir.join(format!("simulate_n{depth}.jsonl"));
                    write_results_jsonl(&p, &results)?;
                    p
                }
            };
            println!(
                "wrote {} replicates at depth {depth} to {}",
                results.len(),
                path.display()
            );
        }
        Command::Rde => {
            let config = load_config(cli)?;
            let models = config.build_models()?;
            let theta = config.theta.resolve(&models)?;
            let transform = SmoothingTransform::new(models[0], theta)?;
            let pop = Population::ones(config.rde.population)?;
            let seed = lpmti::rng::mix(&[config.master_seed, 0x5DE]);
            let pop = transform.evolve(
                pop,
                config.rde.iterations,
                seed,
                config.effective_workers(),
                |_| {},
            )?;
            std::fs::create_dir_all(&config.output.dir)?;
            let pool_path = config.output.dir.join("rde_pool.csv");
            lpmti::preset::write_column_csv(&pool_path, "fixed_point_sample", pop.pool())?;
            let shifts = h_hat_subcritical(&pop, theta);
            let shift_path = config.output.dir.join("rde_h_hat.csv");
            lpmti::preset::write_column_csv(&shift_path, "h_hat_subcritical", &shifts)?;
            println!(
                "pool mean {:.6} (se {:.2e}) after {} steps; wrote {} and {}",
                pop.mean(),
                pop.std_error(),
                pop.generation,
                pool_path.display(),
                shift_path.display()
            );
        }
        Command::Verify { preset } => {
            let mut config = load_config(cli)?;
            if let Some(name) = preset {
                config.preset = Some(name.clone());
            }
            let outcome = run_preset(&config)?;
            print!("{}", render_table(&outcome.summary));
            if !outcome.summary.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { summary } => {
            let path = match summary {
                Some(p) => p.clone(),
                None => load_config(cli)?.output.dir.join("summary.json"),
            };
            let text = std::fs::read_to_string(&path)?;
            let summary: Summary = serde_json::from_str(&text)?;
            print!("{}", render_table(&summary));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
