//! Fast structural runs of every preset: artifacts land on disk, summaries
//! carry the expected records, and outputs are worker-count invariant.
//! Statistical verdicts at full scale live in the acceptance suite.

use std::path::PathBuf;

use lpmti::config::{
    ExperimentConfig, ModelSpec, OutputSpec, RdeSpec, ScheduleSpec, ThetaSpec, Thresholds,
};
use lpmti::preset::{run_preset, Summary};

fn gaussian(sigma: f64) -> ModelSpec {
    ModelSpec::GaussianBinary { sigma }
}

fn small_config(preset: &str, out: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        preset: Some(preset.into()),
        reps: 150,
        master_seed: 99,
        workers: 1,
        topk: 3,
        particle_budget: None,
        models: vec![gaussian(2.0), gaussian(1.0)],
        alt_models: vec![],
        schedule: ScheduleSpec::Proportional {
            alphas: vec![0.5, 0.5],
            n_ladder: vec![6, 8, 10],
        },
        theta: ThetaSpec::Value { value: 0.5 },
        rde: RdeSpec {
            population: 2000,
            iterations: 12,
            snapshot_at: 9,
            q1_proxies: vec![5],
        },
        output: OutputSpec {
            dir: out,
            format: lpmti::config::OutputFormat::Csv,
        },
        thresholds: Thresholds::default(),
    }
}

fn run(preset: &str, adjust: impl FnOnce(&mut ExperimentConfig)) -> (Summary, Vec<PathBuf>) {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(preset, dir.path().to_path_buf());
    adjust(&mut config);
    let outcome = run_preset(&config).unwrap();
    for path in &outcome.artifacts {
        assert!(path.exists(), "missing artifact {}", path.display());
    }
    // keep the tempdir alive until the files were checked
    drop(dir);
    (outcome.summary, outcome.artifacts)
}

fn has_record(summary: &Summary, name: &str) -> bool {
    summary.tests.iter().any(|t| t.name == name)
}

#[test]
fn coupling_structure() {
    let (summary, artifacts) = run("coupling", |_| {});
    assert!(has_record(&summary, "coupling_ks"));
    assert!(artifacts.iter().any(|p| p.ends_with("coupling_direct.csv")));
    assert!(artifacts.iter().any(|p| p.ends_with("coupling_arm.csv")));
    assert!(artifacts.iter().any(|p| p.ends_with("summary.json")));
}

#[test]
fn mean_one_structure() {
    let (summary, _) = run("mean-one", |_| {});
    assert!(has_record(&summary, "normalized_w_mean_one"));
}

#[test]
fn lln_structure() {
    let (summary, _) = run("lln", |c| c.reps = 300);
    assert!(has_record(&summary, "lln_final_deviation"));
    assert!(has_record(&summary, "lln_monotone_trend"));
}

#[test]
fn lln_rejects_explicit_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config("lln", dir.path().to_path_buf());
    config.schedule = ScheduleSpec::Explicit { q: vec![4, 4] };
    assert!(run_preset(&config).is_err());
}

#[test]
fn limit_stability_structure_with_swap() {
    let (summary, _) = run("limit-stability", |c| {
        c.alt_models = vec![gaussian(0.5)];
    });
    assert!(has_record(&summary, "stability_small_vs_large"));
    assert!(has_record(&summary, "z1_only_dependence"));
}

#[test]
fn critical_stability_structure() {
    let (summary, _) = run("critical-stability", |c| {
        c.theta = ThetaSpec::Critical;
    });
    assert!(has_record(&summary, "critical_stability"));
}

#[test]
fn critical_preset_rejects_wrong_block_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config("critical-stability", dir.path().to_path_buf());
    // first block has the larger tilt here, violating the regime
    config.models = vec![gaussian(1.0), gaussian(2.0)];
    config.theta = ThetaSpec::Critical;
    assert!(run_preset(&config).is_err());
}

#[test]
fn rde_match_structure() {
    let (summary, artifacts) = run("rde-match", |c| {
        c.models = vec![gaussian(1.0)];
        c.schedule = ScheduleSpec::Explicit { q: vec![8] };
    });
    assert!(has_record(&summary, "rde_mean_one"));
    assert!(has_record(&summary, "rde_iterate_stability"));
    assert!(has_record(&summary, "rde_limit_match"));
    assert!(has_record(&summary, "critical_match"));
    // the critical diagnostic is informational and cannot fail the run
    let critical = summary
        .tests
        .iter()
        .find(|t| t.name == "critical_match")
        .unwrap();
    assert!(!critical.mandatory);
    assert!(artifacts.iter().any(|p| p.ends_with("rde_pool.csv")));
    assert!(artifacts.iter().any(|p| p.ends_with("rde_h_hat.csv")));
}

#[test]
fn gap_structure() {
    let (summary, _) = run("gap", |_| {});
    assert!(has_record(&summary, "gap_synthetic_oracle"));
    assert!(has_record(&summary, "gap_exponential_ks"));
}

#[test]
fn ratio_structure() {
    let (summary, _) = run("ratio", |_| {});
    assert!(has_record(&summary, "ratio_trend_nonincreasing"));
    assert!(has_record(&summary, "ratio_final_fraction"));
}

#[test]
fn fz_example_passes_at_any_scale() {
    let (summary, artifacts) = run("fz-example", |c| {
        c.schedule = ScheduleSpec::Explicit { q: vec![1, 1] };
        c.reps = 1;
    });
    assert!(summary.passed, "{summary:?}");
    assert!(artifacts.iter().any(|p| p.ends_with("fz_constants.json")));
}

#[test]
fn sheave_structure() {
    let (summary, _) = run("sheave", |c| {
        c.schedule = ScheduleSpec::SlowFirst {
            alphas: vec![0.5, 0.5],
            n_ladder: vec![10],
        };
    });
    assert!(has_record(&summary, "sheave_mutual_stability"));
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config("coupling", dir.path().to_path_buf());
    config.preset = Some("no-such-preset".into());
    assert!(run_preset(&config).is_err());
}

#[test]
fn identical_seeds_give_identical_artifacts_across_workers() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut a = small_config("gap", dir_a.path().to_path_buf());
    a.workers = 1;
    let mut b = small_config("gap", dir_b.path().to_path_buf());
    b.workers = 4;
    let out_a = run_preset(&a).unwrap();
    let out_b = run_preset(&b).unwrap();
    for (pa, pb) in out_a.artifacts.iter().zip(&out_b.artifacts) {
        assert_eq!(pa.file_name(), pb.file_name());
        assert_eq!(
            std::fs::read(pa).unwrap(),
            std::fs::read(pb).unwrap(),
            "artifact {} differs across worker counts",
            pa.display()
        );
    }
}

#[test]
fn jsonl_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config("coupling", dir.path().to_path_buf());
    config.output.format = lpmti::config::OutputFormat::JsonLines;
    config.reps = 20;
    let outcome = run_preset(&config).unwrap();
    let rows = outcome
        .artifacts
        .iter()
        .find(|p| p.ends_with("coupling_direct.jsonl"))
        .expect("jsonl artifact");
    let text = std::fs::read_to_string(rows).unwrap();
    let mut count = 0;
    for line in text.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(value.get("r_star").is_some());
        count += 1;
    }
    assert_eq!(count, 20);
}
