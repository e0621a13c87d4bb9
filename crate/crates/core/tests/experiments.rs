//! End-to-end runs of the experiment runner on tiny configurations.

use std::path::Path;

use shortcut_lab::data::{load_manifest, write_manifest, BitDepth, Field};
use shortcut_lab::experiment::{
    self, report, ExperimentConfig, ExperimentKind, Results, RESULTS_SCHEMA_VERSION,
};
use shortcut_lab::synthgen::{generate, AttributeSignal, GeneratorConfig};

fn tiny(kind: ExperimentKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_kind(kind);
    c.seeds = vec![0];
    c.image_side = 16;
    c.widths = vec![4, 4];
    c.target_patients = 240;
    c.source_patients = 160;
    c.pretrain_patients = 160;
    c.learning_rates = vec![0.01];
    c.momenta = vec![0.9];
    c.max_epochs = 2;
    c.patience = 2;
    c.pretrain_epochs = 1;
    c.pretrain_restarts = 1;
    c.n_bootstrap = 40;
    c
}

fn run(config: &ExperimentConfig, out: &Path) -> Results {
    experiment::run(config, out).unwrap_or_else(|e| panic!("{} failed: {e}", config.kind))
}

#[test]
fn manifest_survives_a_disk_round_trip() {
    let cfg = GeneratorConfig {
        image_side: 16,
        n_patients: 30,
        attribute_signal: AttributeSignal::Marker,
        ..Default::default()
    };
    let (m, _) = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("manifest.csv");
    write_manifest(&m, &csv, &dir.path().join("images"), BitDepth::Sixteen).unwrap();
    let back = load_manifest(&csv, dir.path()).unwrap();
    assert_eq!(back.len(), m.len());
    assert_eq!(back.patient_ids(), m.patient_ids());
    for (a, b) in m.records.iter().zip(&back.records) {
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.attributes, b.attributes);
        let err = (&a.pixels - &b.pixels)
            .mapv(f64::abs)
            .fold(0.0f64, |x, &y| x.max(y));
        assert!(err <= 1.0 / 65535.0, "quantization error {err}");
    }
    assert_eq!(
        back.positive_rate(&Field::label("chf")),
        m.positive_rate(&Field::label("chf"))
    );
}

#[test]
fn results_have_the_declared_schema_and_are_reproducible() {
    let mut config = tiny(ExperimentKind::FilterSchemeComparison);
    config.include_unskewed = true;
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let results = run(&config, &a);
    run(&config, &b);
    assert_eq!(results.schema_version, RESULTS_SCHEMA_VERSION);
    assert_eq!(results.runs.len(), 2 * config.schemes().len());
    assert!(results
        .paired_tests
        .iter()
        .any(|t| t.condition_a == "unskewed"
            && t.condition_b == "skewed"
            && t.scheme_a == t.scheme_b));
    for r in &results.runs {
        assert!((0.0..=1.0).contains(&r.auroc_target));
        assert!(r.auroc_target_ci[0] <= r.auroc_target && r.auroc_target <= r.auroc_target_ci[1]);
        assert!(a.join(&r.curves_path).exists());
        assert!(a.join(&r.checkpoint_path).exists());
    }
    for file in ["table.csv", "summary.csv", "figures/auroc.svg"] {
        assert!(a.join(file).exists(), "{file} missing");
    }
    let bytes = |d: &Path| std::fs::read(d.join("results.json")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(Results::load(&a).unwrap(), results);
}

#[test]
fn sweep_and_block_runs_cover_their_grids_and_merge_in_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_dir = dir.path().join("sweep");
    let block_dir = dir.path().join("block");
    let mut sweep = tiny(ExperimentKind::SourceSkewSweep);
    sweep.target_patients = 160;
    sweep.max_epochs = 1;
    let sweep_results = run(&sweep, &sweep_dir);
    let mut block = tiny(ExperimentKind::BlockSensitivity);
    block.target_patients = 600;
    let block_results = run(&block, &block_dir);

    let sweep_rows = experiment::summarize(&sweep_results, "sweep");
    assert_eq!(sweep_rows.len(), 11);
    assert!(sweep_rows.iter().all(|r| r.condition_value.is_some()));
    assert!(sweep_dir.join("figures/sweep.svg").exists());
    let block_rows = experiment::summarize(&block_results, "block");
    assert_eq!(block_rows.len(), 3);

    let merged = report(&[sweep_dir, block_dir], &dir.path().join("report")).unwrap();
    assert_eq!(merged.len(), sweep_rows.len() + block_rows.len());
    let csv = std::fs::read_to_string(dir.path().join("report/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), merged.len() + 1);
}

#[test]
fn probe_without_attribute_signal_is_at_chance() {
    let mut config = tiny(ExperimentKind::AttributeProbe);
    config.attribute_signal = AttributeSignal::None;
    config.target_patients = 1200;
    config.max_epochs = 4;
    let dir = tempfile::tempdir().unwrap();
    let results = run(&config, dir.path());
    let auroc = results.runs[0].auroc_target;
    assert!((auroc - 0.5).abs() <= 0.05, "probe AUROC {auroc}");
}

#[test]
fn failed_runs_leave_an_error_record() {
    let mut config = tiny(ExperimentKind::AttributeProbe);
    config.manifest = Some("/nonexistent/manifest.csv".into());
    config.attribute = Some("pacemaker".into());
    let dir = tempfile::tempdir().unwrap();
    assert!(experiment::run(&config, dir.path()).is_err());
    let text = std::fs::read_to_string(dir.path().join(experiment::ERROR_FILE)).unwrap();
    let record: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(record["kind"].is_string());
    assert!(!dir.path().join(experiment::RESULTS_FILE).exists());
}
