use std::path::Path;

use heavytail_core::config::RunConfig;
use heavytail_core::experiment::{execute, plot_summary, ConclabSummary, SweepSummary};
use heavytail_core::io::read_trajectory_csv;
use heavytail_core::Error;

fn small_sweep() -> RunConfig {
    RunConfig::from_json(r#"{"kind":"sweep","alpha":1.5,"n_seeds":16,"t_grid":[64,128,256,512],"record_every":16}"#).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn minimal_sweep_config_gets_documented_defaults() {
    let cfg = RunConfig::from_json(r#"{"kind":"sweep","algorithm":"sgd-clipped","alpha":2}"#).unwrap();
    assert_eq!(cfg.t_grid, vec![256, 512, 1024, 2048, 4096, 8192]);
    assert_eq!(cfg.delta, 0.1);
    assert_eq!(cfg.n_seeds(), 32);
    assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn sweep_summary_round_trips_and_matches_csvs() {
    let dir = tempfile::tempdir().unwrap();
    execute(&small_sweep(), dir.path()).unwrap();
    let path = dir.path().join("summary.json");
    let summary = SweepSummary::load(&path).unwrap();
    let again: SweepSummary = serde_json::from_str(&serde_json::to_string(&summary).unwrap()).unwrap();
    assert_eq!(summary, again);
    assert_eq!(summary.config, small_sweep());
    assert_eq!(summary.nodes.len(), 4);
    assert_eq!(summary.trajectories.iter().map(Vec::len).sum::<usize>(), 64);
    assert!(summary.fit.slope.is_some() && summary.fit_log_corrected.slope.is_some());

    // the first trajectory reads back with its first and last steps
    let rows = read_trajectory_csv(&dir.path().join(&summary.trajectories[0][0])).unwrap();
    assert_eq!(rows.first().unwrap().t, 1);
    assert_eq!(rows.last().unwrap().t, 64);
    let svg = read(&dir.path().join("loglog.svg"));
    assert!(svg.contains("fit slope") && svg.contains("target slope"));
}

#[test]
fn tampered_schedule_is_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    execute(&small_sweep(), dir.path()).unwrap();
    let path = dir.path().join("summary.json");
    let mut value: serde_json::Value = serde_json::from_str(&read(&path)).unwrap();
    value["nodes"][0]["schedule"]["constants"]["q"] = serde_json::json!(1000.0);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    match SweepSummary::load(&path) {
        Err(Error::Constraint { .. }) => {}
        other => panic!("expected constraint error, got {other:?}"),
    }
    assert!(plot_summary(&path, &dir.path().join("x.svg")).is_err());
}

#[test]
fn repeated_execution_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_sweep();
    execute(&cfg, a.path()).unwrap();
    heavytail_core::harness::with_threads(Some(2), || execute(&cfg, b.path())).unwrap().unwrap();
    for name in ["summary.json", "loglog.svg", "trajectories/T512_seed015.csv"] {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)), "{name}");
    }
}

#[test]
fn run_outputs_single_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(r#"{"kind":"run","alpha":2,"algorithm":"accel-rsag","horizon":100}"#).unwrap();
    let out = execute(&cfg, dir.path()).unwrap();
    assert_eq!(out.files.len(), 2);
    let rows = read_trajectory_csv(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(rows.len(), 100);
    let summary: serde_json::Value = serde_json::from_str(&read(&dir.path().join("summary.json"))).unwrap();
    assert_eq!(summary["config"]["algorithm"], "accel-rsag");
    assert_eq!(summary["stamp"]["tool"], "heavytail-opt");
}

#[test]
fn conclab_report_lists_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(
        r#"{"kind":"conclab","alpha":2,"conclab":{"n_mc":20000,"n_trials":400,"martingale_len":100,"n_fresh":4096,"n_probe":8,"n_sequences":50}}"#,
    )
    .unwrap();
    execute(&cfg, dir.path()).unwrap();
    let report: ConclabSummary = serde_json::from_str(&read(&dir.path().join("conclab.json"))).unwrap();
    let count = |name: &str| report.checks.iter().filter(|c| c.name.contains(name)).count();
    // 2 distributions x 5 thresholds, for bias and for second moment
    assert_eq!(report.checks.len(), 20 + 3 * (3 + 2) + 2 + 2);
    assert_eq!(count("uniform-convergence"), 2);
    assert_eq!(count("adagrad-sum"), 2);
    for c in &report.checks {
        assert!(c.parameters.is_object(), "{}", c.name);
    }
    assert_eq!(report.pass, report.checks.iter().all(|c| c.pass));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = RunConfig::from_json(r#"{"kind":"run","alpha":2,"horizon":10}"#).unwrap();
    assert!(matches!(execute(&cfg, &blocker), Err(Error::Io { .. })));
}
