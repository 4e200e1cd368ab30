use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use failsafe_cli::config;
use failsafe_cli::export::{SUMMARY_COLUMNS, TRACE_COLUMNS};
use failsafe_core::scenario::ScenarioConfig;

fn failsafe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_failsafe"))
        .args(args)
        .env_remove("FAILSAFE_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ScenarioConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, config::to_toml(cfg).unwrap()).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn summary(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        &csv::StringRecord::from(SUMMARY_COLUMNS.to_vec())
    );
    r.records().map(Result::unwrap).collect()
}

#[test]
fn default_config_output_reparses_to_defaults() {
    let o = failsafe(&["default-config"]);
    assert!(o.status.success());
    assert_eq!(
        config::parse(&stdout(&o)).unwrap(),
        ScenarioConfig::default()
    );
}

#[test]
fn validate_reports_each_problem() {
    let dir = tempfile::tempdir().unwrap();
    let clean = write_config(dir.path(), "clean.toml", &ScenarioConfig::default());
    let o = failsafe(&["validate", clean.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    let mut cfg = ScenarioConfig::default();
    cfg.acc.h_dg = 0.0;
    let path = write_config(dir.path(), "gap.toml", &cfg);
    let o = failsafe(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 1, "{lines:?}");
    assert!(lines[0].contains("acc.h_dg"));

    let mut cfg = ScenarioConfig::default();
    cfg.nmpc.horizon = 0;
    let path = write_config(dir.path(), "horizon.toml", &cfg);
    let o = failsafe(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).lines().count(), 1);

    let o = failsafe(&[
        "validate",
        dir.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        dt: 0.0,
        ..ScenarioConfig::default()
    };
    let path = write_config(dir.path(), "bad.toml", &cfg);
    let out = dir.path().join("out");
    let o = failsafe(&[
        "run",
        "-c",
        path.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn bad_flags_exit_with_validation_status() {
    let o = failsafe(&["run", "--fault", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = failsafe(&["run", "--fault", "0,1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_out_of_lane_run_populates_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_failsafe"))
        .args(["run", "--strategy", "bol", "--name", "bol_check"])
        .env("FAILSAFE_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = summary(&root.join("summary.csv"));
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(&row[0], "bol_check");
    assert_eq!(&row[1], "bol");
    for col in [
        "stop_time",
        "stop_distance",
        "tv_gap_closing_time",
        "e_tg_at_t_b",
    ] {
        let i = SUMMARY_COLUMNS.iter().position(|c| *c == col).unwrap();
        let v: f64 = row[i].parse().unwrap();
        assert!(v > 0.0, "{col} = {v}");
    }
    let run_dir = root.join("bol_check");
    for f in ["trace.csv", "plot.csv", "events.json", "config.toml"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    assert!(!run_dir.join("errors.csv").exists());
    let mut trace = csv::Reader::from_path(run_dir.join("trace.csv")).unwrap();
    assert_eq!(
        trace.headers().unwrap(),
        &csv::StringRecord::from(TRACE_COLUMNS.to_vec())
    );
    let written = config::load(&run_dir.join("config.toml")).unwrap();
    assert_eq!(
        written.strategy,
        failsafe_core::tdm::Strategy::BrakeOutOfLane
    );
    let json: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(root.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 1);
}

#[test]
fn experiment_suite_writes_six_traces_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("suite");
    let o = failsafe(&["run", "--suite", "experiments", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traces: Vec<PathBuf> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path().join("trace.csv"))
        .filter(|p| p.exists())
        .collect();
    assert_eq!(traces.len(), 6);
    let rows = summary(&out.join("summary.csv"));
    assert_eq!(rows.len(), 6);
    // Error series accompany the four faulty brake-in-lane runs and the
    // baseline itself.
    let errors = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().join("errors.csv").exists())
        .count();
    assert_eq!(errors, 5);
}
