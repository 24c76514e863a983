use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drawstring_core::telemetry::{import_csv, load_log, load_records, HarvestRecord};
use drawstring_service::Calibration;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn drawstring(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drawstring"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn medium_scenario_meets_its_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let out = drawstring(&["sim", "--scenario", s(&scenario("medium.toml")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("Secured"));

    let samples = load_log(dir.path().join("telemetry.jsonl")).unwrap();
    assert!(samples.len() > 50);
    let records: Vec<HarvestRecord> = load_records(dir.path().join("record.jsonl")).unwrap();
    assert!(records[0].harvested);
    let (fields, rows) = import_csv(&std::fs::read_to_string(dir.path().join("telemetry.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), samples.len());
    assert_eq!(fields[0].name(), "time");
    let svg = std::fs::read_to_string(dir.path().join("closer.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn every_bundled_scenario_meets_its_expectation() {
    for name in ["medium.toml", "small.toml", "oversize.toml", "empty.toml"] {
        let out = drawstring(&["sim", "--scenario", s(&scenario(name))]);
        assert_eq!(code(&out), 0, "{name}: {}", text(&out));
    }
}

#[test]
fn oversize_expecting_secured_is_a_mismatch() {
    let out = drawstring(&["sim", "--scenario", s(&scenario("oversize.toml")), "--expect", "Secured"]);
    assert_eq!(code(&out), 1);
    let t = text(&out);
    assert!(t.contains("- expected Secured") && t.contains("+ got      Oversize"), "{t}");
}

#[test]
fn missing_scenario_file_is_exit_2() {
    let out = drawstring(&["sim", "--scenario", "/nonexistent/scenario.toml"]);
    assert_eq!(code(&out), 2, "{}", text(&out));
}

#[test]
fn malformed_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "schema_version = 1\n[grasp]\nreference_current_ma = \"lots\"\n").unwrap();
    let out = drawstring(&["sim", "--scenario", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("reference_current_ma"), "{}", text(&out));
}

#[test]
fn current_flag_overrides_the_reference() {
    let out = drawstring(&["sim", "--scenario", s(&scenario("medium.toml")), "--current", "80"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("80.0 mA"), "{}", text(&out));
}

#[test]
fn tomato_batch_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = drawstring(&["batch", "--scenario", s(&scenario("harvest.toml")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let t = text(&out);
    assert!(t.contains("56 harvests"), "{t}");
    let medium = t.lines().find(|l| l.starts_with("medium")).unwrap();
    let small = t.lines().find(|l| l.starts_with("small")).unwrap();
    assert!(medium.contains("23") && medium.contains("0.0%"), "{medium}");
    assert!(small.contains("33") && small.contains("0.0%"), "{small}");
    let records: Vec<HarvestRecord> = load_records(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 56);
}

#[test]
fn fragile_batch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let text_in = std::fs::read_to_string(scenario("harvest.toml"))
        .unwrap()
        .replace("damage_force = 15.0", "damage_force = 1.5")
        .replace("damage_force = 12.0", "damage_force = 1.2");
    let path = dir.path().join("fragile.toml");
    std::fs::write(&path, text_in).unwrap();
    let out = drawstring(&["batch", "--scenario", s(&path)]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    assert!(!text(&out).contains(" 0.0%"), "{}", text(&out));
}

#[test]
fn empty_batch_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, "schema_version = 1\nseed = 1\n").unwrap();
    let out = drawstring(&["batch", "--scenario", s(&path)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("0 harvests"));
}

#[test]
fn calibration_writes_then_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cal.json");
    let empty = scenario("empty.toml");
    let args = ["calibrate", "--scenario", s(&empty), "--out", s(&file)];
    let out = drawstring(&args);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let cal = Calibration::load(&file).unwrap();
    assert!(cal.empty_closure_position_rev > 1.0 && cal.empty_closure_position_rev < 2.0, "{cal:?}");
    assert_eq!(cal.source, "sim");

    let before = std::fs::read(&file).unwrap();
    let out = drawstring(&args);
    assert_ne!(code(&out), 0);
    assert!(text(&out).contains("--force"), "{}", text(&out));
    assert_eq!(std::fs::read(&file).unwrap(), before);

    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&drawstring(&forced)), 0);
}

#[test]
fn calibration_with_an_oversize_object_does_not_settle() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cal.json");
    let out = drawstring(&["calibrate", "--scenario", s(&scenario("oversize.toml")), "--out", s(&file)]);
    assert_eq!(code(&out), 1);
    assert!(text(&out).contains("Oversize"), "{}", text(&out));
    assert!(!file.exists());
}

#[test]
fn calibrate_needs_exactly_one_transport() {
    let out = drawstring(&["calibrate", "--out", "/tmp/x.json"]);
    assert_eq!(code(&out), 2);
    let out = drawstring(&[
        "calibrate",
        "--scenario",
        s(&scenario("empty.toml")),
        "--serial",
        "/dev/ttyUSB0",
        "--out",
        "/tmp/x.json",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn analyze_reports_margins_rates_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(
        code(&drawstring(&["sim", "--scenario", s(&scenario("medium.toml")), "--out", s(&run)])),
        0
    );
    let bursts = dir.path().join("bursts.json");
    std::fs::write(
        &bursts,
        r#"[{"fruit_id":"a","burst_force":14.2},{"fruit_id":"b","burst_force":15.8},
            {"fruit_id":"c","burst_force":16.1},{"fruit_id":"d","burst_force":13.9},
            {"fruit_id":"e","burst_force":15.0}]"#,
    )
    .unwrap();
    let plots = dir.path().join("plots");
    let log = run.join("telemetry.jsonl");
    let records = run.join("record.jsonl");
    let out = drawstring(&[
        "analyze",
        s(&log),
        "--bursts",
        s(&bursts),
        "--records",
        s(&records),
        "--out",
        s(&plots),
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let t = text(&out);
    assert!(t.contains("threshold 15.00 N"), "{t}");
    assert!(t.contains("violations 0"), "{t}");
    assert!(t.contains("medium"), "{t}");
    assert!(plots.join("telemetry.csv").exists() && plots.join("telemetry.svg").exists());

    let out = drawstring(&["analyze", s(&log), "--threshold", "1.0"]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    assert!(text(&out).contains("VIOLATION"));
}

#[test]
fn doubled_current_damages_the_batch() {
    let out = drawstring(&["batch", "--scenario", s(&scenario("harvest.toml")), "--current", "200"]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    assert!(text(&out).contains("56 damaged"), "{}", text(&out));
}
