use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbr_core::harness::config::ExperimentConfig;

const BIN: &str = env!("CARGO_BIN_EXE_mbr");

const QUADRATIC: &str = r#"{"model": {"alpha": 2, "delta_star": 1, "kappa": 0.5, "gamma": 1,
    "potential": {"kind": "quadratic", "delta": 1.0}}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn mbr(args: &[&str], config: &Path) -> Output {
    Command::new(BIN).args(args).arg("--config").arg(config).arg("--no-timestamp").output().unwrap()
}

fn json_out(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn data_lines(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn solve_reports_the_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &format!("{QUADRATIC}}}"));
    let out = mbr(&["solve"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let v = json_out(&out);
    let q = v["results"]["report"]["state"]["q"].as_f64().unwrap();
    assert!((q - 0.41421356).abs() < 1e-8, "{q}");
    assert_eq!(v["results"]["report"]["converged"], true);
}

#[test]
fn zero_potential_gives_zero_conjugates() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"model": {"alpha": 2, "delta_star": 1, "kappa": 0.5, "h": 1, "potential": {"kind": "zero"}}}"#;
    let v = json_out(&mbr(&["solve"], &write_config(dir.path(), "c.json", body)));
    let s = &v["results"]["report"]["state"];
    assert_eq!(s["r"].as_f64(), Some(0.0));
    assert_eq!(s["rbar"].as_f64(), Some(0.0));
}

#[test]
fn forced_non_convergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUADRATIC}, \"solver\": {{\"tol\": 1e-30, \"max_iter\": 10}}}}");
    let out = mbr(&["solve"], &write_config(dir.path(), "c.json", &body));
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json_out(&out)["results"]["report"]["converged"], false);
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let body = QUADRATIC.replace("\"kappa\": 0.5", "\"kappa\": \"half\"") + "}";
    let out = mbr(&["solve"], &write_config(dir.path(), "c.json", &body));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.kappa"));

    let out = Command::new(BIN).args(["solve", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN).args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn closed_form_rejects_non_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let body = QUADRATIC.replace(r#"{"kind": "quadratic", "delta": 1.0}"#, r#"{"kind": "pseudo_huber", "scale": 1.0}"#) + "}";
    let out = mbr(&["closed-form"], &write_config(dir.path(), "c.json", &body));
    assert_eq!(out.status.code(), Some(2));
    let out = mbr(&["check-potential"], &write_config(dir.path(), "c.json", &body));
    assert_eq!(json_out(&out)["ok"], true);
}

#[test]
fn sampler_health_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // Huge step with no adaptation: almost every proposal is rejected.
    let body = format!(
        "{QUADRATIC}, \"sim\": {{\"n\": 10, \"seeds\": 2, \"sampler\": {{\"kind\": \"mala\", \"step\": 50, \"burn_in\": 0, \"samples\": 200}}}}}}"
    );
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = mbr(&["simulate"], &cfg);
    assert_eq!(out.status.code(), Some(4));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(data_lines(&csv).iter().filter(|l| l.contains("sampler_health")).count(), 2);
    let out = mbr(&["compare"], &cfg);
    assert_eq!(out.status.code(), Some(4));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(data_lines(&csv).len(), 2, "report is still produced");
}

#[test]
fn csv_headers_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUADRATIC}, \"sim\": {{\"n\": 20, \"seeds\": 2}}}}");
    let cfg = write_config(dir.path(), "c.json", &body);
    let golden = |name: &str| std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap();

    let csv = String::from_utf8(mbr(&["compare"], &cfg).stdout).unwrap();
    assert_eq!(data_lines(&csv)[0], golden("comparison_header.csv").trim_end());
    let csv = String::from_utf8(mbr(&["simulate"], &cfg).stdout).unwrap();
    assert_eq!(data_lines(&csv)[0], golden("seed_header.csv").trim_end());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{QUADRATIC}, \"sim\": {{\"n\": 30, \"seeds\": 6}}, \"sweep\": {{\"param_name\": \"alpha\", \"grid\": [0.5, 1.5]}}}}"
    );
    let cfg = write_config(dir.path(), "c.json", &body);
    let a = mbr(&["compare", "--workers", "1"], &cfg).stdout;
    let b = mbr(&["compare", "--workers", "3"], &cfg).stdout;
    assert_eq!(a, b);
    assert!(!String::from_utf8(a).unwrap().contains("generated_at_unix"));

    let stamped = Command::new(BIN).args(["sweep", "--config"]).arg(&cfg).output().unwrap();
    assert!(String::from_utf8(stamped.stdout).unwrap().starts_with("# generated_at_unix="));
}

#[test]
fn seed_flag_shifts_the_seed_range() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUADRATIC}, \"sim\": {{\"n\": 10, \"seeds\": [0, 1, 2]}}}}");
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = mbr(&["simulate", "--seed", "40"], &cfg);
    let csv = String::from_utf8(out.stdout).unwrap();
    let seeds: Vec<&str> = data_lines(&csv)[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["40", "41", "42"]);
}

#[test]
fn sweep_rows_follow_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid: Vec<String> = (1..=8).map(|i| format!("{}", 0.5 * i as f64)).collect();
    let body = format!("{QUADRATIC}, \"sweep\": {{\"param_name\": \"alpha\", \"grid\": [{}]}}}}", grid.join(","));
    let out = mbr(&["sweep"], &write_config(dir.path(), "c.json", &body));
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows = data_lines(&csv);
    assert_eq!(rows.len(), 9);
    for (row, g) in rows[1..].iter().zip(&grid) {
        assert_eq!(row.split(',').next().unwrap().parse::<f64>().unwrap(), g.parse::<f64>().unwrap());
    }

    let body = QUADRATIC.to_string() + ", \"sweep\": {\"param_name\": \"gamma\", \"grid\": [0, 1]}}";
    let csv = String::from_utf8(mbr(&["sweep"], &write_config(dir.path(), "c.json", &body)).stdout).unwrap();
    let q0: f64 = data_lines(&csv)[1].split(',').nth(7).unwrap().parse().unwrap();
    assert!((q0 - (2f64.sqrt() - 1.0) / 2.0).abs() < 1e-9, "{q0}");

    let body = QUADRATIC.to_string()
        + ", \"solver\": {\"max_iter\": 3}, \"sweep\": {\"param_name\": \"kappa\", \"grid\": [0.5, 1]}}";
    let out = mbr(&["sweep"], &write_config(dir.path(), "c.json", &body));
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows = data_lines(&csv);
    assert_eq!(rows.len(), 3);
    assert!(rows[1..].iter().all(|r| r.contains(",false,")));

    let body = QUADRATIC.to_string() + ", \"sweep\": {\"param_name\": \"alpha\", \"grid\": []}}";
    assert_eq!(mbr(&["sweep"], &write_config(dir.path(), "c.json", &body)).status.code(), Some(2));
}

#[test]
fn beta_sweep_leaves_the_mse_column_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{QUADRATIC}, \"sim\": {{\"n\": 40, \"seeds\": 4}}, \"sweep\": {{\"param_name\": \"beta\", \"grid\": [0.5, 1, 2]}}}}"
    );
    let csv = String::from_utf8(mbr(&["compare"], &write_config(dir.path(), "c.json", &body)).stdout).unwrap();
    let rows = data_lines(&csv);
    let col = rows[0].split(',').position(|c| c == "mse_mean").unwrap();
    let mse: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(col).unwrap()).collect();
    assert_eq!(mse.len(), 3);
    assert!(mse.iter().all(|m| *m == mse[0]), "{mse:?}");
}

#[test]
fn embedded_configs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUADRATIC}, \"sim\": {{\"n\": 10, \"seeds\": 2}}}}");
    let cfg_path = write_config(dir.path(), "c.json", &body);
    let original = ExperimentConfig::from_path(&cfg_path).unwrap().resolved();

    let v = json_out(&mbr(&["solve"], &cfg_path));
    let back = ExperimentConfig::from_json(&v["config"].to_string()).unwrap();
    assert_eq!(back, original);

    let csv = String::from_utf8(mbr(&["simulate"], &cfg_path).stdout).unwrap();
    let line = csv.lines().find_map(|l| l.strip_prefix("# config=")).unwrap();
    assert_eq!(ExperimentConfig::from_json(line).unwrap(), original);
}

#[test]
fn compare_writes_a_sidecar_report() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{QUADRATIC}, \"sim\": {{\"n\": 20, \"seeds\": 3}}}}");
    let cfg = write_config(dir.path(), "c.json", &body);
    let out_path = dir.path().join("cmp.csv");
    let out = mbr(&["compare", "--output", out_path.to_str().unwrap()], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmp.csv.report.json")).unwrap()).unwrap();
    let row = &report["rows"][0];
    assert_eq!(row["simulation"]["seeds_used"], 3);
    assert!(row["z_scores"]["mse"].is_number());
    assert_eq!(report["z_flag"].as_f64(), Some(3.0));
}

#[test]
fn mala_chains_can_be_dumped() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("chains");
    let body = format!(
        "{QUADRATIC}, \"sim\": {{\"n\": 5, \"seeds\": [3], \"sampler\": {{\"kind\": \"mala\", \"burn_in\": 100, \"samples\": 50}}, \"dump_samples\": {:?}}}}}",
        dump.to_str().unwrap()
    );
    let out = mbr(&["simulate"], &write_config(dir.path(), "c.json", &body));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(dump.join("seed3_chain1.bin")).unwrap();
    assert_eq!(bytes.len(), 50 * 5 * 8);
}
