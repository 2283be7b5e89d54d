use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vistrack::sim::config::ScenarioConfig;

fn vistrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vistrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write_scenario(dir: &Path, cfg: &ScenarioConfig) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bundled_scenarios_parse() {
    let mut n = 0;
    for entry in fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        ScenarioConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}

#[test]
fn malformed_config_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"seed\": 1,\n  \"duration\": ,\n}\n").unwrap();
    let out = vistrack(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&ScenarioConfig::forest(1, 0.03, 1.0, 1.0).to_json()).unwrap();
    v["map"]["treez"] = serde_json::json!(3);
    let path = dir.path().join("extra.json");
    fs::write(&path, v.to_string()).unwrap();
    let out = vistrack(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("treez"));
}

#[test]
fn run_writes_metrics_and_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::forest(3, 1.0 / 32.0, 1.0, 1.5);
    let scenario = write_scenario(dir.path(), &cfg);
    let mut csvs = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("out{k}"));
        let out = vistrack(&["run", &scenario, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let metrics: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap())
                .unwrap();
        for key in ["theta_avg", "theta_wrst", "gamma_vis", "d_avg"] {
            assert!(metrics["metrics"][key].is_number(), "{key}");
        }
        csvs.push(fs::read(out_dir.join("timeseries.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let header = String::from_utf8_lossy(&csvs[0])
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.starts_with("t,target_x,target_y,target_z,a0_status"));
}

#[test]
fn fallback_run_exits_degraded() {
    // a lone tracker far beyond sensing range never gets an estimate
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::forest(1, 1.0 / 32.0, 1.0, 1.0);
    cfg.agents.truncate(1);
    cfg.agents[0].start = [28.0, 18.0, 1.0];
    cfg.sensing.range = 5.0;
    let scenario = write_scenario(dir.path(), &cfg);
    let out = vistrack(&[
        "run",
        &scenario,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn ablate_rejects_unknown_terms() {
    let out = vistrack(&[
        "ablate",
        scenarios().join("forest.json").to_str().unwrap(),
        "--without",
        "charisma",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("charisma"));
}

#[test]
fn ssdf_bench_emits_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = vistrack(&["bench-ssdf", "--reps", "1", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scene,method,time_ms,cum_error_rad");
    assert_eq!(lines.len(), 7);
    for row in &lines[1..] {
        let err: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err <= 1e-4, "{row}");
    }
}

#[test]
fn gradcheck_lists_each_check_once_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.json");
    let out = vistrack(&[
        "gradcheck",
        "--instances",
        "20",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    let unique: HashSet<&str> = names.iter().copied().collect();
    assert_eq!(unique.len(), names.len());
    for cost in [
        "visibility",
        "fov",
        "distance",
        "teammate_occlusion",
        "formation",
        "corridor",
        "dynamics",
        "swarm",
    ] {
        assert!(
            names.iter().any(|n| n.contains(cost)),
            "{cost} missing from {names:?}"
        );
    }
}

#[test]
fn corrupted_gradient_breaches() {
    let out = vistrack(&["gradcheck", "--instances", "5", "--corrupt"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn template_round_trips() {
    let out = vistrack(&["template", "--seed", "4", "--duration", "12"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg = ScenarioConfig::from_json(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!((cfg.seed, cfg.duration), (4, 12.0));
}
