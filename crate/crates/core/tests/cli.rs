use std::path::Path;
use std::process::Command;

fn vigil(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_vigil")).args(args).env("RUST_LOG", "warn").output().expect("spawn vigil");
    assert!(out.status.success(), "vigil {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(
        &dir.path().join("plan.json"),
        r#"{"hardware":"workstation-like","node_counts":[1,2],"densities":["normal"],"repetitions":1,"frames":600,"warmup_frames":150,"cooldown_frames":150}"#,
    );
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let run = vigil(&["run", "--plan", &plan, "--out", out_s, "--clock", "deterministic", "--seed", "5"]);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",0,ok,")).count(), 2, "{csv}");
    assert!(out.join("stage_reports/normal_n2_r0/node_1.csv").exists());
    for plot in ["throughput.svg", "latency.svg", "throughput_dist_normal.svg"] {
        assert!(out.join("plots").join(plot).exists(), "{plot} missing");
    }

    std::fs::remove_dir_all(out.join("plots")).unwrap();
    let report = vigil(&["report", "--in", out_s]);
    assert_eq!(report.stdout, run.stdout);
    assert!(out.join("plots/throughput.svg").exists());
    assert_eq!(std::fs::read_to_string(out.join("results.csv")).unwrap(), csv);
}

#[test]
fn replay_prints_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let scenario =
        write(&dir.path().join("scenario.json"), r#"{"camera_id":"door","seed":3,"duration_frames":300,"density":2.0,"identity_count":3}"#);
    let out = vigil(&["replay", "--scenario", &scenario]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["camera_id"], "door");
    assert_eq!(v["frames_out"], 300);
    assert_eq!(v["global"]["rejected"], 0);
    assert!(v["global"]["accepted"].as_u64().unwrap() > 0);
}

#[test]
fn bad_plan_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(&dir.path().join("plan.json"), r#"{"node_counts":[]}"#);
    let out = Command::new(env!("CARGO_BIN_EXE_vigil"))
        .args(["run", "--plan", &plan, "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
