use std::process::Command;

fn demoa() -> Command {
    Command::new(env!("CARGO_BIN_EXE_demoa"))
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let status = demoa()
            .args(["generate", "--n", "98", "--topology", "clustered:5", "--dynamic", "0.5", "--seed", "1", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let listed = String::from_utf8(status.stdout).unwrap();
        assert_eq!(listed.lines().count(), 1);
        std::fs::read_to_string(out.join("clustered5_n98_d50_s1.json")).unwrap()
    };
    let first = run("a");
    assert_eq!(first, run("b"));
    let inst = demoa_core::Instance::from_json(&first).unwrap();
    assert_eq!(inst.n_dynamic(), 49);
}

#[test]
fn out_of_range_ratio_is_a_usage_error() {
    let out = demoa().args(["generate", "--dynamic", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--dynamic") && stderr.contains("outside [0, 1]"));
}

#[test]
fn corpus_has_fifty_instances() {
    let dir = tempfile::tempdir().unwrap();
    let out = demoa()
        .args(["generate", "--corpus", "--n", "20", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 50);
}

#[test]
fn run_and_metrics_commands() {
    let dir = tempfile::tempdir().unwrap();
    let inst_dir = dir.path().join("inst");
    let status = demoa()
        .args(["generate", "--n", "10", "--dynamic", "0.5", "--seed", "2", "--out"])
        .arg(&inst_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out_dir = dir.path().join("out");
    let spec = serde_json::json!({
        "instances": [inst_dir.join("uniform_n10_d50_s2.json")],
        "vehicle_counts": [1, 2],
        "d_values": [0.5],
        "replications": 5,
        "clairvoyant_budget": 600,
        "output_dir": out_dir,
        "seed_base": 1,
        "n_eras": 3,
        "evo": { "mu": 10, "evals_per_era": 300 }
    });
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let out = demoa().arg("run").arg(&spec_path).env("DEMOA_WORKERS", "2").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let logs = std::fs::read_dir(out_dir.join("logs/uniform_n10_d50_s2")).unwrap().count();
    assert_eq!(logs, 10);
    assert_eq!(std::fs::read_dir(out_dir.join("clairvoyant")).unwrap().count(), 2);
    let csv = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let hv = std::fs::read(out_dir.join("hv.csv")).unwrap();
    std::fs::remove_file(out_dir.join("hv.csv")).unwrap();
    let out = demoa().arg("metrics").arg(&out_dir).output().unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(out_dir.join("hv.csv")).unwrap(), hv);
}

#[test]
fn run_with_missing_instance_fails() {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "instances": ["/nonexistent/instance.json"],
        "vehicle_counts": [1], "d_values": [0.5], "replications": 1,
        "clairvoyant_budget": 100, "output_dir": dir.path().join("out")
    });
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let out = demoa().arg("run").arg(&spec_path).output().unwrap();
    assert!(!out.status.success());
}
