use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vlmpc-harness"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn run_writes_metrics_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--pipeline", "traj", "--variant", "full", "--episodes", "2", "--seed", "7"])
        .arg("--config")
        .arg(config("reach.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("scene,task_kind,pipeline,variant,episodes,success_rate"));
    assert!(dir.path().join("traces/episode_0001.json").exists());
    assert_eq!(String::from_utf8_lossy(&out.stdout), csv);
}

#[test]
fn bad_config_exits_nonzero_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("reach.json"))
        .unwrap()
        .replace("\"success_radius\": 0.02", "\"success_radius\": \"wide\"");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text).unwrap();
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("task.success_radius"));
}

#[test]
fn compare_reads_spec_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for p in ["vlmpc", "traj"] {
        let spec = serde_json::json!({
            "config": config("reach.json"),
            "episodes": 2,
            "pipeline": p,
            "seed_base": 3
        });
        let path = dir.path().join(format!("{p}.json"));
        std::fs::write(&path, spec.to_string()).unwrap();
        paths.push(path);
    }
    let out = bin()
        .arg("compare")
        .arg("--specs")
        .args(&paths)
        .arg("--out")
        .arg(dir.path().join("cmp"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn dump_map_writes_floats_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("map.f32");
    let out = bin()
        .arg("dump-map")
        .arg("--config")
        .arg(config("obstacle_reach.json"))
        .arg("--out")
        .arg(&file)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::metadata(&file).unwrap().len(), 64 * 64 * 32 * 4);
    let header = vlmpc_core::value_map::header_path(&file);
    assert!(std::fs::read_to_string(header).unwrap().contains("64"));
}
