use std::path::Path;
use std::process::{Command, Output};

fn gmdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmdg"))
        .args(args)
        .env("GMDG_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_all_partitions_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = gmdg(&["synth", "--dataset", "1", "--seed", "0", "--out", path_str(p)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("domain,x1,x2,y1,y2"));
    assert_eq!(lines.count(), 3 * 10_200);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn synth_rejects_unknown_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmdg(&["synth", "--dataset", "5", "--out", path_str(&dir.path().join("x.csv"))]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn verify_passes_and_names_five_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = gmdg(&["verify", "--trials", "1000", "--seed", "3", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["check_name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        [
            "gjsd_dual_form",
            "pub_bound",
            "kl_nonnegative",
            "condition_reduces_entropy",
            "gaussian_entropy_monte_carlo"
        ]
    );
    for c in checks {
        assert_eq!(c["trials"], 1000);
        assert_eq!(c["failures"], 0);
    }
}

#[test]
fn verify_rejects_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmdg(&["verify", "--trials", "0", "--out", path_str(&dir.path().join("r.json"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&gmdg(&["--help"])), 0);
    assert_eq!(code(&gmdg(&["train", "--help"])), 0);
    assert_eq!(code(&gmdg(&[])), 1);
    assert_eq!(code(&gmdg(&["frobnicate"])), 1);
    assert_eq!(code(&gmdg(&["toy-matrix", "--seeds", "1,x", "--out", "/tmp/never"])), 1);
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    path_str(&p).to_string()
}

#[test]
fn train_erm_writes_history_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[data]\ndataset = 1\nn_train = 1000\n[train]\nsteps = 300\n[weights]\nv_a1 = 0.0\nv_r1 = 0.0\nv_r2 = 0.0\n[variant]\nuse_psi = false\n[output]\ndir = {:?}\n",
            path_str(&out)
        ),
    );
    let o = gmdg(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("step,a1,a2,r1,r2,total,iaim1,ireg2"));
    assert_eq!(lines.count(), 300);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("checkpoint.json")).unwrap()).unwrap();
    let floats: u64 = meta["shapes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s[0].as_u64().unwrap() * s[1].as_u64().unwrap())
        .sum();
    assert_eq!(std::fs::metadata(out.join("checkpoint.bin")).unwrap().len(), 8 * floats);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["test_mse"].as_f64().unwrap().is_finite());
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nlearnign_rate = 0.1\n");
    let o = gmdg(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learnign_rate"));
}

#[test]
fn divergence_exits_with_code_three_and_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "[data]\ndataset = 4\nn_train = 500\n[train]\nsteps = 100\nlr = 1e6\nclip_norm = 0.0\n[output]\ndir = {:?}\n",
            path_str(&dir.path().join("run"))
        ),
    );
    let o = gmdg(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged at step"));
}

#[test]
fn small_toy_matrix_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[data]\nn_train = 300\nn_val = 20\nn_test = 20\n[train]\nsteps = 40\neval_interval = 20\n");
    let out = dir.path().join("toy");
    let o = gmdg(&["toy-matrix", "--seeds", "0,1", "--out", path_str(&out), "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("toy_matrix.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(
        rows[0],
        "setting,affine_erm,affine_a1_phi,affine_a1_phi_psi,poly_erm,poly_a1_phi,poly_a1_phi_psi"
    );
    for r in &rows[1..] {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert!(cells[1..].iter().all(|c| c.parse::<f64>().is_ok_and(|v| v.is_finite() && v >= 0.0)));
    }
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 3 * 4 * 3 * 2);
    let verdict: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("verdict.json")).unwrap()).unwrap();
    assert!(verdict["with_psi_best_count"].is_u64());
    assert_eq!(verdict["per_setting_pass"].as_array().unwrap().len(), 4);
}
