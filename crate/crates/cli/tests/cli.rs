use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stereo-wavelets"));
    c.env_remove("STEREO_WAVELETS_WORKERS");
    c
}

fn quick_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("quick.toml");
    std::fs::write(&path, "C_S = 235.0\nquad_order = 128\n").unwrap();
    path
}

#[test]
fn estimate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = quick_config(dir.path());
    let status = bin()
        .args(["estimate", "--profile", "paper-s5", "--density", "f1", "--n", "100", "--seed", "7"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("STEREO_WAVELETS_WORKERS", "2")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["summary.json", "true_f1.csv", "estimate_f1_n100_rep0.csv", "plot_f1.py"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let run = &summary["runs"][0];
    assert_eq!(run["j_n"], 2);
    assert_eq!(run["j_min"], 2);
    assert_eq!(run["j_max"], 2);
    assert_eq!(summary["spec"]["workers"], 2);
    assert_eq!(summary["spec"]["estimator"]["quad_order"], 128);
    assert_eq!(summary["C_S"], 235.0);
}

#[test]
fn invalid_parameters_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    // j_min = 2 > j_max = 1 for n = 16
    let o = bin().args(["estimate", "--n", "16"]).arg("--out").arg(&out).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("j_min"));
    let o = bin().args(["estimate", "--density", "f7"]).output().unwrap();
    assert!(!o.status.success());
    let o = bin().args(["estimate", "--support-rule", "loose"]).output().unwrap();
    assert!(!o.status.success());
    let o = bin().args(["estimate", "--profile", "other"]).output().unwrap();
    assert!(!o.status.success());
    let o = bin()
        .args(["sample", "--n", "10"])
        .env("STEREO_WAVELETS_WORKERS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    let o = bin().args(["estimate", "--n", "abc"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn sample_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = bin()
            .args(["sample", "--density", "f2", "--n", "500", "--seed", "3"])
            .arg("--out")
            .arg(p)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 501);
    assert!(text.starts_with("x,y,z\n"));
}
