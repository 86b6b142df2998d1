use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qnem(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnem"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const TINY: &str = r#"
instances = 3
exact = true

[model]
n = 4
steps = 2

[noise]
p2 = 0.01
coherent_angle = 0.02
readout = [{ p01 = 0.02, p10 = 0.05 }]
"#;

#[test]
fn run_writes_tables_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = qnem(&["run", "--config", "tiny.toml", "--out", "r", "--workers", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("computed 54 cells"), "{stdout}");
    for f in ["records.jsonl", "config.toml", "fig3_magnetization.csv", "fig6_mitigated.csv"] {
        assert!(dir.path().join("r").join(f).exists(), "{f}");
    }
    let fig3 = fs::read_to_string(dir.path().join("r/fig3_magnetization.csv")).unwrap();
    assert_eq!(fig3.lines().count(), 4);

    let again = qnem(&["run", "--config", "tiny.toml", "--out", "r"], dir.path());
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("computed 0 cells"));
    assert_eq!(fs::read_to_string(dir.path().join("r/fig3_magnetization.csv")).unwrap(), fig3);
}

#[test]
fn seed_and_mode_flags_apply() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = qnem(
        &["run", "-c", "tiny.toml", "-o", "s", "--shots", "256", "--seed", "5"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = fs::read_to_string(dir.path().join("s/config.toml")).unwrap();
    assert!(cfg.contains("master_seed = 5"));
    assert!(cfg.contains("exact = false"));
    assert!(dir.path().join("s/confusion.json").exists());
}

#[test]
fn incomplete_run_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("strict.toml"), format!("fidelity_floor = 0.95\n{TINY}")).unwrap();
    let out = qnem(&["run", "-c", "strict.toml", "-o", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mitigation"));
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "instances = 0\n").unwrap();
    let out = qnem(&["run", "-c", "bad.toml", "-o", "b"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let missing = qnem(&["run", "-c", "nope.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn report_on_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnem(&["report", "."], dir.path());
    assert!(out.status.success());
    let fig4 = fs::read_to_string(dir.path().join("fig4_fidelity.csv")).unwrap();
    assert_eq!(fig4, "step,fold,mean_fidelity,sem,instances,clipped\n");
}

#[test]
fn calibrate_writes_confusion() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = qnem(&["calibrate", "-c", "tiny.toml", "--shots", "5000", "--out", "conf.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = fs::read_to_string(dir.path().join("conf.json")).unwrap();
    let conf = qnem::ConfusionMatrix::from_json(&json).unwrap();
    assert_eq!(conf.width(), 4);

    let full = qnem(&["calibrate", "-c", "tiny.toml", "--mode", "full", "--shots", "2000", "--out", "."], dir.path());
    assert!(full.status.success());
    let conf = qnem::ConfusionMatrix::from_json(&fs::read_to_string(dir.path().join("confusion.json")).unwrap()).unwrap();
    assert!(!conf.is_tensor());
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnem(&["selftest"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{stdout}");
}
