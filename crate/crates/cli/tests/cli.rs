use std::process::Command;

fn hembem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hembem"))
}

#[test]
fn run_then_eoc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, "n0 = 2\nuniform_levels = 3\n").unwrap();
    let out = dir.path().join("out");
    let run = hembem()
        .args(["run", "--mode", "uniform", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 3);
    for f in ["results.csv", "law.csv", "mesh_000.jsonl", "indicators_002.csv", "trace_002.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    let eoc = hembem().args(["eoc", "--in"]).arg(out.join("results.csv")).output().unwrap();
    assert!(eoc.status.success());
    let text = String::from_utf8(eoc.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "from to n_dof_from n_dof_to eoc");
    assert_eq!(lines.len(), 3);
    let value: f64 = lines[1].split_whitespace().last().unwrap().parse().unwrap();
    assert!(value.is_finite());

    let bad = hembem().args(["eoc", "--field", "nope", "--in"]).arg(out.join("results.csv")).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "theta = 2.0\nmode = \"hp\"\n").unwrap();
    let run = hembem().args(["run", "--mode", "hp", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("theta"));
    let missing = hembem().args(["eoc", "--in"]).arg(dir.path().join("none.csv")).output().unwrap();
    assert!(!missing.status.success());
    let usage = hembem().args(["run", "--mode", "sideways"]).output().unwrap();
    assert!(!usage.status.success());
}
