use std::path::Path;
use std::process::{Command, Output};

fn chemoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemoflow")).args(args).output().expect("spawn chemoflow")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn unknown_flag_exits_2() {
    let out = chemoflow(&["run", "--preset", "example1", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_preset_and_missing_config_exit_2() {
    assert_eq!(chemoflow(&["run", "--preset", "example9"]).status.code(), Some(2));
    let out = chemoflow(&["run", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.toml"));
}

#[test]
fn run_example1_small() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = chemoflow(&["run", "--preset", "example1", "--nx", "16", "--ny", "16", "--t-end", "0.15", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // four snapshot times, four fields each
    for t in ["00000.010000", "00000.050000", "00000.075000", "00000.150000"] {
        for f in ["n1", "n2", "w1", "w2"] {
            assert!(dir.path().join(format!("{f}_t{t}.csv")).exists(), "{f} at {t}");
        }
    }
    assert!(dir.path().join("metadata.json").exists());
    assert!(dir.path().join("diagnostics.csv").exists());
}

#[test]
fn run_test2_uses_downward_potential_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = chemoflow(&[
        "run", "--preset", "test2", "--nx", "40", "--ny", "16", "--t-end", "0.2", "--out-dir", d, "--format", "pgm",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["model"]["grad_phi"], serde_json::json!([0.0, -1.0]));
    assert!(dir.path().join("speed_t00000.200000.pgm").exists());
}

#[test]
fn single_thread_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = chemoflow(&[
            "run", "--preset", "example3", "--nx", "24", "--ny", "24", "--t-end", "0.002", "--seed", "9", "--threads",
            "1", "--out-dir", dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        runs.push(files(dir.path()));
        for (name, _) in &runs[runs.len() - 1] {
            std::fs::remove_file(dir.path().join(name)).unwrap();
        }
    }
    assert_eq!(runs[0].len(), 14);
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        assert_eq!(a.0, b.0);
        assert!(a.1 == b.1, "{} differs", a.0);
    }
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            "preset = \"example2\"\nseed = 5\n[run]\nt_end = 0.004\n[output]\nout_dir = \"{}\"\nsnapshot_interval = 0.002\n",
            out_dir.display()
        ),
    )
    .unwrap();
    let out = chemoflow(&["run", "--config", cfg.to_str().unwrap(), "--nx", "12", "--ny", "12"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("n2_t00000.002000.csv").exists());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config"]["grid"]["nx"], 12);

    std::fs::write(&cfg, "preset = \"example2\"\nunknown_key = 1\n").unwrap();
    let out = chemoflow(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn check_subcommand_reports_invariants() {
    let out = chemoflow(&["check", "--preset", "example1", "--nx", "16", "--ny", "16", "--t-end", "0.005"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    assert!(text.contains("nonnegative"));
}

#[test]
fn kinetic_study_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.toml");
    std::fs::write(&cfg, "preset = \"example1\"\n[kinetic]\neps = [0.4, 0.2]\ncells = 50\nt_end = 0.1\n").unwrap();
    let out = chemoflow(&["kinetic-study", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps,error,ratio");
    assert_eq!(lines.len(), 3);
    assert!(dir.path().join("kinetic_errors.csv").exists());
}
