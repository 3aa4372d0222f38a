use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vtr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtr"))
        .args(args)
        .env("VTR_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vtr(args);
    assert!(
        out.status.success(),
        "vtr {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "..",
        "scenarios",
        &format!("{name}.toml"),
    ]
    .iter()
    .collect();
    p.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn teach_compress_repeat_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("normal");
    let teach = dir.path().join("teach");
    ok(&["teach", &sc, "-o", s(&teach)]);
    let map = teach.join("map.vtrmap");
    assert!(map.exists());

    let small = dir.path().join("small.vtrmap");
    let report = ok(&["compress", s(&map), "--scenario", &sc, "-o", s(&small)]);
    assert!(!report.is_empty());
    assert!(std::fs::metadata(&small).unwrap().len() < std::fs::metadata(&map).unwrap().len());

    let run = dir.path().join("run");
    let line = ok(&["repeat", s(&small), &sc, "-o", s(&run)]);
    assert!(line.contains("success true"), "{line}");
    for f in [
        "trajectory.csv",
        "matches.csv",
        "attachments.csv",
        "metrics.csv",
        "map.vtrmap",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let table = ok(&["eval", s(&run)]);
    assert!(table.contains("normal"), "{table}");

    ok(&["plot", s(&run)]);
    let svg = std::fs::read_to_string(run.join("trajectories.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn repeat_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("obstacle");
    let teach = dir.path().join("teach");
    ok(&["teach", &sc, "-o", s(&teach)]);
    let map = teach.join("map.vtrmap");
    let runs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            ok(&[
                "repeat",
                s(&map),
                &sc,
                "--single-goal",
                "--seed",
                "4",
                "-o",
                s(&out),
            ]);
            std::fs::read(out.join("trajectory.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn bad_input_fails_cleanly() {
    let out = vtr(&["teach", "/nonexistent/scenario.toml", "-o", "/tmp/unused"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.toml"));

    let out = vtr(&["eval"]);
    assert!(!out.status.success());
}
