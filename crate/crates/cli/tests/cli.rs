use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn cesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cesim"))
        .args(args)
        .output()
        .expect("spawn cesim")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cesim-cli-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn gen(construction: &str, seed: &str, horizon: &str, name: &str) -> PathBuf {
    let path = scratch(name);
    let o = cesim(&[
        "gen",
        "-c",
        construction,
        "--seed",
        seed,
        "--horizon",
        horizon,
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn gen_is_seeded() {
    let a = cesim(&["gen", "-c", "pinball", "--seed", "7", "--horizon", "60"]);
    let b = cesim(&["gen", "-c", "pinball", "--seed", "7", "--horizon", "60"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("construction pinball\nhorizon 60\n"));
}

#[test]
fn check_passes_on_generated_scenarios() {
    for c in ["pinball", "tree15", "osp2", "markers"] {
        let sc = gen(c, "3", "80", &format!("{c}.sc"));
        let o = cesim(&["check", "-s", sc.to_str().unwrap()]);
        assert!(
            o.status.success(),
            "{c}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        assert_eq!(report["passed"], true);
    }
}

#[test]
fn check_filters_and_rejects_unknown_names() {
    let sc = gen("pinball", "1", "50", "filter.sc");
    let o = cesim(&[
        "check",
        "-s",
        sc.to_str().unwrap(),
        "--checks",
        "pinball/restraint",
    ]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.lines().all(|l| l.contains("pinball/restraint")),
        "{err}"
    );
    let o = cesim(&[
        "check",
        "-s",
        sc.to_str().unwrap(),
        "--checks",
        "nothing/here",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diff_reports_prefix_and_identity() {
    let sc = gen("markers", "2", "60", "diff.sc");
    let (long, short) = (scratch("long.trace"), scratch("short.trace"));
    let s = sc.to_str().unwrap();
    assert!(cesim(&["run", "-s", s, "-t", long.to_str().unwrap()])
        .status
        .success());
    assert!(cesim(&[
        "run",
        "-s",
        s,
        "--horizon",
        "30",
        "-t",
        short.to_str().unwrap()
    ])
    .status
    .success());
    let same = cesim(&["diff", long.to_str().unwrap(), long.to_str().unwrap()]);
    assert_eq!(same.status.code(), Some(0));
    assert_eq!(stdout(&same).trim(), "identical");
    let pre = cesim(&["diff", long.to_str().unwrap(), short.to_str().unwrap()]);
    assert_eq!(pre.status.code(), Some(1));
    assert!(stdout(&pre).starts_with("prefix: left"), "{}", stdout(&pre));
}

#[test]
fn census_prints_tables() {
    let sc = gen("pinball", "4", "120", "census.sc");
    let o = cesim(&["census", "-s", sc.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(!stdout(&o).is_empty());
}

#[test]
fn bad_scenario_is_an_error() {
    let path = scratch("bad.sc");
    fs::write(&path, "construction pinball\n").unwrap();
    let o = cesim(&["run", "-s", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}
