use std::path::Path;
use std::process::{Command, Output};

fn bconf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bconf")).args(args).current_dir(cwd).output().expect("spawn bconf")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn separated_pair_has_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = bconf(&["simulate", "--init", "list:0,1.5", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let events = std::fs::read_to_string(dir.path().join("s/events.csv")).unwrap();
    assert_eq!(events.trim(), "t,i,j,kind");
    let cfg = json(&dir.path().join("s/config.json"));
    assert_eq!(cfg["tool"], "bconf");
    assert_eq!(cfg["config"]["init"], "list:0,1.5");
}

#[test]
fn constant_function_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = bconf(&["continuum", "--init", "const:3", "--out", "c"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("c/fixed_point.json"))["class"], "F");
    assert!(dir.path().join("c/trajectory/manifest.json").exists());
}

#[test]
fn step_data_is_refused_by_the_continuum_solver() {
    let dir = tempfile::tempdir().unwrap();
    let out = bconf(&["continuum", "--init", "step:0,2:1,1", "--out", "c"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bconf simulate"));
}

#[test]
fn probed_stable_pair_does_not_merge() {
    let dir = tempfile::tempdir().unwrap();
    let out = bconf(&["stability", "--clusters", "0:1,2.2:1", "--probe", "--out", "st"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("st/stability.json"));
    assert_eq!(v["probe"]["merged"], false);
    assert_eq!(v["report"]["classifications"][0], "stable");
}

#[test]
fn compare_writes_one_row_per_n() {
    let dir = tempfile::tempdir().unwrap();
    let out = bconf(&["compare", "--init", "linear:0:1", "--ns", "20,40", "--out", "cmp"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("cmp/compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn montecarlo_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |o: &'static str| ["montecarlo", "--density", "uniform:0:3", "--ns", "20,40", "--trials", "4", "--seed", "3", "--out", o];
    assert_eq!(bconf(&args("a"), dir.path()).status.code(), Some(0));
    assert_eq!(bconf(&args("b"), dir.path()).status.code(), Some(0));
    for f in ["montecarlo.csv", "montecarlo.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"init": "list:0,0.5", "out": "from_file"}"#).unwrap();
    let out = bconf(&["simulate", "--config", "c.json", "--out", "from_flag"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("from_flag/config.json").exists());
    assert!(!dir.path().join("from_file").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    assert_eq!(bconf(&["simulate", "--config", "bad.json"], dir.path()).status.code(), Some(1));
    assert_eq!(bconf(&["simulate", "--nope"], dir.path()).status.code(), Some(1));
    assert_eq!(bconf(&["--help"], dir.path()).status.code(), Some(0));
}
