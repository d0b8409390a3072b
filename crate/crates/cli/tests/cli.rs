use std::process::{Command, Output};

use delayfb_cli::scenario::{Choice, Scenario, BUILTIN};

fn delayfb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delayfb")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn kv_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing in\n{text}"))
        .parse()
        .unwrap()
}

#[test]
fn certify_reference_scenario() {
    let o = delayfb(&["certify", "--scenario", "example31"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let h = kv_value(&text, "h_star");
    assert!((3.9e-4..=4.2e-4).contains(&h), "{h}");
    assert!(text.contains("valid = true"));
    assert!(kv_value(&text, "residual2") > 0.0);
}

#[test]
fn certify_fails_above_bound() {
    let o = delayfb(&["certify", "--scenario", "example31", "--h", "0.1", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().starts_with("scenario,n,k,"));
}

#[test]
fn simulate_reference_decays() {
    let o = delayfb(&["simulate", "--scenario", "example31", "--h", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,x3,u,y"));
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - 10.0).abs() < 1e-9);
    let norm = last[1..4].iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-2, "{norm}");
}

#[test]
fn simulate_cascade_has_z_column() {
    let o = delayfb(&["simulate", "--scenario", "example32", "--tend", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("t,x1,x2,x3,z1,u,y\n"));
}

#[test]
fn maxstep_reference() {
    let o = delayfb(&["maxstep", "--scenario", "example31"]);
    assert_eq!(o.status.code(), Some(0));
    let h = kv_value(&stdout(&o), "max_step");
    assert!((0.19..=0.23).contains(&h), "{h}");
}

#[test]
fn maxstep_bad_bracket_is_usage_error() {
    let o = delayfb(&["maxstep", "--scenario", "example31", "--lo", "0.01", "--hi", "0.05"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(delayfb(&["simulate", "--scenario", "/no/such/scenario.toml"]).status.code(), Some(2));
    assert_eq!(delayfb(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(delayfb(&["simulate"]).status.code(), Some(2));
    assert_eq!(delayfb(&["simulate", "--scenario", "example31", "--h", "2"]).status.code(), Some(2));
    assert_eq!(
        delayfb(&["sweep", "--scenario", "example31", "--param", "k9", "--from", "0", "--to", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(delayfb(&["--help"]).status.code(), Some(0));
}

#[test]
fn round_trip_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    for name in BUILTIN {
        let s = Scenario::load(name).unwrap();
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, s.to_toml().unwrap()).unwrap();
        let reparsed = Scenario::load(path.to_str().unwrap()).unwrap();
        assert_eq!(reparsed, s);
        let a = delayfb(&["simulate", "--scenario", name, "--tend", "3"]);
        let b = delayfb(&["simulate", "--scenario", path.to_str().unwrap(), "--tend", "3"]);
        assert_eq!(a.status.code(), Some(0));
        assert!(a.stdout == b.stdout, "{name}: CSV differs after round trip");
    }
}

#[test]
fn divergence_exits_one_with_time() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::load("example31").unwrap();
    s.design.h = Choice::Value(0.5);
    s.simulation.blowup = Some(1e3);
    let path = dir.path().join("unstable.toml");
    std::fs::write(&path, s.to_toml().unwrap()).unwrap();
    let o = delayfb(&["simulate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged at t ="));
}

#[test]
fn sweep_rows_are_ordered_and_repeatable() {
    let args = ["sweep", "--scenario", "example31", "--from", "0.05", "--to", "0.35", "--points", "7", "--tend", "20"];
    let a = delayfb(&args);
    assert_eq!(a.status.code(), Some(0));
    let text = stdout(&a);
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 7);
    assert!(values.windows(2).all(|w| w[1] > w[0]));
    assert!(text.lines().nth(2).unwrap().contains(",decayed,"));
    assert_eq!(delayfb(&args).stdout, a.stdout);
}

#[test]
fn sweep_over_gain_component() {
    let o = delayfb(&[
        "sweep",
        "--scenario",
        "example31",
        "--param",
        "k1",
        "--from",
        "-4",
        "--to",
        "-2",
        "--points",
        "3",
        "--tend",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("k1,status,"));
}

#[test]
fn verify_reference_checks() {
    let o = delayfb(&["verify", "--scenario", "example31", "--check", "estimator", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("check.estimator = pass"));
    let o = delayfb(&["verify", "--scenario", "example31", "--check", "state-feedback"]);
    assert_eq!(o.status.code(), Some(0));
    // the cascade constants overflow, so no certified scaling exists
    let o = delayfb(&["verify", "--scenario", "example32"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("check.envelope = fail"));
}

#[test]
fn gnuplot_script_written() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let gp = dir.path().join("x.gp");
    let o = delayfb(&[
        "simulate",
        "--scenario",
        "example31-forced",
        "--tend",
        "1",
        "--out",
        csv.to_str().unwrap(),
        "--gnuplot",
        gp.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let script = std::fs::read_to_string(gp).unwrap();
    assert!(script.contains("using 1:4"));
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("t,x1,x2,x3,u,y"));
}
