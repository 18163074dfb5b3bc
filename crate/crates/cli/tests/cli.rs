use std::path::Path;
use std::process::{Command, Output};

use shapesim_core::harness::Scenario;
use shapesim_core::{Direction, FlowSpec, MeasuredAt, RateMetric, Sla};

fn shapesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapesim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small() -> Scenario {
    Scenario::new(
        "small",
        200_000,
        vec![
            FlowSpec::saturating("a", Direction::AccelToHost, 4096, 2),
            FlowSpec::saturating("b", Direction::HostToAccel, 512, 1),
        ],
    )
}

fn write_scenario(dir: &Path, s: &Scenario) -> String {
    let p = dir.join(format!("{}.json", s.name));
    std::fs::write(&p, s.to_json()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn list_names_every_builtin() {
    let o = shapesim(&["list"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in shapesim_core::harness::suite::NAMES {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn run_file_writes_csv_pair_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), &small());
    let (o1, o2) = (dir.path().join("one"), dir.path().join("two"));
    for out in [&o1, &o2] {
        let o = shapesim(&["run", "--scenario", &file, "--out", out.to_str().unwrap(), "--seed", "5"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["small.csv", "small.series.csv"] {
        let a = std::fs::read(o1.join(f)).unwrap();
        assert_eq!(a, std::fs::read(o2.join(f)).unwrap(), "{f}");
    }
    let rows = std::fs::read_to_string(o1.join("small.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn run_builtin_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = shapesim(&["run", "--scenario", "obs10_tiny", "--out", out, "--duration-ns", "100000", "--shaping", "off"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for b in [64, 32, 16] {
        assert!(dir.path().join(format!("obs10_tiny/b{b}.csv")).is_file());
    }
}

#[test]
fn seed_range_writes_one_tree_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), &small());
    let out = dir.path().join("out");
    let o = shapesim(&["run", "--scenario", &file, "--out", out.to_str().unwrap(), "--seeds", "3..=5"]);
    assert!(o.status.success());
    for n in 3..=5 {
        assert!(out.join(format!("seed-{n}/small.csv")).is_file());
    }
    assert!(!out.join("seed-6").exists());
}

#[test]
fn plan_prints_admission_report() {
    let mut s = small();
    s.slas = vec![Sla {
        tenant_id: "a".into(),
        metric: RateMetric::Gbps,
        min_rate: 10.0,
        max_rate: None,
        measured_at: MeasuredAt::UserLevel,
    }];
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), &s.with_shaping(true));
    let o = shapesim(&["plan", "--scenario", &file]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("admitted") && text.contains("best-effort"), "{text}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let unknown_key = dir.path().join("unknown.json");
    std::fs::write(&unknown_key, small().to_json().replacen('{', "{\"bogus\": 1,", 1)).unwrap();
    let mut push_shaped = small();
    push_shaped.shaping_enabled = true;
    let push_shaped = write_scenario(dir.path(), &Scenario { name: "push".into(), ..push_shaped });

    for scenario in [unknown_key.to_str().unwrap(), &push_shaped, "no_such_builtin"] {
        let o = shapesim(&["run", "--scenario", scenario, "--out", out]);
        assert_eq!(o.status.code(), Some(2), "{scenario}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = shapesim(&["run", "--scenario", "obs4_qp", "--out", out, "--duration-ns", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_sla_exits_3() {
    let mut s = small();
    s.slas = vec![Sla {
        tenant_id: "a".into(),
        metric: RateMetric::Gbps,
        min_rate: 500.0,
        max_rate: None,
        measured_at: MeasuredAt::UserLevel,
    }];
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), &s.with_shaping(true));
    let out = dir.path().join("out");
    let o = shapesim(&["run", "--scenario", &file, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(shapesim(&["plan", "--scenario", &file]).status.code(), Some(3));
}
