use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const UNIFORM: &str = "[distribution]\nkind = \"uniform\"\nlo = 1.0\nhi = 2.0\n";

fn run(cmd: &str, config: &str, dir: &Path) -> Output {
    let cfg = dir.join(format!("{cmd}.toml"));
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_screenlab"))
        .args([cmd, "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn solve_writes_report_and_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("solve", &format!("N = 2\nalpha = 2.0\n{UNIFORM}"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rep = json(dir.path(), "solve_report.json");
    assert_eq!(rep["regime"], "consecutive_menu");
    assert!((rep["V_star"].as_f64().unwrap() - 0.598076211353316).abs() < 1e-12);
    let mech = json(dir.path(), "mechanism.json");
    assert_eq!(mech["N"], 2);
}

#[test]
fn refusal_and_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let low = run("solve", &format!("N = 2\nalpha = 1.0\n{UNIFORM}"), dir.path());
    assert_eq!(low.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&low.stderr).contains("refused"));
    let missing = run("solve", &format!("alpha = 2.0\n{UNIFORM}"), dir.path());
    assert_eq!(missing.status.code(), Some(64));
    let unknown = run("solve", &format!("N = 2\nalpha = 2.0\ncolour = 1\n{UNIFORM}"), dir.path());
    assert_eq!(unknown.status.code(), Some(64));
    let big = run("oracle", &format!("N = 4\nalpha = 2.0\n{UNIFORM}"), dir.path());
    assert_eq!(big.status.code(), Some(2));
    let no_args = Command::new(env!("CARGO_BIN_EXE_screenlab")).output().unwrap();
    assert_eq!(no_args.status.code(), Some(64));
}

#[test]
fn alpha_hat_prints_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("alpha-hat", &format!("N = 2\n{UNIFORM}"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    let a: f64 = text.trim().parse().unwrap();
    assert!((a - 2.25).abs() < 1e-7);
    let j = json(dir.path(), "alpha_hat.json");
    assert_eq!(j["alpha_hat"].as_f64().unwrap(), a);
}

#[test]
fn sweep_csv_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("N = 2\n{UNIFORM}[alpha_grid]\nstart = 2.0\nstop = 6.0\npoints = 9\n");
    assert_eq!(run("sweep", &cfg, dir.path()).status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha,regime,V_star,V_aw,c1,c2,expected_work"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].starts_with("2,consecutive_menu,"));
    assert!(rows[8].starts_with("6,always_working,"));
}

#[test]
fn check_reports_density_bound_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("check", &format!("N = 3\nalpha = 2.0\n{UNIFORM}[sim]\ndeviation_nodes = 50\n"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rep = json(dir.path(), "check_report.json");
    assert_eq!(rep["assumption2"]["a2_density_bound"], true);
    assert_eq!(rep["passed"], true);
    let four = run("check", &format!("N = 4\n{UNIFORM}"), dir.path());
    assert_eq!(four.status.code(), Some(0));
    assert_eq!(json(dir.path(), "check_report.json")["assumption2"]["a2_density_bound"], false);
}

#[test]
fn improve_and_simulate_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("N = 2\nalpha = 2.0\n{UNIFORM}[sim]\nn_paths = 20000\nseed = 3\ndump_paths = true\n");
    assert_eq!(run("simulate", &cfg, dir.path()).status.code(), Some(0));
    let sim = json(dir.path(), "sim_result.json");
    assert!(sim["max_ic_violation"].as_f64().unwrap() <= 1e-9);
    let paths = fs::read_to_string(dir.path().join("out/paths.csv")).unwrap();
    assert_eq!(paths.lines().count(), 20001);
    assert_eq!(run("improve", &cfg, dir.path()).status.code(), Some(0));
    let imp = json(dir.path(), "improvement.json");
    for key in ["epsilon", "x_sb", "delta", "slack_min", "base_V", "stochastic_V"] {
        assert!(imp[key].is_number(), "{key}");
    }
    assert!(imp["delta"].as_f64().unwrap() > 0.0);
    let aw = run("improve", &format!("N = 2\nalpha = 6.0\n{UNIFORM}"), dir.path());
    assert_eq!(aw.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("N = 3\nalpha = 2.2\n{UNIFORM}[sim]\nn_paths = 5000\nseed = 42\n");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for cmd in ["solve", "simulate"] {
            assert_eq!(run(cmd, &cfg, dir.path()).status.code(), Some(0));
        }
        let read = |n: &str| fs::read(dir.path().join("out").join(n)).unwrap();
        snapshots.push((read("solve_report.json"), read("mechanism.json"), read("sim_result.json")));
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn thread_override_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("N = 2\nalpha = 2.0\n{UNIFORM}[sim]\nn_paths = 8000\nseed = 1\n");
    let cfg_path = dir.path().join("sim.toml");
    fs::write(&cfg_path, &cfg).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let st = Command::new(env!("CARGO_BIN_EXE_screenlab"))
            .args(["simulate", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out_dir)
            .env("SCREENLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(st.status.success());
        outputs.push(fs::read(out_dir.join("sim_result.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let bad = Command::new(env!("CARGO_BIN_EXE_screenlab"))
        .args(["solve", "--config"])
        .arg(&cfg_path)
        .env("SCREENLAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(64));
}
