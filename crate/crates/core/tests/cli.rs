use std::path::Path;
use std::process::{Command, Output};

fn osa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osa")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn roc_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = osa(&["roc", "--points", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eta,epsilon,delta");
    assert_eq!(lines.len(), 6);
    let rows: Vec<Vec<f64>> = lines[1..].iter().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0]);
        assert!(w[1][1] < w[0][1]);
        assert!(w[1][2] > w[0][2]);
    }

    let o = osa(&["roc", "--points", "3", "--trials", "2000", "--out", "roc"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("roc/roc.csv")).unwrap();
    assert!(csv.starts_with("eta,epsilon,delta,mc_epsilon,mc_delta,trials\n"));
    assert!(csv.lines().nth(1).unwrap().ends_with(",2000"));
}

#[test]
fn experiment_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = osa(&["experiment", "fig5", "--seed", "7", "--trials", "64", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("separation-exact")).count(), 15);
    }
    for file in ["summary.csv", "collisions.csv", "slots.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn simulate_writes_to_the_default_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(
        &config,
        "[model]\nalpha = [0.2, 0.4]\nbeta = [0.8, 0.6]\n[detector]\nsignal_db = 5.0\nsamples = 4\n\
         [strategy]\nkind = \"separation-myopic\"\nzeta = 0.05\n[run]\nhorizon = 3\ntrials = 100\n",
    )
    .unwrap();
    let o = osa(&["simulate", "--config", "small.toml"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("osa-out/simulate/summary.csv").exists());
}

#[test]
fn solve_dumps_a_policy() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(
        &config,
        "[model]\nalpha = [0.2, 0.4, 0.6]\nbeta = [0.8, 0.6, 0.4]\n[detector]\nsignal_db = 5.0\nsamples = 10\n\
         [strategy]\nkind = \"separation-exact\"\nzeta = 0.05\n[run]\nhorizon = 3\ntrials = 1\n",
    )
    .unwrap();
    let o = osa(&["solve", "--config", "small.toml", "--out", "p"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("V1/T = "));
    assert!(!std::fs::read_to_string(dir.path().join("p/policy.txt")).unwrap().is_empty());
}

#[test]
fn oracle_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = osa(&["oracle", "--instances", "20", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("PASS 20 instances"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(osa(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(osa(&["no-such-command"], dir.path()).status.code(), Some(1));
    assert_eq!(osa(&["oracle", "--max-n", "9"], dir.path()).status.code(), Some(1));
    assert_eq!(osa(&["simulate", "--config", "missing.toml"], dir.path()).status.code(), Some(1));

    let write = |name: &str, alpha: f64, beta: f64, zeta: f64| {
        std::fs::write(
            dir.path().join(name),
            format!(
                "[model]\nalpha = [{alpha}]\nbeta = [{beta}]\n[detector]\nsignal_db = 5.0\nsamples = 4\n\
                 [strategy]\nkind = \"separation-myopic\"\nzeta = {zeta}\n[run]\nhorizon = 3\ntrials = 10\n"
            ),
        )
        .unwrap();
    };
    write("bad.toml", 0.5, 0.5, 1.5);
    assert_eq!(osa(&["simulate", "--config", "bad.toml"], dir.path()).status.code(), Some(1));
    // a channel that alternates deterministically has no stationary start
    write("periodic.toml", 1.0, 0.0, 0.05);
    let o = osa(&["simulate", "--config", "periodic.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
