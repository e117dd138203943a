use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use opgame::output::RunManifest;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn opgame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opgame"))
        .args(args)
        .env_remove(opgame::OUT_ENV)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

struct Row {
    t: f64,
    agent: usize,
    issue: usize,
    kind: String,
    value: f64,
}

fn read_trajectory(path: &Path) -> Vec<Row> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["stage", "t", "agent", "issue", "kind", "value"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            Row {
                t: rec[1].parse().unwrap(),
                agent: rec[2].parse().unwrap(),
                issue: rec[3].parse().unwrap(),
                kind: rec[4].to_string(),
                value: rec[5].parse().unwrap(),
            }
        })
        .collect()
}

fn manifest(dir: &Path) -> RunManifest {
    toml::from_str(&fs::read_to_string(dir.join("manifest.toml")).unwrap()).unwrap()
}

#[test]
fn check_exit_codes() {
    let ok = opgame(&["check", config("example1.toml").to_str().unwrap()]);
    assert_eq!(code(&ok), 0, "{}", text(&ok.stderr));
    assert!(text(&ok.stdout).contains("unique_equilibrium"));

    let none = opgame(&["check", config("example2.toml").to_str().unwrap()]);
    assert_eq!(code(&none), 2);
    let out = text(&none.stdout);
    assert!(out.contains("none_at_T"));
    assert!(out.contains("r = 0.428968") && out.contains("r^2 = 0.184014"), "{out}");
    assert!(out.contains("-0.184014"));

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&opgame(&["check", empty.to_str().unwrap()])), 1);

    let broken = dir.path().join("broken.toml");
    fs::write(&broken, "horizon = 1.0\n[[agent]]\nbias = [0.1, oops]\n").unwrap();
    let o = opgame(&["check", broken.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("line 3"), "{}", text(&o.stderr));

    assert_eq!(code(&opgame(&["check", "/nonexistent/game.toml"])), 1);
    assert_eq!(code(&opgame(&["check"])), 1);
    assert_eq!(code(&opgame(&["--help"])), 0);
}

#[test]
fn critical_tolerance_flag_widens_the_window() {
    // 3.66 is 5e-4 below the critical horizon 3.6618
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("near.toml");
    let body = fs::read_to_string(config("example2.toml")).unwrap().replace("horizon = 3.6619", "horizon = 3.66");
    fs::write(&cfg, body).unwrap();
    assert_eq!(code(&opgame(&["check", cfg.to_str().unwrap()])), 0);
    assert_eq!(code(&opgame(&["check", cfg.to_str().unwrap(), "--tol-critical", "1e-3"])), 2);
}

#[test]
fn solve_writes_counted_rows_and_exact_biases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = opgame(&["solve", config("example1.toml").to_str().unwrap(), "--grid", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let rows = read_trajectory(&out.join("trajectory.csv"));
    // 3 times x 2 agents x 2 issues x 2 kinds
    assert_eq!(rows.len(), 3 * 2 * 2 * 2);
    let biases = [[0.3, 0.3], [0.5, -0.5]];
    for r in rows.iter().filter(|r| r.t == 0.0 && r.kind == "x") {
        assert_eq!(r.value, biases[r.agent - 1][r.issue - 1]);
    }
    let raw = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(raw.lines().nth(1).unwrap().starts_with("0,0,1,1,x,0.3"));
    assert!(!raw.contains('\r'));
    let m = manifest(&out);
    assert_eq!(m.command, "solve");
    assert_eq!(m.files.len(), 1);
    assert_eq!(m.files[0].rows, 24);
    assert_eq!(m.config_digest.len(), 64);
}

#[test]
fn awkward_biases_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = [0.1 + 0.2, 1.0 / 3.0, -2.0f64.sqrt(), 1e-17];
    let cfg = dir.path().join("g.toml");
    let body = format!(
        "horizon = 1.5\n[[agent]]\nbias = [{:?}, {:?}]\nstubbornness = [[1.0, 0.0], [0.0, 1.0]]\n\
         [[agent]]\nbias = [{:?}, {:?}]\nstubbornness = [[2.0, 0.1], [0.1, 1.0]]\n\
         [[influence]]\nlistener = 1\ntarget = 2\nweight = [[0.5, 0.2], [0.2, 0.5]]\n",
        b[0], b[1], b[2], b[3]
    );
    fs::write(&cfg, body).unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&opgame(&["solve", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let rows = read_trajectory(&out.join("trajectory.csv"));
    for r in rows.iter().filter(|r| r.t == 0.0 && r.kind == "x") {
        assert_eq!(r.value.to_bits(), b[(r.agent - 1) * 2 + r.issue - 1].to_bits());
    }
}

#[test]
fn solve_reports_missing_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = opgame(&["solve", config("example2.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("3.6618"), "{}", text(&o.stderr));
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn uniform_dyad_distance_peak_on_the_grid() {
    // long-horizon peak of the issue-1 distance: ln(9/5)/√3 ≈ 0.3394
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = opgame(&["solve", config("example3.toml").to_str().unwrap(), "--grid", "501", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let rows = read_trajectory(&out.join("trajectory.csv"));
    let x = |agent: usize| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| r.agent == agent && r.issue == 1 && r.kind == "x")
            .map(|r| (r.t, r.value))
            .collect()
    };
    let (a, b) = (x(1), x(2));
    let (t_best, _) = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p.0, (p.1 - q.1).abs()))
        .fold((0.0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    assert!((t_best - 0.34).abs() < 1e-9, "{t_best}");
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_opgame"))
        .args(["solve", config("example2-oscillating.toml").to_str().unwrap(), "--grid", "5"])
        .env(opgame::OUT_ENV, &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(read_trajectory(&out.join("trajectory.csv")).len(), 5 * 2 * 2 * 2);
}

#[test]
fn profile_weights_config_solves() {
    let o = opgame(&["check", config("profile-triad.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("3 agents, 2 issues"));
}

#[test]
fn scenario_files_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, stages) in [("parties", 5), ("heterogeneous-a", 10)] {
        let out = dir.path().join(preset);
        let o = opgame(&["scenario", "--preset", preset, "--seed", "4", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        let files: Vec<_> = fs::read_dir(out.join("seed-4")).unwrap().collect();
        assert_eq!(files.len(), stages);
        let m = manifest(&out);
        assert_eq!(m.seeds, vec![4]);
        assert_eq!(m.files.len(), stages + 1);
        for f in &m.files {
            let lines = fs::read_to_string(out.join(&f.path)).unwrap().lines().count();
            assert_eq!(lines, f.rows + 1, "{}", f.path);
        }
        let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["seed", "stage", "group", "issue", "mean", "spread"]);
        let stage_col: Vec<usize> = r.records().map(|x| x.unwrap()[1].parse().unwrap()).collect();
        assert_eq!(*stage_col.iter().max().unwrap(), stages);
    }
}

#[test]
fn scenario_config_and_seed_fan_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tc");
    let o = opgame(&[
        "scenario",
        config("two-camps.toml").to_str().unwrap(),
        "--seeds",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m.seeds, vec![11, 12, 13]);
    // the config's top-level `stages = 4` overrides the table
    assert_eq!(m.files.len(), 3 * 4 + 1);
    assert!(out.join("seed-13/stage-4.csv").exists());
}

#[test]
fn scenario_rejects_unknown_presets() {
    let o = opgame(&["scenario", "--preset", "nope"]);
    assert_eq!(code(&o), 1);
    let err = text(&o.stderr);
    for name in opgame_core::multistage::PRESET_NAMES {
        assert!(err.contains(name), "{err}");
    }
    assert_eq!(code(&opgame(&["scenario"])), 1);
}

#[test]
fn scenario_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = opgame(&["scenario", "--preset", "heterogeneous-b", "--seed", "9", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in manifest(&a).files {
        assert_eq!(fs::read(a.join(&f.path)).unwrap(), fs::read(b.join(&f.path)).unwrap(), "{}", f.path);
    }
}
