use serde_json::{json, Value};
use std::path::Path;
use std::process::Command;

use spinrotor_cli::error::{exit_code, EXIT_CONFIG, EXIT_PARTIAL};
use spinrotor_cli::manifest::OutputSink;
use spinrotor_cli::sweep::{parse_grid, run_sweep, set_path};

fn example(name: &str) -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn grid_forms() {
    assert_eq!(parse_grid("1,2.5,-3").unwrap(), vec![1.0, 2.5, -3.0]);
    assert_eq!(parse_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    let g = parse_grid("log:1e-3:1e-1:3").unwrap();
    assert_eq!((g[0], g[2]), (1e-3, 1e-1));
    assert!((g[1] - 1e-2).abs() < 1e-16);
    assert_eq!(parse_grid("7").unwrap(), vec![7.0]);
}

#[test]
fn empty_or_malformed_grids_are_config_errors() {
    for bad in ["", "  ", "0:1:0", "log:0:1:3", "1,,2", "a:b:c", "1:2", "log:1:2:3:4", "nan"] {
        let e = parse_grid(bad).expect_err(bad);
        assert_eq!(exit_code(&e), EXIT_CONFIG, "{bad}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let sink = OutputSink::create(tmp.path()).unwrap();
    let e = run_sweep(&example("pendulum_compare.json"), "spin.s_body.1", &[], &sink).err().unwrap();
    assert_eq!(exit_code(&e), EXIT_CONFIG);
}

#[test]
fn dotted_paths_index_objects_and_arrays() {
    let mut v = json!({ "a": { "b": [1.0, 2.0] } });
    set_path(&mut v, "a.b.1", 5.5).unwrap();
    set_path(&mut v, "a.c", 3.0).unwrap();
    assert_eq!(v, json!({ "a": { "b": [1.0, 5.5], "c": 3 } }));
    assert!(set_path(&mut v, "a.b.7", 1.0).is_err());
    assert!(set_path(&mut v, "a.b.x", 1.0).is_err());
    assert!(set_path(&mut v, "a.c.d", 1.0).is_err());
}

/// Spin sweep across the symmetric threshold: each flag flips exactly once,
/// `stabilized_flag` (sinγ ≥ 4/5) at the threshold itself.
#[test]
fn spin_sweep_across_threshold_flips_flags_once() {
    let base = example("pendulum_compare.json");
    // J = 1, I = 1, I3 = 0.8, J3(0) = 1e-2: threshold_sym = 6.25e-5.
    let thr = 2.5 * (1.0 / 0.8 - 1.0) * 1e-4;
    let ratios = [0.02, 0.05, 0.2, 0.5, 0.9, 1.1, 2.0, 5.0];
    let grid: Vec<f64> = ratios.iter().map(|r| r * thr).collect();
    let tmp = tempfile::tempdir().unwrap();
    let sink = OutputSink::create(tmp.path()).unwrap();
    let outcome = run_sweep(&base, "spin.s_body.1", &grid, &sink).unwrap();
    let flags = |key: &str| -> Vec<bool> { outcome.rows.iter().map(|r| r.metrics[key] == 1.0).collect() };
    let transitions = |f: &[bool]| f.windows(2).filter(|w| w[0] != w[1]).count();
    let stabilized = flags("stabilized_flag");
    let trapped = flags("trapped_flag");
    assert_eq!(stabilized, vec![false, false, false, false, false, true, true, true]);
    assert_eq!(transitions(&stabilized), 1);
    assert_eq!(transitions(&trapped), 1);
    assert!(trapped[2] && !trapped[1]);
    for (r, want) in outcome.rows.iter().zip(&ratios) {
        assert!((r.metrics["s2_over_threshold_sym"] - want).abs() < 1e-9);
    }

    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("index,spin.s_body.1,status,"));
    let idx: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(idx, (0..ratios.len()).collect::<Vec<_>>());
    let manifest = std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("point_007/summary.json") && manifest.contains("\"sweep.csv\""));
}

#[test]
fn failed_points_are_recorded_and_the_sweep_continues() {
    let base = example("pendulum_compare.json");
    let tmp = tempfile::tempdir().unwrap();
    let sink = OutputSink::create(tmp.path()).unwrap();
    // A negative horizon is a config error at that point only.
    let e = run_sweep(&base, "pendulum_compare.t_end", &[50.0, -1.0, 60.0], &sink).err().unwrap();
    assert_eq!(exit_code(&e), EXIT_PARTIAL);
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let status: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(status, ["ok", "config_error", "ok"]);
    assert!(tmp.path().join("point_2/summary.json").exists() || tmp.path().join("point_002/summary.json").exists());
}

#[test]
fn sweep_cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/pendulum_compare.json");
    let run = |grid: &str| {
        Command::new(env!("CARGO_BIN_EXE_spinrotor"))
            .arg("sweep")
            .arg(&cfg)
            .args(["--param", "pendulum_compare.t_end", "--grid", grid, "--out"])
            .arg(tmp.path().join(grid.replace([',', ':', '-'], "_")))
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(run("20,30"), Some(0));
    assert_eq!(run("20,-5"), Some(4));
    assert_eq!(run(""), Some(2));
}
