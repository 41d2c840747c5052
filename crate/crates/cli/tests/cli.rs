use serde_json::Value;
use std::path::Path;
use std::process::Command;

use spinrotor_cli::manifest::sha256_hex;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spinrotor"))
}

fn example(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    out
}

/// Every file except the manifest itself is listed with a correct hash and size.
fn check_manifest(root: &Path) {
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<String> =
        manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect();
    let mut on_disk = files_under(root);
    on_disk.retain(|p| p != "manifest.json");
    assert_eq!(listed, on_disk);
    for f in manifest["files"].as_array().unwrap() {
        let bytes = std::fs::read(root.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes));
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn run_writes_outputs_and_a_complete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pp");
    let status = bin()
        .args(["run"])
        .arg(example("phase_portrait.json"))
        .arg("--out")
        .arg(&out)
        .args(["--seed", "9"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let files = files_under(&out);
    for name in
        ["phase_portrait_0.csv", "phase_portrait_1.csv", "phase_portrait_2.csv", "resolved-config.json", "summary.json"]
    {
        assert!(files.contains(&name.to_string()), "missing {name}");
    }
    check_manifest(&out);
    // Overrides are echoed in the resolved config.
    let resolved: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["output"]["directory"].as_str().unwrap(), out.to_string_lossy());
    let header = std::fs::read_to_string(out.join("phase_portrait_0.csv")).unwrap();
    assert!(header.starts_with("orbit,t,J1_over_J,J2_over_J,J3_over_J\n"));
}

#[test]
fn pendulum_compare_reports_the_error_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pc");
    let o = bin().arg("run").arg(example("pendulum_compare.json")).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("pendulum_compare.csv")).unwrap();
    assert!(csv.starts_with("t,gamma_full,gamma_pendulum,abs_error\n"));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let m = &summary["metrics"];
    assert!(m["max_abs_error"].as_f64().unwrap() > 0.0);
    assert_eq!(m["trapped_flag"].as_f64(), Some(1.0));
    check_manifest(&out);
}

#[test]
fn validate_prints_the_resolved_config() {
    let o = bin().arg("validate").arg(example("thermal_nanodiamond.json")).output().unwrap();
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["drive"]["j"].as_f64().unwrap() > 0.0);
    assert!(v["thermal_ensemble"]["t_end"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Config error.
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"scenario": "trajectory", "bogus": 1}"#).unwrap();
    assert_eq!(bin().arg("validate").arg(&bad).status().unwrap().code(), Some(2));
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(bin().arg("run").arg(&bad).status().unwrap().code(), Some(2));

    // Integration failure: loose tolerances without renormalization trip the
    // spin norm check.
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(example("resonance_quick.json")).unwrap()).unwrap();
    cfg["resonance_scan"]["settings"] = serde_json::json!({ "rel_tol": 1e-3, "abs_tol": 1e-3, "renormalize": false });
    cfg["resonance_scan"].as_object_mut().unwrap().remove("companion");
    let failing = tmp.path().join("failing.json");
    std::fs::write(&failing, cfg.to_string()).unwrap();
    let o = bin().arg("run").arg(&failing).arg("--out").arg(tmp.path().join("f")).output().unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resonance_scan"));
}

#[test]
fn threads_flag_and_env_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(bin()
        .args(["run", "--threads", "2"])
        .arg(example("thermal_nanodiamond.json"))
        .arg("--out")
        .arg(&a)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .env("SPINROTOR_THREADS", "1")
        .arg("run")
        .arg(example("thermal_nanodiamond.json"))
        .arg("--out")
        .arg(&b)
        .status()
        .unwrap()
        .success());
    assert_eq!(std::fs::read(a.join("ensemble.csv")).unwrap(), std::fs::read(b.join("ensemble.csv")).unwrap());
    assert_eq!(
        bin().args(["run", "--threads", "0"]).arg(example("thermal_nanodiamond.json")).status().unwrap().code(),
        Some(2)
    );
}
