use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

use mmwave_v2i::analytics::p_start;
use mmwave_v2i::coverage::read_coverage_csv;

fn mmv2i(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmv2i"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn checksums(out: &Path) -> BTreeMap<String, Value> {
    let m: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    m["files"].as_object().unwrap().clone().into_iter().collect()
}

fn read_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

/// Groups rows by `key` columns, keeping file order within each group.
fn series(rows: &[BTreeMap<String, String>], key: &[&str], value: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut out: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let k = key.iter().map(|c| r[*c].as_str()).collect::<Vec<_>>().join("/");
        let point = (num(r, "rho_per_km"), num(r, value));
        match out.iter_mut().find(|(name, _)| *name == k) {
            Some((_, v)) => v.push(point),
            None => out.push((k, vec![point])),
        }
    }
    out
}

fn is_unimodal(ys: &[f64]) -> bool {
    let peak = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    ys[..=peak].windows(2).all(|w| w[1] >= w[0]) && ys[peak..].windows(2).all(|w| w[1] <= w[0])
}

const FAST: &str = r#"{"rate_samples": 200}"#;

/// Figure-grid coverage at the minimum trial count, shared by the preset tests.
fn figure_coverage() -> &'static (TempDir, PathBuf) {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("cov");
        let o = mmv2i(&["coverage", "--preset", "fig1", "--trials", "100", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = out.join("coverage.csv");
        (dir, csv)
    })
}

fn preset_connectivity(preset: &str) -> PathBuf {
    let (dir, coverage) = figure_coverage();
    let out = dir.path().join(preset);
    let config = write_config(dir.path(), FAST);
    let o = mmv2i(&[
        "connectivity",
        "--preset",
        preset,
        "--config",
        config.to_str().unwrap(),
        "--coverage",
        coverage.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn default_coverage_is_twenty_rows_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = mmv2i(&["coverage", "--trials", "100", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let rows = read_rows(&a.join("coverage.csv"));
    assert_eq!(rows.len(), 20);
    assert_eq!(fs::read(a.join("coverage.csv")).unwrap(), fs::read(b.join("coverage.csv")).unwrap());
    assert_eq!(checksums(&a), checksums(&b));
}

#[test]
fn unwritable_output_exits_2_with_path() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let out = blocker.join("out");
    let o = mmv2i(&["validate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(out.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_1_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), r#"{"rho_per_km": -3, "slot_s": 0}"#);
    let o = mmv2i(&["coverage", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("rho_per_km") && err.contains("slot_s"), "{err}");

    let config = write_config(dir.path(), r#"{"rho_per_km": 20, "typo": 1}"#);
    let o = mmv2i(&["coverage", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("typo"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(mmv2i(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mmv2i(&["coverage", "--preset", "fig9"]).status.code(), Some(1));
    assert_eq!(mmv2i(&["coverage", "--preset", "fig5"]).status.code(), Some(1));
    assert_eq!(mmv2i(&["coverage", "--jobs", "0"]).status.code(), Some(1));
    assert_eq!(mmv2i(&["--help"]).status.code(), Some(0));
}

#[test]
fn density_mismatch_names_missing_densities() {
    let dir = TempDir::new().unwrap();
    let cov = dir.path().join("cov");
    let config = write_config(dir.path(), r#"{"densities_per_km": [10, 20], "rate_samples": 200}"#);
    let o = mmv2i(&["coverage", "--trials", "100", "--config", config.to_str().unwrap(), "--out", cov.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let config = write_config(dir.path(), r#"{"densities_per_km": [10, 30], "rate_samples": 200}"#);
    let csv = cov.join("coverage.csv");
    let out = dir.path().join("conn");
    let o = mmv2i(&[
        "connectivity",
        "--config",
        config.to_str().unwrap(),
        "--coverage",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("rho = 30"), "{err}");
    assert!(!err.contains("rho = 10 "), "{err}");

    let config = write_config(dir.path(), r#"{"densities_per_km": [10, 20], "rate_samples": 200}"#);
    let o = mmv2i(&[
        "throughput",
        "--config",
        config.to_str().unwrap(),
        "--coverage",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("throughput.csv").exists());
}

#[test]
fn injected_fault_fails_validation() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#"{"slots": 10000}"#);
    let failing = |fault: bool| {
        let out = dir.path().join(if fault { "bad" } else { "good" });
        let mut args = vec!["validate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if fault {
            args.push("--inject-fault");
        }
        let o = mmv2i(&args);
        let rows = read_rows(&out.join("validation.csv"));
        let failed = rows
            .iter()
            .filter(|r| r["metric"] == "p_start" && r["gating"] == "true" && num(r, "z_score").abs() > 3.0)
            .count();
        (o, failed)
    };
    let (clean, clean_failed) = failing(false);
    let (faulty, faulty_failed) = failing(true);
    assert_eq!(clean_failed, 0);
    assert_eq!(faulty.status.code(), Some(3));
    // Short runs leave the sparse, slow points too noisy to resolve a 10% bias.
    assert!(faulty_failed >= 30, "{faulty_failed} of 45 P_start rows fail");
    assert!(stderr(&faulty).contains("p_start"));
    assert!(matches!(clean.status.code(), Some(0) | Some(3)));
}

#[test]
fn fig3_p_start_is_monotone_within_coverage_uncertainty() {
    let out = preset_connectivity("fig3");
    let (_, coverage) = figure_coverage();
    let cells = read_coverage_csv(fs::File::open(coverage).unwrap()).unwrap();
    let ci = |rho: f64, bs: usize, veh: usize| {
        cells
            .iter()
            .find(|c| c.rho_per_km == rho && c.bs_rows * c.bs_cols == bs && c.veh_rows * c.veh_cols == veh)
            .map(|c| (c.r_comm_m, c.ci95_m))
            .unwrap()
    };
    let rows = read_rows(&out.join("connectivity_mimo.csv"));
    for (name, points) in series(&rows, &["bs_elems", "veh_elems"], "p_start") {
        let (bs, veh) = name.split_once('/').unwrap();
        let (bs, veh): (usize, usize) = (bs.parse().unwrap(), veh.parse().unwrap());
        for w in points.windows(2) {
            if w[1].1 >= w[0].1 {
                continue;
            }
            // A dip must be explained by the radius confidence intervals.
            let (r0, c0) = ci(w[0].0, bs, veh);
            let (r1, c1) = ci(w[1].0, bs, veh);
            let low = p_start(w[0].0 / 1000.0, r0 - c0);
            let high = p_start(w[1].0 / 1000.0, r1 + c1);
            assert!(high >= low, "{name}: P_start drops from {:?} to {:?}", w[0], w[1]);
        }
    }
}

#[test]
fn fig5_p_nl_is_unimodal() {
    let out = preset_connectivity("fig5");
    for (file, key) in [
        ("connectivity_mimo.csv", ["bs_elems", "veh_elems"].as_slice()),
        ("connectivity_speed.csv", ["speed_kmh"].as_slice()),
        ("connectivity_slot.csv", ["slot_s"].as_slice()),
    ] {
        let rows = read_rows(&out.join(file));
        for (name, points) in series(&rows, key, "p_nl") {
            let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
            assert!(is_unimodal(&ys), "{file} {name}: {ys:?}");
        }
    }
}

#[test]
fn fig6_duration_ratio_is_bounded() {
    let out = preset_connectivity("fig6");
    for file in ["connectivity_mimo.csv", "connectivity_speed.csv", "connectivity_slot.csv"] {
        for r in read_rows(&out.join(file)) {
            let ratio = num(&r, "duration_ratio");
            assert!((0.0..=1.0).contains(&ratio), "{file}: {ratio}");
        }
    }
}
