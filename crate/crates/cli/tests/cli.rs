use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cdma_otfs::crb::{crb_range, crb_velocity, CrbInputs};
use cdma_otfs::frame::GridConfig;
use tempfile::tempdir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdma-otfs"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL_BER: &[&str] = &["M=8", "N=8", "max_bits=4e3", "ebno=0,10"];

fn ber_into(dir: &Path) -> Output {
    let mut args = vec!["ber", "--workers", "1", "--out", dir.to_str().unwrap(), "--override"];
    args.extend_from_slice(SMALL_BER);
    run(&args)
}

fn csv_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn ber_writes_one_csv_per_family_and_baseline() {
    let tmp = tempdir().unwrap();
    let out = ber_into(tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        csv_names(tmp.path()),
        [
            "ber_dl_gold_full.csv",
            "ber_dl_had_full.csv",
            "ber_dl_zc_full.csv",
            "ber_otfs_baseline_gold.csv",
            "ber_otfs_baseline_had.csv",
            "ber_otfs_baseline_zc.csv",
        ]
    );
    for name in csv_names(tmp.path()) {
        let sidecar = tmp.path().join(format!("{name}.meta.json"));
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
        assert!(meta.get("run_config").is_some());
        let body = fs::read_to_string(tmp.path().join(&name)).unwrap();
        assert_eq!(body.lines().next().unwrap(), "ebno_db,ber,bits,errors,frames,seconds");
        assert_eq!(body.lines().count(), 3);
    }
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    assert!(ber_into(a.path()).status.success());
    let mut args = vec!["ber", "--workers", "3", "--out", b.path().to_str().unwrap(), "--override"];
    args.extend_from_slice(SMALL_BER);
    assert!(run(&args).status.success());
    for name in csv_names(a.path()) {
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn unknown_scheme_is_a_config_error() {
    let tmp = tempdir().unwrap();
    let out = run(&["ber", "--out", tmp.path().to_str().unwrap(), "--override", "scheme=spiral"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("scheme") && stderr.contains("spiral"), "{stderr}");
    assert!(csv_names(tmp.path()).is_empty());
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempdir().unwrap();
    let out = run(&["rmse", "--out", tmp.path().to_str().unwrap(), "--override", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_output_directory_is_created() {
    let tmp = tempdir().unwrap();
    let nested = tmp.path().join("a").join("b");
    let out = run(&[
        "rmse",
        "--workers",
        "1",
        "--out",
        nested.to_str().unwrap(),
        "--override",
        "M=16",
        "N=16",
        "frames=2",
        "ebno=0",
        "families=zc",
        "baseline=false",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_names(&nested), ["rmse_dl_zc_full.csv"]);
    let body = fs::read_to_string(nested.join("rmse_dl_zc_full.csv")).unwrap();
    assert!(body.starts_with("ebno_db,rmse_range_m,rmse_velocity_mps,crb_range_m,crb_velocity_mps"));
}

#[test]
fn crb_table_matches_library() {
    let out = run(&["crb", "--preset", "table4", "--override", "ebno=-10,0", "families=zc"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.contains('[')).collect();
    assert_eq!(rows.len(), 2);

    // Independent: full delay spreading fills every sample with unit average power,
    // and a unit-RCS target at 500 m has gain2 = c^2 / ((4 pi)^3 R^4 fc^2),
    // scaled by the LOS share kappa / (kappa + 1) at kappa = 10 dB.
    let grid = GridConfig::new(64, 64, 120e3, 40e9).unwrap();
    let c = 299_792_458.0f64;
    let gain2 = c * c / ((4.0 * std::f64::consts::PI).powi(3) * 500f64.powi(4) * 40e9f64.powi(2)) * 10.0 / 11.0;
    for (row, ebno) in rows.iter().zip([-10.0f64, 0.0]) {
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        let n0 = gain2 / (2.0 * 10f64.powf(ebno / 10.0));
        let inputs = CrbInputs { n0, p_avg: 1.0, gain2, grid };
        assert!((fields[1] / crb_range(&inputs).unwrap() - 1.0).abs() < 1e-9);
        assert!((fields[2] / crb_velocity(&inputs).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn dump_seq_writes_requested_columns() {
    let tmp = tempdir().unwrap();
    let out = run(&["dump-seq", "--family", "had", "--length", "8", "--n-mult", "3", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let body = fs::read_to_string(tmp.path().join("seq_had_8_3.csv")).unwrap();
    assert_eq!(body.lines().count(), 9);
    assert_eq!(body.lines().next().unwrap().split(',').count(), 3);
}

#[test]
fn dump_seq_over_capacity_fails() {
    let tmp = tempdir().unwrap();
    let out = run(&["dump-seq", "--family", "had", "--length", "8", "--n-mult", "9", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dump_imaging_writes_surface() {
    let tmp = tempdir().unwrap();
    let out = run(&[
        "dump-imaging",
        "--preset",
        "table4",
        "--out",
        tmp.path().to_str().unwrap(),
        "--override",
        "M=16",
        "N=16",
        "families=zc",
        "ebno=0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = csv_names(tmp.path());
    assert_eq!(csv.len(), 1);
    let body = fs::read_to_string(tmp.path().join(&csv[0])).unwrap();
    assert_eq!(body.lines().count(), 16);
    assert!(body.lines().all(|l| l.split(',').count() == 16));
}
