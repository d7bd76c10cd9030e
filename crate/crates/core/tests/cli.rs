use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bventropy"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn sample(dir: &Path) {
    fs::write(
        dir.join("f.txt"),
        "1,5\n0,0.1\n0.2,0.7\n0.45,-0.2\n0.7,0.35\n0.9,0\n",
    )
    .unwrap();
}

fn csv_field(text: &str, column: &str) -> String {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == column).unwrap();
    row[k].to_string()
}

#[test]
fn encode_then_decode_stays_within_epsilon() {
    let tmp = TempDir::new().unwrap();
    sample(tmp.path());
    for gauge in ["id", "pow:2"] {
        let out = bin(
            tmp.path(),
            &[
                "--out",
                "enc",
                "encode",
                "--input",
                "f.txt",
                "--epsilon",
                "0.05",
                "--gauge",
                gauge,
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let out = bin(
            tmp.path(),
            &[
                "--out",
                "dec",
                "decode",
                "--input",
                "enc/codeword.bvc",
                "--reference",
                "f.txt",
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let report = fs::read_to_string(tmp.path().join("dec/decode.csv")).unwrap();
        let err: f64 = csv_field(&report, "l1_error").parse().unwrap();
        assert!(err <= 0.05, "{gauge}: {err}");
        let enc = fs::read_to_string(tmp.path().join("enc/report.csv")).unwrap();
        assert_eq!(csv_field(&enc, "bits"), csv_field(&report, "bits"));
        assert!(tmp.path().join("dec/decoded.txt").exists());
    }
}

#[test]
fn witness_scan_writes_exponent_line() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "--out",
        "scan",
        "scan",
        "--lattice-side",
        "8001",
        "--spacing",
        "0.02",
        "--budget",
        "3000",
        "--epsilon-hi",
        "0.1",
        "--epsilon-lo",
        "0.01",
        "--half-width",
        "80",
    ];
    let out = bin(tmp.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(tmp.path().join("scan/scan.csv")).unwrap();
    let line = csv
        .lines()
        .find(|l| l.starts_with("# exponent="))
        .expect("fit line");
    let exponent: f64 = line["# exponent=".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((exponent - 1.0).abs() < 0.25, "{exponent}");
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 6);
}

#[test]
fn empty_input_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.txt"), "").unwrap();
    let out = bin(
        tmp.path(),
        &["--out", "o", "variation", "--input", "empty.txt"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn unknown_flag_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = bin(tmp.path(), &["variation", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn identical_config_gives_identical_csv() {
    let tmp = TempDir::new().unwrap();
    for dir in ["a", "b"] {
        let out = bin(
            tmp.path(),
            &[
                "--out",
                dir,
                "--seed",
                "9",
                "claw",
                "--flux",
                "quartic",
                "--calibrate",
                "3",
                "--epsilon",
                "0.1",
            ],
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in [
        "solution.csv",
        "gauge.csv",
        "calibration.csv",
        "bounds.csv",
        "invariants.csv",
    ] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn manifest_echoes_parameters() {
    let tmp = TempDir::new().unwrap();
    let out = bin(
        tmp.path(),
        &[
            "--out",
            "m",
            "--seed",
            "3",
            "metric",
            "--uniform",
            "30",
            "--window-lo",
            "0.1",
            "--window-hi",
            "0.5",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(tmp.path().join("m/manifest.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["subcommand"], "metric");
    assert_eq!(json["seed"], 3);
    assert_eq!(json["uniform"], 30);
    assert_eq!(json["window_hi"], 0.5);
    assert_eq!(json["version"], env!("CARGO_PKG_VERSION"));
    let outputs: Vec<&str> = json["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(outputs, ["dimensions.csv", "cover_pack.csv"]);
    let leftovers = fs::read_dir(tmp.path().join("m")).unwrap().filter(|e| {
        e.as_ref()
            .unwrap()
            .file_name()
            .to_string_lossy()
            .ends_with(".tmp")
    });
    assert_eq!(leftovers.count(), 0);
}

#[test]
fn witness_family_meets_its_floor() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "--out",
        "w",
        "witness",
        "--lattice-side",
        "2049",
        "--spacing",
        "0.00048828125",
        "--center",
        "1024",
        "--budget",
        "0.4",
        "--epsilon",
        "0.0001",
        "--p",
        "1",
    ];
    let out = bin(tmp.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(tmp.path().join("w/separation.csv")).unwrap();
    let size: usize = csv_field(&csv, "family_size").parse().unwrap();
    let floor: f64 = csv_field(&csv, "theoretical_floor").parse().unwrap();
    assert!(size as f64 >= floor);
}

#[test]
fn claw_reports_failed_bounds_config() {
    let tmp = TempDir::new().unwrap();
    let out = bin(tmp.path(), &["--out", "c", "claw", "--epsilon", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
}
