#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sni_core::datasets::{make_synthetic, Spectrum, SyntheticSpec};

pub fn sni(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sni"))
        .args(args)
        .output()
        .expect("failed to launch sni")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn report(dir: &Path) -> toml::Table {
    let text = fs::read_to_string(dir.join("report.toml")).expect("report.toml");
    text.parse().expect("valid TOML report")
}

pub fn metric(report: &toml::Table, name: &str) -> f64 {
    let m = report["metrics"].as_table().expect("metrics table");
    match &m[name] {
        toml::Value::Float(x) => *x,
        toml::Value::Integer(i) => *i as f64,
        other => panic!("metric {name} is {other:?}"),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Rows of a CSV file as string fields, header first.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .expect("csv file")
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// A ratings file in the MovieLens 100K layout: integer ratings 1..5 from a
/// noisy rank-4 model, ids starting at 1, one `user\titem\trating\ttimestamp`
/// record per line.
pub fn write_ratings_surrogate(path: &Path, users: usize, items: usize, density: f64, seed: u64) {
    // Entries of U diag(c * sqrt(users * items)) V^T have variance sum(c^2).
    let scale = ((users * items) as f64).sqrt();
    let spectrum = Spectrum::new([0.9, 0.6, 0.4, 0.3].iter().map(|c| c * scale).collect()).unwrap();
    let mut spec = SyntheticSpec::new(users, items, spectrum, seed);
    spec.noise = 0.4;
    spec.observed_fraction = density;
    let problem = make_synthetic(&spec).unwrap();
    let mut text = String::new();
    for (k, e) in problem.observations.iter().enumerate() {
        let rating = (3.5 + e.value).round().clamp(1.0, 5.0);
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}",
            e.row + 1,
            e.col + 1,
            rating as i64,
            880_000_000 + k
        );
    }
    fs::write(path, text).unwrap();
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
