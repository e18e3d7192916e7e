#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covgroup"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "covgroup {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn region_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("roi{i:02}")).collect()
}

/// `t × n` series with a one-factor structure of strength `loading`.
pub fn series_text(t: usize, n: usize, loading: f64, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = region_names(n).join(",");
    s.push('\n');
    for _ in 0..t {
        let f: f64 = StandardNormal.sample(&mut rng);
        let row: Vec<String> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                format!("{}", loading * f + e)
            })
            .collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn write_series(dir: &Path, name: &str, t: usize, n: usize, loading: f64, seed: u64) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, series_text(t, n, loading, seed)).unwrap();
    p
}

/// `count` control files `ctrl00.csv…` in `dir`.
pub fn write_controls(dir: &Path, count: usize, t: usize, n: usize, seed: u64) -> Vec<PathBuf> {
    (0..count)
        .map(|k| write_series(dir, &format!("ctrl{k:02}.csv"), t, n, 0.8, seed * 1000 + k as u64))
        .collect()
}

pub fn strs(paths: &[PathBuf]) -> Vec<&str> {
    paths.iter().map(|p| p.to_str().unwrap()).collect()
}
