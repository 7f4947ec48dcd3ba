#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrstd"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// A long-format continuous trial shaped like a pragmatic primary-care
/// study: `m` clinics, 5–40 patients each, a prognostic age score and sex
/// per patient and a clinic-level covariate.
pub fn continuous_trial(m: usize, seed: u64, equal_size: Option<usize>) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("clinic,arm,pain,age,female,urban\n");
    for i in 0..m {
        let arm = u8::from(i % 2 == 0);
        let n = equal_size.unwrap_or_else(|| rng.random_range(5..=40));
        let urban = u8::from(rng.random_bool(0.5));
        let b: f64 = rng.random_range(-0.8..0.8);
        for _ in 0..n {
            let age: f64 = rng.random_range(-2.0..2.0);
            let female = u8::from(rng.random_bool(0.6));
            let noise: f64 = rng.random_range(-1.5..1.5);
            let y = 5.0 - 0.6 * f64::from(arm) + 1.2 * age + 0.5 * f64::from(female) + 0.7 * f64::from(urban) + b + noise;
            let _ = writeln!(out, "c{i:03},{arm},{y},{age},{female},{urban}");
        }
    }
    out
}

pub fn analysis_config(input: &str, models: &[&str], adjusted: bool) -> String {
    let mut s = format!(
        "input = \"{input}\"\n\n[columns]\ncluster_id = \"clinic\"\ntreatment = \"arm\"\noutcome = \"pain\"\n\
         covariates = [\"age\", \"female\"]\ncluster_covariates = [\"urban\"]\n"
    );
    for m in models {
        let _ = write!(s, "\n[[models]]\npreset = \"{m}\"\nadjusted = {adjusted}\n");
    }
    s
}

/// Parses CSV output into header-keyed rows.
pub fn csv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_owned(), v.to_owned())).collect())
        .collect()
}
