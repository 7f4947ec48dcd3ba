//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2`.

mod common;

use std::collections::HashMap;
use std::io::Write as _;
use std::time::Instant;

use mrstd_core::models::GaussHermite;
use mrstd_core::simulation::{
    base_models, run_experiment, run_ics_power, true_estimands, DgpSpec, Estimator,
    ExperimentConfig, ExperimentOutput, MetricsRow, OutcomeType, Scenario, TruthValues,
};
use mrstd_core::{
    estimate, estimate_many, fit, ics_test, predict_cluster_mean, ClusterRecord, Contrast, EstimandSpec,
    EstimateOptions, IcsScale, Marginalization, ModelSpec, RandomizationDesign, RefitPolicy, TrialData,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const N_SIM: usize = 500;
const TRUTH_SIZE: usize = 1_000_000;
const TRUTH_SEED: u64 = 20_240_601;
const SIM_SEED: u64 = 1;

/// Collects the individual checks of one criterion.
#[derive(Default)]
struct Report {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Report {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }
}

/// Truth values shared between criteria.
#[derive(Default)]
struct Truths(HashMap<(String, usize), TruthValues>);

impl Truths {
    fn get(&mut self, scenario: Scenario, m: usize) -> TruthValues {
        *self
            .0
            .entry((scenario.label(), m))
            .or_insert_with(|| true_estimands(&DgpSpec::new(scenario, m), TRUTH_SIZE, TRUTH_SEED).unwrap())
    }
}

fn small_trial(rng: &mut ChaCha8Rng, m: usize, equal_size: Option<usize>) -> TrialData {
    let clusters = (0..m)
        .map(|i| {
            let treated = if i < 2 { true } else if i < 4 { false } else { rng.random_bool(0.5) };
            let n = equal_size.unwrap_or_else(|| rng.random_range(1..=10));
            let h: f64 = rng.random_range(-1.0..1.0);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: f64 = rng.random_range(-0.5..0.5);
            let y = x
                .iter()
                .map(|xj| 2.0 + xj + h + b + if treated { 0.5 * (n as f64).ln() } else { 0.0 } + rng.random_range(-1.0..1.0))
                .collect();
            ClusterRecord::new(format!("k{i}"), treated, y, x, vec![h])
        })
        .collect();
    TrialData::new(clusters, 1, 1)
}

fn ybar(c: &ClusterRecord) -> f64 {
    c.outcomes.iter().sum::<f64>() / c.size as f64
}

fn criterion_1(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = EstimateOptions::default();
    let specs = [EstimandSpec::cluster(Contrast::Difference), EstimandSpec::individual(Contrast::Difference)];
    let (mut worst_null, mut worst_lm, mut worst_se) = (0.0f64, 0.0f64, 0.0f64);
    let mut equal_ok = true;
    for k in 0..100 {
        let m = rng.random_range(6..=20);
        let pi = rng.random_range(0.25..0.75);
        let data = small_trial(&mut rng, m, None);
        let design = RandomizationDesign::Simple(pi);

        // inverse probability weighting, written out independently
        let res = estimate_many(&data, &design, &ModelSpec::null(), &specs, opts).unwrap();
        for (j, res) in res.iter().enumerate() {
            let w = |c: &ClusterRecord| if j == 0 { 1.0 } else { c.size as f64 };
            let total: f64 = data.clusters.iter().map(w).sum();
            let mu1: f64 = data.clusters.iter().filter(|c| c.treated).map(|c| w(c) * ybar(c) / pi).sum::<f64>() / total;
            let mu0: f64 =
                data.clusters.iter().filter(|c| !c.treated).map(|c| w(c) * ybar(c) / (1.0 - pi)).sum::<f64>() / total;
            worst_null = worst_null
                .max((res.means.mu1 - mu1).abs() / mu1.abs().max(1.0))
                .max((res.means.mu0 - mu0).abs() / mu0.abs().max(1.0));
        }

        // residual cancellation for the unadjusted cluster-level linear model
        let lm = estimate(&data, &design, &ModelSpec::cluster_lm(false), &specs[0], opts).unwrap();
        let arm = |t: bool| {
            let v: Vec<f64> = data.clusters.iter().filter(|c| c.treated == t).map(ybar).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        worst_lm = worst_lm.max((lm.estimate - (arm(true) - arm(false))).abs());

        // delta method equals the jackknife on the difference scale
        let model = if k % 2 == 0 { ModelSpec::lmm(true) } else { ModelSpec::cluster_lm(true).with_size(false) };
        if let Ok(res) = estimate_many(&data, &design, &model, &specs, opts) {
            for res in res {
                worst_se = worst_se.max((res.se - res.se_delta).abs());
            }
        }

        // equal cluster sizes
        let n = rng.random_range(2..=6);
        let eq = small_trial(&mut rng, m.max(8), Some(n));
        for model in [
            ModelSpec::null(),
            ModelSpec::cluster_lm(true).with_size(false),
            ModelSpec::lmm(true).with_size(false),
            ModelSpec::gee(mrstd_core::Link::Identity, mrstd_core::WorkingCorrelation::Exchangeable, false),
        ] {
            let res = estimate_many(&eq, &design, &model, &specs, opts).unwrap();
            let t = ics_test(&eq, &design, &model, IcsScale::Difference, RefitPolicy::Error).unwrap();
            equal_ok &= res[0].estimate == res[1].estimate && t.statistic == 0.0;
        }
    }
    r.check(worst_null <= 1e-13, format!("null model vs IPW, 100 datasets: max rel. error {worst_null:.1e} (≤ 1e-13)"));
    r.check(worst_lm <= 1e-10, format!("unadjusted cluster LM vs arm-mean difference: max error {worst_lm:.1e} (≤ 1e-10)"));
    r.check(equal_ok, "equal sizes: Δ̂_C = Δ̂_I bitwise and ICS statistic exactly 0 (4 models × 100 datasets)");
    r.check(worst_se <= 1e-12, format!("difference-scale delta-method SE vs jackknife SE: max {worst_se:.1e} (≤ 1e-12)"));
}

fn criterion_2(r: &mut Report) {
    let data = mrstd_core::simulation::generate_replicate(&DgpSpec::new(Scenario::BinNonInf, 30), 5, 0).unwrap();
    let mut logit = fit(&ModelSpec::glmm_logit(false), &data).unwrap();
    let mut log = fit(&ModelSpec::glmm_log(false), &data).unwrap();
    let rule = GaussHermite::new(64);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<f64> = (0..500_000).map(|_| rng.sample(StandardNormal)).collect();
    let (mut worst_mc, mut worst_log, mut worst_hed) = (0.0f64, 0.0f64, 0.0f64);
    let c = &data.clusters[0];
    let a = u8::from(c.treated);
    for eta in [-3.0, -1.5, 0.0, 1.5, 3.0] {
        for s2 in [0.1, 0.5, 1.0, 2.0] {
            logit.coefficients = vec![eta, 0.0];
            logit.variance.random_intercept = Some(s2);
            let quad = predict_cluster_mean(&logit, c, a).unwrap();
            // 10⁶ antithetic normal draws
            let s = f64::sqrt(s2);
            let expit = |x: f64| 1.0 / (1.0 + (-x).exp());
            let mc = draws.iter().map(|z| expit(eta + s * z) + expit(eta - s * z)).sum::<f64>() / 1e6;
            worst_mc = worst_mc.max((quad - mc).abs());
            let hed = predict_cluster_mean(&logit.with_marginalization(Marginalization::Hedeker), c, a).unwrap();
            worst_hed = worst_hed.max((hed - quad).abs());

            log.coefficients = vec![eta, 0.0];
            log.variance.random_intercept = Some(s2);
            let closed = predict_cluster_mean(&log, c, a).unwrap();
            let q = rule.normal_expectation(s2, |b| (eta + b).exp());
            worst_log = worst_log.max((closed - q).abs() / q);
        }
    }
    r.check(worst_mc <= 1e-3, format!("logistic-normal quadrature vs 10⁶-draw Monte Carlo: max {worst_mc:.1e} (≤ 1e-3)"));
    r.check(worst_log <= 1e-8, format!("log-link closed form vs quadrature: max rel. {worst_log:.1e} (≤ 1e-8)"));
    r.check(worst_hed <= 0.01, format!("Hedeker vs quadrature: max {worst_hed:.4} (≤ 0.01)"));
}

fn criterion_3(r: &mut Report, truths: &mut Truths) {
    let anchors = [
        (Scenario::ContInf, 30, 5.92, 8.15, 0.05),
        (Scenario::ContInf, 100, 4.48, 6.25, 0.05),
        (Scenario::BinNonInf, 100, 0.65, 0.65, 0.02),
        (Scenario::BinInf, 30, 0.91, 1.24, 0.02),
        (Scenario::BinInf, 100, 0.71, 0.97, 0.02),
    ];
    for (scenario, m, dc, di, tol) in anchors {
        let t = truths.get(scenario, m);
        r.check(
            (t.delta_c - dc).abs() <= tol && (t.delta_i - di).abs() <= tol,
            format!(
                "{} m={m}: Δ_C={:.4} (anchor {dc}), Δ_I={:.4} (anchor {di}), ±{tol}",
                scenario.label(),
                t.delta_c,
                t.delta_i
            ),
        );
    }
}

fn row<'a>(out: &'a ExperimentOutput, est: &str, model: &str, target: &str) -> &'a MetricsRow {
    out.rows
        .iter()
        .find(|r| r.estimator == est && r.model == model && r.target == target)
        .unwrap_or_else(|| panic!("no row {est} {model} {target}"))
}

fn criterion_4(r: &mut Report, truths: &mut Truths) {
    for m in [30, 100] {
        let dgp = DgpSpec::new(Scenario::ContInf, m);
        let truth = truths.get(Scenario::ContInf, m);
        let out = run_experiment(&ExperimentConfig::new(dgp, N_SIM, SIM_SEED), &truth).unwrap();
        for row in out.rows.iter().filter(|r| r.estimator == "MRS") {
            r.check(
                row.bias_pct.abs() <= 3.0 && (92.5..=98.5).contains(&row.coverage),
                format!(
                    "(a) m={m} MRS {} {}: bias {:+.2}% (|·| ≤ 3), COV {:.1} (92.5–98.5)",
                    row.model, row.target, row.bias_pct, row.coverage
                ),
            );
        }
        let gee_ind = row(&out, "Coef", "W4", "delta_c");
        r.check(
            (30.0..=45.0).contains(&gee_ind.bias_pct),
            format!("(b) m={m} Coef W4 (GEE-ind) delta_c: bias {:+.1}% (30 to 45)", gee_ind.bias_pct),
        );
        for model in ["W1", "W2", "W3"] {
            let x = row(&out, "Coef", model, "delta_i");
            r.check(
                (-33.0..=-22.0).contains(&x.bias_pct),
                format!("(b) m={m} Coef {model} delta_i: bias {:+.1}% (−33 to −22)", x.bias_pct),
            );
        }
    }
    let dgp = DgpSpec::new(Scenario::BinInf, 100);
    let truth = truths.get(Scenario::BinInf, 100);
    let gee_ind = base_models(OutcomeType::Binary, true).into_iter().filter(|e| e.name == "W8").collect();
    let config = ExperimentConfig::new(dgp, N_SIM, SIM_SEED).with_models(gee_ind).with_estimators(vec![Estimator::Coef]);
    let out = run_experiment(&config, &truth).unwrap();
    let x = row(&out, "Coef", "W8+adj", "delta_c");
    r.check(
        x.coverage < 60.0 && (x.coverage - 26.2).abs() <= 15.0,
        format!("(c) bin_inf m=100 Coef W8+adj delta_c: COV {:.1}% (< 60 and within 26.2 ± 15)", x.coverage),
    );
}

/// Smallest and largest rejection counts inside the central 95% of Binomial(n, p).
fn binomial_band(n: usize, p: f64) -> (usize, usize) {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = pmf;
    let mut lo = None;
    for k in 0..=n {
        if k > 0 {
            pmf *= (n - k + 1) as f64 / k as f64 * p / (1.0 - p);
            cdf += pmf;
        }
        if lo.is_none() && cdf >= 0.025 {
            lo = Some(k);
        }
        if cdf >= 0.975 {
            return (lo.unwrap(), k);
        }
    }
    (lo.unwrap_or(0), n)
}

fn criterion_5(r: &mut Report) {
    let models = base_models(OutcomeType::Continuous, true);
    let dgps = [
        DgpSpec::new(Scenario::ContIcs { delta: 0.0 }, 100),
        DgpSpec::new(Scenario::ContIcs { delta: 0.2 }, 100),
        DgpSpec::new(Scenario::ContIcs { delta: 0.0 }, 30),
    ];
    let rows = run_ics_power(&dgps, &models, N_SIM, SIM_SEED, 0.05).unwrap();
    for row in rows {
        let (lo, hi) = binomial_band(row.n_ok, 0.05);
        let (ok, rule) = match (row.m, row.delta == 0.0) {
            (100, true) => ((lo..=hi).contains(&row.rejections), format!("{lo}–{hi} of {}", row.n_ok)),
            (100, false) => (row.rejection_rate >= 90.0, "≥ 90%".to_owned()),
            _ => (row.rejection_rate <= 5.0, "≤ 5%".to_owned()),
        };
        r.check(
            ok,
            format!(
                "m={} δ={} {}: {} rejections of {} = {:.1}% ({rule})",
                row.m, row.delta, row.model, row.rejections, row.n_ok, row.rejection_rate
            ),
        );
    }
}

fn criterion_6(r: &mut Report, truths: &mut Truths) {
    let dgp = DgpSpec::new(Scenario::ContNonInf, 100);
    let truth = truths.get(Scenario::ContNonInf, 100);
    let config = ExperimentConfig::new(dgp, N_SIM, SIM_SEED)
        .with_models(base_models(OutcomeType::Continuous, true))
        .with_estimators(vec![Estimator::Mrs]);
    let out = run_experiment(&config, &truth).unwrap();
    for row in &out.rows {
        let ratio = row.aese / row.mcsd;
        r.check(
            (0.9..=1.15).contains(&ratio),
            format!("MRS {} {}: AESE {:.4} / MCSD {:.4} = {ratio:.3} (0.90–1.15)", row.model, row.target, row.aese, row.mcsd),
        );
    }
}

fn criterion_7(r: &mut Report) {
    use common::*;
    let dir = tempfile::tempdir().unwrap();
    let sims = [
        ("cont.toml", "scenario = \"cont_inf\"\nm = 30\nn_sim = 12\nseed = 4\n[truth]\nsize = 20000\n"),
        ("bin.toml", "scenario = \"bin_inf\"\nm = 30\nn_sim = 4\nseed = 4\n[truth]\nsize = 20000\n"),
        ("ics.toml", "scenario = \"bin_ics\"\nm = 30\nn_sim = 6\nseed = 4\ndeltas = [0, 8]\n"),
    ];
    write(dir.path(), "trial.csv", &continuous_trial(60, 9, None));
    write(dir.path(), "a.toml", &analysis_config("trial.csv", &["W1", "W2", "W3", "W4"], true));
    let mut commands: Vec<(String, Vec<String>)> = sims
        .iter()
        .map(|(name, text)| {
            let p = write(dir.path(), name, text);
            (format!("simulate {name}"), vec!["simulate".into(), "--config".into(), p.display().to_string()])
        })
        .collect();
    for cmd in ["analyze", "ics-test"] {
        let p = dir.path().join("a.toml").display().to_string();
        commands.push((cmd.into(), vec![cmd.into(), "--config".into(), p]));
    }
    for (label, args) in commands {
        for format in ["csv", "record"] {
            let outputs: Vec<Vec<u8>> = ["1", "4", "1"]
                .iter()
                .map(|threads| {
                    let o = bin().args(&args).args(["--format", format, "--threads", threads]).output().unwrap();
                    assert!(o.status.success(), "{label}: {}", stderr(&o));
                    o.stdout
                })
                .collect();
            r.check(
                outputs[0] == outputs[1] && outputs[1] == outputs[2] && !outputs[0].is_empty(),
                format!("{label} --format {format}: threads 1, 4, 1 give identical bytes"),
            );
        }
    }
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let mut truths = Truths::default();
    let mut any_failed = false;
    let stdout = std::io::stdout();
    type Criterion<'a> = (u32, &'static str, Box<dyn FnOnce(&mut Report, &mut Truths) + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "algebraic oracles", Box::new(|r, _| criterion_1(r))),
        (2, "marginalization cross-checks", Box::new(|r, _| criterion_2(r))),
        (3, "super-population truth anchors", Box::new(criterion_3)),
        (4, "simulation patterns, informative sizes", Box::new(criterion_4)),
        (5, "ICS test operating characteristics", Box::new(|r, _| criterion_5(r))),
        (6, "SE calibration, adjusted non-informative", Box::new(criterion_6)),
        (7, "determinism across thread counts", Box::new(|r, _| criterion_7(r))),
    ];
    for (k, name, body) in criteria {
        if !run(k) {
            continue;
        }
        let start = Instant::now();
        let mut report = Report::default();
        body(&mut report, &mut truths);
        let passed = report.failures.is_empty();
        any_failed |= !passed;
        let mut out = stdout.lock();
        let _ = writeln!(
            out,
            "{} criterion {k}: {name} ({} checks, {:.1}s)",
            if passed { "PASS" } else { "FAIL" },
            report.failures.len() + report.notes.len(),
            start.elapsed().as_secs_f64()
        );
        for f in &report.failures {
            let _ = writeln!(out, "    failed: {f}");
        }
        for n in &report.notes {
            let _ = writeln!(out, "    ok: {n}");
        }
    }
    if any_failed {
        std::process::exit(1);
    }
}
