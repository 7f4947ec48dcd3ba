use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mrstd_core::simulation::{generate_replicate, standard_models, DgpSpec, OutcomeType, Scenario};
use mrstd_core::{estimate, fit, Contrast, EstimandSpec, EstimateOptions, RandomizationDesign};

fn fits(c: &mut Criterion) {
    let cont = generate_replicate(&DgpSpec::new(Scenario::ContInf, 100), 1, 0).unwrap();
    let bin = generate_replicate(&DgpSpec::new(Scenario::BinInf, 30), 1, 0).unwrap();
    let mut group = c.benchmark_group("fit");
    for (outcome, data) in [(OutcomeType::Continuous, &cont), (OutcomeType::Binary, &bin)] {
        for entry in standard_models(outcome).into_iter().filter(|e| e.spec.adjusted) {
            group.bench_function(entry.label(), |b| b.iter(|| fit(black_box(&entry.spec), data).unwrap()));
        }
    }
    group.finish();
}

fn jackknife(c: &mut Criterion) {
    let data = generate_replicate(&DgpSpec::new(Scenario::ContInf, 100), 1, 0).unwrap();
    let design = RandomizationDesign::Simple(0.5);
    let spec = EstimandSpec::individual(Contrast::Difference);
    let mut group = c.benchmark_group("estimate_with_jackknife");
    group.sample_size(20);
    for entry in standard_models(OutcomeType::Continuous).into_iter().filter(|e| e.spec.adjusted) {
        group.bench_function(entry.label(), |b| {
            b.iter(|| estimate(&data, &design, &entry.spec, &spec, EstimateOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fits, jackknife);
criterion_main!(benches);
