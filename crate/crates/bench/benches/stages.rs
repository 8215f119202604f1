//! Per-stage timings on the default synthetic experiment.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mrnr::eval::loo_on_features;
use mrnr::model::{train_region_svm, SvmOptions};
use mrnr::pipeline::{design_for, process_subject, regressors_for, snapshots_for};
use mrnr::register::{find_transform, RegistrationConfig};
use mrnr::FeatureLayout;
use mrnr_bench::default_experiment;

fn stages(c: &mut Criterion) {
    let (exp, truth) = default_experiment();
    let subject = &exp.subjects[0];
    let params = &exp.params;
    let design = design_for(subject, params).unwrap();
    let betas = regressors_for(subject, &design, params).unwrap();
    let layout = FeatureLayout::from_atlas(&exp.atlas);

    c.bench_function("design", |b| b.iter(|| design_for(black_box(subject), params).unwrap()));
    c.bench_function("regressors", |b| b.iter(|| regressors_for(black_box(subject), &design, params).unwrap()));
    c.bench_function("snapshots", |b| b.iter(|| snapshots_for(black_box(subject), &design, params).unwrap()));
    let moving = mrnr::Volume3D::from_data(betas.dims, betas.maps[0].clone()).unwrap();
    c.bench_function("registration_search", |b| {
        b.iter(|| find_transform(black_box(&moving), &exp.reference, &RegistrationConfig::search()).unwrap())
    });
    c.bench_function("process_subject", |b| {
        b.iter(|| process_subject(black_box(subject), &exp.atlas, &exp.reference, &layout, params).unwrap())
    });

    let subjects = exp.extract_all().unwrap();
    let region = truth.informative[0][0];
    let range = layout.range(region).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for s in &subjects {
        for r in &s.rows {
            x.push(r.values[range.clone()].to_vec());
            y.push(if r.category == 0 { 1 } else { -1 });
        }
    }
    c.bench_function("region_svm", |b| b.iter(|| train_region_svm(region, black_box(&x), &y, &SvmOptions::default()).unwrap()));

    let mut group = c.benchmark_group("evaluation");
    group.sample_size(10);
    group.bench_function("leave_one_out", |b| {
        b.iter(|| loo_on_features(black_box(&subjects), &layout, &truth.categories[0], &params.svm).unwrap())
    });
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
