use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use solenoid_core::acceptance::{builtin_immersions, golden_rotation};
use solenoid_core::currents::{pair_current, PairOptions};
use solenoid_core::dualform::pushforward_dual_form;
use solenoid_core::dynamics::{make_map, ulam, MapDescriptor, UlamOptions};
use solenoid_core::forms::TorusForm;

fn bench_ulam(c: &mut Criterion) {
    let map = make_map(&MapDescriptor::CircleDiffeo { a: 0.05, m: 2 }).unwrap();
    let mut group = c.benchmark_group("ulam");
    for bins in [256, 1024] {
        let opts = UlamOptions {
            ulam_bins: bins,
            ..UlamOptions::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(bins), &opts, |b, o| {
            b.iter(|| ulam(black_box(&map), o).unwrap())
        });
    }
    group.finish();
}

fn bench_pair(c: &mut Criterion) {
    let mut group = c.benchmark_group("pair_current");
    for (name, sol, imm, m) in builtin_immersions().unwrap() {
        let omega = TorusForm::dtheta(imm.dim(), 0).unwrap();
        group.bench_function(name, |b| {
            b.iter(|| pair_current(&imm, &sol, &m, black_box(&omega), &PairOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_dualform(c: &mut Criterion) {
    let sol = golden_rotation().unwrap();
    let (_, _, imm, m) = builtin_immersions().unwrap().remove(0);
    let mut group = c.benchmark_group("dual_form");
    group.sample_size(10);
    for g in [64, 128] {
        group.bench_with_input(BenchmarkId::from_parameter(g), &g, |b, &g| {
            b.iter(|| pushforward_dual_form(&imm, &sol, &m, 0.02, g).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_ulam, bench_pair, bench_dualform);
criterion_main!(benches);
