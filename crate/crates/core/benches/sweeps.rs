use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kdv_core::asympt::{self, DEFAULT_N_SET};
use kdv_core::floquet;
use kdv_core::hill::{spectral_table_with, Hill};
use kdv_core::par;
use kdv_core::potential::lame_one_gap;

fn modes(parallel: bool) -> &'static str {
    if parallel {
        "parallel"
    } else {
        "sequential"
    }
}

fn spectral_table(c: &mut Criterion) {
    let hill = Hill::new(&lame_one_gap(0.5).unwrap().0);
    let mut g = c.benchmark_group("spectral_table");
    g.sample_size(10);
    for parallel in [true, false] {
        par::set_sequential(!parallel);
        g.bench_with_input(BenchmarkId::new(modes(parallel), 32), &32, |b, &n| {
            b.iter(|| spectral_table_with(&hill, n).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn w_expansion(c: &mut Criterion) {
    let hill = Hill::new(&lame_one_gap(0.5).unwrap().0.translate(0.1));
    let table = spectral_table_with(&hill, 48).unwrap();
    let fl = floquet::floquet(&hill, &table).unwrap();
    let mut g = c.benchmark_group("w_expansion");
    g.sample_size(10);
    for parallel in [true, false] {
        par::set_sequential(!parallel);
        g.bench_function(modes(parallel), |b| b.iter(|| asympt::w_expansion(&fl, 2, &DEFAULT_N_SET).unwrap()));
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, spectral_table, w_expansion);
criterion_main!(benches);
