use bip_core::store::kernel;
use bip_core::{
    cap_volume, fit_pca, provision_with, sample_uniform_sphere, sample_vmf_mixture, AllocConfig, ProvisionOptions,
    SynthGalleryConfig,
};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("scan");
    for &dim in &[64usize, 512] {
        let gallery = sample_uniform_sphere(dim, 100_000, 1).unwrap();
        let query = sample_uniform_sphere(dim, 1, 2).unwrap();
        g.throughput(Throughput::Elements(gallery.count() as u64));
        g.bench_with_input(BenchmarkId::new("max_dot", dim), &dim, |b, &d| {
            b.iter(|| kernel::max_dot(black_box(query.row(0)), gallery.as_slice(), d))
        });
        g.bench_with_input(BenchmarkId::new("par_max_dot", dim), &dim, |b, &d| {
            b.iter(|| kernel::par_max_dot(black_box(query.row(0)), gallery.as_slice(), d))
        });
        let margin = kernel::fast_dot_margin(dim, 1.0);
        g.bench_with_input(BenchmarkId::new("scan_below_fast", dim), &dim, |b, &d| {
            b.iter(|| kernel::scan_below_fast(black_box(query.row(0)), gallery.as_slice(), d, 0.391, margin))
        });
    }
    g.finish();
}

fn cap(c: &mut Criterion) {
    c.bench_function("cap_volume d=512", |b| b.iter(|| cap_volume(black_box(0.391), 512)));
}

fn provision(c: &mut Criterion) {
    let cfg = SynthGalleryConfig { dim: 64, n_clusters: 500, per_cluster: 4, concentration: 32.0, seed: 3 };
    let gallery = sample_vmf_mixture(&cfg).unwrap();
    let pca = fit_pca(&gallery).unwrap();
    let alloc = AllocConfig::default();
    let mut g = c.benchmark_group("provision");
    g.sample_size(10);
    g.bench_function("n=200 M=2000 d=64", |b| {
        b.iter(|| provision_with(&gallery, &pca, &alloc, 200, ProvisionOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, scan, cap, provision);
criterion_main!(benches);
