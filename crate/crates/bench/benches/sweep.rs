use atlas_core::boundary::{axis, AxisSpacing};
use atlas_core::{sweep, ProtocolConfig, ProtocolSpec, SweepGrid, SweepOptions};
use criterion::{criterion_group, criterion_main, Criterion};

fn small_sweep(c: &mut Criterion) {
    let grid = SweepGrid::new(
        axis(0.0, 1.0, 10, AxisSpacing::Linear),
        axis(0.001, 0.5, 10, AxisSpacing::Linear),
        axis(0.1, 0.5, 10, AxisSpacing::Linear),
    )
    .unwrap();
    let cfg = ProtocolConfig::default();
    let mut group = c.benchmark_group("sweep_10x10x10");
    group.sample_size(10);
    for name in ["psk16", "apsk64"] {
        let spec: ProtocolSpec = name.parse().unwrap();
        group.bench_function(name, |b| {
            b.iter(|| sweep(&grid, &spec, &cfg, &SweepOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, small_sweep);
criterion_main!(benches);
