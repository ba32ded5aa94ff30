use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use normframe::catalog;
use normframe::exec::Execution;
use normframe::normal::{normal_frame_on_open_set, GridOptions};

fn open_set_frames(c: &mut Criterion) {
    let mut group = c.benchmark_group("open_set_frame");
    group.sample_size(10);
    let cases = [
        ("polar-plane", vec![0.5, 0.0], vec![2.0, 1.0], vec![1.0, 0.0], 11),
        ("minkowski", vec![-1.0; 4], vec![1.0; 4], vec![0.0; 4], 4),
    ];
    for (id, lo, hi, base, nodes) in cases {
        let e = catalog::load_builtin(id).unwrap();
        for (label, execution) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
            let opts = GridOptions { nodes, execution, ..Default::default() };
            group.bench_with_input(BenchmarkId::new(label, id), &opts, |b, opts| {
                b.iter(|| normal_frame_on_open_set(&e.connection, &lo, &hi, &base, opts).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, open_set_frames);
criterion_main!(benches);
