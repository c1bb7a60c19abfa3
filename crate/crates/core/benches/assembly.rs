use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use condenser_core::geometry::complement_shells;
use condenser_core::kernel::{assemble_matrix, KernelSpec};
use condenser_core::scenarios::DiskStackScenario;
use condenser_core::solver::{solve_riesz, SolverOptions};
use condenser_core::Execution;

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn assembly(c: &mut Criterion) {
    let nodes = complement_shells(&[0.0; 3], 1.0, 16.0, 0.2, 1.4, Some(120), true).unwrap().0;
    let k = KernelSpec::riesz(3, 1.5).unwrap();
    let mut g = c.benchmark_group("assemble");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::new(name, nodes.len()), &exec, |b, &exec| b.iter(|| assemble_matrix(&nodes, &k, exec).unwrap()));
    }
    g.finish();

    let m = assemble_matrix(&nodes, &k, Execution::Parallel).unwrap();
    let x: Vec<f64> = (0..nodes.len()).map(|i| 1.0 / (1.0 + i as f64)).collect();
    let mut g = c.benchmark_group("matvec");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::new(name, nodes.len()), &exec, |b, &exec| b.iter(|| m.entries.matvec(&x, exec)));
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_disk_stack");
    g.sample_size(10);
    for (name, exec) in modes() {
        let spec = DiskStackScenario { resolution: 0.4, ..Default::default() }.build(SolverOptions { exec, ..Default::default() }).unwrap();
        g.bench_function(name, |b| b.iter(|| solve_riesz(&spec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, assembly, solve);
criterion_main!(benches);
