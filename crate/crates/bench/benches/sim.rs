//! Whole-run cost of representative built-in cells at 1 ms simulated.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use shapesim_core::harness::builtin;
use shapesim_core::run;

const DURATION_NS: u64 = 1_000_000;

fn cells(c: &mut Criterion) {
    let picks = [
        ("obs4_qp", "16to4"),
        ("obs10_tiny", "b16"),
        ("obs9_duplex", "w256"),
        ("shaping_ab", "on"),
        ("sla_adversarial", "w16_q16_on"),
    ];
    let mut g = c.benchmark_group("run_1ms");
    g.sample_size(20);
    for (name, label) in picks {
        let s = builtin(name, DURATION_NS)
            .unwrap()
            .cells
            .into_iter()
            .find(|c| c.label == label)
            .expect("cell exists")
            .scenario;
        let events = run(&s).unwrap().summary.events;
        g.throughput(Throughput::Elements(events));
        g.bench_function(format!("{name}/{label}"), |b| b.iter(|| run(&s).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, cells);
criterion_main!(benches);
