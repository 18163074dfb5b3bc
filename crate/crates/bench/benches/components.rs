//! Hot helpers called per message or per TLP.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use shapesim_core::fabric::{segment, DmaOp, TlpOrigin};
use shapesim_core::harness::suite::builtin_profiles;
use shapesim_core::shaper::{plan_admission, Admission, BucketSpec, ResizePolicy, ShaperConfig, ShaperState};
use shapesim_core::{interpolate_throughput, MessageSize, PcieConfig, SimTime};

fn interpolation(c: &mut Criterion) {
    let p = &builtin_profiles()[0];
    let sizes: Vec<MessageSize> = (0..64).map(|i| MessageSize::new(64 + i * 997).unwrap()).collect();
    c.bench_function("interpolate_64_sizes", |b| {
        b.iter(|| sizes.iter().map(|&s| interpolate_throughput(p, black_box(s))).sum::<f64>())
    });
}

fn segmentation(c: &mut Criterion) {
    let cfg = PcieConfig::default();
    c.bench_function("segment_write_64k", |b| {
        b.iter(|| segment(black_box(65536), DmaOp::Write, &cfg, TlpOrigin::default()))
    });
}

fn admission(c: &mut Criterion) {
    let cfg = ShaperConfig {
        tenant_id: "t".into(),
        min_bucket: BucketSpec::gbps(10.0, 32768.0 * 8.0),
        max_bucket: Some(BucketSpec::gbps(20.0, 32768.0 * 8.0)),
        pace: BucketSpec::gbps(15.0, 32768.0 * 8.0),
        resize: ResizePolicy::None,
        qp_count: 1,
        small_msg_floor: 64,
    };
    c.bench_function("admit_1k_grants", |b| {
        b.iter(|| {
            let mut st = ShaperState::new(&cfg, SimTime::ZERO);
            let mut now = SimTime::ZERO;
            for _ in 0..1000 {
                loop {
                    match st.admit(4096, now) {
                        Admission::Grant { .. } => break,
                        Admission::Deferred(at) => now = at,
                    }
                }
            }
            now
        })
    });
}

fn planning(c: &mut Criterion) {
    let s = shapesim_core::harness::builtin("sla_adversarial", 1_000_000).unwrap().cells.remove(1).scenario;
    c.bench_function("plan_admission_adversarial", |b| {
        b.iter(|| plan_admission(&s.flows, &s.slas, &s.profiles, &s.pcie, &s.ring, &s.planner).unwrap())
    });
}

criterion_group!(benches, interpolation, segmentation, admission, planning);
criterion_main!(benches);
