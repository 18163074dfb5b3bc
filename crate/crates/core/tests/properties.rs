use proptest::prelude::*;

use shapesim_core::engine::EngineState;
use shapesim_core::fabric::{completions_for, segment, DmaOp, TlpOrigin};
use shapesim_core::shaper::{allocate_qps, normalize, Admission, BucketSpec, ResizePolicy, ShaperConfig, ShaperState};
use shapesim_core::*;

fn ms(b: u32) -> MessageSize {
    MessageSize::new(b).unwrap()
}

/// Strictly ascending sizes with positive throughputs.
fn curve() -> impl Strategy<Value = Vec<(u32, f64)>> {
    prop::collection::btree_set(1u32..=(1 << 20), 2..8).prop_flat_map(|sizes| {
        let n = sizes.len();
        (Just(sizes), prop::collection::vec(0.1f64..100.0, n))
            .prop_map(|(s, g)| s.into_iter().zip(g).collect::<Vec<_>>())
    })
}

fn profile(points: &[(u32, f64)], egress: EgressRule) -> AcceleratorProfile {
    AcceleratorProfile::from_points("p", points, egress, 0).unwrap()
}

fn gbps_sla(min: f64) -> Sla {
    Sla {
        tenant_id: "t".into(),
        metric: RateMetric::Gbps,
        min_rate: min,
        max_rate: None,
        measured_at: MeasuredAt::UserLevel,
    }
}

proptest! {
    #[test]
    fn interpolation_exact_at_points_and_bounded_between(points in curve(), frac in 0.0f64..1.0) {
        let p = profile(&points, EgressRule::Proportional(1.0));
        for &(s, g) in &points {
            prop_assert_eq!(interpolate_throughput(&p, ms(s)), g);
        }
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let s = a.0 + ((b.0 - a.0) as f64 * frac) as u32;
            let v = interpolate_throughput(&p, ms(s.max(1)));
            prop_assert!(v >= a.1.min(b.1) - 1e-9 && v <= a.1.max(b.1) + 1e-9);
        }
    }

    #[test]
    fn interpolation_monotone_within_segments(points in curve()) {
        let p = profile(&points, EgressRule::Proportional(1.0));
        for w in points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let step = ((b.0 - a.0) / 16).max(1);
            let mut prev = interpolate_throughput(&p, ms(a.0));
            let mut s = a.0;
            while s < b.0 {
                s = (s + step).min(b.0);
                let v = interpolate_throughput(&p, ms(s));
                if b.1 >= a.1 {
                    prop_assert!(v >= prev - 1e-9);
                } else {
                    prop_assert!(v <= prev + 1e-9);
                }
                prev = v;
            }
        }
    }

    #[test]
    fn interpolation_clamps_outside_curve(points in curve()) {
        let p = profile(&points, EgressRule::Proportional(1.0));
        let (first, last) = (points[0], points[points.len() - 1]);
        prop_assert_eq!(interpolate_throughput(&p, ms(1)), first.1);
        prop_assert_eq!(interpolate_throughput(&p, ms(MAX_MESSAGE_BYTES)), last.1);
    }

    /// Output bytes sit within one byte of `s * r`, so scaling back by
    /// `1/r` recovers `s` up to that rounding.
    #[test]
    fn egress_round_trip_within_one_byte(s in 1u32..=(1 << 22), r in 0.01f64..8.0) {
        let out = egress_size(EgressRule::Proportional(r), ms(s)) as f64;
        prop_assume!(s as f64 * r >= 1.0);
        prop_assert!((out - s as f64 * r).abs() <= 1.0);
        if r >= 1.0 {
            prop_assert!((out / r - s as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn identity_profile_inverts_to_min_rate(min in 0.001f64..20.0, size in 64u32..65536) {
        let p = profile(&[(64, 40.0), (1 << 20, 40.0)], EgressRule::Proportional(1.0));
        let req = invert_sla(Some(&p), &gbps_sla(min), ms(size), 63.0);
        prop_assert!(req.feasible);
        prop_assert_eq!(req.rate_gbps, min);
    }

    #[test]
    fn sla_feasibility_is_monotone(points in curve(), r in 0.1f64..4.0, a in 0.01f64..100.0, k in 0.0f64..1.0, size in 1u32..(1 << 20)) {
        let p = profile(&points, EgressRule::Proportional(r));
        let budget = 60.0;
        if invert_sla(Some(&p), &gbps_sla(a), ms(size), budget).feasible {
            prop_assert!(invert_sla(Some(&p), &gbps_sla(a * k), ms(size), budget).feasible);
        }
    }

    #[test]
    fn qp_allocation_sums_and_is_scale_invariant(
        weights in prop::collection::vec(0.0f64..100.0, 1..8),
        extra in 0u32..64,
        scale in 0.01f64..1000.0,
    ) {
        let total = weights.len() as u32 + extra;
        let a = allocate_qps(&weights, total);
        prop_assert_eq!(a.iter().sum::<u32>(), total);
        prop_assert!(a.iter().all(|&q| q >= 1));
        let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let b = allocate_qps(&scaled, total);
        let argmax = |v: &[u32]| v.iter().enumerate().max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(&x.0))).map(|(i, _)| i);
        prop_assert_eq!(argmax(&a), argmax(&b));
    }

    #[test]
    fn normalize_conserves_payload(bytes in 1u32..(1 << 20), t in 1u32..8192) {
        for policy in [ResizePolicy::None, ResizePolicy::SplitTo(t), ResizePolicy::PadTo(t)] {
            let n = normalize(bytes, policy);
            prop_assert_eq!(n.payload(), bytes);
            match policy {
                ResizePolicy::SplitTo(t) => {
                    prop_assert!(n.pieces.iter().all(|p| p.payload <= t && p.payload > 0));
                    prop_assert_eq!(n.padding(), 0);
                }
                ResizePolicy::PadTo(t) => prop_assert_eq!(n.pieces[0].wire_bytes(), bytes.max(t)),
                _ => prop_assert_eq!(n.padding(), 0),
            }
        }
    }

    #[test]
    fn segmentation_conserves_bytes(bytes in 1u32..(1 << 20), mps_pow in 7u32..12, mrrs_pow in 7u32..13) {
        let cfg = PcieConfig {
            max_payload_size: 1 << mps_pow,
            max_read_req_size: 1 << mrrs_pow,
            ..PcieConfig::default()
        };
        let writes = segment(bytes, DmaOp::Write, &cfg, TlpOrigin::default());
        prop_assert_eq!(writes.iter().map(|t| t.payload_bytes as u64).sum::<u64>(), bytes as u64);
        prop_assert!(writes.iter().all(|t| t.payload_bytes <= cfg.max_payload_size));
        let reads = segment(bytes, DmaOp::Read, &cfg, TlpOrigin::default());
        let returned: u64 = reads
            .iter()
            .flat_map(|r| completions_for(r, &cfg))
            .map(|c| c.payload_bytes as u64)
            .sum();
        prop_assert_eq!(returned, bytes as u64);
    }

    /// Grants never exceed `rate * w + burst` in any window.
    #[test]
    fn token_bucket_envelope(
        rate in 0.5f64..40.0,
        burst_msgs in 1u32..8,
        size in 64u32..8192,
        gaps in prop::collection::vec(0u64..4000, 50..200),
    ) {
        let burst = burst_msgs as f64 * size as f64 * 8.0;
        let bucket = BucketSpec::gbps(rate, burst);
        let cfg = ShaperConfig {
            tenant_id: "t".into(),
            min_bucket: bucket,
            max_bucket: Some(bucket),
            pace: BucketSpec::gbps(rate * 4.0, burst),
            resize: ResizePolicy::None,
            qp_count: 1,
            small_msg_floor: 64,
        };
        let mut gate = ShaperState::new(&cfg, SimTime::ZERO);
        let mut now = SimTime::ZERO;
        let mut grants = Vec::new();
        for g in gaps {
            now += SimTime::from_ns(g);
            loop {
                match gate.admit(size, now) {
                    Admission::Grant { .. } => {
                        grants.push(now);
                        break;
                    }
                    Admission::Deferred(at) => now = at,
                }
            }
        }
        let bits = size as f64 * 8.0;
        for i in 0..grants.len() {
            for j in i..grants.len() {
                let w = (grants[j] - grants[i]).as_secs_f64();
                let sent = (j - i + 1) as f64 * bits;
                prop_assert!(sent <= rate * 1e9 * w + burst + bits * 1e-6, "window {i}..{j}");
            }
        }
    }

    #[test]
    fn engine_occupancy_bounded_and_fifo(sizes in prop::collection::vec(1u32..65536, 1..60)) {
        let p = profile(&[(64, 2.0), (65536, 30.0)], EgressRule::Proportional(0.5));
        let mut e = EngineState::new(p);
        let mut now = SimTime::ZERO;
        let mut accepted = Vec::new();
        let mut served = Vec::new();
        for (i, &s) in sizes.iter().enumerate() {
            if e.try_enqueue(i % 3, ms(s), now, i as u64).is_ok() {
                accepted.push(i as u64);
            }
            prop_assert!(e.occupancy() <= e.capacity());
            if i % 4 == 3 {
                while let Some(svc) = e.service_next(now) {
                    now = svc.completion_time;
                    e.complete(&svc);
                    served.push(svc.token);
                }
            }
        }
        while let Some(svc) = e.service_next(now) {
            now = svc.completion_time;
            e.complete(&svc);
            served.push(svc.token);
        }
        prop_assert_eq!(served, accepted);
        prop_assert_eq!(e.occupancy(), 0);
        let (inb, outb) = e.byte_totals();
        prop_assert_eq!(inb, outb);
    }
}
