//! Built-in experiments, one per contention phenomenon plus the shaping
//! comparisons. Each built-in expands into one or more runnable cells.

use crate::error::{Error, Result};
use crate::harness::scenario::Scenario;
use crate::model::{
    AcceleratorProfile, Direction, EgressRule, FlowSpec, MeasuredAt, PcieConfig, RateMetric, Sla,
};
use crate::ring::RingConfig;

/// Desk-scale default: 10 ms of simulated time.
pub const DEFAULT_DURATION_NS: u64 = 10_000_000;

/// One runnable configuration of a built-in.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// Unique within the built-in; used in output file names.
    pub label: String,
    pub scenario: Scenario,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Builtin {
    pub name: &'static str,
    /// The behaviour this experiment is meant to exhibit.
    pub phenomenon: &'static str,
    pub cells: Vec<Cell>,
}

pub const NAMES: [&str; 10] = [
    "profile_sweep",
    "obs4_qp",
    "obs5_mixture",
    "obs6_direction",
    "obs7_metrics",
    "obs8_quadrants",
    "obs9_duplex",
    "obs10_tiny",
    "shaping_ab",
    "sla_adversarial",
];

/// Sizes co-tenants sweep in the adversarial suite.
pub const ADVERSARY_SIZES: [u32; 6] = [16, 64, 256, 1024, 4096, 8192];
pub const ADVERSARY_QPS: [u32; 2] = [1, 16];
pub const OBS9_WRITE_SIZES: [u32; 5] = [256, 512, 1024, 2048, 4096];
pub const OBS10_TINY_SIZES: [u32; 3] = [64, 32, 16];

fn write(t: &str, bytes: u32, qps: u32) -> FlowSpec {
    FlowSpec::saturating(t, Direction::AccelToHost, bytes, qps)
}

fn read(t: &str, bytes: u32, qps: u32) -> FlowSpec {
    FlowSpec::saturating(t, Direction::HostToAccel, bytes, qps)
}

fn accel(t: &str, profile: &str, bytes: u32, qps: u32) -> FlowSpec {
    FlowSpec {
        accelerator: Some(profile.to_string()),
        ..read(t, bytes, qps)
    }
}

/// Representative synthetic curves: a symmetric cipher, a fixed-digest
/// hash and a 2:1 compressor.
pub fn builtin_profiles() -> Vec<AcceleratorProfile> {
    vec![
        AcceleratorProfile::from_points(
            "aes",
            &[(64, 1.5), (256, 5.0), (1024, 14.0), (4096, 24.0), (16384, 28.0), (65536, 30.0)],
            EgressRule::Proportional(1.0),
            500,
        )
        .expect("valid"),
        AcceleratorProfile::from_points(
            "sha3",
            &[(64, 0.8), (256, 3.0), (1024, 9.0), (4096, 14.0), (16384, 16.0), (65536, 16.5)],
            EgressRule::FixedOutput(64),
            500,
        )
        .expect("valid"),
        AcceleratorProfile::from_points(
            "gzip",
            &[(256, 2.0), (1024, 6.0), (4096, 12.0), (16384, 15.0), (65536, 16.0)],
            EgressRule::Proportional(0.5),
            800,
        )
        .expect("valid"),
    ]
}

fn base(name: &str, duration_ns: u64, flows: Vec<FlowSpec>) -> Scenario {
    Scenario::new(name, duration_ns, flows)
}

/// Device-driven DMA without descriptor or completion traffic.
fn raw(mut s: Scenario) -> Scenario {
    s.ring = RingConfig::raw_dma();
    s
}

fn cell(label: impl Into<String>, scenario: Scenario) -> Cell {
    Cell {
        label: label.into(),
        scenario,
    }
}

fn profile_sweep(d: u64) -> Builtin {
    let mut cells = Vec::new();
    for p in builtin_profiles() {
        for pt in p.curve() {
            let mut s = base("profile_sweep", d, vec![accel("t", p.name(), pt.size, 1)]);
            s.profiles = vec![p.clone()];
            s.fabric_bypass = true;
            cells.push(cell(format!("{}_{}", p.name(), pt.size), s));
        }
    }
    Builtin {
        name: "profile_sweep",
        phenomenon: "Compute throughput is a non-linear function of message size and differs per accelerator.",
        cells,
    }
}

fn obs4(d: u64) -> Builtin {
    let cells = [(2, 1), (4, 2), (8, 4), (16, 4)]
        .into_iter()
        .map(|(a, b)| cell(format!("{a}to{b}"), base("obs4_qp", d, vec![write("a", 4096, a), write("b", 4096, b)])))
        .collect();
    Builtin {
        name: "obs4_qp",
        phenomenon: "Saturated tenants with equal message sizes split bandwidth in the ratio of their QP counts.",
        cells,
    }
}

fn obs5(d: u64) -> Builtin {
    let cells = [256, 512, 1024, 2048, 4096, 8192]
        .into_iter()
        .map(|b| cell(format!("b{b}"), base("obs5_mixture", d, vec![write("a", 4096, 1), write("b", b, 1)])))
        .collect();
    Builtin {
        name: "obs5_mixture",
        phenomenon: "Mixing message sizes shifts bandwidth non-linearly toward the larger messages.",
        cells,
    }
}

/// Longer host read latency and fewer tags make reads latency-bound, so
/// the write direction wins.
pub fn obs6_pcie() -> PcieConfig {
    PcieConfig {
        read_tags: 8,
        read_latency_ns: 1000,
        ..PcieConfig::default()
    }
}

fn obs6(d: u64) -> Builtin {
    let mk = |label: &str, flows| {
        let mut s = base("obs6_direction", d, flows);
        s.pcie = obs6_pcie();
        cell(label, s)
    };
    Builtin {
        name: "obs6_direction",
        phenomenon: "Direction matters: device-to-host writes take more than their share against host-to-device reads.",
        cells: vec![
            mk("write_write", vec![write("a", 4096, 1), write("b", 4096, 1)]),
            mk("write_read", vec![write("a", 4096, 1), read("b", 4096, 1)]),
        ],
    }
}

fn mrrs(mut s: Scenario, bytes: u32) -> Scenario {
    s.pcie.max_read_req_size = bytes;
    s
}

fn obs7(d: u64) -> Builtin {
    Builtin {
        name: "obs7_metrics",
        phenomenon: "Below the MTU tenants are IOPS-fair but not Gbps-fair; above it they are Gbps-fair but not IOPS-fair.",
        cells: vec![
            cell("512_64", mrrs(raw(base("obs7_metrics", d, vec![read("a", 512, 1), read("b", 64, 1)])), 512)),
            cell("1k_4k", mrrs(raw(base("obs7_metrics", d, vec![read("a", 1024, 1), read("b", 4096, 1)])), 512)),
        ],
    }
}

/// Quadrant sizes, in cell order.
pub const OBS8_CELLS: [(u32, u32); 4] = [(128, 128), (128, 1024), (1024, 128), (1024, 1024)];

fn obs8(d: u64) -> Builtin {
    let cells = OBS8_CELLS
        .into_iter()
        .map(|(a, b)| {
            cell(
                format!("{a}_{b}"),
                mrrs(raw(base("obs8_quadrants", d, vec![read("a", a, 1), read("b", b, 1)])), 256),
            )
        })
        .collect();
    Builtin {
        name: "obs8_quadrants",
        phenomenon: "Fairness is predictable only when both tenants sit on the same side of the MTU.",
        cells,
    }
}

fn obs9(d: u64) -> Builtin {
    let mut cells = vec![cell("reader_solo", raw(base("obs9_duplex", d, vec![read("reader", 4096, 1)])))];
    for w in OBS9_WRITE_SIZES {
        cells.push(cell(
            format!("writer_solo_{w}"),
            raw(base("obs9_duplex", d, vec![write("writer", w, 1)])),
        ));
        cells.push(cell(
            format!("w{w}"),
            raw(base("obs9_duplex", d, vec![read("reader", 4096, 1), write("writer", w, 1)])),
        ));
    }
    Builtin {
        name: "obs9_duplex",
        phenomenon: "Full duplex keeps a reader stable whatever a co-located writer does; the writer varies little.",
        cells,
    }
}

fn obs10(d: u64) -> Builtin {
    let cells = OBS10_TINY_SIZES
        .into_iter()
        .map(|b| cell(format!("b{b}"), raw(base("obs10_tiny", d, vec![write("big", 4096, 1), write("tiny", b, 1)]))))
        .collect();
    Builtin {
        name: "obs10_tiny",
        phenomenon: "Tiny writes exhaust link credits and collapse aggregate throughput.",
        cells,
    }
}

fn gbps_sla(tenant: &str, min: f64) -> Sla {
    Sla {
        tenant_id: tenant.to_string(),
        metric: RateMetric::Gbps,
        min_rate: min,
        max_rate: None,
        measured_at: MeasuredAt::UserLevel,
    }
}

fn shaping_ab(d: u64) -> Builtin {
    let mk = |on: bool| {
        let mut s = base(
            "shaping_ab",
            d,
            vec![write("bulk", 4096, 2), write("tiny", 16, 4), accel("crypto", "aes", 4096, 1)],
        );
        s.profiles = builtin_profiles();
        s.slas = vec![gbps_sla("bulk", 20.0), gbps_sla("crypto", 8.0)];
        cell(if on { "on" } else { "off" }, s.with_shaping(on))
    };
    Builtin {
        name: "shaping_ab",
        phenomenon: "The same tenants with shaping off and on: shaping restores the guaranteed rates.",
        cells: vec![mk(false), mk(true)],
    }
}

/// The two guaranteed tenants of the adversarial suite.
pub fn adversarial_victims() -> (Vec<FlowSpec>, Vec<Sla>) {
    (
        vec![write("victim", 4096, 2), accel("crypto", "aes", 4096, 1)],
        vec![gbps_sla("victim", 16.0), gbps_sla("crypto", 8.0)],
    )
}

fn sla_adversarial(d: u64) -> Builtin {
    let mut cells = Vec::new();
    for size in ADVERSARY_SIZES {
        for dir in [Direction::AccelToHost, Direction::HostToAccel] {
            for qps in ADVERSARY_QPS {
                for on in [false, true] {
                    let (mut flows, slas) = adversarial_victims();
                    flows.push(FlowSpec::saturating("adversary", dir, size, qps));
                    let mut s = base("sla_adversarial", d, flows);
                    s.profiles = builtin_profiles();
                    s.slas = slas;
                    let d = match dir {
                        Direction::AccelToHost => "w",
                        Direction::HostToAccel => "r",
                    };
                    let label = format!("{d}{size}_q{qps}_{}", if on { "on" } else { "off" });
                    cells.push(cell(label, s.with_shaping(on)));
                }
            }
        }
    }
    Builtin {
        name: "sla_adversarial",
        phenomenon: "Guaranteed tenants keep their minimum rate against any co-tenant once shaping is on.",
        cells,
    }
}

/// Single accelerator tenant whose output is guaranteed at `min_gbps`,
/// through a flat profile with egress ratio `r`.
pub fn sla_inversion(r: f64, min_gbps: f64, duration_ns: u64) -> Scenario {
    let p = AcceleratorProfile::from_points("ratio", &[(64, 40.0), (1 << 20, 40.0)], EgressRule::Proportional(r), 500)
        .expect("valid");
    let mut s = base("sla_inversion", duration_ns, vec![accel("t", "ratio", 4096, 2)]);
    s.profiles = vec![p];
    s.slas = vec![Sla {
        max_rate: Some(min_gbps),
        ..gbps_sla("t", min_gbps)
    }];
    s.with_shaping(true)
}

fn with_seed(mut b: Builtin, seed: u64) -> Builtin {
    for c in &mut b.cells {
        c.scenario.seed = seed;
    }
    b
}

/// Every built-in at the given simulated duration.
pub fn scenario_suite(duration_ns: u64) -> Vec<Builtin> {
    NAMES.iter().map(|n| builtin(n, duration_ns).expect("listed")).collect()
}

pub fn builtin(name: &str, duration_ns: u64) -> Result<Builtin> {
    let b = match name {
        "profile_sweep" => profile_sweep(duration_ns),
        "obs4_qp" => obs4(duration_ns),
        "obs5_mixture" => obs5(duration_ns),
        "obs6_direction" => obs6(duration_ns),
        "obs7_metrics" => obs7(duration_ns),
        "obs8_quadrants" => obs8(duration_ns),
        "obs9_duplex" => obs9(duration_ns),
        "obs10_tiny" => obs10(duration_ns),
        "shaping_ab" => shaping_ab(duration_ns),
        "sla_adversarial" => sla_adversarial(duration_ns),
        _ => return Err(Error::UnknownScenario(name.to_string())),
    };
    Ok(with_seed(b, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates() {
        for b in scenario_suite(1_000_000) {
            assert!(!b.cells.is_empty(), "{}", b.name);
            for c in &b.cells {
                c.scenario.validate().unwrap_or_else(|e| panic!("{}/{}: {e}", b.name, c.label));
            }
            let mut labels: Vec<_> = b.cells.iter().map(|c| &c.label).collect();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), b.cells.len(), "{} labels unique", b.name);
        }
    }

    #[test]
    fn quadrants_enumerate_four_cells() {
        let b = builtin("obs8_quadrants", 1000).unwrap();
        assert_eq!(b.cells.len(), 4);
        assert!(b.cells.iter().all(|c| c.scenario.pcie.max_read_req_size == 256));
    }

    #[test]
    fn shaping_ab_differs_only_in_shaping() {
        let b = builtin("shaping_ab", 1000).unwrap();
        let (off, on) = (&b.cells[0].scenario, &b.cells[1].scenario);
        assert!(!off.shaping_enabled && on.shaping_enabled);
        assert_eq!(off.flows, on.flows);
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(builtin("nope", 1), Err(Error::UnknownScenario(_))));
    }
}
