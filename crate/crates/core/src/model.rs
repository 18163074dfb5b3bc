//! Shared domain types and the pure arithmetic over them: accelerator
//! throughput curves, egress sizing, and SLA-to-ingress inversion.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on a single message.
pub const MAX_MESSAGE_BYTES: u32 = 1 << 22;

/// Payload length of one tenant request, `1..=MAX_MESSAGE_BYTES`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct MessageSize(u32);

impl MessageSize {
    pub fn new(bytes: u32) -> Result<Self> {
        if bytes == 0 || bytes > MAX_MESSAGE_BYTES {
            return Err(Error::config(
                "message_size",
                format!("{bytes} outside 1..={MAX_MESSAGE_BYTES}"),
            ));
        }
        Ok(MessageSize(bytes))
    }

    pub const fn bytes(self) -> u32 {
        self.0
    }

    pub fn bits(self) -> u64 {
        self.0 as u64 * 8
    }
}

impl TryFrom<u32> for MessageSize {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        MessageSize::new(v)
    }
}

impl From<MessageSize> for u32 {
    fn from(m: MessageSize) -> u32 {
        m.0
    }
}

impl fmt::Display for MessageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}B", self.0)
    }
}

/// Which way the heavy payload moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Device reads host memory (DMA read, "HtA").
    HostToAccel,
    /// Device writes host memory (DMA write, "AtH").
    AccelToHost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMetric {
    Gbps,
    Iops,
}

/// How an accelerator's output size relates to its input size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgressRule {
    /// Output is `ratio` times the input (R = Eb/Ib).
    Proportional(f64),
    /// Output is always this many bytes, e.g. a digest.
    #[serde(rename = "fixed")]
    FixedOutput(u32),
}

impl EgressRule {
    fn validate(&self) -> Result<()> {
        match *self {
            EgressRule::Proportional(r) if !(r.is_finite() && r > 0.0) => {
                Err(Error::config("egress.proportional", "ratio must be > 0"))
            }
            EgressRule::FixedOutput(0) => Err(Error::config("egress.fixed", "must be >= 1 byte")),
            _ => Ok(()),
        }
    }
}

/// One point of a throughput-vs-message-size curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64)", into = "(u32, f64)")]
pub struct CurvePoint {
    pub size: u32,
    pub gbps: f64,
}

impl From<(u32, f64)> for CurvePoint {
    fn from((size, gbps): (u32, f64)) -> Self {
        CurvePoint { size, gbps }
    }
}

impl From<CurvePoint> for (u32, f64) {
    fn from(p: CurvePoint) -> Self {
        (p.size, p.gbps)
    }
}

/// An accelerator's compute characteristics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDoc", into = "ProfileDoc")]
pub struct AcceleratorProfile {
    name: String,
    curve: Vec<CurvePoint>,
    egress: EgressRule,
    fixed_latency_ns: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    name: String,
    curve: Vec<CurvePoint>,
    egress: EgressRule,
    #[serde(default = "default_fixed_latency_ns")]
    fixed_latency_ns: u64,
}

fn default_fixed_latency_ns() -> u64 {
    500
}

impl TryFrom<ProfileDoc> for AcceleratorProfile {
    type Error = Error;
    fn try_from(d: ProfileDoc) -> Result<Self> {
        AcceleratorProfile::new(d.name, d.curve, d.egress, d.fixed_latency_ns)
    }
}

impl From<AcceleratorProfile> for ProfileDoc {
    fn from(p: AcceleratorProfile) -> Self {
        ProfileDoc {
            name: p.name,
            curve: p.curve,
            egress: p.egress,
            fixed_latency_ns: p.fixed_latency_ns,
        }
    }
}

impl AcceleratorProfile {
    pub fn new(
        name: impl Into<String>,
        curve: Vec<CurvePoint>,
        egress: EgressRule,
        fixed_latency_ns: u64,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::config("profile.name", "must not be empty"));
        }
        if curve.len() < 2 {
            return Err(Error::config(
                format!("profile[{name}].curve"),
                "needs at least 2 points",
            ));
        }
        for (i, p) in curve.iter().enumerate() {
            if p.size == 0 || p.size > MAX_MESSAGE_BYTES {
                return Err(Error::config(
                    format!("profile[{name}].curve[{i}]"),
                    "size out of range",
                ));
            }
            if !(p.gbps.is_finite() && p.gbps > 0.0) {
                return Err(Error::config(
                    format!("profile[{name}].curve[{i}]"),
                    "throughput must be > 0",
                ));
            }
            if i > 0 && curve[i - 1].size >= p.size {
                return Err(Error::config(
                    format!("profile[{name}].curve[{i}]"),
                    "sizes must be strictly ascending",
                ));
            }
        }
        egress.validate()?;
        Ok(AcceleratorProfile {
            name,
            curve,
            egress,
            fixed_latency_ns,
        })
    }

    /// Convenience for building curves from `(size, gbps)` tuples.
    pub fn from_points(
        name: impl Into<String>,
        points: &[(u32, f64)],
        egress: EgressRule,
        fixed_latency_ns: u64,
    ) -> Result<Self> {
        Self::new(
            name,
            points.iter().copied().map(CurvePoint::from).collect(),
            egress,
            fixed_latency_ns,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn egress(&self) -> EgressRule {
        self.egress
    }

    pub fn fixed_latency_ns(&self) -> u64 {
        self.fixed_latency_ns
    }
}

/// Compute throughput of `profile` at `size`.
///
/// Piecewise-linear in `(log2(size), gbps)`, exact at curve points and
/// clamped to the end values outside the curve.
pub fn interpolate_throughput(profile: &AcceleratorProfile, size: MessageSize) -> f64 {
    let curve = &profile.curve;
    let s = size.bytes();
    let first = curve[0];
    let last = curve[curve.len() - 1];
    if s <= first.size {
        return first.gbps;
    }
    if s >= last.size {
        return last.gbps;
    }
    // First point strictly above s; its predecessor is <= s.
    let hi = curve.partition_point(|p| p.size <= s);
    let (a, b) = (curve[hi - 1], curve[hi]);
    if a.size == s {
        return a.gbps;
    }
    let (la, lb, ls) = (
        (a.size as f64).log2(),
        (b.size as f64).log2(),
        (s as f64).log2(),
    );
    let t = (ls - la) / (lb - la);
    a.gbps + t * (b.gbps - a.gbps)
}

/// Output length produced for one input of `ingress` bytes.
///
/// Proportional outputs round half-up to whole bytes with a floor of 1. The
/// result is a raw byte count because expanding rules may exceed the
/// per-message input cap.
pub fn egress_size(rule: EgressRule, ingress: MessageSize) -> u32 {
    match rule {
        EgressRule::Proportional(r) => {
            let out = (ingress.bytes() as f64 * r + 0.5).floor();
            out.clamp(1.0, u32::MAX as f64) as u32
        }
        EgressRule::FixedOutput(b) => b,
    }
}

/// Which measurement point an SLA is promised at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasuredAt {
    /// Accelerator output (or plain DMA payload) delivered to the tenant.
    #[default]
    UserLevel,
    /// Raw ingress into the device.
    Ingress,
}

/// A tenant's rate guarantee.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sla {
    pub tenant_id: String,
    pub metric: RateMetric,
    /// Gbps or operations per second, per `metric`.
    pub min_rate: f64,
    /// `None` is unbounded.
    #[serde(default)]
    pub max_rate: Option<f64>,
    #[serde(default)]
    pub measured_at: MeasuredAt,
}

impl Sla {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.min_rate.is_finite() && self.min_rate > 0.0) {
            return Err(Error::config(format!("{path}.min_rate"), "must be > 0"));
        }
        if let Some(max) = self.max_rate {
            if max.is_nan() || max < self.min_rate {
                return Err(Error::config(
                    format!("{path}.max_rate"),
                    "must be >= min_rate",
                ));
            }
        }
        Ok(())
    }
}

/// The resource that makes an SLA unattainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binding {
    Link,
    Accelerator,
    Policy,
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Binding::Link => "link",
            Binding::Accelerator => "accelerator",
            Binding::Policy => "policy",
        })
    }
}

/// Ingress data rate needed to honour an SLA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngressRequirement {
    pub rate_gbps: f64,
    pub feasible: bool,
    pub binding: Option<Binding>,
}

impl IngressRequirement {
    pub fn require(self, tenant: &str) -> Result<f64> {
        match self.binding {
            None => Ok(self.rate_gbps),
            Some(binding) => Err(Error::InfeasibleSla {
                tenant: tenant.to_string(),
                binding,
            }),
        }
    }
}

/// Converts a guarantee into the ingress rate X' the shaper must pull at.
///
/// `profile` is `None` for plain DMA tenants (identity transform).
/// `ingress_budget_gbps` is the link share available to this tenant.
pub fn invert_sla(
    profile: Option<&AcceleratorProfile>,
    sla: &Sla,
    shaped_size: MessageSize,
    ingress_budget_gbps: f64,
) -> IngressRequirement {
    let infeasible = |rate_gbps, binding| IngressRequirement {
        rate_gbps,
        feasible: false,
        binding: Some(binding),
    };
    let rate = match (sla.metric, sla.measured_at) {
        (RateMetric::Iops, _) => sla.min_rate * shaped_size.bits() as f64 / 1e9,
        (RateMetric::Gbps, MeasuredAt::Ingress) => sla.min_rate,
        (RateMetric::Gbps, MeasuredAt::UserLevel) => match profile.map(|p| p.egress) {
            None => sla.min_rate,
            Some(EgressRule::Proportional(r)) => sla.min_rate / r,
            Some(EgressRule::FixedOutput(_)) => return infeasible(f64::INFINITY, Binding::Policy),
        },
    };
    if let Some(p) = profile {
        if rate > interpolate_throughput(p, shaped_size) {
            return infeasible(rate, Binding::Accelerator);
        }
    }
    if rate > ingress_budget_gbps {
        return infeasible(rate, Binding::Link);
    }
    IngressRequirement {
        rate_gbps: rate,
        feasible: true,
        binding: None,
    }
}

/// Message-size distribution of one flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeDist {
    Fixed(MessageSize),
    UniformChoice(Vec<MessageSize>),
}

impl SizeDist {
    pub fn choices(&self) -> &[MessageSize] {
        match self {
            SizeDist::Fixed(s) => std::slice::from_ref(s),
            SizeDist::UniformChoice(v) => v,
        }
    }

    pub fn mean_bytes(&self) -> f64 {
        let c = self.choices();
        c.iter().map(|s| s.bytes() as f64).sum::<f64>() / c.len() as f64
    }

    pub fn min(&self) -> MessageSize {
        *self.choices().iter().min().expect("non-empty")
    }

    pub fn max(&self) -> MessageSize {
        *self.choices().iter().max().expect("non-empty")
    }
}

/// One tenant's traffic pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub tenant_id: String,
    pub direction: Direction,
    pub size_dist: SizeDist,
    pub qp_count: u32,
    /// Offered load in Gbps; `None` means saturating (closed loop).
    #[serde(default)]
    pub offered_rate: Option<f64>,
    /// Name of the accelerator profile this flow invokes.
    #[serde(default)]
    pub accelerator: Option<String>,
}

impl FlowSpec {
    /// Saturating single-size flow without an accelerator.
    pub fn saturating(tenant: &str, direction: Direction, bytes: u32, qps: u32) -> Self {
        FlowSpec {
            tenant_id: tenant.to_string(),
            direction,
            size_dist: SizeDist::Fixed(MessageSize::new(bytes).expect("valid size")),
            qp_count: qps,
            offered_rate: None,
            accelerator: None,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.tenant_id.is_empty() {
            return Err(Error::config(format!("{path}.tenant_id"), "must not be empty"));
        }
        if self.qp_count == 0 {
            return Err(Error::config(format!("{path}.qp_count"), "must be >= 1"));
        }
        if let SizeDist::UniformChoice(v) = &self.size_dist {
            if v.is_empty() {
                return Err(Error::config(
                    format!("{path}.size_dist.uniform_choice"),
                    "must list at least one size",
                ));
            }
        }
        if let Some(r) = self.offered_rate {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::config(format!("{path}.offered_rate"), "must be > 0"));
            }
        }
        Ok(())
    }
}

fn is_pow2_in(v: u32, lo: u32, hi: u32) -> bool {
    v.is_power_of_two() && (lo..=hi).contains(&v)
}

/// Host-link parameters. The defaults model a PCIe Gen3 x8 root port.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcieConfig {
    /// Per-direction line rate in Gbps.
    pub link_rate: f64,
    pub max_payload_size: u32,
    pub max_read_req_size: u32,
    /// Header, framing and LCRC bytes charged to every MemWrite TLP.
    pub tlp_header_bytes: u32,
    /// Wire size of a MemReadReq TLP.
    pub read_request_bytes: u32,
    /// Header credits advertised by each receiver.
    pub credit_headers: u32,
    /// Data credits (in bytes) advertised by each receiver.
    pub credit_data_bytes: u32,
    /// Header bytes of a Completion TLP.
    pub completion_header_bytes: u32,
    /// Time a receiver holds a TLP's credits after it arrives.
    pub drain_latency_ns: u64,
    /// Extra credit hold per read-modify-write beat for writes that only
    /// partially cover a cache line.
    pub partial_write_ns: u64,
    pub cache_line_bytes: u32,
    /// Host memory latency from read request arrival to first completion.
    pub read_latency_ns: u64,
    /// Outstanding read requests the device can track.
    pub read_tags: u32,
}

impl Default for PcieConfig {
    fn default() -> Self {
        PcieConfig {
            link_rate: 63.0,
            max_payload_size: 256,
            max_read_req_size: 512,
            tlp_header_bytes: 24,
            read_request_bytes: 24,
            credit_headers: 16,
            credit_data_bytes: 8192,
            completion_header_bytes: 24,
            drain_latency_ns: 200,
            partial_write_ns: 680,
            cache_line_bytes: 64,
            read_latency_ns: 400,
            read_tags: 64,
        }
    }
}

impl PcieConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        let err = |field: &str, why: &str| Err(Error::config(format!("{path}.{field}"), why));
        if !(self.link_rate.is_finite() && self.link_rate > 0.0) {
            return err("link_rate", "must be > 0");
        }
        if !is_pow2_in(self.max_payload_size, 128, 4096) {
            return err("max_payload_size", "must be a power of two in [128, 4096]");
        }
        if !is_pow2_in(self.max_read_req_size, 128, 4096) {
            return err("max_read_req_size", "must be a power of two in [128, 4096]");
        }
        for (field, v) in [
            ("tlp_header_bytes", self.tlp_header_bytes),
            ("read_request_bytes", self.read_request_bytes),
            ("credit_headers", self.credit_headers),
            ("completion_header_bytes", self.completion_header_bytes),
            ("cache_line_bytes", self.cache_line_bytes),
            ("read_tags", self.read_tags),
        ] {
            if v == 0 {
                return err(field, "must be >= 1");
            }
        }
        if self.credit_data_bytes < self.max_payload_size {
            return err("credit_data_bytes", "must cover one max-size payload");
        }
        Ok(())
    }

    /// Largest single-TLP transfer for a given DMA direction (the "MTU").
    pub fn mtu_for(&self, direction: Direction) -> u32 {
        match direction {
            Direction::AccelToHost => self.max_payload_size,
            Direction::HostToAccel => self.max_read_req_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(b: u32) -> MessageSize {
        MessageSize::new(b).unwrap()
    }

    fn profile(points: &[(u32, f64)], egress: EgressRule) -> AcceleratorProfile {
        AcceleratorProfile::from_points("p", points, egress, 0).unwrap()
    }

    #[test]
    fn interpolation_examples() {
        let flat = profile(&[(1024, 10.0), (4096, 10.0)], EgressRule::Proportional(1.0));
        assert_eq!(interpolate_throughput(&flat, ms(2048)), 10.0);

        let ramp = profile(&[(1024, 8.0), (4096, 16.0)], EgressRule::Proportional(1.0));
        assert!((interpolate_throughput(&ramp, ms(2048)) - 12.0).abs() < 1e-12);
        assert_eq!(interpolate_throughput(&ramp, ms(64)), 8.0);
        assert_eq!(interpolate_throughput(&ramp, ms(1 << 20)), 16.0);
    }

    #[test]
    fn egress_examples() {
        assert_eq!(egress_size(EgressRule::Proportional(1.0), ms(4096)), 4096);
        assert_eq!(egress_size(EgressRule::FixedOutput(64), ms(1 << 20)), 64);
        assert_eq!(egress_size(EgressRule::Proportional(0.5), ms(4096)), 2048);
        // round half up, floor at one byte
        assert_eq!(egress_size(EgressRule::Proportional(0.5), ms(3)), 2);
        assert_eq!(egress_size(EgressRule::Proportional(0.001), ms(1)), 1);
    }

    #[test]
    fn invert_sla_examples() {
        let half = profile(&[(64, 40.0), (8192, 40.0)], EgressRule::Proportional(0.5));
        let sla = Sla {
            tenant_id: "a".into(),
            metric: RateMetric::Gbps,
            min_rate: 5.0,
            max_rate: None,
            measured_at: MeasuredAt::UserLevel,
        };
        let req = invert_sla(Some(&half), &sla, ms(4096), 63.0);
        assert!(req.feasible);
        assert_eq!(req.rate_gbps, 10.0);

        let ident = profile(&[(64, 40.0), (8192, 40.0)], EgressRule::Proportional(1.0));
        let iops = Sla {
            metric: RateMetric::Iops,
            min_rate: 1e6,
            ..sla.clone()
        };
        let req = invert_sla(Some(&ident), &iops, ms(1024), 63.0);
        assert!((req.rate_gbps - 8.192).abs() < 1e-12);

        // accelerator only does 9 Gbps at this size
        let slow = profile(&[(64, 9.0), (8192, 9.0)], EgressRule::Proportional(0.5));
        let req = invert_sla(Some(&slow), &sla, ms(4096), 63.0);
        assert!(!req.feasible);
        assert_eq!(req.binding, Some(Binding::Accelerator));
        assert!(req.require("a").is_err());
    }

    #[test]
    fn fixed_output_rejects_egress_gbps() {
        let sha = profile(&[(64, 20.0), (8192, 20.0)], EgressRule::FixedOutput(64));
        let sla = Sla {
            tenant_id: "h".into(),
            metric: RateMetric::Gbps,
            min_rate: 1.0,
            max_rate: None,
            measured_at: MeasuredAt::UserLevel,
        };
        let req = invert_sla(Some(&sha), &sla, ms(4096), 63.0);
        assert_eq!(req.binding, Some(Binding::Policy));
        // ingress-measured guarantees are fine
        let ingress = Sla {
            measured_at: MeasuredAt::Ingress,
            ..sla
        };
        assert!(invert_sla(Some(&sha), &ingress, ms(4096), 63.0).feasible);
    }

    #[test]
    fn link_budget_binds_without_profile() {
        let sla = Sla {
            tenant_id: "x".into(),
            metric: RateMetric::Gbps,
            min_rate: 100.0,
            max_rate: None,
            measured_at: MeasuredAt::UserLevel,
        };
        let req = invert_sla(None, &sla, ms(4096), 63.0);
        assert_eq!(req.binding, Some(Binding::Link));
    }

    #[test]
    fn profile_validation() {
        assert!(AcceleratorProfile::from_points("x", &[(64, 1.0)], EgressRule::Proportional(1.0), 0).is_err());
        assert!(AcceleratorProfile::from_points(
            "x",
            &[(128, 1.0), (64, 2.0)],
            EgressRule::Proportional(1.0),
            0
        )
        .is_err());
        assert!(AcceleratorProfile::from_points(
            "x",
            &[(64, 1.0), (128, 0.0)],
            EgressRule::Proportional(1.0),
            0
        )
        .is_err());
        assert!(AcceleratorProfile::from_points(
            "x",
            &[(64, 1.0), (128, 2.0)],
            EgressRule::Proportional(0.0),
            0
        )
        .is_err());
    }

    #[test]
    fn profile_json_round_trip() {
        let doc = r#"{"name":"zip","curve":[[1024,8.0],[4096,16.0]],"egress":{"proportional":0.5},"fixed_latency_ns":250}"#;
        let p: AcceleratorProfile = serde_json::from_str(doc).unwrap();
        assert_eq!(p.egress(), EgressRule::Proportional(0.5));
        assert_eq!(p.fixed_latency_ns(), 250);
        let back: AcceleratorProfile = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);

        let sha = r#"{"name":"sha","curve":[[64,2.0],[4096,20.0]],"egress":{"fixed":64}}"#;
        let p: AcceleratorProfile = serde_json::from_str(sha).unwrap();
        assert_eq!(p.egress(), EgressRule::FixedOutput(64));

        let bad = r#"{"name":"x","curve":[[64,2.0],[4096,20.0]],"egress":{"fixed":64},"extra":1}"#;
        assert!(serde_json::from_str::<AcceleratorProfile>(bad).is_err());
    }

    #[test]
    fn pcie_defaults_are_valid() {
        PcieConfig::default().validate("pcie").unwrap();
        let bad = PcieConfig {
            max_payload_size: 300,
            ..PcieConfig::default()
        };
        assert!(bad.validate("pcie").is_err());
    }

    #[test]
    fn message_size_bounds() {
        assert!(MessageSize::new(0).is_err());
        assert!(MessageSize::new(MAX_MESSAGE_BYTES + 1).is_err());
        assert!(MessageSize::new(MAX_MESSAGE_BYTES).is_ok());
    }
}
