//! Static admission planning: resize policy, SLA inversion, joint capacity
//! check across link, credit, tag and engine resources, spare-capacity
//! sharing and QP reallocation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{normalize, BucketSpec, ResizePolicy, ShaperConfig, DEFAULT_BURST_MSGS, DEFAULT_SMALL_MSG_FLOOR};
use crate::error::{Error, Result};
use crate::fabric::{completions_for, credit_hold, effective_peak, segment, DmaOp, TlpOrigin};
use crate::model::{
    egress_size, interpolate_throughput, invert_sla, AcceleratorProfile, Binding, Direction, EgressRule,
    FlowSpec, MeasuredAt, MessageSize, PcieConfig, RateMetric, Sla,
};
use crate::ring::RingConfig;
use crate::time::BitRate;

/// How spare capacity is shared once guarantees are placed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcessSharing {
    /// Equal Gbps increments for every tenant that can still grow.
    #[default]
    RoundRobin,
    /// Increments proportional to each tenant's guaranteed minimum.
    Weighted,
}

/// Knobs of the planner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanParams {
    pub small_msg_floor: u32,
    /// Bucket depth in messages.
    pub burst_msgs: u32,
    /// Highest planned utilization of any shared resource.
    pub utilization_cap: f64,
    pub excess: ExcessSharing,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            small_msg_floor: DEFAULT_SMALL_MSG_FLOOR,
            burst_msgs: DEFAULT_BURST_MSGS,
            utilization_cap: 0.9,
            excess: ExcessSharing::RoundRobin,
        }
    }
}

impl PlanParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.utilization_cap > 0.0 && self.utilization_cap <= 1.0) {
            return Err(Error::config(format!("{path}.utilization_cap"), "must be in (0, 1]"));
        }
        if self.burst_msgs == 0 {
            return Err(Error::config(format!("{path}.burst_msgs"), "must be >= 1"));
        }
        Ok(())
    }
}

/// MTU the flow's payload is chopped against.
fn flow_mtu(flow: &FlowSpec, cfg: &PcieConfig) -> u32 {
    if flow.accelerator.is_some() {
        cfg.max_read_req_size
    } else {
        cfg.mtu_for(flow.direction)
    }
}

/// Keeps every wire message on one side of the MTU, and lifts tiny messages
/// to the floor.
pub fn choose_resize(flow: &FlowSpec, cfg: &PcieConfig, floor: u32) -> ResizePolicy {
    let mtu = flow_mtu(flow, cfg);
    let (lo, hi) = (flow.size_dist.min().bytes(), flow.size_dist.max().bytes());
    if lo <= mtu && hi > mtu {
        ResizePolicy::SplitTo(mtu)
    } else if lo < floor && hi <= mtu {
        ResizePolicy::PadTo(floor)
    } else {
        ResizePolicy::None
    }
}

/// Size the accelerator (or the link, for plain DMA) sees after resizing.
fn shaped_size(flow: &FlowSpec, resize: ResizePolicy) -> MessageSize {
    let mean = flow.size_dist.mean_bytes().round().max(1.0) as u32;
    let s = match resize {
        ResizePolicy::None => mean,
        ResizePolicy::SplitTo(t) => mean.min(t),
        ResizePolicy::PadTo(t) => mean.max(t),
        ResizePolicy::BatchTo { bytes, .. } => bytes.max(mean),
    };
    MessageSize::new(s.clamp(1, crate::model::MAX_MESSAGE_BYTES)).expect("clamped")
}

fn flow_op(flow: &FlowSpec) -> DmaOp {
    match (flow.accelerator.is_some(), flow.direction) {
        (false, Direction::AccelToHost) => DmaOp::Write,
        _ => DmaOp::Read,
    }
}

fn burst_bits(flow: &FlowSpec, params: &PlanParams) -> f64 {
    params.burst_msgs as f64 * flow.size_dist.max().bits() as f64
}

/// Plans one tenant in isolation: resize, SLA inversion against the full
/// link, and a bucket of `burst_msgs` messages at the required pace.
pub fn plan_shaping(
    sla: &Sla,
    flow: &FlowSpec,
    profile: Option<&AcceleratorProfile>,
    cfg: &PcieConfig,
) -> Result<ShaperConfig> {
    let params = PlanParams::default();
    let resize = choose_resize(flow, cfg, params.small_msg_floor);
    let size = shaped_size(flow, resize);
    let budget = effective_peak(cfg, size, flow_op(flow)).min(cfg.link_rate);
    let x = invert_sla(profile, sla, size, budget).require(&sla.tenant_id)?;
    let (min_bucket, max_bucket) = sla_buckets(sla, flow, profile, &params, x);
    Ok(ShaperConfig {
        tenant_id: flow.tenant_id.clone(),
        min_bucket,
        max_bucket,
        pace: min_bucket,
        resize,
        qp_count: flow.qp_count,
        small_msg_floor: params.small_msg_floor,
    })
}

/// User-payload Gbps equivalent of an SLA bound.
fn sla_to_gbps(metric: RateMetric, measured: MeasuredAt, rate: f64, flow: &FlowSpec, profile: Option<&AcceleratorProfile>) -> f64 {
    match (metric, measured, profile.map(|p| p.egress())) {
        (RateMetric::Iops, _, _) => rate * flow.size_dist.mean_bytes() * 8.0 / 1e9,
        (RateMetric::Gbps, MeasuredAt::UserLevel, Some(EgressRule::Proportional(r))) => rate / r,
        (RateMetric::Gbps, _, _) => rate,
    }
}

fn sla_buckets(
    sla: &Sla,
    flow: &FlowSpec,
    profile: Option<&AcceleratorProfile>,
    params: &PlanParams,
    min_gbps: f64,
) -> (BucketSpec, Option<BucketSpec>) {
    let burst_ops = params.burst_msgs as f64;
    match sla.metric {
        RateMetric::Iops => (
            BucketSpec::iops(sla.min_rate, burst_ops),
            sla.max_rate.map(|m| BucketSpec::iops(m, burst_ops)),
        ),
        RateMetric::Gbps => (
            BucketSpec::gbps(min_gbps, burst_bits(flow, params)),
            sla.max_rate.map(|m| {
                BucketSpec::gbps(sla_to_gbps(sla.metric, sla.measured_at, m, flow, profile), burst_bits(flow, params))
            }),
        ),
    }
}

/// Per-`Gbps` load a tenant puts on each shared resource, as a fraction of
/// that resource's capacity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResourceUse {
    pub ath_link: f64,
    pub hta_link: f64,
    pub host_header_credits: f64,
    pub host_data_credits: f64,
    pub read_tags: f64,
    /// Engine index and its load.
    pub engine: Option<(usize, f64)>,
}

#[derive(Default)]
struct Raw {
    ath_bytes: f64,
    hta_bytes: f64,
    hdr_secs: f64,
    data_byte_secs: f64,
    tag_secs: f64,
    engine_secs: f64,
}

impl Raw {
    fn add_scaled(&mut self, o: &Raw, k: f64) {
        self.ath_bytes += o.ath_bytes * k;
        self.hta_bytes += o.hta_bytes * k;
        self.hdr_secs += o.hdr_secs * k;
        self.data_byte_secs += o.data_byte_secs * k;
        self.tag_secs += o.tag_secs * k;
        self.engine_secs += o.engine_secs * k;
    }

    fn write(&mut self, bytes: u32, cfg: &PcieConfig) {
        let rate = BitRate::from_gbps(cfg.link_rate);
        for t in segment(bytes, DmaOp::Write, cfg, TlpOrigin::default()) {
            let hold = (rate.transfer_time(t.wire_bytes() as u64) + credit_hold(&t, cfg)).as_secs_f64();
            self.ath_bytes += t.wire_bytes() as f64;
            self.hdr_secs += hold;
            self.data_byte_secs += t.payload_bytes as f64 * hold;
        }
    }

    fn read(&mut self, bytes: u32, cfg: &PcieConfig) {
        let rate = BitRate::from_gbps(cfg.link_rate);
        for r in segment(bytes, DmaOp::Read, cfg, TlpOrigin::default()) {
            let req = rate.transfer_time(r.wire_bytes() as u64);
            let cpl_bytes: u32 = completions_for(&r, cfg).iter().map(|c| c.wire_bytes()).sum();
            let cpl = rate.transfer_time(cpl_bytes as u64);
            self.ath_bytes += r.wire_bytes() as f64;
            self.hdr_secs += (req + credit_hold(&r, cfg)).as_secs_f64();
            self.hta_bytes += cpl_bytes as f64;
            self.tag_secs += (req + cpl).as_secs_f64() + cfg.read_latency_ns as f64 * 1e-9;
        }
    }
}

fn wire_cost(wire: u32, flow: &FlowSpec, profile: Option<&AcceleratorProfile>, cfg: &PcieConfig) -> Raw {
    let mut raw = Raw::default();
    match profile {
        Some(p) => {
            let size = MessageSize::new(wire.min(crate::model::MAX_MESSAGE_BYTES)).expect("non-zero wire size");
            raw.read(wire, cfg);
            raw.write(egress_size(p.egress(), size), cfg);
            raw.engine_secs = size.bits() as f64 / (interpolate_throughput(p, size) * 1e9);
        }
        None => match flow.direction {
            Direction::AccelToHost => raw.write(wire, cfg),
            Direction::HostToAccel => raw.read(wire, cfg),
        },
    }
    raw
}

/// Load per Gbps of user payload for `flow` under `resize`.
pub fn message_costs(
    flow: &FlowSpec,
    resize: ResizePolicy,
    profile: Option<(usize, &AcceleratorProfile)>,
    cfg: &PcieConfig,
    ring: &RingConfig,
) -> ResourceUse {
    let choices = flow.size_dist.choices();
    let mut per_msg = Raw::default();
    for s in choices {
        let s = s.bytes();
        let k = 1.0 / choices.len() as f64;
        match resize {
            ResizePolicy::BatchTo { bytes, .. } if s < bytes => {
                let n = (bytes / s).max(1);
                per_msg.add_scaled(&wire_cost(n * s, flow, profile.map(|p| p.1), cfg), k / n as f64);
            }
            _ => {
                for piece in normalize(s, resize).pieces {
                    per_msg.add_scaled(&wire_cost(piece.wire_bytes(), flow, profile.map(|p| p.1), cfg), k);
                }
            }
        }
        // Ring traffic, assuming one descriptor per fetch.
        if ring.descriptor_bytes > 0 {
            let mut r = Raw::default();
            r.read(ring.descriptor_bytes, cfg);
            per_msg.add_scaled(&r, k);
        }
        if ring.completion_bytes > 0 {
            let mut r = Raw::default();
            r.write(ring.completion_bytes, cfg);
            per_msg.add_scaled(&r, k);
        }
    }
    let msgs_per_gbps = 1e9 / (flow.size_dist.mean_bytes() * 8.0);
    let link_bytes_per_sec = cfg.link_rate * 1e9 / 8.0;
    ResourceUse {
        ath_link: per_msg.ath_bytes * msgs_per_gbps / link_bytes_per_sec,
        hta_link: per_msg.hta_bytes * msgs_per_gbps / link_bytes_per_sec,
        host_header_credits: per_msg.hdr_secs * msgs_per_gbps / cfg.credit_headers as f64,
        host_data_credits: per_msg.data_byte_secs * msgs_per_gbps / cfg.credit_data_bytes as f64,
        read_tags: per_msg.tag_secs * msgs_per_gbps / cfg.read_tags as f64,
        engine: profile.map(|(i, _)| (i, per_msg.engine_secs * msgs_per_gbps)),
    }
}

/// Splits `total` QPs: one per tenant, the rest by largest remainder on
/// `weights`. Ties go to the lower index.
pub fn allocate_qps(weights: &[f64], total: u32) -> Vec<u32> {
    let n = weights.len() as u32;
    if n == 0 {
        return Vec::new();
    }
    let (base, spare) = if total >= n { (1, total - n) } else { (0, total) };
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum * spare as f64).collect()
    } else {
        vec![spare as f64 / n as f64; n as usize]
    };
    let mut out: Vec<u32> = quotas.iter().map(|q| base + q.floor() as u32).collect();
    let mut left = total - out.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Planning outcome for one tenant.
#[derive(Clone, Debug, PartialEq)]
pub struct TenantPlan {
    pub shaper: ShaperConfig,
    /// Guaranteed user-payload Gbps (zero for best effort).
    pub min_gbps: f64,
    /// Guarantee plus spare share: the pace the shaper enforces.
    pub planned_gbps: f64,
    pub has_sla: bool,
}

/// Joint plan for every tenant of a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissionPlan {
    pub tenants: Vec<TenantPlan>,
    /// `(resource, planned utilization)`.
    pub utilization: Vec<(String, f64)>,
}

impl AdmissionPlan {
    pub fn shaper(&self, tenant: &str) -> Option<&ShaperConfig> {
        self.tenants.iter().find(|t| t.shaper.tenant_id == tenant).map(|t| &t.shaper)
    }

    /// Human-readable table: tenant, bucket rate, resize, QPs, feasibility.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:>10} {:<22} {:>4}  status",
            "tenant", "min_gbps", "pace_gbps", "resize", "qps"
        );
        for t in &self.tenants {
            let resize = match t.shaper.resize {
                ResizePolicy::None => "none".to_string(),
                ResizePolicy::SplitTo(b) => format!("split_to({b})"),
                ResizePolicy::PadTo(b) => format!("pad_to({b})"),
                ResizePolicy::BatchTo { bytes, max_delay_ns } => format!("batch_to({bytes},{max_delay_ns}ns)"),
            };
            let _ = writeln!(
                s,
                "{:<16} {:>10.3} {:>10.3} {:<22} {:>4}  {}",
                t.shaper.tenant_id,
                t.min_gbps,
                t.planned_gbps,
                resize,
                t.shaper.qp_count,
                if t.has_sla { "admitted" } else { "best-effort" }
            );
        }
        for (r, u) in &self.utilization {
            let _ = writeln!(s, "utilization {r:<20} {:>6.1}%", u * 100.0);
        }
        s
    }
}

/// Plans every tenant jointly.
///
/// Guarantees are admitted only if their combined load keeps every shared
/// resource under `utilization_cap`. Remaining capacity is then filled
/// among tenants that can use more, up to their caps and offered loads, in
/// equal or min-weighted steps per `params.excess`.
pub fn plan_admission(
    flows: &[FlowSpec],
    slas: &[Sla],
    profiles: &[AcceleratorProfile],
    cfg: &PcieConfig,
    ring: &RingConfig,
    params: &PlanParams,
) -> Result<AdmissionPlan> {
    let mut engine_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for f in flows {
        if let Some(name) = &f.accelerator {
            let next = engine_ids.len();
            engine_ids.entry(name.as_str()).or_insert(next);
        }
    }
    let profile_of = |f: &FlowSpec| -> Result<Option<(usize, &AcceleratorProfile)>> {
        match &f.accelerator {
            None => Ok(None),
            Some(name) => profiles
                .iter()
                .find(|p| p.name() == name)
                .map(|p| Some((engine_ids[name.as_str()], p)))
                .ok_or_else(|| Error::config(format!("flows[{}].accelerator", f.tenant_id), format!("unknown profile `{name}`"))),
        }
    };

    struct Row<'a> {
        flow: &'a FlowSpec,
        sla: Option<&'a Sla>,
        profile: Option<&'a AcceleratorProfile>,
        resize: ResizePolicy,
        cost: ResourceUse,
        lower: f64,
        upper: f64,
    }

    let mut rows = Vec::with_capacity(flows.len());
    for f in flows {
        let prof = profile_of(f)?;
        let sla = slas.iter().find(|s| s.tenant_id == f.tenant_id);
        let resize = choose_resize(f, cfg, params.small_msg_floor);
        let size = shaped_size(f, resize);
        let cost = message_costs(f, resize, prof, cfg, ring);
        let mut upper = f.offered_rate.unwrap_or(f64::INFINITY);
        let mut lower = 0.0;
        if let Some(s) = sla {
            let budget = effective_peak(cfg, size, flow_op(f)).min(cfg.link_rate);
            invert_sla(prof.map(|p| p.1), s, size, budget).require(&s.tenant_id)?;
            lower = sla_to_gbps(s.metric, s.measured_at, s.min_rate, f, prof.map(|p| p.1));
            if let Some(m) = s.max_rate {
                upper = upper.min(sla_to_gbps(s.metric, s.measured_at, m, f, prof.map(|p| p.1)));
            }
        }
        if let Some((_, p)) = prof {
            // The engine can never run faster than its curve at the shaped size.
            upper = upper.min(interpolate_throughput(p, size));
        }
        rows.push(Row {
            flow: f,
            sla,
            profile: prof.map(|p| p.1),
            resize,
            cost,
            lower,
            upper: upper.max(lower),
        });
    }

    // Resource table: (name, binding class, per-row load per Gbps).
    let mut resources: Vec<(String, Binding, Vec<f64>)> = vec![
        ("ath_link".into(), Binding::Link, rows.iter().map(|r| r.cost.ath_link).collect()),
        ("hta_link".into(), Binding::Link, rows.iter().map(|r| r.cost.hta_link).collect()),
        ("host_header_credits".into(), Binding::Link, rows.iter().map(|r| r.cost.host_header_credits).collect()),
        ("host_data_credits".into(), Binding::Link, rows.iter().map(|r| r.cost.host_data_credits).collect()),
        ("read_tags".into(), Binding::Link, rows.iter().map(|r| r.cost.read_tags).collect()),
    ];
    for (name, &id) in &engine_ids {
        resources.push((
            format!("engine:{name}"),
            Binding::Accelerator,
            rows.iter()
                .map(|r| match r.cost.engine {
                    Some((e, v)) if e == id => v,
                    _ => 0.0,
                })
                .collect(),
        ));
    }

    let cap = params.utilization_cap;
    let load = |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let mut x: Vec<f64> = rows.iter().map(|r| r.lower).collect();
    for (_, binding, c) in &resources {
        if load(&x, c) > cap + 1e-12 {
            let blame = (0..rows.len())
                .filter(|&i| rows[i].sla.is_some())
                .max_by(|&a, &b| (x[a] * c[a]).total_cmp(&(x[b] * c[b])).then(b.cmp(&a)))
                .expect("only guarantees load the system before filling");
            return Err(Error::InfeasibleSla {
                tenant: rows[blame].flow.tenant_id.clone(),
                binding: *binding,
            });
        }
    }

    // Progressive filling: tenant i grows by `step * w[i]`.
    let w: Vec<f64> = rows
        .iter()
        .map(|r| match params.excess {
            ExcessSharing::RoundRobin => 1.0,
            ExcessSharing::Weighted => r.lower,
        })
        .collect();
    let mut active: Vec<bool> = (0..rows.len()).map(|i| rows[i].upper > x[i] && w[i] > 0.0).collect();
    while active.iter().any(|&a| a) {
        let mut step = f64::INFINITY;
        for (i, r) in rows.iter().enumerate() {
            if active[i] {
                step = step.min((r.upper - x[i]) / w[i]);
            }
        }
        for (_, _, c) in &resources {
            let slope: f64 = (0..rows.len()).filter(|&i| active[i]).map(|i| c[i] * w[i]).sum();
            if slope > 0.0 {
                step = step.min(((cap - load(&x, c)) / slope).max(0.0));
            }
        }
        if !step.is_finite() {
            break;
        }
        for i in 0..rows.len() {
            if active[i] {
                x[i] += step * w[i];
            }
        }
        for i in 0..rows.len() {
            if active[i] && x[i] >= rows[i].upper - 1e-12 {
                active[i] = false;
            }
        }
        for (_, _, c) in &resources {
            if load(&x, c) >= cap - 1e-9 {
                for i in 0..rows.len() {
                    if c[i] > 0.0 {
                        active[i] = false;
                    }
                }
            }
        }
    }

    let any_sla = rows.iter().any(|r| r.sla.is_some());
    let total_qps: u32 = flows.iter().map(|f| f.qp_count).sum();
    let qps = if any_sla {
        allocate_qps(&rows.iter().map(|r| r.lower).collect::<Vec<_>>(), total_qps)
    } else {
        flows.iter().map(|f| f.qp_count).collect()
    };

    let tenants = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let burst = burst_bits(r.flow, params);
            let (min_bucket, max_bucket) = match r.sla {
                Some(s) => sla_buckets(s, r.flow, r.profile, params, r.lower),
                None => (BucketSpec::gbps(0.0, burst), None),
            };
            let pace = match r.sla.map(|s| s.metric) {
                Some(RateMetric::Iops) => BucketSpec::iops(
                    x[i] * 1e9 / (r.flow.size_dist.mean_bytes() * 8.0),
                    params.burst_msgs as f64,
                ),
                _ => BucketSpec::gbps(x[i], burst),
            };
            TenantPlan {
                shaper: ShaperConfig {
                    tenant_id: r.flow.tenant_id.clone(),
                    min_bucket,
                    max_bucket,
                    pace,
                    resize: r.resize,
                    qp_count: qps[i],
                    small_msg_floor: params.small_msg_floor,
                },
                min_gbps: r.lower,
                planned_gbps: x[i],
                has_sla: r.sla.is_some(),
            }
        })
        .collect();
    let utilization = resources.iter().map(|(n, _, c)| (n.clone(), load(&x, c))).collect();
    Ok(AdmissionPlan { tenants, utilization })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SizeDist;

    fn gbps_sla(t: &str, min: f64) -> Sla {
        Sla {
            tenant_id: t.into(),
            metric: RateMetric::Gbps,
            min_rate: min,
            max_rate: None,
            measured_at: MeasuredAt::UserLevel,
        }
    }

    #[test]
    fn qp_allocation_follows_weights() {
        assert_eq!(allocate_qps(&[20.0, 10.0], 12), vec![8, 4]);
        assert_eq!(allocate_qps(&[1.0, 1.0, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(allocate_qps(&[0.0, 0.0], 5), vec![3, 2]);
    }

    #[test]
    fn compression_sla_doubles_ingress() {
        let p = AcceleratorProfile::from_points("gz", &[(64, 20.0), (1 << 20, 20.0)], EgressRule::Proportional(0.5), 0).unwrap();
        let mut f = FlowSpec::saturating("t", Direction::HostToAccel, 4096, 1);
        f.accelerator = Some("gz".into());
        let sc = plan_shaping(&gbps_sla("t", 5.0), &f, Some(&p), &PcieConfig::default()).unwrap();
        assert_eq!(sc.min_bucket.metric, RateMetric::Gbps);
        assert!((sc.min_bucket.rate - 10.0).abs() < 1e-12);
        assert!((sc.min_bucket.burst - 4.0 * 4096.0 * 8.0).abs() < 1e-9);
    }

    #[test]
    fn oversubscribed_link_is_rejected() {
        let f = FlowSpec::saturating("t", Direction::AccelToHost, 4096, 1);
        match plan_shaping(&gbps_sla("t", 100.0), &f, None, &PcieConfig::default()) {
            Err(Error::InfeasibleSla { binding: Binding::Link, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resize_rules() {
        let cfg = PcieConfig::default();
        let mut f = FlowSpec::saturating("t", Direction::AccelToHost, 16, 1);
        assert_eq!(choose_resize(&f, &cfg, 64), ResizePolicy::PadTo(64));
        f.size_dist = SizeDist::UniformChoice(vec![MessageSize::new(128).unwrap(), MessageSize::new(1024).unwrap()]);
        assert_eq!(choose_resize(&f, &cfg, 64), ResizePolicy::SplitTo(256));
        f.size_dist = SizeDist::Fixed(MessageSize::new(4096).unwrap());
        assert_eq!(choose_resize(&f, &cfg, 64), ResizePolicy::None);
        f.direction = Direction::HostToAccel;
        f.size_dist = SizeDist::UniformChoice(vec![MessageSize::new(256).unwrap(), MessageSize::new(1024).unwrap()]);
        assert_eq!(choose_resize(&f, &cfg, 64), ResizePolicy::SplitTo(512));
    }

    #[test]
    fn joint_plan_shares_spare_capacity() {
        let cfg = PcieConfig::default();
        let flows = vec![
            FlowSpec::saturating("a", Direction::AccelToHost, 4096, 6),
            FlowSpec::saturating("b", Direction::AccelToHost, 4096, 6),
        ];
        let slas = vec![gbps_sla("a", 20.0), gbps_sla("b", 10.0)];
        let plan = plan_admission(&flows, &slas, &[], &cfg, &RingConfig::default(), &PlanParams::default()).unwrap();
        assert_eq!(plan.tenants[0].shaper.qp_count, 8);
        assert_eq!(plan.tenants[1].shaper.qp_count, 4);
        let (a, b) = (plan.tenants[0].planned_gbps, plan.tenants[1].planned_gbps);
        assert!(a >= 20.0 && b >= 10.0);
        assert!((a - 20.0 - (b - 10.0)).abs() < 1e-6, "equal spare increments");
        let ath = plan.utilization.iter().find(|(n, _)| n == "ath_link").unwrap().1;
        assert!(ath <= 0.9 + 1e-9);
    }

    #[test]
    fn weighted_sharing_keeps_min_proportions() {
        let flows = vec![
            FlowSpec::saturating("a", Direction::AccelToHost, 4096, 1),
            FlowSpec::saturating("b", Direction::AccelToHost, 4096, 1),
            FlowSpec::saturating("be", Direction::AccelToHost, 4096, 1),
        ];
        let slas = vec![gbps_sla("a", 20.0), gbps_sla("b", 10.0)];
        let params = PlanParams {
            excess: ExcessSharing::Weighted,
            ..PlanParams::default()
        };
        let plan = plan_admission(&flows, &slas, &[], &PcieConfig::default(), &RingConfig::default(), &params).unwrap();
        let g: Vec<f64> = plan.tenants.iter().map(|t| t.planned_gbps).collect();
        assert!((g[0] / g[1] - 2.0).abs() < 1e-6);
        assert!(g[0] > 20.0);
        assert_eq!(g[2], 0.0, "best effort gets no weighted share");
    }

    #[test]
    fn joint_plan_rejects_combined_overload() {
        let flows = vec![
            FlowSpec::saturating("a", Direction::AccelToHost, 4096, 1),
            FlowSpec::saturating("b", Direction::AccelToHost, 4096, 1),
        ];
        let slas = vec![gbps_sla("a", 30.0), gbps_sla("b", 30.0)];
        let err = plan_admission(&flows, &slas, &[], &PcieConfig::default(), &RingConfig::raw_dma(), &PlanParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::InfeasibleSla { binding: Binding::Link, .. }));
    }
}
