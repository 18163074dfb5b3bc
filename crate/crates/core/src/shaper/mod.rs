//! Interface-resident traffic shaping: per-tenant token buckets gating
//! descriptor pulls, MTU-aware message normalization, small-message policing
//! and SLA-driven parameter planning.

mod bucket;
mod plan;

use serde::{Deserialize, Serialize};

use crate::model::RateMetric;
use crate::time::SimTime;

pub use bucket::{Admission, BucketSpec, TokenBucket};
pub use plan::{
    allocate_qps, choose_resize, message_costs, plan_admission, plan_shaping, AdmissionPlan, ExcessSharing,
    PlanParams, ResourceUse, TenantPlan,
};

/// Default floor below which messages are policed.
pub const DEFAULT_SMALL_MSG_FLOOR: u32 = 64;
/// Default bucket depth, in wire messages.
pub const DEFAULT_BURST_MSGS: u32 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizePolicy {
    #[default]
    None,
    SplitTo(u32),
    PadTo(u32),
    BatchTo { bytes: u32, max_delay_ns: u64 },
}

impl ResizePolicy {
    pub fn validate(&self, path: &str) -> crate::Result<()> {
        let target = match *self {
            ResizePolicy::None => return Ok(()),
            ResizePolicy::SplitTo(t) | ResizePolicy::PadTo(t) => t,
            ResizePolicy::BatchTo { bytes, .. } => bytes,
        };
        if target == 0 {
            return Err(crate::Error::config(format!("{path}.resize"), "target must be >= 1 byte"));
        }
        Ok(())
    }
}

/// One message as it will cross the link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WirePiece {
    /// Tenant payload carried.
    pub payload: u32,
    /// Filler added to reach the wire size.
    pub padding: u32,
}

impl WirePiece {
    pub fn wire_bytes(&self) -> u32 {
        self.payload + self.padding
    }
}

/// Result of [`normalize`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub pieces: Vec<WirePiece>,
    /// Set for `BatchTo`: the message waits in a [`Batcher`] at most this long.
    pub hold: Option<SimTime>,
}

impl Normalized {
    pub fn payload(&self) -> u32 {
        self.pieces.iter().map(|p| p.payload).sum()
    }

    pub fn padding(&self) -> u32 {
        self.pieces.iter().map(|p| p.padding).sum()
    }
}

/// Reshapes one message per `policy`.
///
/// `BatchTo` is stateful across messages; here it passes the message through
/// unchanged with its hold deadline, and a [`Batcher`] does the coalescing.
pub fn normalize(msg_bytes: u32, policy: ResizePolicy) -> Normalized {
    let whole = |padding| WirePiece {
        payload: msg_bytes,
        padding,
    };
    match policy {
        ResizePolicy::None => Normalized {
            pieces: vec![whole(0)],
            hold: None,
        },
        ResizePolicy::SplitTo(t) => {
            let n = msg_bytes.div_ceil(t).max(1);
            let pieces = (0..n)
                .map(|i| WirePiece {
                    payload: t.min(msg_bytes - i * t),
                    padding: 0,
                })
                .collect();
            Normalized { pieces, hold: None }
        }
        ResizePolicy::PadTo(t) => Normalized {
            pieces: vec![whole(t.saturating_sub(msg_bytes))],
            hold: None,
        },
        ResizePolicy::BatchTo { max_delay_ns, .. } => Normalized {
            pieces: vec![whole(0)],
            hold: Some(SimTime::from_ns(max_delay_ns)),
        },
    }
}

/// Coalesces small messages into wire messages of up to `target` bytes.
#[derive(Clone, Debug)]
pub struct Batcher<T> {
    target: u32,
    max_delay: SimTime,
    items: Vec<T>,
    bytes: u32,
    deadline: Option<SimTime>,
}

impl<T> Batcher<T> {
    pub fn new(target: u32, max_delay: SimTime) -> Self {
        Batcher {
            target,
            max_delay,
            items: Vec::new(),
            bytes: 0,
            deadline: None,
        }
    }

    /// Adds an item. Returns any batches completed as a result: the pending
    /// one if the item would overflow it, and the new one if it is full.
    pub fn push(&mut self, item: T, bytes: u32, now: SimTime) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        if !self.items.is_empty() && self.bytes + bytes > self.target {
            out.push(self.take());
        }
        if self.items.is_empty() {
            self.deadline = Some(now + self.max_delay);
        }
        self.items.push(item);
        self.bytes += bytes;
        if self.bytes >= self.target {
            out.push(self.take());
        }
        out
    }

    /// When the pending batch must be released.
    pub fn deadline(&self) -> Option<SimTime> {
        self.deadline
    }

    pub fn pending_bytes(&self) -> u32 {
        self.bytes
    }

    pub fn pending(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Releases the pending batch if its deadline has passed.
    pub fn flush_due(&mut self, now: SimTime) -> Option<Vec<T>> {
        match self.deadline {
            Some(d) if d <= now && !self.items.is_empty() => Some(self.take()),
            _ => None,
        }
    }

    fn take(&mut self) -> Vec<T> {
        self.bytes = 0;
        self.deadline = None;
        std::mem::take(&mut self.items)
    }
}

/// Verdict on a message below the small-message floor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Police {
    Pass,
    /// Pad to this many wire bytes.
    Pad(u32),
    /// Coalesce through the tenant's batcher.
    Batch,
    Deny,
}

pub fn police_small(msg_bytes: u32, floor: u32, policy: ResizePolicy) -> Police {
    if msg_bytes >= floor {
        return Police::Pass;
    }
    match policy {
        ResizePolicy::PadTo(t) => Police::Pad(t.max(msg_bytes)),
        ResizePolicy::BatchTo { .. } => Police::Batch,
        ResizePolicy::None | ResizePolicy::SplitTo(_) => Police::Deny,
    }
}

/// Per-tenant shaping parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaperConfig {
    pub tenant_id: String,
    /// Guaranteed pull pace.
    pub min_bucket: BucketSpec,
    /// Hard cap, if any.
    #[serde(default)]
    pub max_bucket: Option<BucketSpec>,
    /// Pace actually enforced: the guarantee plus this tenant's planned
    /// share of spare capacity, never above the cap.
    pub pace: BucketSpec,
    #[serde(default)]
    pub resize: ResizePolicy,
    pub qp_count: u32,
    #[serde(default = "default_floor")]
    pub small_msg_floor: u32,
}

fn default_floor() -> u32 {
    DEFAULT_SMALL_MSG_FLOOR
}

impl ShaperConfig {
    pub fn validate(&self, path: &str) -> crate::Result<()> {
        self.resize.validate(path)?;
        if self.qp_count == 0 {
            return Err(crate::Error::config(format!("{path}.qp_count"), "must be >= 1"));
        }
        for (name, b) in [("min_bucket", Some(&self.min_bucket)), ("pace", Some(&self.pace)), ("max_bucket", self.max_bucket.as_ref())] {
            if let Some(b) = b {
                if !(b.rate.is_finite() && b.rate >= 0.0 && b.burst.is_finite() && b.burst >= 0.0) {
                    return Err(crate::Error::config(format!("{path}.{name}"), "rate and burst must be finite and >= 0"));
                }
            }
        }
        if let Some(max) = &self.max_bucket {
            if max.metric == self.min_bucket.metric && max.rate < self.min_bucket.rate {
                return Err(crate::Error::config(format!("{path}.max_bucket.rate"), "must be >= min_bucket.rate"));
            }
        }
        Ok(())
    }
}

/// Runtime gate for one tenant: the pace bucket and the optional cap.
#[derive(Clone, Debug)]
pub struct ShaperState {
    pace: TokenBucket,
    pace_spec: BucketSpec,
    cap: Option<(TokenBucket, BucketSpec)>,
}

impl ShaperState {
    pub fn new(cfg: &ShaperConfig, now: SimTime) -> Self {
        ShaperState {
            pace: cfg.pace.build(now),
            pace_spec: cfg.pace,
            cap: cfg.max_bucket.map(|s| (s.build(now), s)),
        }
    }

    /// A gate that never defers.
    pub fn open() -> Self {
        let spec = BucketSpec::gbps(f64::INFINITY, 0.0);
        ShaperState {
            pace: TokenBucket::unbounded(RateMetric::Gbps),
            pace_spec: spec,
            cap: None,
        }
    }

    /// Admits one message carrying `payload` user bytes, debiting every
    /// bucket atomically or none of them.
    pub fn admit(&mut self, payload: u32, now: SimTime) -> Admission {
        let pace_cost = self.pace_spec.cost_of(payload);
        let mut at = self.pace.ready_at(pace_cost, now);
        if let Some((b, s)) = &self.cap {
            at = at.max(b.ready_at(s.cost_of(payload), now));
        }
        if at > now {
            return Admission::Deferred(at);
        }
        self.pace.debit(pace_cost, now);
        if let Some((b, s)) = &mut self.cap {
            b.debit(s.cost_of(payload), now);
        }
        Admission::Grant { amount: pace_cost, at: now }
    }
}
