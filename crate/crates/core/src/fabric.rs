//! Transaction-level model of the host link: MTU segmentation, per-direction
//! serialization with credit-based flow control, and round-robin arbitration
//! across device queue pairs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Direction, MessageSize, PcieConfig};
use crate::time::{BitRate, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("no queue pair has an eligible TLP")]
    NoActiveQp,
    #[error("receiver credits exhausted")]
    InsufficientCredits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TlpKind {
    MemWrite,
    MemReadReq,
    Completion,
}

/// Device-initiated DMA direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DmaOp {
    Write,
    Read,
}

/// Who a TLP belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TlpOrigin {
    pub tenant: usize,
    pub qp: usize,
    /// Parent message (or fetch) identifier.
    pub msg: u64,
    pub created: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tlp {
    pub kind: TlpKind,
    /// Data carried; zero for read requests.
    pub payload_bytes: u32,
    pub header_bytes: u32,
    /// Bytes asked for by a read request; zero for other kinds.
    pub read_bytes: u32,
    pub origin: TlpOrigin,
    /// Closes its parent message; per-message arbitration releases here.
    pub last_in_msg: bool,
}

impl Tlp {
    pub fn wire_bytes(&self) -> u32 {
        self.header_bytes + self.payload_bytes
    }
}

/// Splits a DMA of `msg_bytes` into TLPs.
///
/// Writes become `ceil(msg / max_payload_size)` MemWrites, all full but the
/// last. Reads become `ceil(msg / max_read_req_size)` MemReadReqs; see
/// [`completions_for`] for the data that answers them.
pub fn segment(msg_bytes: u32, op: DmaOp, cfg: &PcieConfig, origin: TlpOrigin) -> Vec<Tlp> {
    debug_assert!(msg_bytes >= 1);
    let (chunk, kind) = match op {
        DmaOp::Write => (cfg.max_payload_size, TlpKind::MemWrite),
        DmaOp::Read => (cfg.max_read_req_size, TlpKind::MemReadReq),
    };
    let n = msg_bytes.div_ceil(chunk);
    (0..n)
        .map(|i| {
            let len = chunk.min(msg_bytes - i * chunk);
            match op {
                DmaOp::Write => Tlp {
                    kind,
                    payload_bytes: len,
                    header_bytes: cfg.tlp_header_bytes,
                    read_bytes: 0,
                    origin,
                    last_in_msg: i + 1 == n,
                },
                DmaOp::Read => Tlp {
                    kind,
                    payload_bytes: 0,
                    header_bytes: cfg.read_request_bytes,
                    read_bytes: len,
                    origin,
                    last_in_msg: i + 1 == n,
                },
            }
        })
        .collect()
}

/// Completions returning the data of one read request, in
/// `max_payload_size` chunks.
pub fn completions_for(req: &Tlp, cfg: &PcieConfig) -> Vec<Tlp> {
    debug_assert_eq!(req.kind, TlpKind::MemReadReq);
    let mps = cfg.max_payload_size;
    let n = req.read_bytes.div_ceil(mps);
    (0..n)
        .map(|i| Tlp {
            kind: TlpKind::Completion,
            payload_bytes: mps.min(req.read_bytes - i * mps),
            header_bytes: cfg.completion_header_bytes,
            read_bytes: 0,
            origin: req.origin,
            last_in_msg: i + 1 == n,
        })
        .collect()
}

/// Read-modify-write beats the host needs to absorb a write of `payload`
/// bytes: zero when whole cache lines are covered, otherwise the number of
/// equally small writes it would take to fill the partial line.
pub fn partial_write_beats(payload: u32, line: u32) -> u32 {
    let rem = payload % line;
    if rem == 0 {
        0
    } else {
        line.div_ceil(rem)
    }
}

/// How long a receiver keeps the credits of `tlp` after it lands.
pub fn credit_hold(tlp: &Tlp, cfg: &PcieConfig) -> SimTime {
    let mut ns = cfg.drain_latency_ns;
    if tlp.kind == TlpKind::MemWrite {
        ns += cfg.partial_write_ns * partial_write_beats(tlp.payload_bytes, cfg.cache_line_bytes) as u64;
    }
    SimTime::from_ns(ns)
}

/// One direction of the full-duplex link, together with the credit pool the
/// receiver at its far end advertises.
#[derive(Clone, Debug)]
pub struct LinkChannel {
    pub direction: Direction,
    pub rate: BitRate,
    pub busy_until: SimTime,
    pub credits_headers: u32,
    pub credits_data_bytes: u32,
}

impl LinkChannel {
    pub fn new(direction: Direction, cfg: &PcieConfig) -> Self {
        LinkChannel {
            direction,
            rate: BitRate::from_gbps(cfg.link_rate),
            busy_until: SimTime::ZERO,
            credits_headers: cfg.credit_headers,
            credits_data_bytes: cfg.credit_data_bytes,
        }
    }

    /// Unlimited credits; only serialization constrains the channel.
    pub fn uncredited(direction: Direction, rate: BitRate) -> Self {
        LinkChannel {
            direction,
            rate,
            busy_until: SimTime::ZERO,
            credits_headers: u32::MAX,
            credits_data_bytes: u32::MAX,
        }
    }

    pub fn has_credits(&self, tlp: &Tlp) -> bool {
        self.credits_headers >= 1 && self.credits_data_bytes >= tlp.payload_bytes
    }

    pub fn is_idle(&self, now: SimTime) -> bool {
        self.busy_until <= now
    }

    /// Places `tlp` on the wire and returns when its last bit arrives.
    pub fn schedule_tlp(&mut self, tlp: &Tlp, now: SimTime) -> Result<SimTime, FabricError> {
        if !self.has_credits(tlp) {
            return Err(FabricError::InsufficientCredits);
        }
        self.credits_headers -= 1;
        self.credits_data_bytes -= tlp.payload_bytes;
        let start = now.max(self.busy_until);
        let done = start + self.rate.transfer_time(tlp.wire_bytes() as u64);
        self.busy_until = done;
        Ok(done)
    }

    pub fn return_credits(&mut self, payload_bytes: u32) {
        self.credits_headers = self.credits_headers.saturating_add(1);
        self.credits_data_bytes = self.credits_data_bytes.saturating_add(payload_bytes);
    }
}

/// Per-QP transmit lanes, served in this priority order within a grant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lane {
    /// Descriptor fetch reads.
    Fetch,
    /// Posted writes (payload, results, completion records).
    Posted,
    /// Payload read requests.
    NonPosted,
}

const LANES: [Lane; 3] = [Lane::Fetch, Lane::Posted, Lane::NonPosted];

/// Transmit state of one hardware queue pair.
#[derive(Clone, Debug, Default)]
pub struct QpState {
    pub qp_id: usize,
    pub tenant: usize,
    fetch: VecDeque<Tlp>,
    posted: VecDeque<Tlp>,
    non_posted: VecDeque<Tlp>,
}

impl QpState {
    pub fn new(qp_id: usize, tenant: usize) -> Self {
        QpState {
            qp_id,
            tenant,
            ..Default::default()
        }
    }

    fn lane(&self, lane: Lane) -> &VecDeque<Tlp> {
        match lane {
            Lane::Fetch => &self.fetch,
            Lane::Posted => &self.posted,
            Lane::NonPosted => &self.non_posted,
        }
    }

    fn lane_mut(&mut self, lane: Lane) -> &mut VecDeque<Tlp> {
        match lane {
            Lane::Fetch => &mut self.fetch,
            Lane::Posted => &mut self.posted,
            Lane::NonPosted => &mut self.non_posted,
        }
    }

    pub fn push(&mut self, lane: Lane, tlp: Tlp) {
        self.lane_mut(lane).push_back(tlp);
    }

    pub fn head(&self, lane: Lane) -> Option<&Tlp> {
        self.lane(lane).front()
    }

    pub fn pop(&mut self, lane: Lane) -> Option<Tlp> {
        self.lane_mut(lane).pop_front()
    }

    pub fn is_active(&self) -> bool {
        self.pending() > 0
    }

    pub fn pending(&self) -> usize {
        self.fetch.len() + self.posted.len() + self.non_posted.len()
    }

    pub fn iter_pending(&self) -> impl Iterator<Item = &Tlp> {
        self.fetch.iter().chain(&self.posted).chain(&self.non_posted)
    }

    /// Highest-priority lane whose head TLP `can_send` accepts.
    pub fn select(&self, can_send: impl Fn(&Tlp) -> bool) -> Option<Lane> {
        LANES
            .into_iter()
            .find(|&l| self.head(l).is_some_and(&can_send))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArbitrationMode {
    /// One TLP per grant.
    #[default]
    #[serde(rename = "per_tlp_rr")]
    PerTlpRR,
    /// A grant lasts until the QP's current message has been sent.
    #[serde(rename = "per_message_rr")]
    PerMessageRR,
}

/// Rotation state of the round-robin arbiter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RrCursor {
    pub next: usize,
    pub held: Option<(usize, Lane)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grant {
    pub qp: usize,
    pub lane: Lane,
}

/// Picks the next QP to transmit, strict round-robin in index order over
/// QPs with an eligible TLP.
pub fn arbitrate(
    qps: &[QpState],
    cursor: RrCursor,
    mode: ArbitrationMode,
    can_send: impl Fn(&Tlp) -> bool,
) -> Result<(Grant, RrCursor), FabricError> {
    let n = qps.len();
    if mode == ArbitrationMode::PerMessageRR {
        if let Some((qp, lane)) = cursor.held {
            if let Some(tlp) = qps[qp].head(lane).filter(|t| can_send(t)) {
                let held = (!tlp.last_in_msg).then_some((qp, lane));
                return Ok((Grant { qp, lane }, RrCursor { next: cursor.next, held }));
            }
        }
    }
    for step in 0..n {
        let qp = (cursor.next + step) % n;
        if let Some(lane) = qps[qp].select(&can_send) {
            let held = match mode {
                ArbitrationMode::PerMessageRR => {
                    let tlp = qps[qp].head(lane).expect("selected lane has a head");
                    (!tlp.last_in_msg).then_some((qp, lane))
                }
                ArbitrationMode::PerTlpRR => None,
            };
            return Ok((
                Grant { qp, lane },
                RrCursor {
                    next: (qp + 1) % n,
                    held,
                },
            ));
        }
    }
    Err(FabricError::NoActiveQp)
}

/// Best-case goodput (Gbps) for back-to-back DMAs of `msg_size`.
///
/// Writes pay one header per MemWrite. Reads pay one completion header per
/// `max_payload_size` chunk on the return channel and are further bounded by
/// how many read requests can be outstanding over one round trip.
pub fn effective_peak(cfg: &PcieConfig, msg_size: MessageSize, op: DmaOp) -> f64 {
    let m = msg_size.bytes() as f64;
    match op {
        DmaOp::Write => {
            let tlps = msg_size.bytes().div_ceil(cfg.max_payload_size) as f64;
            cfg.link_rate * m / (m + tlps * cfg.tlp_header_bytes as f64)
        }
        DmaOp::Read => {
            let reqs = segment(msg_size.bytes(), DmaOp::Read, cfg, TlpOrigin::default());
            let cpl_headers: u32 = reqs
                .iter()
                .map(|r| r.read_bytes.div_ceil(cfg.max_payload_size))
                .sum();
            let link = cfg.link_rate * m / (m + cpl_headers as f64 * cfg.completion_header_bytes as f64);
            // One full-size request round trip, in ns at link_rate (bits/ns = Gbps).
            let req = reqs[0].read_bytes as f64;
            let req_cpls = reqs[0].read_bytes.div_ceil(cfg.max_payload_size) as f64;
            let rtt = cfg.read_request_bytes as f64 * 8.0 / cfg.link_rate
                + cfg.read_latency_ns as f64
                + (req + req_cpls * cfg.completion_header_bytes as f64) * 8.0 / cfg.link_rate;
            let tags = cfg.read_tags as f64 * req * 8.0 / rtt;
            link.min(tags)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PcieConfig {
        PcieConfig::default()
    }

    #[test]
    fn write_segmentation() {
        let t = segment(4096, DmaOp::Write, &cfg(), TlpOrigin::default());
        assert_eq!(t.len(), 16);
        assert!(t.iter().all(|x| x.payload_bytes == 256 && x.kind == TlpKind::MemWrite));
        assert!(t[15].last_in_msg && !t[14].last_in_msg);

        let t = segment(300, DmaOp::Write, &cfg(), TlpOrigin::default());
        let sizes: Vec<u32> = t.iter().map(|x| x.payload_bytes).collect();
        assert_eq!(sizes, vec![256, 44]);
    }

    #[test]
    fn read_segmentation_and_completions() {
        let c = cfg(); // MRRS 512, MPS 256
        let reqs = segment(4096, DmaOp::Read, &c, TlpOrigin::default());
        assert_eq!(reqs.len(), 8);
        for r in &reqs {
            assert_eq!(r.kind, TlpKind::MemReadReq);
            assert_eq!(r.payload_bytes, 0);
            assert_eq!(r.read_bytes, 512);
            let cpls = completions_for(r, &c);
            assert_eq!(cpls.len(), 2);
            assert!(cpls.iter().all(|x| x.payload_bytes == 256));
        }
    }

    #[test]
    fn serialization_times() {
        let c = PcieConfig {
            link_rate: 64.0,
            ..cfg()
        };
        let mut ch = LinkChannel::new(Direction::AccelToHost, &c);
        let w = Tlp {
            kind: TlpKind::MemWrite,
            payload_bytes: 256,
            header_bytes: 24,
            read_bytes: 0,
            origin: TlpOrigin::default(),
            last_in_msg: true,
        };
        assert_eq!(ch.schedule_tlp(&w, SimTime::ZERO).unwrap(), SimTime::from_ns(35));

        let mut ch = LinkChannel::new(Direction::AccelToHost, &c);
        let r = segment(64, DmaOp::Read, &c, TlpOrigin::default()).remove(0);
        assert_eq!(ch.schedule_tlp(&r, SimTime::ZERO).unwrap(), SimTime::from_ns(3));

        let mut ch = LinkChannel::new(Direction::AccelToHost, &c);
        let now = SimTime::from_ns(1000);
        ch.busy_until = now + SimTime::from_ns(100);
        let done = ch.schedule_tlp(&r, now).unwrap();
        assert_eq!(done, now + SimTime::from_ns(103));
    }

    #[test]
    fn credits_block_and_return() {
        let c = PcieConfig {
            credit_headers: 1,
            ..cfg()
        };
        let mut ch = LinkChannel::new(Direction::AccelToHost, &c);
        let t = segment(64, DmaOp::Write, &c, TlpOrigin::default()).remove(0);
        ch.schedule_tlp(&t, SimTime::ZERO).unwrap();
        assert_eq!(ch.schedule_tlp(&t, SimTime::ZERO), Err(FabricError::InsufficientCredits));
        ch.return_credits(t.payload_bytes);
        assert!(ch.schedule_tlp(&t, SimTime::ZERO).is_ok());
    }

    #[test]
    fn partial_writes_hold_credits_longer() {
        let c = cfg();
        assert_eq!(partial_write_beats(256, 64), 0);
        assert_eq!(partial_write_beats(64, 64), 0);
        assert_eq!(partial_write_beats(32, 64), 2);
        assert_eq!(partial_write_beats(16, 64), 4);
        assert_eq!(partial_write_beats(44, 64), 2);
        let full = segment(64, DmaOp::Write, &c, TlpOrigin::default()).remove(0);
        let tiny = segment(16, DmaOp::Write, &c, TlpOrigin::default()).remove(0);
        assert_eq!(credit_hold(&full, &c), SimTime::from_ns(c.drain_latency_ns));
        assert!(credit_hold(&tiny, &c) > credit_hold(&full, &c));
    }

    fn saturated(qps: &[(usize, usize)]) -> Vec<QpState> {
        qps.iter()
            .map(|&(id, tenant)| {
                let mut q = QpState::new(id, tenant);
                for t in segment(4096, DmaOp::Write, &cfg(), TlpOrigin { tenant, qp: id, ..Default::default() }) {
                    q.push(Lane::Posted, t);
                }
                q
            })
            .collect()
    }

    fn grant_shares(qps: &mut [QpState], grants: usize, tenants: usize) -> Vec<usize> {
        let mut cursor = RrCursor::default();
        let mut counts = vec![0; tenants];
        for _ in 0..grants {
            let (g, c) = arbitrate(qps, cursor, ArbitrationMode::PerTlpRR, |_| true).unwrap();
            cursor = c;
            let t = qps[g.qp].pop(g.lane).unwrap();
            counts[t.origin.tenant] += 1;
            // keep it saturated
            qps[g.qp].push(g.lane, t);
        }
        counts
    }

    #[test]
    fn round_robin_tracks_qp_ratio() {
        let mut qps = saturated(&[(0, 0), (1, 0), (2, 1)]);
        let c = grant_shares(&mut qps, 3000, 2);
        assert_eq!(c, vec![2000, 1000]);

        let mut qps = saturated(&[(0, 0), (1, 1)]);
        assert_eq!(grant_shares(&mut qps, 1000, 2), vec![500, 500]);
    }

    #[test]
    fn round_robin_is_work_conserving() {
        let mut qps = saturated(&[(0, 0)]);
        qps.push(QpState::new(1, 1));
        assert_eq!(grant_shares(&mut qps, 100, 2), vec![100, 0]);

        let idle = vec![QpState::new(0, 0)];
        assert_eq!(
            arbitrate(&idle, RrCursor::default(), ArbitrationMode::PerTlpRR, |_| true),
            Err(FabricError::NoActiveQp)
        );
    }

    #[test]
    fn per_message_holds_until_last_tlp() {
        let mut qps = saturated(&[(0, 0), (1, 1)]);
        let mut cursor = RrCursor::default();
        let mut order = Vec::new();
        for _ in 0..32 {
            let (g, c) = arbitrate(&qps, cursor, ArbitrationMode::PerMessageRR, |_| true).unwrap();
            cursor = c;
            order.push(qps[g.qp].pop(g.lane).unwrap().origin.tenant);
        }
        assert!(order[..16].iter().all(|&t| t == 0));
        assert!(order[16..].iter().all(|&t| t == 1));
    }

    #[test]
    fn effective_peak_examples() {
        let c = cfg();
        let p = effective_peak(&c, MessageSize::new(4096).unwrap(), DmaOp::Write);
        assert!((p - 63.0 * 256.0 / 280.0).abs() < 1e-9);
        assert!((p - 57.6).abs() < 0.05);

        let zero = PcieConfig {
            tlp_header_bytes: 0,
            ..c.clone()
        };
        assert_eq!(effective_peak(&zero, MessageSize::new(4096).unwrap(), DmaOp::Write), 63.0);

        let r = effective_peak(&c, MessageSize::new(4096).unwrap(), DmaOp::Read);
        assert!((r - 63.0 * 4096.0 / (4096.0 + 16.0 * 24.0)).abs() < 1e-9);
    }
}
