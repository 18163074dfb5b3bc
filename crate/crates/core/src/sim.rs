//! Discrete-event simulation of tenants, rings, link and accelerator engines.
//!
//! Events are ordered by `(time, sequence)`; the sequence number is assigned
//! at scheduling, so a run is a pure function of its scenario and seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{EngineState, Service};
use crate::error::Result;
use crate::fabric::{
    arbitrate, completions_for, credit_hold, segment, ArbitrationMode, DmaOp, FabricError, Lane, LinkChannel, QpState,
    RrCursor, Tlp, TlpKind, TlpOrigin,
};
use crate::harness::metrics::{Collector, TenantMetrics};
use crate::harness::scenario::Scenario;
use crate::model::{egress_size, Direction, EgressRule, FlowSpec, MessageSize, PcieConfig};
use crate::ring::{Descriptor, Opcode, ProtocolMode, RingConfig, RingPair};
use crate::shaper::{
    normalize, plan_admission, police_small, Admission, Batcher, Police, ResizePolicy, ShaperConfig, ShaperState,
    WirePiece,
};
use crate::time::{BitRate, SimTime};

/// Bookkeeping totals checked after a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Conservation {
    pub submitted_msgs: u64,
    pub completed_msgs: u64,
    pub policed_msgs: u64,
    /// Messages still queued or in flight, counted by scanning state.
    pub live_msgs: u64,
    pub submitted_bytes: u64,
    pub completed_bytes: u64,
    pub policed_bytes: u64,
    pub live_bytes: u64,
    /// Payload bytes placed on either link direction.
    pub tlp_payload_created: u64,
    pub tlp_payload_delivered: u64,
    /// Payload bytes waiting in queues or on the wire.
    pub tlp_payload_pending: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.submitted_msgs == self.completed_msgs + self.policed_msgs + self.live_msgs
            && self.submitted_bytes == self.completed_bytes + self.policed_bytes + self.live_bytes
            && self.tlp_payload_created == self.tlp_payload_delivered + self.tlp_payload_pending
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub events: u64,
    pub end_time: SimTime,
    pub conservation: Conservation,
}

/// One consumed completion, recorded when tracing is on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompletionRecord {
    pub tenant: String,
    /// Device-wide QP index.
    pub qp: usize,
    /// Submission order within the QP.
    pub seq: u64,
    pub bytes: u32,
    pub submitted: SimTime,
    pub consumed: SimTime,
    pub policed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub scenario: String,
    pub tenants: Vec<TenantMetrics>,
    pub summary: RunSummary,
    /// Empty unless `RunOptions::trace` was set.
    pub completions: Vec<CompletionRecord>,
}

impl RunOutput {
    pub fn tenant(&self, id: &str) -> Option<&TenantMetrics> {
        self.tenants.iter().find(|t| t.tenant_id == id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// After the duration, stop generating and run until every accepted
    /// message has completed.
    pub drain: bool,
    /// Record every consumed completion.
    pub trace: bool,
}

pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    run_with(scenario, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, opts: RunOptions) -> Result<RunOutput> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario, opts)?;
    sim.run();
    let mut out = sim.finish();
    out.scenario = scenario.name.clone();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chan {
    Ath,
    Hta,
}

#[derive(Debug)]
enum Ev {
    Gen(usize),
    Doorbell(usize),
    PullWake(usize),
    PullPoll(usize),
    ChanIdle(Chan),
    AthArrive(Tlp),
    HtaArrive(Tlp),
    CreditReturn(u32),
    HostRead(Tlp),
    EngineIdle(usize),
    EngineDone(usize, Service),
    CqConsume { desc: usize, used_cq: bool },
    BatchDeadline(usize),
}

struct Entry {
    t: SimTime,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        (self.t, self.seq) == (o.t, o.seq)
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.t, o.seq).cmp(&(self.t, self.seq))
    }
}

/// A tenant request from submission until the host consumes its completion.
#[derive(Debug)]
struct Desc {
    tenant: usize,
    qp: usize,
    bytes: u32,
    submitted: SimTime,
    seq: u64,
    parts_left: u32,
    policed: bool,
}

#[derive(Clone, Copy, Debug)]
struct Part {
    desc: usize,
    payload: u32,
}

#[derive(Debug)]
struct Wire {
    tenant: usize,
    qp: usize,
    parts: Vec<Part>,
    wire_bytes: u32,
    /// User-level bytes carried by the current transfer; padding excluded.
    user_bytes: u32,
    /// Transfer bytes landed so far.
    landed: u32,
}

#[derive(Debug)]
enum Txn {
    Fetch { qp: usize, descs: Vec<Descriptor>, reqs_left: u32 },
    Read { wire: usize, reqs_left: u32 },
    Write { wire: usize },
    Cq { desc: usize },
}

/// Index-stable storage with slot reuse.
struct Slab<T> {
    items: Vec<Option<T>>,
    free: Vec<usize>,
    live: usize,
}

impl<T> Slab<T> {
    fn new() -> Self {
        Slab {
            items: Vec::new(),
            free: Vec::new(),
            live: 0,
        }
    }

    fn insert(&mut self, v: T) -> usize {
        self.live += 1;
        match self.free.pop() {
            Some(i) => {
                self.items[i] = Some(v);
                i
            }
            None => {
                self.items.push(Some(v));
                self.items.len() - 1
            }
        }
    }

    fn remove(&mut self, i: usize) -> T {
        let v = self.items[i].take().expect("live slab entry");
        self.free.push(i);
        self.live -= 1;
        v
    }

    fn get(&self, i: usize) -> &T {
        self.items[i].as_ref().expect("live slab entry")
    }

    fn get_mut(&mut self, i: usize) -> &mut T {
        self.items[i].as_mut().expect("live slab entry")
    }

    fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter().flatten()
    }
}

struct Tenant {
    flow: FlowSpec,
    opcode: Opcode,
    engine: Option<usize>,
    egress: Option<EgressRule>,
    qps: Vec<usize>,
    gen_cursor: usize,
    pull_cursor: usize,
    rng: ChaCha8Rng,
    /// Inter-submission gap for open-loop flows.
    interval: Option<SimTime>,
    /// Open-loop generator waiting for SQ space.
    blocked: bool,
    shaper: ShaperState,
    shaping: Option<ShaperConfig>,
    batcher: Option<Batcher<Part>>,
    pull_wake: Option<SimTime>,
    /// Set while `pull` runs; nested calls from its own fetches are no-ops.
    pulling: bool,
    batch_wake: Option<SimTime>,
    /// Fabric-bypass: messages handed to the engine but not yet finished.
    outstanding: u32,
    bypass_seq: u64,
}

struct Qp {
    tenant: usize,
    ring: RingPair,
    in_device: u32,
}

/// FNV-1a, used to derive a per-tenant RNG stream from the tenant name.
fn stream_id(tenant: &str) -> u64 {
    tenant
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Sim {
    cfg: PcieConfig,
    ring_cfg: RingConfig,
    mode: ProtocolMode,
    arbitration: ArbitrationMode,
    bypass: bool,
    end: SimTime,
    drain: bool,
    now: SimTime,
    seq: u64,
    events: u64,
    heap: BinaryHeap<Entry>,
    tenants: Vec<Tenant>,
    qps: Vec<Qp>,
    lanes: Vec<QpState>,
    cursor: RrCursor,
    ath: LinkChannel,
    hta: LinkChannel,
    host_fifo: VecDeque<Tlp>,
    tags_free: u32,
    engines: Vec<EngineState>,
    staging: Vec<VecDeque<usize>>,
    descs: Slab<Desc>,
    wires: Slab<Wire>,
    txns: Slab<Txn>,
    metrics: Collector,
    cons: Conservation,
    trace: Option<Vec<CompletionRecord>>,
}

impl Sim {
    fn new(sc: &Scenario, opts: RunOptions) -> Result<Self> {
        let shapers: Option<Vec<ShaperConfig>> = if sc.shaping_enabled {
            Some(match &sc.shapers {
                Some(v) => v.clone(),
                None => plan_admission(&sc.flows, &sc.slas, &sc.profiles, &sc.pcie, &sc.ring, &sc.planner)?
                    .tenants
                    .into_iter()
                    .map(|t| t.shaper)
                    .collect(),
            })
        } else {
            None
        };

        let mut engine_ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut engines = Vec::new();
        for f in &sc.flows {
            if let Some(name) = &f.accelerator {
                if !engine_ids.contains_key(name.as_str()) {
                    let p = sc.profiles.iter().find(|p| p.name() == name).expect("validated").clone();
                    let mut e = EngineState::with_capacity(p, sc.engine.buffer_bytes);
                    if sc.engine.free_at_completion {
                        e = e.free_at_completion();
                    }
                    engine_ids.insert(name, engines.len());
                    engines.push(e);
                }
            }
        }

        let mut tenants = Vec::new();
        let mut qps = Vec::new();
        let mut lanes = Vec::new();
        for (ti, f) in sc.flows.iter().enumerate() {
            let shaping = shapers
                .as_ref()
                .and_then(|v| v.iter().find(|s| s.tenant_id == f.tenant_id).cloned());
            let qp_count = shaping.as_ref().map_or(f.qp_count, |s| s.qp_count);
            let mut ids = Vec::new();
            for _ in 0..qp_count {
                let q = qps.len();
                qps.push(Qp {
                    tenant: ti,
                    ring: RingPair::new(sc.ring.sq_depth, sc.ring.cq_depth),
                    in_device: 0,
                });
                lanes.push(QpState::new(q, ti));
                ids.push(q);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            rng.set_stream(stream_id(&f.tenant_id));
            let interval = f.offered_rate.map(|gbps| {
                let ps = f.size_dist.mean_bytes() * 8.0 * 1000.0 / gbps;
                SimTime::from_ps(ps.round().max(1.0) as u64)
            });
            let engine = f.accelerator.as_ref().map(|a| engine_ids[a.as_str()]);
            let batcher = match shaping.as_ref().map(|s| s.resize) {
                Some(ResizePolicy::BatchTo { bytes, max_delay_ns }) => {
                    Some(Batcher::new(bytes, SimTime::from_ns(max_delay_ns)))
                }
                _ => None,
            };
            tenants.push(Tenant {
                opcode: match (&f.accelerator, f.direction) {
                    (Some(_), _) => Opcode::AccelInvoke,
                    (None, Direction::HostToAccel) => Opcode::DmaRead,
                    (None, Direction::AccelToHost) => Opcode::DmaWrite,
                },
                engine,
                egress: engine.map(|e| engines[e].profile().egress()),
                qps: ids,
                gen_cursor: 0,
                pull_cursor: 0,
                rng,
                interval,
                blocked: false,
                shaper: match &shaping {
                    Some(s) => ShaperState::new(s, SimTime::ZERO),
                    None => ShaperState::open(),
                },
                shaping,
                batcher,
                pull_wake: None,
                pulling: false,
                batch_wake: None,
                outstanding: 0,
                bypass_seq: 0,
                flow: f.clone(),
            });
        }

        let hta_rate = BitRate::from_gbps(sc.pcie.link_rate);
        let mut sim = Sim {
            cfg: sc.pcie.clone(),
            ring_cfg: sc.ring.clone(),
            mode: sc.protocol_mode,
            arbitration: sc.arbitration,
            bypass: sc.fabric_bypass,
            end: SimTime::from_ns(sc.duration_ns),
            drain: opts.drain,
            now: SimTime::ZERO,
            seq: 0,
            events: 0,
            heap: BinaryHeap::new(),
            staging: vec![VecDeque::new(); engines.len()],
            engines,
            metrics: Collector::new(sc.duration_ns, sc.flows.iter().map(|f| f.tenant_id.clone())),
            tenants,
            qps,
            lanes,
            cursor: RrCursor::default(),
            ath: LinkChannel::new(Direction::AccelToHost, &sc.pcie),
            hta: LinkChannel::uncredited(Direction::HostToAccel, hta_rate),
            host_fifo: VecDeque::new(),
            tags_free: sc.pcie.read_tags,
            descs: Slab::new(),
            wires: Slab::new(),
            txns: Slab::new(),
            cons: Conservation::default(),
            trace: opts.trace.then(Vec::new),
        };
        for t in 0..sim.tenants.len() {
            let jitter = sim.tenants[t].rng.random_range(0..1_000_000u64);
            sim.schedule(SimTime::from_ps(jitter), Ev::Gen(t));
        }
        Ok(sim)
    }

    fn schedule(&mut self, t: SimTime, ev: Ev) {
        debug_assert!(t >= self.now);
        self.heap.push(Entry { t, seq: self.seq, ev });
        self.seq += 1;
    }

    fn generating(&self) -> bool {
        self.now < self.end
    }

    fn run(&mut self) {
        while let Some(top) = self.heap.peek() {
            if top.t > self.end && !self.drain {
                break;
            }
            let Entry { t, ev, .. } = self.heap.pop().expect("peeked");
            self.now = t;
            self.events += 1;
            self.dispatch(ev);
        }
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Gen(t) => self.on_gen(t),
            Ev::Doorbell(q) => self.fetch_push(q),
            Ev::PullWake(t) => {
                if self.tenants[t].pull_wake == Some(self.now) {
                    self.tenants[t].pull_wake = None;
                    self.pull(t);
                }
            }
            Ev::PullPoll(t) => self.pull(t),
            Ev::ChanIdle(Chan::Ath) => self.kick_ath(),
            Ev::ChanIdle(Chan::Hta) => self.kick_hta(),
            Ev::AthArrive(tlp) => self.on_ath_arrive(tlp),
            Ev::HtaArrive(tlp) => self.on_hta_arrive(tlp),
            Ev::CreditReturn(bytes) => {
                self.ath.return_credits(bytes);
                self.kick_ath();
            }
            Ev::HostRead(req) => {
                for c in completions_for(&req, &self.cfg) {
                    self.cons.tlp_payload_created += c.payload_bytes as u64;
                    self.host_fifo.push_back(c);
                }
                self.kick_hta();
            }
            Ev::EngineIdle(e) => self.kick_engine(e),
            Ev::EngineDone(e, svc) => self.on_engine_done(e, svc),
            Ev::CqConsume { desc, used_cq } => self.on_cq_consume(desc, used_cq),
            Ev::BatchDeadline(t) => {
                if self.tenants[t].batch_wake == Some(self.now) {
                    self.tenants[t].batch_wake = None;
                    let due = self.tenants[t].batcher.as_mut().and_then(|b| b.flush_due(self.now));
                    if let Some(parts) = due {
                        self.start_wire(t, parts);
                    }
                }
            }
        }
    }

    // ---- traffic generation ----

    fn draw_size(&mut self, t: usize) -> MessageSize {
        let tn = &mut self.tenants[t];
        let choices = tn.flow.size_dist.choices();
        if choices.len() == 1 {
            choices[0]
        } else {
            let i = tn.rng.random_range(0..choices.len());
            choices[i]
        }
    }

    fn on_gen(&mut self, t: usize) {
        if !self.generating() {
            return;
        }
        if self.bypass {
            self.bypass_fill(t);
            return;
        }
        match self.tenants[t].interval {
            None => {
                for i in 0..self.tenants[t].qps.len() {
                    let q = self.tenants[t].qps[i];
                    while self.qps[q].ring.has_room() {
                        self.submit(t, q);
                    }
                }
            }
            Some(gap) => {
                if self.submit_open(t) {
                    self.schedule(self.now + gap, Ev::Gen(t));
                }
            }
        }
    }

    /// Submits one open-loop message; false when every SQ is full.
    fn submit_open(&mut self, t: usize) -> bool {
        let n = self.tenants[t].qps.len();
        for step in 0..n {
            let i = (self.tenants[t].gen_cursor + step) % n;
            let q = self.tenants[t].qps[i];
            if self.qps[q].ring.has_room() {
                self.tenants[t].gen_cursor = (i + 1) % n;
                self.submit(t, q);
                return true;
            }
        }
        self.tenants[t].blocked = true;
        false
    }

    /// Called when SQ space frees on `q`.
    fn refill(&mut self, q: usize) {
        if !self.generating() {
            return;
        }
        let t = self.qps[q].tenant;
        match self.tenants[t].interval {
            None => {
                while self.qps[q].ring.has_room() {
                    self.submit(t, q);
                }
            }
            Some(gap) => {
                if self.tenants[t].blocked {
                    self.tenants[t].blocked = false;
                    if self.submit_open(t) {
                        self.schedule(self.now + gap, Ev::Gen(t));
                    }
                }
            }
        }
    }

    fn submit(&mut self, t: usize, q: usize) {
        let size = self.draw_size(t);
        let id = self.descs.insert(Desc {
            tenant: t,
            qp: q,
            bytes: size.bytes(),
            submitted: self.now,
            seq: 0,
            parts_left: 0,
            policed: false,
        });
        let d = Descriptor {
            tenant: t,
            qp: q,
            opcode: self.tenants[t].opcode,
            msg_bytes: size,
            accel: self.tenants[t].engine,
            dma_buffer: id as u64,
            seq: 0,
            submitted: self.now,
        };
        let seq = self.qps[q].ring.submit(d).expect("caller checked SQ room");
        self.descs.get_mut(id).seq = seq;
        self.cons.submitted_msgs += 1;
        self.cons.submitted_bytes += size.bytes() as u64;
        match self.mode {
            ProtocolMode::Push => {
                let at = self.now + SimTime::from_ns(self.ring_cfg.doorbell_ns);
                self.schedule(at, Ev::Doorbell(q));
            }
            ProtocolMode::Pull => self.schedule(self.now, Ev::PullPoll(t)),
        }
    }

    // ---- descriptor fetch ----

    fn window_room(&self, q: usize) -> u32 {
        self.ring_cfg.device_window.saturating_sub(self.qps[q].in_device)
    }

    /// Descriptors the next fetch of `q` may take. Fetches wait for a full
    /// batch of window room unless the SQ holds less than a batch.
    fn fetch_quota(&self, q: usize) -> u32 {
        let want = self.qps[q].ring.occupancy().min(self.ring_cfg.batch);
        if want > 0 && self.window_room(q) >= want {
            want
        } else {
            0
        }
    }

    fn fetch_push(&mut self, q: usize) {
        loop {
            let n = self.fetch_quota(q);
            if n == 0 {
                return;
            }
            self.fetch(q, n);
        }
    }

    /// Pull-mode gate: round-robin over the tenant's QPs, each fetch
    /// admitted descriptor by descriptor against the shaper.
    fn pull(&mut self, t: usize) {
        if self.tenants[t].pull_wake.is_some() || self.tenants[t].pulling {
            return;
        }
        self.tenants[t].pulling = true;
        self.pull_inner(t);
        self.tenants[t].pulling = false;
    }

    fn pull_inner(&mut self, t: usize) {
        let n = self.tenants[t].qps.len();
        let mut idle_steps = 0;
        while idle_steps < n {
            let i = self.tenants[t].pull_cursor;
            let q = self.tenants[t].qps[i];
            let room = self.fetch_quota(q);
            let mut granted = 0;
            let mut sizes = self.qps[q].ring.unfetched().map(|d| d.msg_bytes.bytes());
            let mut deferred = None;
            while granted < room {
                let Some(bytes) = sizes.next() else { break };
                match self.tenants[t].shaper.admit(bytes, self.now) {
                    Admission::Grant { .. } => granted += 1,
                    Admission::Deferred(at) => {
                        deferred = Some(at);
                        break;
                    }
                }
            }
            drop(sizes);
            if granted > 0 {
                self.fetch(q, granted);
                idle_steps = 0;
            } else {
                idle_steps += 1;
            }
            self.tenants[t].pull_cursor = (i + 1) % n;
            if let Some(at) = deferred {
                self.tenants[t].pull_wake = Some(at);
                self.schedule(at, Ev::PullWake(t));
                return;
            }
        }
    }

    fn fetch(&mut self, q: usize, n: u32) {
        let f = self.qps[q]
            .ring
            .fetch_descriptors(n, self.ring_cfg.descriptor_bytes)
            .expect("caller checked occupancy");
        self.qps[q].in_device += f.descriptors.len() as u32;
        if f.dma_bytes == 0 {
            self.on_descs_arrived(f.descriptors);
        } else {
            let t = self.qps[q].tenant;
            let reqs = segment(f.dma_bytes, DmaOp::Read, &self.cfg, TlpOrigin::default());
            let id = self.txns.insert(Txn::Fetch {
                qp: q,
                descs: f.descriptors,
                reqs_left: reqs.len() as u32,
            });
            for mut r in reqs {
                r.origin = self.origin(t, q, id);
                self.lanes[q].push(Lane::Fetch, r);
            }
            self.kick_ath();
        }
        self.refill(q);
    }

    fn origin(&self, tenant: usize, qp: usize, txn: usize) -> TlpOrigin {
        TlpOrigin {
            tenant,
            qp,
            msg: txn as u64,
            created: self.now,
        }
    }

    // ---- device-side processing ----

    fn on_descs_arrived(&mut self, descs: Vec<Descriptor>) {
        for d in descs {
            self.process_desc(d.dma_buffer as usize);
        }
    }

    fn process_desc(&mut self, id: usize) {
        let Desc { tenant: t, bytes, .. } = *self.descs.get(id);
        let (resize, floor) = match &self.tenants[t].shaping {
            Some(s) => (s.resize, Some(s.small_msg_floor)),
            None => (ResizePolicy::None, None),
        };
        let pieces: Vec<WirePiece> = match floor.map(|f| police_small(bytes, f, resize)) {
            Some(Police::Deny) => {
                self.descs.get_mut(id).policed = true;
                self.metrics.policed(t);
                self.desc_done(id);
                return;
            }
            Some(Police::Pad(to)) => vec![WirePiece {
                payload: bytes,
                padding: to - bytes,
            }],
            _ => normalize(bytes, resize).pieces,
        };
        if let Some(b) = self.tenants[t].batcher.as_mut() {
            self.descs.get_mut(id).parts_left = 1;
            let batches = b.push(Part { desc: id, payload: bytes }, bytes, self.now);
            let deadline = b.deadline();
            for parts in batches {
                self.start_wire(t, parts);
            }
            if let Some(d) = deadline {
                if self.tenants[t].batch_wake != Some(d) {
                    self.tenants[t].batch_wake = Some(d);
                    self.schedule(d, Ev::BatchDeadline(t));
                }
            }
            return;
        }
        self.descs.get_mut(id).parts_left = pieces.len() as u32;
        for p in pieces {
            let q = self.descs.get(id).qp;
            let w = self.wires.insert(Wire {
                tenant: t,
                qp: q,
                parts: vec![Part {
                    desc: id,
                    payload: p.payload,
                }],
                wire_bytes: p.wire_bytes(),
                user_bytes: p.payload,
                landed: 0,
            });
            self.start_wire_id(w);
        }
    }

    fn start_wire(&mut self, t: usize, parts: Vec<Part>) {
        let q = self.descs.get(parts[0].desc).qp;
        let wire_bytes = parts.iter().map(|p| p.payload).sum();
        let w = self.wires.insert(Wire {
            tenant: t,
            qp: q,
            parts,
            wire_bytes,
            user_bytes: wire_bytes,
            landed: 0,
        });
        self.start_wire_id(w);
    }

    fn start_wire_id(&mut self, w: usize) {
        let Wire { tenant: t, qp: q, wire_bytes, .. } = *self.wires.get(w);
        match self.tenants[t].opcode {
            Opcode::DmaWrite => self.queue_write(w, wire_bytes),
            Opcode::DmaRead | Opcode::AccelInvoke => {
                let reqs = segment(wire_bytes, DmaOp::Read, &self.cfg, TlpOrigin::default());
                let id = self.txns.insert(Txn::Read {
                    wire: w,
                    reqs_left: reqs.len() as u32,
                });
                for mut r in reqs {
                    r.origin = self.origin(t, q, id);
                    self.lanes[q].push(Lane::NonPosted, r);
                }
                self.kick_ath();
            }
        }
    }

    fn queue_write(&mut self, w: usize, bytes: u32) {
        let Wire { tenant: t, qp: q, .. } = *self.wires.get(w);
        let id = self.txns.insert(Txn::Write { wire: w });
        for mut tlp in segment(bytes, DmaOp::Write, &self.cfg, TlpOrigin::default()) {
            tlp.origin = self.origin(t, q, id);
            self.cons.tlp_payload_created += tlp.payload_bytes as u64;
            self.lanes[q].push(Lane::Posted, tlp);
        }
        self.kick_ath();
    }

    /// Read data for wire `w` has landed in the device.
    fn on_read_done(&mut self, w: usize) {
        let t = self.wires.get(w).tenant;
        match self.tenants[t].engine {
            Some(e) => self.engine_enqueue(e, w),
            None => self.deliver_parts(w),
        }
    }

    /// Counts the user-level share of `bytes` of transfer landing for `w`.
    /// Padding sits at the tail of a transfer and is never counted.
    fn land(&mut self, w: usize, bytes: u32) -> u64 {
        let wire = self.wires.get_mut(w);
        let before = wire.landed.min(wire.user_bytes);
        wire.landed += bytes;
        (wire.landed.min(wire.user_bytes) - before) as u64
    }

    /// Completes every part of `w`. User bytes were counted as they landed,
    /// except under fabric bypass where nothing crosses the link.
    fn deliver_parts(&mut self, w: usize) {
        let wire = self.wires.remove(w);
        let t = wire.tenant;
        for p in &wire.parts {
            if self.bypass {
                let user = match self.tenants[t].egress {
                    Some(rule) => egress_size(rule, MessageSize::new(p.payload).expect("non-empty part")) as u64,
                    None => p.payload as u64,
                };
                self.metrics.delivered(t, user, self.now);
            }
            let d = self.descs.get_mut(p.desc);
            d.parts_left -= 1;
            if d.parts_left == 0 {
                self.desc_done(p.desc);
            }
        }
    }

    /// Payload (and compute) finished: post the completion record.
    fn desc_done(&mut self, id: usize) {
        let Desc { tenant: t, qp: q, .. } = *self.descs.get(id);
        if self.bypass {
            self.schedule(self.now, Ev::CqConsume { desc: id, used_cq: false });
            return;
        }
        if self.ring_cfg.completion_bytes > 0 {
            let txn = self.txns.insert(Txn::Cq { desc: id });
            for mut tlp in segment(self.ring_cfg.completion_bytes, DmaOp::Write, &self.cfg, TlpOrigin::default()) {
                tlp.origin = self.origin(t, q, txn);
                self.cons.tlp_payload_created += tlp.payload_bytes as u64;
                self.lanes[q].push(Lane::Posted, tlp);
            }
            self.kick_ath();
        } else {
            self.release_window(q);
            let at = self.now + SimTime::from_ns(self.ring_cfg.host_poll_ns);
            self.schedule(at, Ev::CqConsume { desc: id, used_cq: false });
        }
    }

    fn release_window(&mut self, q: usize) {
        self.qps[q].in_device -= 1;
        match self.mode {
            ProtocolMode::Push => self.fetch_push(q),
            ProtocolMode::Pull => self.pull(self.qps[q].tenant),
        }
    }

    fn on_cq_consume(&mut self, id: usize, used_cq: bool) {
        let d = self.descs.remove(id);
        if let Some(log) = self.trace.as_mut() {
            log.push(CompletionRecord {
                tenant: self.tenants[d.tenant].flow.tenant_id.clone(),
                qp: d.qp,
                seq: d.seq,
                bytes: d.bytes,
                submitted: d.submitted,
                consumed: self.now,
                policed: d.policed,
            });
        }
        if used_cq {
            self.qps[d.qp].ring.cq_consume();
            self.kick_ath();
        }
        if d.policed {
            self.cons.policed_msgs += 1;
            self.cons.policed_bytes += d.bytes as u64;
        } else {
            self.cons.completed_msgs += 1;
            self.cons.completed_bytes += d.bytes as u64;
            self.metrics.completed(d.tenant, self.now - d.submitted, self.now);
        }
        if self.bypass {
            self.tenants[d.tenant].outstanding -= 1;
            self.bypass_fill(d.tenant);
        }
    }

    // ---- link ----

    fn can_send(&self, tlp: &Tlp) -> bool {
        if !self.ath.has_credits(tlp) {
            return false;
        }
        match tlp.kind {
            TlpKind::MemReadReq => self.tags_free > 0,
            _ => match self.txns.get(tlp.origin.msg as usize) {
                Txn::Cq { .. } => self.qps[tlp.origin.qp].ring.cq_has_room(),
                _ => true,
            },
        }
    }

    fn kick_ath(&mut self) {
        if !self.ath.is_idle(self.now) {
            return;
        }
        let picked = arbitrate(&self.lanes, self.cursor, self.arbitration, |t| self.can_send(t));
        let (grant, cursor) = match picked {
            Ok(g) => g,
            Err(FabricError::NoActiveQp) => return,
            Err(e) => unreachable!("arbiter only reports idleness: {e}"),
        };
        self.cursor = cursor;
        let tlp = self.lanes[grant.qp].pop(grant.lane).expect("granted lane has a head");
        let mut release = None;
        match tlp.kind {
            TlpKind::MemReadReq => self.tags_free -= 1,
            _ => {
                if let Txn::Cq { .. } = self.txns.get(tlp.origin.msg as usize) {
                    self.qps[grant.qp].ring.cq_reserve().expect("checked CQ room");
                    release = Some(grant.qp);
                }
            }
        }
        let arrive = self.ath.schedule_tlp(&tlp, self.now).expect("checked credits");
        self.schedule(arrive, Ev::AthArrive(tlp));
        self.schedule(arrive, Ev::ChanIdle(Chan::Ath));
        if let Some(q) = release {
            self.release_window(q);
        }
    }

    fn kick_hta(&mut self) {
        if !self.hta.is_idle(self.now) {
            return;
        }
        let Some(tlp) = self.host_fifo.pop_front() else { return };
        let arrive = self.hta.schedule_tlp(&tlp, self.now).expect("uncredited");
        self.schedule(arrive, Ev::HtaArrive(tlp));
        self.schedule(arrive, Ev::ChanIdle(Chan::Hta));
    }

    fn on_ath_arrive(&mut self, tlp: Tlp) {
        let hold = credit_hold(&tlp, &self.cfg);
        self.schedule(self.now + hold, Ev::CreditReturn(tlp.payload_bytes));
        match tlp.kind {
            TlpKind::MemReadReq => {
                let at = self.now + SimTime::from_ns(self.cfg.read_latency_ns);
                self.schedule(at, Ev::HostRead(tlp));
            }
            TlpKind::MemWrite => {
                self.cons.tlp_payload_delivered += tlp.payload_bytes as u64;
                if let Txn::Write { wire } = *self.txns.get(tlp.origin.msg as usize) {
                    let user = self.land(wire, tlp.payload_bytes);
                    self.metrics.delivered(tlp.origin.tenant, user, self.now);
                }
                if tlp.last_in_msg {
                    let id = tlp.origin.msg as usize;
                    match self.txns.remove(id) {
                        Txn::Write { wire } => self.deliver_parts(wire),
                        Txn::Cq { desc } => {
                            let at = self.now + SimTime::from_ns(self.ring_cfg.host_poll_ns);
                            self.schedule(at, Ev::CqConsume { desc, used_cq: true });
                        }
                        other => unreachable!("write TLP for {other:?}"),
                    }
                }
            }
            TlpKind::Completion => unreachable!("completions travel host to device"),
        }
    }

    fn on_hta_arrive(&mut self, tlp: Tlp) {
        self.cons.tlp_payload_delivered += tlp.payload_bytes as u64;
        if let Txn::Read { wire, .. } = *self.txns.get(tlp.origin.msg as usize) {
            let t = tlp.origin.tenant;
            let user = self.land(wire, tlp.payload_bytes);
            self.metrics.ingress(t, user, self.now);
            if self.tenants[t].engine.is_none() {
                self.metrics.delivered(t, user, self.now);
            }
        }
        if !tlp.last_in_msg {
            return;
        }
        self.tags_free += 1;
        let id = tlp.origin.msg as usize;
        let done = match self.txns.get_mut(id) {
            Txn::Fetch { reqs_left, .. } | Txn::Read { reqs_left, .. } => {
                *reqs_left -= 1;
                *reqs_left == 0
            }
            other => unreachable!("completion for {other:?}"),
        };
        if done {
            match self.txns.remove(id) {
                Txn::Fetch { descs, qp, .. } => {
                    debug_assert_eq!(self.qps[qp].tenant, tlp.origin.tenant);
                    self.on_descs_arrived(descs);
                }
                Txn::Read { wire, .. } => self.on_read_done(wire),
                _ => unreachable!(),
            }
        }
        self.kick_ath();
    }

    // ---- accelerator ----

    fn engine_enqueue(&mut self, e: usize, w: usize) {
        if self.staging[e].is_empty() && self.try_engine(e, w) {
            self.kick_engine(e);
        } else {
            self.staging[e].push_back(w);
        }
    }

    fn try_engine(&mut self, e: usize, w: usize) -> bool {
        let wire = self.wires.get(w);
        let size = MessageSize::new(wire.wire_bytes).expect("non-empty wire");
        self.engines[e].try_enqueue(wire.tenant, size, self.now, w as u64).is_ok()
    }

    fn drain_staging(&mut self, e: usize) {
        while let Some(&w) = self.staging[e].front() {
            if !self.try_engine(e, w) {
                break;
            }
            self.staging[e].pop_front();
        }
    }

    fn kick_engine(&mut self, e: usize) {
        if self.engines[e].busy_until() > self.now {
            return;
        }
        let Some(svc) = self.engines[e].service_next(self.now) else { return };
        self.drain_staging(e);
        self.schedule(svc.completion_time, Ev::EngineDone(e, svc));
        self.schedule(self.engines[e].busy_until(), Ev::EngineIdle(e));
    }

    fn on_engine_done(&mut self, e: usize, svc: Service) {
        self.engines[e].complete(&svc);
        self.drain_staging(e);
        self.kick_engine(e);
        let w = svc.token as usize;
        if self.bypass {
            self.metrics.ingress(svc.tenant, svc.msg_bytes.bytes() as u64, self.now);
            self.deliver_parts(w);
        } else {
            let rule = self.tenants[svc.tenant].egress.expect("engine tenants have an egress rule");
            let wire = self.wires.get_mut(w);
            wire.user_bytes = wire
                .parts
                .iter()
                .map(|p| egress_size(rule, MessageSize::new(p.payload).expect("non-empty part")))
                .sum();
            wire.landed = 0;
            self.queue_write(w, svc.egress_bytes);
        }
    }

    // ---- fabric bypass ----

    fn bypass_fill(&mut self, t: usize) {
        if !self.generating() {
            return;
        }
        let window = self.ring_cfg.sq_depth * self.tenants[t].qps.len() as u32;
        let e = self.tenants[t].engine.expect("bypass flows use an accelerator");
        while self.tenants[t].outstanding < window {
            let size = self.draw_size(t);
            let q = self.tenants[t].qps[0];
            let id = self.descs.insert(Desc {
                tenant: t,
                qp: q,
                bytes: size.bytes(),
                submitted: self.now,
                seq: self.tenants[t].bypass_seq,
                parts_left: 1,
                policed: false,
            });
            self.tenants[t].bypass_seq += 1;
            self.cons.submitted_msgs += 1;
            self.cons.submitted_bytes += size.bytes() as u64;
            self.tenants[t].outstanding += 1;
            let w = self.wires.insert(Wire {
                tenant: t,
                qp: q,
                parts: vec![Part {
                    desc: id,
                    payload: size.bytes(),
                }],
                wire_bytes: size.bytes(),
                user_bytes: size.bytes(),
                landed: 0,
            });
            self.engine_enqueue(e, w);
        }
    }

    // ---- wrap-up ----

    fn finish(self) -> RunOutput {
        let mut cons = self.cons;
        // Every submitted request owns a slab entry until its completion is consumed.
        cons.live_msgs = self.descs.live as u64;
        cons.live_bytes = self.descs.iter().map(|d| d.bytes as u64).sum::<u64>();
        let queued: u64 = self
            .lanes
            .iter()
            .flat_map(|l| l.iter_pending())
            .chain(self.host_fifo.iter())
            .map(|t| t.payload_bytes as u64)
            .sum();
        let in_flight: u64 = self
            .heap
            .iter()
            .map(|e| match &e.ev {
                Ev::AthArrive(t) if t.kind == TlpKind::MemWrite => t.payload_bytes as u64,
                Ev::HtaArrive(t) => t.payload_bytes as u64,
                _ => 0,
            })
            .sum();
        cons.tlp_payload_pending = queued + in_flight;
        RunOutput {
            scenario: String::new(),
            tenants: self.metrics.finish(),
            summary: RunSummary {
                events: self.events,
                end_time: self.now,
                conservation: cons,
            },
            completions: self.trace.unwrap_or_default(),
        }
    }
}
