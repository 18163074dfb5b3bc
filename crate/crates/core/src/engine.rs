//! Accelerator compute stage: a bounded byte buffer served in FIFO order at
//! the rate the profile curve gives for each message size.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{egress_size, interpolate_throughput, AcceleratorProfile, MessageSize};
use crate::time::{BitRate, SimTime};

/// Default input buffer, 256 KiB.
pub const DEFAULT_BUFFER_BYTES: u32 = 256 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("accelerator buffer full")]
pub struct BufferFull;

#[derive(Clone, Debug, PartialEq)]
struct Queued {
    tenant: usize,
    bytes: MessageSize,
    arrival: SimTime,
    token: u64,
}

/// Result of starting service on the buffer head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Service {
    pub start: SimTime,
    pub completion_time: SimTime,
    pub egress_bytes: u32,
    pub tenant: usize,
    pub msg_bytes: MessageSize,
    /// Caller's handle from `try_enqueue`.
    pub token: u64,
}

#[derive(Clone, Debug)]
pub struct EngineState {
    profile: AcceleratorProfile,
    buffer: VecDeque<Queued>,
    capacity: u32,
    occupancy: u32,
    busy_until: SimTime,
    free_at_start: bool,
    enqueued_bytes: u64,
    freed_bytes: u64,
}

impl EngineState {
    pub fn new(profile: AcceleratorProfile) -> Self {
        Self::with_capacity(profile, DEFAULT_BUFFER_BYTES)
    }

    pub fn with_capacity(profile: AcceleratorProfile, capacity: u32) -> Self {
        EngineState {
            profile,
            buffer: VecDeque::new(),
            capacity,
            occupancy: 0,
            busy_until: SimTime::ZERO,
            free_at_start: true,
            enqueued_bytes: 0,
            freed_bytes: 0,
        }
    }

    /// Hold buffer space until compute finishes instead of releasing it
    /// when the engine pulls the message.
    pub fn free_at_completion(mut self) -> Self {
        self.free_at_start = false;
        self
    }

    pub fn profile(&self) -> &AcceleratorProfile {
        &self.profile
    }

    pub fn occupancy(&self) -> u32 {
        self.occupancy
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn queued(&self) -> usize {
        self.buffer.len()
    }

    /// `(enqueued, freed)` byte totals since construction.
    pub fn byte_totals(&self) -> (u64, u64) {
        (self.enqueued_bytes, self.freed_bytes)
    }

    pub fn try_enqueue(
        &mut self,
        tenant: usize,
        bytes: MessageSize,
        now: SimTime,
        token: u64,
    ) -> Result<(), BufferFull> {
        if self.capacity - self.occupancy < bytes.bytes() {
            return Err(BufferFull);
        }
        self.occupancy += bytes.bytes();
        self.enqueued_bytes += bytes.bytes() as u64;
        self.buffer.push_back(Queued {
            tenant,
            bytes,
            arrival: now,
            token,
        });
        Ok(())
    }

    /// Compute occupancy of one message, excluding the pipelined fixed latency.
    pub fn occupancy_time(&self, bytes: MessageSize) -> SimTime {
        BitRate::from_gbps(interpolate_throughput(&self.profile, bytes)).transfer_time(bytes.bytes() as u64)
    }

    /// Starts the head message.
    ///
    /// The engine is occupied for `msg_bits / throughput(msg)`; the profile's
    /// fixed latency is pipelined on top, so it delays the result without
    /// lowering sustained throughput.
    pub fn service_next(&mut self, now: SimTime) -> Option<Service> {
        let head = self.buffer.pop_front()?;
        let start = now.max(self.busy_until);
        let busy = self.occupancy_time(head.bytes);
        self.busy_until = start + busy;
        if self.free_at_start {
            self.release(head.bytes.bytes());
        }
        Some(Service {
            start,
            completion_time: self.busy_until + SimTime::from_ns(self.profile.fixed_latency_ns()),
            egress_bytes: egress_size(self.profile.egress(), head.bytes),
            tenant: head.tenant,
            msg_bytes: head.bytes,
            token: head.token,
        })
    }

    /// Called at completion when space is held until then.
    pub fn complete(&mut self, svc: &Service) {
        if !self.free_at_start {
            self.release(svc.msg_bytes.bytes());
        }
    }

    fn release(&mut self, bytes: u32) {
        self.occupancy -= bytes;
        self.freed_bytes += bytes as u64;
    }

    /// Arrival time of the buffer head, if any.
    pub fn head_arrival(&self) -> Option<SimTime> {
        self.buffer.front().map(|q| q.arrival)
    }
}
