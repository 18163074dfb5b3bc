//! Host/device ring protocol: submission and completion rings, doorbells and
//! descriptor fetch, in push (doorbell-driven) or pull (shaper-driven) mode.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MessageSize;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RingError {
    #[error("submission queue full")]
    SqFull,
    #[error("completion queue full")]
    CqFull,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    AccelInvoke,
    DmaRead,
    DmaWrite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub tenant: usize,
    pub qp: usize,
    pub opcode: Opcode,
    pub msg_bytes: MessageSize,
    /// Index of the accelerator engine for `AccelInvoke`.
    pub accel: Option<usize>,
    /// Opaque host buffer handle.
    pub dma_buffer: u64,
    pub seq: u64,
    pub submitted: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolMode {
    /// Doorbells trigger descriptor fetches immediately.
    #[default]
    Push,
    /// Doorbells are recorded; the shaper decides when to fetch.
    Pull,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    pub sq_depth: u32,
    pub cq_depth: u32,
    /// Descriptors fetched per DMA read.
    pub batch: u32,
    /// Zero elides the descriptor DMA entirely (raw device-driven DMA).
    pub descriptor_bytes: u32,
    /// Zero elides the completion-record DMA. The default fills one cache
    /// line so records never pay the host's partial-write penalty.
    pub completion_bytes: u32,
    pub doorbell_ns: u64,
    /// Host delay between a completion record landing and the tenant
    /// consuming it.
    pub host_poll_ns: u64,
    /// Descriptors a QP may hold on the device (fetching or in service).
    pub device_window: u32,
}

impl Default for RingConfig {
    fn default() -> Self {
        RingConfig {
            sq_depth: 128,
            cq_depth: 128,
            batch: 8,
            descriptor_bytes: 64,
            completion_bytes: 64,
            doorbell_ns: 0,
            host_poll_ns: 0,
            device_window: 32,
        }
    }
}

impl RingConfig {
    /// Device-generated DMA with no descriptor or completion traffic, as in
    /// a register-driven DMA engine.
    pub fn raw_dma() -> Self {
        RingConfig {
            descriptor_bytes: 0,
            completion_bytes: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self, path: &str) -> crate::Result<()> {
        for (field, v) in [
            ("sq_depth", self.sq_depth),
            ("cq_depth", self.cq_depth),
            ("batch", self.batch),
            ("device_window", self.device_window),
        ] {
            if v == 0 {
                return Err(crate::Error::config(format!("{path}.{field}"), "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// A descriptor-fetch DMA: the descriptors it moves and the bytes it reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Fetch {
    pub descriptors: Vec<Descriptor>,
    pub dma_bytes: u32,
}

/// SQ/CQ pair of one hardware queue.
#[derive(Clone, Debug)]
pub struct RingPair {
    sq: VecDeque<Descriptor>,
    sq_depth: u32,
    cq_used: u32,
    cq_depth: u32,
    doorbell: u32,
    next_seq: u64,
}

impl RingPair {
    pub fn new(sq_depth: u32, cq_depth: u32) -> Self {
        RingPair {
            sq: VecDeque::with_capacity(sq_depth as usize),
            sq_depth,
            cq_used: 0,
            cq_depth,
            doorbell: 0,
            next_seq: 0,
        }
    }

    /// Appends a descriptor and rings the doorbell. The ring assigns `seq`.
    pub fn submit(&mut self, mut desc: Descriptor) -> Result<u64, RingError> {
        if self.sq.len() as u32 >= self.sq_depth {
            return Err(RingError::SqFull);
        }
        desc.seq = self.next_seq;
        self.next_seq += 1;
        self.sq.push_back(desc);
        self.doorbell += 1;
        Ok(self.next_seq - 1)
    }

    pub fn occupancy(&self) -> u32 {
        self.sq.len() as u32
    }

    pub fn has_room(&self) -> bool {
        (self.sq.len() as u32) < self.sq_depth
    }

    /// Rung but not yet fetched.
    pub fn doorbell(&self) -> u32 {
        self.doorbell
    }

    pub fn unfetched(&self) -> impl Iterator<Item = &Descriptor> {
        self.sq.iter()
    }

    /// Removes up to `batch` descriptors from the SQ head.
    pub fn fetch_descriptors(&mut self, batch: u32, descriptor_bytes: u32) -> Option<Fetch> {
        let n = batch.min(self.sq.len() as u32);
        if n == 0 {
            return None;
        }
        let descriptors: Vec<_> = self.sq.drain(..n as usize).collect();
        self.doorbell = self.doorbell.saturating_sub(n);
        Some(Fetch {
            descriptors,
            dma_bytes: n * descriptor_bytes,
        })
    }

    /// Claims a CQ slot for a completion about to be written.
    pub fn cq_reserve(&mut self) -> Result<(), RingError> {
        if self.cq_used >= self.cq_depth {
            return Err(RingError::CqFull);
        }
        self.cq_used += 1;
        Ok(())
    }

    pub fn cq_has_room(&self) -> bool {
        self.cq_used < self.cq_depth
    }

    /// Host consumed one completion record.
    pub fn cq_consume(&mut self) {
        debug_assert!(self.cq_used > 0);
        self.cq_used -= 1;
    }

    pub fn cq_occupancy(&self) -> u32 {
        self.cq_used
    }
}

/// Sizes of the fetch DMAs issued for a doorbell burst of `rung` entries.
pub fn plan_fetches(rung: u32, batch: u32) -> Vec<u32> {
    let mut left = rung;
    let mut out = Vec::new();
    while left > 0 {
        let n = left.min(batch);
        out.push(n);
        left -= n;
    }
    out
}
