use serde::{Deserialize, Serialize};

use crate::model::RateMetric;
use crate::time::SimTime;

/// Fixed-point scale: one token is `SCALE` internal units, so a rate of `r`
/// tokens per second refills exactly `r` units per picosecond.
const SCALE: u128 = 1_000_000_000_000;

/// Serializable bucket parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketSpec {
    pub metric: RateMetric,
    /// Gbps for `gbps` buckets, operations per second for `iops`.
    pub rate: f64,
    /// Capacity in bits (`gbps`) or operations (`iops`).
    pub burst: f64,
}

impl BucketSpec {
    pub fn gbps(rate: f64, burst_bits: f64) -> Self {
        BucketSpec {
            metric: RateMetric::Gbps,
            rate,
            burst: burst_bits,
        }
    }

    pub fn iops(rate: f64, burst_ops: f64) -> Self {
        BucketSpec {
            metric: RateMetric::Iops,
            rate,
            burst: burst_ops,
        }
    }

    /// Tokens per second.
    pub fn tokens_per_sec(&self) -> f64 {
        match self.metric {
            RateMetric::Gbps => self.rate * 1e9,
            RateMetric::Iops => self.rate,
        }
    }

    /// Tokens one message of `bytes` user payload costs.
    pub fn cost_of(&self, bytes: u32) -> u64 {
        match self.metric {
            RateMetric::Gbps => bytes as u64 * 8,
            RateMetric::Iops => 1,
        }
    }

    pub fn build(&self, now: SimTime) -> TokenBucket {
        TokenBucket::new(self.metric, self.tokens_per_sec(), self.burst, now)
    }
}

/// Outcome of asking a bucket for tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Grant { amount: u64, at: SimTime },
    /// Earliest time the request can be granted.
    Deferred(SimTime),
}

/// Linear-refill token bucket with exact integer arithmetic.
///
/// A request larger than the capacity is served once the level has grown to
/// the request size; the bucket never grants partial amounts.
#[derive(Clone, Debug)]
pub struct TokenBucket {
    metric: RateMetric,
    /// `None` is an unbounded bucket.
    rate: Option<u64>,
    capacity: u128,
    level: u128,
    last_update: SimTime,
}

impl TokenBucket {
    /// Starts full.
    pub fn new(metric: RateMetric, tokens_per_sec: f64, capacity_tokens: f64, now: SimTime) -> Self {
        let capacity = (capacity_tokens.max(0.0) * SCALE as f64).round() as u128;
        TokenBucket {
            metric,
            rate: Some(tokens_per_sec.round().max(1.0) as u64),
            capacity,
            level: capacity,
            last_update: now,
        }
    }

    pub fn unbounded(metric: RateMetric) -> Self {
        TokenBucket {
            metric,
            rate: None,
            capacity: 0,
            level: 0,
            last_update: SimTime::ZERO,
        }
    }

    pub fn metric(&self) -> RateMetric {
        self.metric
    }

    pub fn is_unbounded(&self) -> bool {
        self.rate.is_none()
    }

    pub fn capacity_tokens(&self) -> f64 {
        self.capacity as f64 / SCALE as f64
    }

    /// Level at `now` without mutating, capped at capacity.
    pub fn level_tokens(&self, now: SimTime) -> f64 {
        self.level_at(now, self.capacity) as f64 / SCALE as f64
    }

    fn level_at(&self, now: SimTime, cap: u128) -> u128 {
        let Some(rate) = self.rate else { return u128::MAX };
        let dt = now.saturating_sub(self.last_update).as_ps() as u128;
        // A level above `cap` only arises from an earlier larger cap; keep it.
        let cap = cap.max(self.level);
        (self.level + dt * rate as u128).min(cap)
    }

    /// When `cost` tokens will be available, or `now` if they already are.
    pub fn ready_at(&self, cost: u64, now: SimTime) -> SimTime {
        let Some(rate) = self.rate else { return now };
        let need = cost as u128 * SCALE;
        let level = self.level_at(now, self.capacity.max(need));
        if level >= need {
            return now;
        }
        let wait = (need - level).div_ceil(rate as u128);
        now + SimTime::from_ps(wait.min(u64::MAX as u128) as u64)
    }

    /// Debits `cost` tokens if available now, otherwise reports when.
    pub fn admit(&mut self, cost: u64, now: SimTime) -> Admission {
        let at = self.ready_at(cost, now);
        if at > now {
            return Admission::Deferred(at);
        }
        self.debit(cost, now);
        Admission::Grant { amount: cost, at: now }
    }

    /// Unconditional debit; callers check `ready_at` first.
    pub(crate) fn debit(&mut self, cost: u64, now: SimTime) {
        if self.rate.is_none() {
            return;
        }
        let need = cost as u128 * SCALE;
        let level = self.level_at(now, self.capacity.max(need));
        debug_assert!(level >= need);
        self.level = level - need;
        self.last_update = now;
    }
}
