//! Integer simulation time and link-rate arithmetic.
//!
//! All timestamps are picoseconds held in a `u64`, which covers roughly 213
//! simulated days. Rates are whole bits per second so serialization delays
//! can be computed exactly with 128-bit intermediates.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

const PS_PER_NS: u64 = 1_000;
const PS_PER_SEC: u128 = 1_000_000_000_000;

/// A point (or span) on the simulated clock, in picoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * PS_PER_NS)
    }

    pub const fn as_ps(self) -> u64 {
        self.0
    }

    /// Whole nanoseconds, truncated.
    pub const fn as_ns(self) -> u64 {
        self.0 / PS_PER_NS
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / PS_PER_NS as f64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / PS_PER_SEC as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 = self.0.saturating_add(rhs.0);
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}ns", self.as_ns_f64())
    }
}

/// Link or service rate in bits per second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitRate(u64);

impl BitRate {
    pub fn from_gbps(gbps: f64) -> Self {
        BitRate((gbps * 1e9).round().max(1.0) as u64)
    }

    pub const fn from_bps(bps: u64) -> Self {
        BitRate(bps)
    }

    pub const fn bps(self) -> u64 {
        self.0
    }

    pub fn gbps(self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Time to move `bytes` at this rate, rounded up to the next picosecond.
    pub fn transfer_time(self, bytes: u64) -> SimTime {
        let bits = bytes as u128 * 8;
        let ps = (bits * PS_PER_SEC).div_ceil(self.0 as u128);
        SimTime(ps.min(u64::MAX as u128) as u64)
    }
}

/// Gbps achieved by moving `bytes` over `span`.
pub fn gbps_over(bytes: u64, span: SimTime) -> f64 {
    if span.as_ps() == 0 {
        return 0.0;
    }
    bytes as f64 * 8.0 / (span.as_ps() as f64 / 1e3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_time_is_exact_for_even_rates() {
        let r = BitRate::from_gbps(64.0);
        assert_eq!(r.transfer_time(280), SimTime::from_ns(35));
        assert_eq!(r.transfer_time(24), SimTime::from_ns(3));
    }

    #[test]
    fn transfer_time_rounds_up() {
        let r = BitRate::from_gbps(63.0);
        // 2240 bits / 63 Gbps = 35.5555... ns
        assert_eq!(r.transfer_time(280).as_ps(), 35_556);
    }

    #[test]
    fn gbps_over_matches_definition() {
        assert!((gbps_over(1000, SimTime::from_ns(1000)) - 8.0).abs() < 1e-12);
        assert_eq!(gbps_over(10, SimTime::ZERO), 0.0);
    }
}
