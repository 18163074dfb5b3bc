use serde::Serialize;

use crate::model::RateMetric;
use crate::time::SimTime;

/// Number of series windows the steady interval is cut into.
pub const SERIES_WINDOWS: u64 = 90;

/// One window of a tenant's rate series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowSample {
    pub window_start_ns: f64,
    pub gbps: f64,
    pub iops: f64,
}

/// Steady-state results for one tenant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TenantMetrics {
    pub tenant_id: String,
    /// User-level payload: DMA data for plain flows, accelerator output for
    /// accelerator flows. Padding is excluded.
    pub delivered_gbps: f64,
    /// Payload landed in the device (accelerator input).
    pub ingress_gbps: f64,
    pub delivered_iops: f64,
    pub latency_p50_ns: u64,
    pub latency_p99_ns: u64,
    pub policed_ops: u64,
    pub rate_timeseries: Vec<WindowSample>,
}

impl TenantMetrics {
    pub fn value(&self, metric: RateMetric) -> f64 {
        match metric {
            RateMetric::Gbps => self.delivered_gbps,
            RateMetric::Iops => self.delivered_iops,
        }
    }

    /// Coefficient of variation of the per-window Gbps series.
    pub fn gbps_cv(&self) -> f64 {
        let n = self.rate_timeseries.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mean = self.rate_timeseries.iter().map(|w| w.gbps).sum::<f64>() / n;
        if mean == 0.0 {
            return 0.0;
        }
        let var = self.rate_timeseries.iter().map(|w| (w.gbps - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    }
}

/// `a / b` for the chosen metric; `None` when `b` is zero.
pub fn ratio(metrics: &[TenantMetrics], a: &str, b: &str, metric: RateMetric) -> Option<f64> {
    let get = |t: &str| metrics.iter().find(|m| m.tenant_id == t).map(|m| m.value(metric));
    let (va, vb) = (get(a)?, get(b)?);
    (vb != 0.0).then(|| va / vb)
}

/// Renders a ratio for CSV output, with `inf` for a zero denominator.
pub fn format_ratio(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v}"),
        None => "inf".to_string(),
    }
}

#[derive(Clone, Debug, Default)]
struct Acc {
    delivered: u64,
    ingress: u64,
    ops: u64,
    latencies_ps: Vec<u64>,
    policed: u64,
    win_bytes: Vec<u64>,
    win_ops: Vec<u64>,
}

/// Accumulates per-tenant observations during a run.
#[derive(Clone, Debug)]
pub struct Collector {
    start: SimTime,
    end: SimTime,
    window: SimTime,
    tenants: Vec<(String, Acc)>,
}

impl Collector {
    /// Steady interval is the last 90% of `duration_ns`.
    pub fn new(duration_ns: u64, tenants: impl IntoIterator<Item = String>) -> Self {
        let total = SimTime::from_ns(duration_ns).as_ps();
        let start = SimTime::from_ps(total / 10);
        let end = SimTime::from_ps(total);
        let window = SimTime::from_ps((end - start).as_ps() / SERIES_WINDOWS);
        let acc = Acc {
            win_bytes: vec![0; SERIES_WINDOWS as usize],
            win_ops: vec![0; SERIES_WINDOWS as usize],
            ..Acc::default()
        };
        Collector {
            start,
            end,
            window,
            tenants: tenants.into_iter().map(|t| (t, acc.clone())).collect(),
        }
    }

    fn window_of(&self, t: SimTime) -> Option<usize> {
        if t < self.start || t >= self.end || self.window.as_ps() == 0 {
            return None;
        }
        Some((((t - self.start).as_ps() / self.window.as_ps()) as usize).min(SERIES_WINDOWS as usize - 1))
    }

    pub fn delivered(&mut self, tenant: usize, bytes: u64, t: SimTime) {
        if let Some(w) = self.window_of(t) {
            let a = &mut self.tenants[tenant].1;
            a.delivered += bytes;
            a.win_bytes[w] += bytes;
        }
    }

    pub fn ingress(&mut self, tenant: usize, bytes: u64, t: SimTime) {
        if self.window_of(t).is_some() {
            self.tenants[tenant].1.ingress += bytes;
        }
    }

    pub fn completed(&mut self, tenant: usize, latency: SimTime, t: SimTime) {
        if let Some(w) = self.window_of(t) {
            let a = &mut self.tenants[tenant].1;
            a.ops += 1;
            a.win_ops[w] += 1;
            a.latencies_ps.push(latency.as_ps());
        }
    }

    /// Policed operations are counted over the whole run.
    pub fn policed(&mut self, tenant: usize) {
        self.tenants[tenant].1.policed += 1;
    }

    pub fn finish(self) -> Vec<TenantMetrics> {
        let span = (self.end - self.start).as_secs_f64();
        let wspan = self.window.as_secs_f64();
        let start = self.start;
        let window = self.window;
        self.tenants
            .into_iter()
            .map(|(tenant_id, mut a)| {
                a.latencies_ps.sort_unstable();
                let pct = |p: f64| -> u64 {
                    if a.latencies_ps.is_empty() {
                        return 0;
                    }
                    let rank = ((p * a.latencies_ps.len() as f64).ceil() as usize).clamp(1, a.latencies_ps.len());
                    (a.latencies_ps[rank - 1] + 500) / 1000
                };
                let rate_timeseries = (0..SERIES_WINDOWS as usize)
                    .map(|w| WindowSample {
                        window_start_ns: (start + SimTime::from_ps(window.as_ps() * w as u64)).as_ns_f64(),
                        gbps: a.win_bytes[w] as f64 * 8.0 / wspan / 1e9,
                        iops: a.win_ops[w] as f64 / wspan,
                    })
                    .collect();
                TenantMetrics {
                    tenant_id,
                    delivered_gbps: a.delivered as f64 * 8.0 / span / 1e9,
                    ingress_gbps: a.ingress as f64 * 8.0 / span / 1e9,
                    delivered_iops: a.ops as f64 / span,
                    latency_p50_ns: pct(0.50),
                    latency_p99_ns: pct(0.99),
                    policed_ops: a.policed,
                    rate_timeseries,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(t: &str, gbps: f64, iops: f64) -> TenantMetrics {
        TenantMetrics {
            tenant_id: t.into(),
            delivered_gbps: gbps,
            ingress_gbps: gbps,
            delivered_iops: iops,
            latency_p50_ns: 0,
            latency_p99_ns: 0,
            policed_ops: 0,
            rate_timeseries: Vec::new(),
        }
    }

    #[test]
    fn ratio_examples() {
        let v = vec![m("a", 52.0, 1.0), m("b", 26.0, 1.0), m("z", 0.0, 0.0)];
        assert_eq!(ratio(&v, "a", "b", RateMetric::Gbps), Some(2.0));
        assert_eq!(ratio(&v, "a", "b", RateMetric::Iops), Some(1.0));
        assert_eq!(format_ratio(ratio(&v, "a", "z", RateMetric::Gbps)), "inf");
    }

    #[test]
    fn windows_tile_the_steady_interval() {
        let c = Collector::new(1_000_000, ["a".to_string()]);
        assert_eq!(c.window.as_ps() * SERIES_WINDOWS, (c.end - c.start).as_ps());
        let out = c.finish();
        let s = &out[0].rate_timeseries;
        assert_eq!(s.len(), SERIES_WINDOWS as usize);
        assert_eq!(s[0].window_start_ns, 100_000.0);
        assert_eq!(s[1].window_start_ns - s[0].window_start_ns, 10_000.0);
    }

    #[test]
    fn warmup_is_excluded() {
        let mut c = Collector::new(1000, ["a".to_string()]);
        c.delivered(0, 1000, SimTime::from_ns(50));
        c.delivered(0, 900, SimTime::from_ns(500));
        c.completed(0, SimTime::from_ns(10), SimTime::from_ns(50));
        c.completed(0, SimTime::from_ns(30), SimTime::from_ns(500));
        let m = &c.finish()[0];
        // 900 B over 900 ns = 8 Gbps.
        assert!((m.delivered_gbps - 8.0).abs() < 1e-9);
        assert_eq!(m.latency_p50_ns, 30);
    }
}
