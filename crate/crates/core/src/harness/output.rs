use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::metrics::TenantMetrics;

pub const SUMMARY_HEADER: [&str; 7] = ["scenario", "tenant", "gbps", "iops", "p50_ns", "p99_ns", "policed_ops"];
pub const SERIES_HEADER: [&str; 4] = ["window_start_ns", "tenant", "gbps", "iops"];

/// `<dir>/<stem>.series.csv` next to `path`.
pub fn series_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    path.with_file_name(format!("{stem}.series.csv"))
}

/// Writes one summary row per tenant to `path` and the rate series to the
/// sibling `.series.csv`. Returns the series path.
pub fn emit_csv(scenario: &str, metrics: &[TenantMetrics], path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for m in metrics {
        w.write_record([
            scenario.to_string(),
            m.tenant_id.clone(),
            m.delivered_gbps.to_string(),
            m.delivered_iops.to_string(),
            m.latency_p50_ns.to_string(),
            m.latency_p99_ns.to_string(),
            m.policed_ops.to_string(),
        ])?;
    }
    w.flush()?;

    let series = series_path(path);
    let mut w = csv::Writer::from_path(&series)?;
    w.write_record(SERIES_HEADER)?;
    for m in metrics {
        for s in &m.rate_timeseries {
            w.write_record([
                s.window_start_ns.to_string(),
                m.tenant_id.clone(),
                s.gbps.to_string(),
                s.iops.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(series)
}
