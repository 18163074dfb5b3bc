use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::DEFAULT_BUFFER_BYTES;
use crate::error::{Error, Result};
use crate::fabric::ArbitrationMode;
use crate::model::{AcceleratorProfile, FlowSpec, PcieConfig, Sla};
use crate::ring::{ProtocolMode, RingConfig};
use crate::shaper::{PlanParams, ShaperConfig};

/// Accelerator engine options shared by every engine in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineOptions {
    pub buffer_bytes: u32,
    /// Release buffer space when compute finishes rather than when it starts.
    pub free_at_completion: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            buffer_bytes: DEFAULT_BUFFER_BYTES,
            free_at_completion: false,
        }
    }
}

/// A complete, self-contained experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration_ns: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pcie: PcieConfig,
    #[serde(default)]
    pub protocol_mode: ProtocolMode,
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub profiles: Vec<AcceleratorProfile>,
    #[serde(default)]
    pub slas: Vec<Sla>,
    #[serde(default)]
    pub shaping_enabled: bool,
    #[serde(default)]
    pub arbitration: ArbitrationMode,
    #[serde(default)]
    pub ring: RingConfig,
    /// Feed accelerator engines directly, without the link or rings.
    #[serde(default)]
    pub fabric_bypass: bool,
    #[serde(default)]
    pub engine: EngineOptions,
    #[serde(default)]
    pub planner: PlanParams,
    /// Explicit shaper settings; when absent they are planned from the SLAs.
    #[serde(default)]
    pub shapers: Option<Vec<ShaperConfig>>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, duration_ns: u64, flows: Vec<FlowSpec>) -> Self {
        Scenario {
            name: name.into(),
            duration_ns,
            seed: 0,
            pcie: PcieConfig::default(),
            protocol_mode: ProtocolMode::Push,
            flows,
            profiles: Vec::new(),
            slas: Vec::new(),
            shaping_enabled: false,
            arbitration: ArbitrationMode::PerTlpRR,
            ring: RingConfig::default(),
            fabric_bypass: false,
            engine: EngineOptions::default(),
            planner: PlanParams::default(),
            shapers: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Turns shaping on or off, switching to the pull protocol when on.
    pub fn with_shaping(mut self, on: bool) -> Self {
        self.shaping_enabled = on;
        if on {
            self.protocol_mode = ProtocolMode::Pull;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        if self.duration_ns == 0 {
            return Err(Error::config("duration_ns", "must be > 0"));
        }
        if self.flows.is_empty() {
            return Err(Error::config("flows", "need at least one flow"));
        }
        self.pcie.validate("pcie")?;
        self.ring.validate("ring")?;
        self.planner.validate("planner")?;
        if self.engine.buffer_bytes == 0 {
            return Err(Error::config("engine.buffer_bytes", "must be >= 1"));
        }
        let mut names = BTreeSet::new();
        for (i, p) in self.profiles.iter().enumerate() {
            if !names.insert(p.name()) {
                return Err(Error::config(format!("profiles[{i}].name"), format!("duplicate profile `{}`", p.name())));
            }
        }
        let mut tenants = BTreeSet::new();
        for (i, f) in self.flows.iter().enumerate() {
            let path = format!("flows[{i}]");
            f.validate(&path)?;
            if !tenants.insert(f.tenant_id.as_str()) {
                return Err(Error::config(format!("{path}.tenant_id"), format!("duplicate tenant `{}`", f.tenant_id)));
            }
            match &f.accelerator {
                Some(a) if !names.contains(a.as_str()) => {
                    return Err(Error::config(format!("{path}.accelerator"), format!("unknown profile `{a}`")));
                }
                None if self.fabric_bypass => {
                    return Err(Error::config(format!("{path}.accelerator"), "fabric bypass needs an accelerator on every flow"));
                }
                _ => {}
            }
            for (j, s) in f.size_dist.choices().iter().enumerate() {
                if f.accelerator.is_some() && s.bytes() > self.engine.buffer_bytes {
                    return Err(Error::config(
                        format!("{path}.size_dist[{j}]"),
                        "larger than the accelerator buffer",
                    ));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.slas.iter().enumerate() {
            let path = format!("slas[{i}]");
            s.validate(&path)?;
            if !tenants.contains(s.tenant_id.as_str()) {
                return Err(Error::config(format!("{path}.tenant_id"), format!("no flow for tenant `{}`", s.tenant_id)));
            }
            if !seen.insert(s.tenant_id.as_str()) {
                return Err(Error::config(format!("{path}.tenant_id"), "one SLA per tenant"));
            }
        }
        if self.shaping_enabled && self.protocol_mode == ProtocolMode::Push {
            return Err(Error::config("protocol_mode", "shaping gates descriptor pulls and needs `pull`"));
        }
        if let Some(shapers) = &self.shapers {
            for (i, sc) in shapers.iter().enumerate() {
                let path = format!("shapers[{i}]");
                sc.validate(&path)?;
                if !tenants.contains(sc.tenant_id.as_str()) {
                    return Err(Error::config(format!("{path}.tenant_id"), format!("no flow for tenant `{}`", sc.tenant_id)));
                }
            }
        }
        Ok(())
    }
}
