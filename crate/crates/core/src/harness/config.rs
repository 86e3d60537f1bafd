//! Simulation config file (TOML).
//!
//! ```toml
//! auto_field_update = true
//!
//! [link]
//! profile = "pcie"          # pcie | upi | onchip-70ns | custom
//! latency_ns = 900.0        # optional overrides
//! bandwidth_bytes_per_ns = 16.0
//!
//! [host]
//! memcpy_threshold = 512
//! ```
//!
//! Every section is optional; missing keys keep their defaults. Unknown
//! keys are rejected.

use serde::{Deserialize, Serialize};

use crate::link::LinkConfig;
use crate::platform::{
    CuConfig, DeserConfig, DeviceConfig, HostConfig, MemoryConfig, PlatformConfig,
};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub profile: Option<String>,
    pub latency_ns: Option<f64>,
    pub bandwidth_bytes_per_ns: Option<f64>,
    pub per_txn_overhead_ns: Option<f64>,
    pub mmio_write_ns: Option<f64>,
    pub max_txn_payload: Option<u64>,
}

impl LinkSection {
    /// Resolves the profile (or `profile_override`) and applies overrides.
    pub fn resolve(&self, profile_override: Option<&str>) -> Result<LinkConfig, HarnessError> {
        let name = profile_override
            .or(self.profile.as_deref())
            .unwrap_or("pcie");
        let mut cfg = LinkConfig::with_profile(name)?;
        if let Some(v) = self.latency_ns {
            cfg = cfg.at_latency(v);
        }
        if let Some(v) = self.bandwidth_bytes_per_ns {
            cfg.bandwidth_bytes_per_ns = v;
        }
        if let Some(v) = self.per_txn_overhead_ns {
            cfg.per_txn_overhead_ns = v;
        }
        if let Some(v) = self.mmio_write_ns {
            cfg.mmio_write_ns = v;
        }
        if let Some(v) = self.max_txn_payload {
            cfg.max_txn_payload = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub auto_field_update: bool,
    pub link: LinkSection,
    pub memory: MemoryConfig,
    pub device: DeviceConfig,
    pub deser: DeserConfig,
    pub host: HostConfig,
    pub cu: CuConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            auto_field_update: true,
            link: LinkSection::default(),
            memory: MemoryConfig::default(),
            device: DeviceConfig::default(),
            deser: DeserConfig::default(),
            host: HostConfig::default(),
            cu: CuConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn platform_config(
        &self,
        profile_override: Option<&str>,
    ) -> Result<PlatformConfig, HarnessError> {
        Ok(PlatformConfig {
            link: self.link.resolve(profile_override)?,
            memory: self.memory.clone(),
            device: self.device.clone(),
            deser: self.deser.clone(),
            host: self.host.clone(),
            cu: self.cu.clone(),
            auto_field_update: self.auto_field_update,
        })
    }
}
