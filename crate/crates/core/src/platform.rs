//! One simulated machine: host and accelerator memory, the link between
//! them, the live schema table and the compute units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cu::ComputeUnit;
use crate::link::{Interconnect, LinkConfig, LinkError};
use crate::memory::{
    MemoryError, MemorySystem, Region, Tlb, DEFAULT_CHUNK_SIZE, DEFAULT_POOL_BYTES,
    DEFAULT_TLB_ENTRIES, HOST_BASE,
};
use crate::schema::SchemaTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub chunk_size: u64,
    pub host_pool_bytes: u64,
    pub accel_pool_bytes: u64,
    pub tlb_entries: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            host_pool_bytes: DEFAULT_POOL_BYTES,
            accel_pool_bytes: DEFAULT_POOL_BYTES,
            tlb_entries: DEFAULT_TLB_ENTRIES,
        }
    }
}

/// Accelerator clock and local memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub clock_mhz: f64,
    pub mem_latency_ns: f64,
    pub mem_bytes_per_ns: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            clock_mhz: 250.0,
            mem_latency_ns: 100.0,
            mem_bytes_per_ns: 32.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeserConfig {
    pub lanes: usize,
    pub temp_buffer_bytes: usize,
}

impl Default for DeserConfig {
    fn default() -> Self {
        DeserConfig {
            lanes: 4,
            temp_buffer_bytes: 4096,
        }
    }
}

/// Host-side cost constants used by the serializers and kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostConfig {
    pub memcpy_threshold: u64,
    pub copy_bytes_per_ns: f64,
    pub field_visit_ns: f64,
    pub encode_op_ns: f64,
    pub auth_ns: f64,
    pub compress_bytes_per_ns: f64,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            memcpy_threshold: 512,
            copy_bytes_per_ns: 16.0,
            field_visit_ns: 2.0,
            encode_op_ns: 12.0,
            auth_ns: 500.0,
            compress_bytes_per_ns: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuConfig {
    pub count: usize,
    pub kernel_throughput_bytes_per_ns: f64,
    pub reprogram_us: f64,
    pub ring_entries: usize,
}

impl Default for CuConfig {
    fn default() -> Self {
        CuConfig {
            count: 1,
            kernel_throughput_bytes_per_ns: 8.0,
            reprogram_us: 100.0,
            ring_entries: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub link: LinkConfig,
    pub memory: MemoryConfig,
    pub device: DeviceConfig,
    pub deser: DeserConfig,
    pub host: HostConfig,
    pub cu: CuConfig,
    /// Whether explicit field moves also rewrite the placement bit.
    pub auto_field_update: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            link: LinkConfig::default(),
            memory: MemoryConfig::default(),
            device: DeviceConfig::default(),
            deser: DeserConfig::default(),
            host: HostConfig::default(),
            cu: CuConfig::default(),
            auto_field_update: true,
        }
    }
}

impl PlatformConfig {
    pub fn with_link(link: LinkConfig) -> Self {
        PlatformConfig {
            link,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// Fixed size of a deserialization completion record.
pub const COMPLETION_RECORD_BYTES: u64 = 64;
/// Entries in the host completion ring.
pub const COMPLETION_RING_ENTRIES: u64 = 64;

pub struct Platform {
    pub cfg: PlatformConfig,
    pub mem: MemorySystem,
    pub link: Interconnect,
    /// Live schema table shared by deserializers and serializers.
    pub table: SchemaTable,
    pub tlb: Tlb,
    pub cus: Vec<ComputeUnit>,
    pub(crate) completion_ring: u64,
    pub(crate) completion_seq: u64,
    pub(crate) tlb_misses: u64,
}

impl Platform {
    pub fn new(cfg: PlatformConfig, table: SchemaTable) -> Result<Self, PlatformError> {
        if cfg.deser.lanes == 0 {
            return Err(PlatformError::Config("deser.lanes must be > 0"));
        }
        if cfg.deser.temp_buffer_bytes == 0 {
            return Err(PlatformError::Config("deser.temp_buffer_bytes must be > 0"));
        }
        if !(cfg.device.clock_mhz > 0.0 && cfg.device.mem_bytes_per_ns > 0.0) {
            return Err(PlatformError::Config(
                "device clock and bandwidth must be > 0",
            ));
        }
        if !(cfg.host.copy_bytes_per_ns > 0.0 && cfg.host.compress_bytes_per_ns > 0.0) {
            return Err(PlatformError::Config("host bandwidths must be > 0"));
        }
        if cfg.cu.ring_entries == 0 || cfg.cu.kernel_throughput_bytes_per_ns <= 0.0 {
            return Err(PlatformError::Config("cu ring and throughput must be > 0"));
        }
        let m = &cfg.memory;
        let mut mem = MemorySystem::new(m.host_pool_bytes, m.accel_pool_bytes, m.chunk_size)?;
        let link = Interconnect::new(cfg.link)?;

        // The device sees host memory through one identity mapping.
        let mut tlb = Tlb::new(m.tlb_entries, m.chunk_size);
        let pages = (m.host_pool_bytes / m.chunk_size).min(m.tlb_entries);
        tlb.map(HOST_BASE, HOST_BASE, pages)?;

        let ring_bytes = COMPLETION_RECORD_BYTES * COMPLETION_RING_ENTRIES;
        let completion_ring = mem
            .host
            .alloc_run(ring_bytes.div_ceil(m.chunk_size) as usize)?;
        let mut cus = Vec::with_capacity(cfg.cu.count);
        for id in 0..cfg.cu.count {
            cus.push(ComputeUnit::new(id, &cfg.cu, &mut mem)?);
        }
        Ok(Platform {
            cfg,
            mem,
            link,
            table,
            tlb,
            cus,
            completion_ring,
            completion_seq: 0,
            tlb_misses: 0,
        })
    }

    /// Nanoseconds for `cycles` accelerator cycles.
    pub fn cycles_ns(&self, cycles: u64) -> f64 {
        cycles as f64 * 1000.0 / self.cfg.device.clock_mhz
    }

    /// A dependent read of accelerator memory by the device.
    pub fn accel_read_ns(&self, len: u64) -> f64 {
        self.cfg.device.mem_latency_ns + len as f64 / self.cfg.device.mem_bytes_per_ns
    }

    /// A posted write to accelerator memory.
    pub fn accel_write_ns(&self, len: u64) -> f64 {
        len as f64 / self.cfg.device.mem_bytes_per_ns
    }

    /// Translates a host address for a device access. Returns the penalty
    /// in nanoseconds: zero on a hit, one link round trip on a miss.
    pub fn translate(&mut self, addr: u64) -> f64 {
        match self.tlb.translate(addr) {
            Ok(_) => 0.0,
            Err(_) => {
                self.tlb_misses += 1;
                self.cfg.link.latency_ns
            }
        }
    }

    /// Sequence number and host address of the next completion-ring entry.
    pub(crate) fn next_completion_slot(&mut self) -> (u64, u64) {
        let seq = self.completion_seq;
        self.completion_seq += 1;
        (
            seq,
            self.completion_ring + (seq % COMPLETION_RING_ENTRIES) * COMPLETION_RECORD_BYTES,
        )
    }

    pub fn tlb_misses(&self) -> u64 {
        self.tlb_misses
    }

    /// Chunks currently handed out per region, excluding fixed rings.
    pub fn outstanding_chunks(&self, region: Region) -> usize {
        self.mem.region(region).allocator().outstanding()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::compile_source;

    #[test]
    fn builds_with_defaults() {
        let table = compile_source("message M { int64 a = 1; }").unwrap().table;
        let mut p = Platform::new(PlatformConfig::default(), table).unwrap();
        assert_eq!(p.cycles_ns(1), 4.0);
        assert_eq!(p.translate(HOST_BASE + 4096), 0.0);
        assert_eq!(p.translate(0x10), 1250.0);
        assert_eq!(p.tlb_misses(), 1);
        assert_eq!(p.cus.len(), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let table = compile_source("message M { int64 a = 1; }").unwrap().table;
        let mut cfg = PlatformConfig::default();
        cfg.deser.lanes = 0;
        assert!(Platform::new(cfg, table).is_err());
    }
}
