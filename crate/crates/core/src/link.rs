//! Host-device interconnect cost model and transaction ledger.
//!
//! Every transfer costs `latency + overhead * txns + len / bandwidth`, where
//! `txns = max(1, ceil(len / max_txn_payload))`. The fixed latency term
//! makes many small transfers expensive (the transaction-rate regime) and a
//! chain of dependent transfers slow (the latency regime). Reads and writes
//! share one cost function; transfers are charged back to back with no
//! queuing between lanes.

use std::collections::BTreeMap;
use std::ops::Sub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{MemoryError, RegionMemory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("unknown link profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid link configuration: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub latency_ns: f64,
    pub bandwidth_bytes_per_ns: f64,
    pub per_txn_overhead_ns: f64,
    pub mmio_write_ns: f64,
    pub max_txn_payload: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig::pcie()
    }
}

impl LinkConfig {
    /// PCIe: 1250 ns, 12.8 GB/s.
    pub fn pcie() -> Self {
        LinkConfig::with_latency_bandwidth(1250.0, 12.8)
    }

    /// Intel UPI: 125 ns, 19.2 GB/s.
    pub fn upi() -> Self {
        LinkConfig::with_latency_bandwidth(125.0, 19.2)
    }

    /// On-chip path with DDR-class 70 ns latency and NoC-class 64 GB/s.
    pub fn onchip_70ns() -> Self {
        LinkConfig::with_latency_bandwidth(70.0, 64.0)
    }

    pub fn with_latency_bandwidth(latency_ns: f64, bandwidth_bytes_per_ns: f64) -> Self {
        LinkConfig {
            latency_ns,
            bandwidth_bytes_per_ns,
            per_txn_overhead_ns: 0.0,
            mmio_write_ns: latency_ns,
            max_txn_payload: 4096,
        }
    }

    /// Named profile. `custom` starts from the PCIe constants and is meant
    /// to be overridden key by key.
    pub fn with_profile(name: &str) -> Result<Self, LinkError> {
        match name {
            "pcie" | "custom" => Ok(LinkConfig::pcie()),
            "upi" => Ok(LinkConfig::upi()),
            "onchip-70ns" => Ok(LinkConfig::onchip_70ns()),
            other => Err(LinkError::UnknownProfile(other.to_owned())),
        }
    }

    /// Same link with a different latency; the doorbell cost follows it.
    pub fn at_latency(mut self, latency_ns: f64) -> Self {
        self.latency_ns = latency_ns;
        self.mmio_write_ns = latency_ns;
        self
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.latency_ns) {
            return Err(LinkError::Invalid("latency_ns must be > 0"));
        }
        if !positive(self.bandwidth_bytes_per_ns) {
            return Err(LinkError::Invalid("bandwidth must be > 0"));
        }
        if !positive(self.mmio_write_ns) {
            return Err(LinkError::Invalid("mmio_write_ns must be > 0"));
        }
        if !(self.per_txn_overhead_ns.is_finite() && self.per_txn_overhead_ns >= 0.0) {
            return Err(LinkError::Invalid("per_txn_overhead_ns must be >= 0"));
        }
        if self.max_txn_payload == 0 {
            return Err(LinkError::Invalid("max_txn_payload must be > 0"));
        }
        Ok(())
    }

    /// Number of link transactions a transfer of `len` bytes occupies.
    pub fn transactions(&self, len: u64) -> u64 {
        len.div_ceil(self.max_txn_payload).max(1)
    }
}

/// Simulated nanoseconds for one DMA transfer of `len` bytes.
pub fn cost_dma(len: u64, cfg: &LinkConfig) -> f64 {
    cfg.latency_ns
        + cfg.per_txn_overhead_ns * cfg.transactions(len) as f64
        + len as f64 / cfg.bandwidth_bytes_per_ns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxnKind {
    DmaRead,
    DmaWrite,
    MmioWrite,
}

/// What a transfer was for. Used for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Purpose {
    /// One host-bound field written on its own (field-by-field mode).
    FieldWrite,
    /// Temp-buffer flush.
    Flush,
    /// Deserialization completion record.
    Completion,
    /// Accelerator-resident field copied to the host before CPU encoding.
    FieldFetch,
    /// Encoded response pulled from host memory by the device.
    ResponseFetch,
    /// Pre-serialized buffer pulled by the device.
    PreSerializedFetch,
    /// Dependent read while walking a host object from the device.
    PointerChase,
    /// Doorbell telling the device where work is.
    Doorbell,
    /// Explicit field relocation between regions.
    FieldMove,
    /// Compute-unit descriptor submission.
    TaskSubmit,
    /// Compute-unit notification-ring write.
    TaskNotify,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TxnCounter {
    pub count: u64,
    pub bytes: u64,
    pub transactions: u64,
    pub time_ns: f64,
}

impl Sub for TxnCounter {
    type Output = TxnCounter;
    fn sub(self, rhs: TxnCounter) -> TxnCounter {
        TxnCounter {
            count: self.count - rhs.count,
            bytes: self.bytes - rhs.bytes,
            transactions: self.transactions - rhs.transactions,
            time_ns: self.time_ns - rhs.time_ns,
        }
    }
}

/// Cumulative counters per transfer kind. Subtract two snapshots to get a
/// per-operation delta.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TxnLedger {
    pub dma_read: TxnCounter,
    pub dma_write: TxnCounter,
    pub mmio_write: TxnCounter,
}

impl TxnLedger {
    pub fn get(&self, kind: TxnKind) -> &TxnCounter {
        match kind {
            TxnKind::DmaRead => &self.dma_read,
            TxnKind::DmaWrite => &self.dma_write,
            TxnKind::MmioWrite => &self.mmio_write,
        }
    }

    fn get_mut(&mut self, kind: TxnKind) -> &mut TxnCounter {
        match kind {
            TxnKind::DmaRead => &mut self.dma_read,
            TxnKind::DmaWrite => &mut self.dma_write,
            TxnKind::MmioWrite => &mut self.mmio_write,
        }
    }

    /// Bytes moved by DMA in either direction.
    pub fn dma_bytes(&self) -> u64 {
        self.dma_read.bytes + self.dma_write.bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.dma_bytes() + self.mmio_write.bytes
    }

    pub fn total_events(&self) -> u64 {
        self.dma_read.count + self.dma_write.count + self.mmio_write.count
    }

    pub fn total_time_ns(&self) -> f64 {
        self.dma_read.time_ns + self.dma_write.time_ns + self.mmio_write.time_ns
    }
}

impl Sub for TxnLedger {
    type Output = TxnLedger;
    fn sub(self, rhs: TxnLedger) -> TxnLedger {
        TxnLedger {
            dma_read: self.dma_read - rhs.dma_read,
            dma_write: self.dma_write - rhs.dma_write,
            mmio_write: self.mmio_write - rhs.mmio_write,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub kind: TxnKind,
    pub purpose: Purpose,
    pub bytes: u64,
    pub transactions: u64,
    pub time_ns: f64,
}

/// MMIO doorbells carry 8 bytes.
pub const MMIO_BYTES: u64 = 8;

/// The host-device link of one simulation.
#[derive(Debug, Clone)]
pub struct Interconnect {
    cfg: LinkConfig,
    ledger: TxnLedger,
    events: Vec<LedgerEvent>,
    registers: BTreeMap<u64, u64>,
}

impl Interconnect {
    pub fn new(cfg: LinkConfig) -> Result<Self, LinkError> {
        cfg.validate()?;
        Ok(Interconnect {
            cfg,
            ledger: TxnLedger::default(),
            events: Vec::new(),
            registers: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> TxnLedger {
        self.ledger
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Last value written to an MMIO register.
    pub fn register(&self, reg: u64) -> Option<u64> {
        self.registers.get(&reg).copied()
    }

    fn record(&mut self, kind: TxnKind, purpose: Purpose, bytes: u64, time_ns: f64) -> f64 {
        let transactions = if kind == TxnKind::MmioWrite {
            1
        } else {
            self.cfg.transactions(bytes)
        };
        let c = self.ledger.get_mut(kind);
        c.count += 1;
        c.bytes += bytes;
        c.transactions += transactions;
        c.time_ns += time_ns;
        self.events.push(LedgerEvent {
            kind,
            purpose,
            bytes,
            transactions,
            time_ns,
        });
        time_ns
    }

    /// Charges a transfer whose memory effect the caller applies itself.
    pub fn charge(&mut self, kind: TxnKind, purpose: Purpose, bytes: u64) -> f64 {
        let t = match kind {
            TxnKind::MmioWrite => self.cfg.mmio_write_ns,
            _ => cost_dma(bytes, &self.cfg),
        };
        self.record(kind, purpose, bytes, t)
    }

    /// Device writes `bytes` into host memory at `addr`.
    pub fn dma_write(
        &mut self,
        host: &mut RegionMemory,
        addr: u64,
        bytes: &[u8],
        purpose: Purpose,
    ) -> Result<f64, LinkError> {
        host.write(addr, bytes)?;
        Ok(self.charge(TxnKind::DmaWrite, purpose, bytes.len() as u64))
    }

    /// One DMA write whose payload lands at several host destinations.
    pub fn dma_write_scatter(
        &mut self,
        host: &mut RegionMemory,
        pieces: &[(u64, &[u8])],
        purpose: Purpose,
    ) -> Result<f64, LinkError> {
        for (addr, bytes) in pieces {
            host.check_range(*addr, bytes.len() as u64)?;
        }
        let mut total = 0u64;
        for (addr, bytes) in pieces {
            host.write(*addr, bytes)?;
            total += bytes.len() as u64;
        }
        Ok(self.charge(TxnKind::DmaWrite, purpose, total))
    }

    /// Device reads `len` bytes of host memory at `addr`.
    pub fn dma_read(
        &mut self,
        host: &RegionMemory,
        addr: u64,
        len: u64,
        purpose: Purpose,
    ) -> Result<(Vec<u8>, f64), LinkError> {
        let data = host.read(addr, len)?;
        let t = self.charge(TxnKind::DmaRead, purpose, len);
        Ok((data, t))
    }

    /// Host writes a device register.
    pub fn mmio_write(&mut self, reg: u64, value: u64, purpose: Purpose) -> f64 {
        self.registers.insert(reg, value);
        let t = self.cfg.mmio_write_ns;
        self.record(TxnKind::MmioWrite, purpose, MMIO_BYTES, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Region;

    #[test]
    fn cost_examples() {
        let cfg = LinkConfig::default();
        assert_eq!(cost_dma(0, &cfg), 1250.0);
        assert_eq!(cfg.transactions(0), 1);
        assert_eq!(cost_dma(4096, &cfg), 1570.0);
        let separate = 64.0 * cost_dma(64, &cfg);
        assert_eq!(separate, 64.0 * 1255.0);
        let ratio = separate / cost_dma(4096, &cfg);
        assert!((ratio - 51.16).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn profiles() {
        let p = LinkConfig::with_profile("pcie").unwrap();
        assert_eq!((p.latency_ns, p.bandwidth_bytes_per_ns), (1250.0, 12.8));
        let u = LinkConfig::with_profile("upi").unwrap();
        assert_eq!((u.latency_ns, u.bandwidth_bytes_per_ns), (125.0, 19.2));
        let o = LinkConfig::with_profile("onchip-70ns").unwrap();
        assert_eq!((o.latency_ns, o.bandwidth_bytes_per_ns), (70.0, 64.0));
        assert_eq!(
            LinkConfig::with_profile("cxl"),
            Err(LinkError::UnknownProfile("cxl".into()))
        );
    }

    #[test]
    fn validation() {
        let c = LinkConfig {
            bandwidth_bytes_per_ns: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = LinkConfig {
            per_txn_overhead_ns: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn ledger_records_transfers() {
        let mut host = RegionMemory::new(Region::Host, 4 * 4096, 4096).unwrap();
        let base = host.alloc_run(3).unwrap();
        let mut link = Interconnect::new(LinkConfig::default()).unwrap();
        let data: Vec<u8> = (0..100).collect();
        link.dma_write(&mut host, base, &data, Purpose::Flush)
            .unwrap();
        let (back, _) = link
            .dma_read(&host, base, 100, Purpose::PointerChase)
            .unwrap();
        assert_eq!(back, data);
        let l = link.ledger();
        assert_eq!((l.dma_write.count, l.dma_read.count), (1, 1));

        let t = link.mmio_write(0x10, 7, Purpose::Doorbell);
        assert_eq!(t, 1250.0);
        assert_eq!(link.ledger().mmio_write.count, 1);
        assert_eq!(link.register(0x10), Some(7));

        let before = link.ledger();
        link.dma_read(&host, base, 8192, Purpose::PreSerializedFetch)
            .unwrap();
        let d = link.ledger() - before;
        assert_eq!((d.dma_read.count, d.dma_read.transactions), (1, 2));
    }

    #[test]
    fn scatter_is_one_event() {
        let mut host = RegionMemory::new(Region::Host, 4 * 4096, 4096).unwrap();
        let a = host.alloc_chunk().unwrap();
        let b = host.alloc_chunk().unwrap();
        let mut link = Interconnect::new(LinkConfig::default()).unwrap();
        let t = link
            .dma_write_scatter(
                &mut host,
                &[(a, &[1, 2]), (b + 8, &[3; 98])],
                Purpose::Flush,
            )
            .unwrap();
        assert_eq!(t, cost_dma(100, &LinkConfig::default()));
        assert_eq!(link.ledger().dma_write.count, 1);
        assert_eq!(link.ledger().dma_write.bytes, 100);
        assert_eq!(host.read(b + 8, 2).unwrap(), vec![3, 3]);
    }
}
