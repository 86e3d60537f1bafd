//! Response serialization: three strategies producing identical bytes with
//! different cost profiles.
//!
//! - `cpu_only`: accelerator-resident fields are first copied to the host,
//!   the CPU encodes everything, and the device pulls the finished message.
//! - `accel_only`: the device walks the object itself. Every host-resident
//!   record or data block costs a dependent DMA read.
//! - `memory_affinity`: the CPU lays host-resident fields out unencoded in
//!   one buffer with placeholders for accelerator-resident ones; the device
//!   fetches that buffer in one read and does all encoding.

mod preser;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use preser::{accel_serialize, pre_serialize, AccelStage, PreRecord, PreSerialized};

use crate::layout::{read_object, Handle, LayoutError, ObjectArena, ObjectReader};
use crate::link::{LinkError, Purpose, TxnLedger};
use crate::memory::{MemoryError, Region};
use crate::platform::{HostConfig, Platform};
use crate::schema::{ClassId, SchemaTable};
use crate::value::{Message, Value};
use crate::wire::{encode_message, RpcHeader, WireError, RPC_HEADER_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    CpuOnly,
    AccelOnly,
    MemoryAffinity,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::CpuOnly,
        Strategy::AccelOnly,
        Strategy::MemoryAffinity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CpuOnly => "cpu-only",
            Strategy::AccelOnly => "accel-only",
            Strategy::MemoryAffinity => "memory-affinity",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerError {
    #[error("handle points at unallocated {region} memory at {addr:#x}")]
    DanglingHandle { region: Region, addr: u64 },
    #[error("accelerator pointer {addr:#x} is not allocated")]
    BadAccPtr { addr: u64 },
    #[error("corrupt pre-serialized buffer: {0}")]
    CorruptBuffer(&'static str),
    #[error(transparent)]
    Layout(LayoutError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

impl From<LayoutError> for SerError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::Memory(MemoryError::UnallocatedAccess { region, addr })
            | LayoutError::Memory(MemoryError::OutOfBounds { region, addr, .. }) => {
                SerError::DanglingHandle { region, addr }
            }
            e => SerError::Layout(e),
        }
    }
}

/// Host CPU work attributed to one serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CpuCycleProxy {
    pub bytes_copied_by_cpu: u64,
    pub bytes_copied_by_memcpy_engine: u64,
    pub encode_ops_on_cpu: u64,
    pub fields_visited: u64,
    /// Largest single copy done by the CPU.
    pub max_cpu_copy: u64,
}

impl CpuCycleProxy {
    pub(crate) fn cpu_copy(&mut self, n: u64) {
        self.bytes_copied_by_cpu += n;
        self.max_cpu_copy = self.max_cpu_copy.max(n);
    }

    /// Host nanoseconds implied by the counters. Engine copies are free.
    pub fn host_ns(&self, cfg: &HostConfig) -> f64 {
        self.fields_visited as f64 * cfg.field_visit_ns
            + self.bytes_copied_by_cpu as f64 / cfg.copy_bytes_per_ns
            + self.encode_ops_on_cpu as f64 * cfg.encode_op_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializeOutcome {
    pub strategy: Strategy,
    /// Encoded payload, without the RPC header.
    pub wire: Vec<u8>,
    /// Header plus payload as read back from the TX arena.
    pub tx_arena: Vec<u8>,
    pub proxy: CpuCycleProxy,
    pub host_ns: f64,
    pub link_ns: f64,
    pub device_ns: f64,
    pub elapsed_ns: f64,
    /// Device reads of host memory issued while walking the object.
    pub dependent_reads: u64,
    pub ledger: TxnLedger,
}

/// Accelerator cycles to encode `msg` one emission at a time: one cycle
/// per tag plus one per 64 payload bytes.
pub fn emission_cycles(msg: &Message) -> u64 {
    msg.fields.values().map(value_cycles).sum()
}

fn value_cycles(v: &Value) -> u64 {
    match v {
        Value::String(s) => (s.len() as u64).div_ceil(64).max(1),
        Value::Bytes(b) => (b.len() as u64).div_ceil(64).max(1),
        Value::Message(m) => 1 + emission_cycles(m),
        Value::Repeated(items) => match items.first() {
            Some(x) if x.scalar_bits().is_some() => (items.len() as u64 * 8).div_ceil(64).max(1),
            _ => items.iter().map(value_cycles).sum(),
        },
        _ => 1,
    }
}

/// Places header + payload in the TX arena and reads it back. The arena is
/// handed to the transport and freed.
pub(crate) fn fill_tx_arena(
    p: &mut Platform,
    class: ClassId,
    payload: &[u8],
) -> Result<(Vec<u8>, f64), SerError> {
    let header = RpcHeader {
        class_id: class,
        msg_len: payload.len() as u32,
    };
    let mut bytes = header.encode().to_vec();
    bytes.extend_from_slice(payload);
    let mut arena = ObjectArena::new(p.cfg.memory.chunk_size);
    let addr = arena.alloc(&mut p.mem, Region::Accel, bytes.len() as u64)?;
    p.mem.accel.write(addr, &bytes)?;
    let t = p.accel_write_ns(bytes.len() as u64);
    let back = p.mem.accel.read(addr, bytes.len() as u64)?;
    arena.release(&mut p.mem)?;
    debug_assert_eq!(back.len(), RPC_HEADER_BYTES + payload.len());
    Ok((back, t))
}

/// The CPU's view of an object whose accelerator-resident parts are copied
/// into host scratch memory by the device first.
struct FetchingReader<'a> {
    p: &'a mut Platform,
    scratch: ObjectArena,
    link_ns: f64,
    device_ns: f64,
}

impl ObjectReader for FetchingReader<'_> {
    fn read(&mut self, region: Region, addr: u64, len: u64) -> Result<Vec<u8>, LayoutError> {
        match region {
            Region::Host => Ok(self.p.mem.host.read(addr, len)?),
            Region::Accel => {
                let data = self.p.mem.accel.read(addr, len)?;
                self.device_ns += self.p.accel_read_ns(len);
                let dest = self.scratch.alloc(&mut self.p.mem, Region::Host, len)?;
                self.link_ns += self
                    .p
                    .link
                    .dma_write(&mut self.p.mem.host, dest, &data, Purpose::FieldFetch)
                    .map_err(|e| match e {
                        LinkError::Memory(m) => LayoutError::Memory(m),
                        _ => LayoutError::Memory(MemoryError::BadConfig("link")),
                    })?;
                Ok(self.p.mem.host.read(dest, len)?)
            }
        }
    }
}

/// The device walking an object: host reads cross the link one at a time.
struct DeviceReader<'a> {
    p: &'a mut Platform,
    link_ns: f64,
    device_ns: f64,
    reads: u64,
}

impl ObjectReader for DeviceReader<'_> {
    fn read(&mut self, region: Region, addr: u64, len: u64) -> Result<Vec<u8>, LayoutError> {
        match region {
            Region::Accel => {
                self.device_ns += self.p.accel_read_ns(len);
                Ok(self.p.mem.accel.read(addr, len)?)
            }
            Region::Host => {
                self.device_ns += self.p.translate(addr);
                let (data, t) = self
                    .p
                    .link
                    .dma_read(&self.p.mem.host, addr, len, Purpose::PointerChase)
                    .map_err(|e| match e {
                        LinkError::Memory(m) => LayoutError::Memory(m),
                        _ => LayoutError::Memory(MemoryError::BadConfig("link")),
                    })?;
                self.link_ns += t;
                self.reads += 1;
                Ok(data)
            }
        }
    }
}

pub fn serialize_cpu_only(
    p: &mut Platform,
    class: ClassId,
    root: Handle,
) -> Result<SerializeOutcome, SerError> {
    let before = p.link.ledger();
    let table = p.table.clone();
    let mut reader = FetchingReader {
        p,
        scratch: ObjectArena::new(0),
        link_ns: 0.0,
        device_ns: 0.0,
    };
    reader.scratch = ObjectArena::new(reader.p.cfg.memory.chunk_size);
    let walked = read_object(&mut reader, &table, class, root);
    let FetchingReader {
        p,
        mut scratch,
        mut link_ns,
        mut device_ns,
    } = reader;
    let msg = match walked {
        Ok(m) => m,
        Err(e) => {
            scratch.release(&mut p.mem)?;
            return Err(e.into());
        }
    };
    let wire = encode_message(&msg, &table)?;
    let ops = msg.field_count() as u64;
    let mut proxy = CpuCycleProxy {
        encode_ops_on_cpu: ops,
        fields_visited: ops,
        ..Default::default()
    };
    proxy.cpu_copy(wire.len() as u64);
    let host_ns = proxy.host_ns(&p.cfg.host);

    // the finished message sits in host memory until the device pulls it
    let header = RpcHeader {
        class_id: class,
        msg_len: wire.len() as u32,
    };
    let mut framed = header.encode().to_vec();
    framed.extend_from_slice(&wire);
    let tx = scratch.alloc(&mut p.mem, Region::Host, framed.len() as u64)?;
    p.mem.host.write(tx, &framed)?;
    link_ns += p.link.mmio_write(0x10, tx, Purpose::Doorbell);
    device_ns += p.translate(tx);
    let (pulled, t) =
        p.link
            .dma_read(&p.mem.host, tx, framed.len() as u64, Purpose::ResponseFetch)?;
    link_ns += t;
    scratch.release(&mut p.mem)?;
    let (tx_arena, t) = fill_tx_arena(p, class, &pulled[RPC_HEADER_BYTES..])?;
    device_ns += t;
    Ok(SerializeOutcome {
        strategy: Strategy::CpuOnly,
        wire,
        tx_arena,
        proxy,
        host_ns,
        link_ns,
        device_ns,
        elapsed_ns: host_ns + link_ns + device_ns,
        dependent_reads: 0,
        ledger: p.link.ledger() - before,
    })
}

pub fn serialize_accel_only(
    p: &mut Platform,
    class: ClassId,
    root: Handle,
) -> Result<SerializeOutcome, SerError> {
    let before = p.link.ledger();
    let table = p.table.clone();
    let mut reader = DeviceReader {
        p,
        link_ns: 0.0,
        device_ns: 0.0,
        reads: 0,
    };
    let msg = read_object(&mut reader, &table, class, root)?;
    let DeviceReader {
        p,
        link_ns,
        mut device_ns,
        reads,
    } = reader;
    let wire = encode_message(&msg, &table)?;
    device_ns += p.cycles_ns(emission_cycles(&msg));
    let (tx_arena, t) = fill_tx_arena(p, class, &wire)?;
    device_ns += t;
    Ok(SerializeOutcome {
        strategy: Strategy::AccelOnly,
        wire,
        tx_arena,
        proxy: CpuCycleProxy::default(),
        host_ns: 0.0,
        link_ns,
        device_ns,
        elapsed_ns: link_ns + device_ns,
        dependent_reads: reads,
        ledger: p.link.ledger() - before,
    })
}

pub fn serialize_memory_affinity(
    p: &mut Platform,
    class: ClassId,
    root: Handle,
) -> Result<SerializeOutcome, SerError> {
    let before = p.link.ledger();
    let table = p.table.clone();
    let threshold = p.cfg.host.memcpy_threshold;
    let (buf, proxy) = pre_serialize(p, &table, class, root, threshold)?;
    let host_ns = proxy.host_ns(&p.cfg.host);
    let mut link_ns = p.link.mmio_write(0x20, buf.handle.addr, Purpose::Doorbell);
    let done = accel_serialize(p, &table, class, &buf);
    let release = buf.arena.release(&mut p.mem);
    let stage = done?;
    release?;
    link_ns += stage.link_ns;
    Ok(SerializeOutcome {
        strategy: Strategy::MemoryAffinity,
        wire: stage.wire,
        tx_arena: stage.tx_arena,
        proxy,
        host_ns,
        link_ns,
        device_ns: stage.device_ns,
        elapsed_ns: host_ns + link_ns + stage.device_ns,
        dependent_reads: stage.dependent_reads,
        ledger: p.link.ledger() - before,
    })
}

pub fn serialize(
    p: &mut Platform,
    strategy: Strategy,
    class: ClassId,
    root: Handle,
) -> Result<SerializeOutcome, SerError> {
    match strategy {
        Strategy::CpuOnly => serialize_cpu_only(p, class, root),
        Strategy::AccelOnly => serialize_accel_only(p, class, root),
        Strategy::MemoryAffinity => serialize_memory_affinity(p, class, root),
    }
}

/// Device-side walk shared with the ACCPTR expansion in the
/// memory-affinity path.
pub(crate) fn device_read_field(
    p: &mut Platform,
    table: &SchemaTable,
    f: &crate::schema::FieldDescriptor,
    slot: crate::layout::Slot,
) -> Result<(Value, f64, f64, u64), LayoutError> {
    let mut reader = DeviceReader {
        p,
        link_ns: 0.0,
        device_ns: 0.0,
        reads: 0,
    };
    let v = crate::layout::read_field(&mut reader, table, f, slot)?;
    Ok((v, reader.link_ns, reader.device_ns, reader.reads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::store_message;
    use crate::oracle::ref_encode;
    use crate::platform::PlatformConfig;
    use crate::schema::compile_source;

    const SRC: &str = "
        message Req { string name = 1; bytes blob = 2 [Acc]; Inner inner = 3; repeated int64 xs = 4; }
        message Inner { int32 a = 1; Inner next = 2; repeated string tags = 3 [Acc]; }
    ";

    fn setup(msg: &Message) -> (Platform, Handle, ObjectArena) {
        let mut cfg = PlatformConfig::default();
        cfg.memory.host_pool_bytes = 8 << 20;
        cfg.memory.accel_pool_bytes = 8 << 20;
        let table = compile_source(SRC).unwrap().table;
        let mut p = Platform::new(cfg, table).unwrap();
        let mut arena = ObjectArena::new(4096);
        let t = p.table.clone();
        let root = store_message(&mut p.mem, &mut arena, &t, msg, Region::Host).unwrap();
        (p, root, arena)
    }

    fn sample() -> Message {
        let inner2 = Message::new(2).with(1, Value::Int32(-7));
        let inner = Message::new(2)
            .with(1, Value::Int32(3))
            .with(2, Value::Message(inner2))
            .with(
                3,
                Value::Repeated(vec![Value::String("x".into()), Value::String("yz".into())]),
            );
        Message::new(1)
            .with(1, Value::String("hi".into()))
            .with(2, Value::Bytes(vec![0xab; 2048]))
            .with(3, Value::Message(inner))
            .with(4, Value::Repeated(vec![Value::Int64(1), Value::Int64(-1)]))
    }

    #[test]
    fn strategies_agree_with_reference() {
        let msg = sample();
        let (mut p, root, _arena) = setup(&msg);
        let expected = ref_encode(&msg);
        for s in Strategy::ALL {
            let out = serialize(&mut p, s, 1, root).unwrap();
            assert_eq!(out.wire, expected, "{s}");
            assert_eq!(&out.tx_arena[RPC_HEADER_BYTES..], &expected[..]);
            assert_eq!(
                RpcHeader::decode(&out.tx_arena).unwrap().msg_len as usize,
                expected.len()
            );
        }
    }

    #[test]
    fn cpu_only_fetches_acc_fields() {
        let msg = Message::new(1).with(2, Value::Bytes(vec![1; 2048]));
        let (mut p, root, _a) = setup(&msg);
        let out = serialize_cpu_only(&mut p, 1, root).unwrap();
        assert_eq!(
            (out.ledger.dma_read.count, out.ledger.dma_write.count),
            (1, 1)
        );
        assert_eq!(out.proxy.encode_ops_on_cpu, 1);
    }

    #[test]
    fn memory_affinity_skips_acc_payload() {
        let msg = Message::new(1)
            .with(1, Value::String("hi".into()))
            .with(2, Value::Bytes(vec![1; 2048]));
        let (mut p, root, _a) = setup(&msg);
        let out = serialize_memory_affinity(&mut p, 1, root).unwrap();
        assert_eq!(out.proxy.bytes_copied_by_cpu, 2);
        assert_eq!(out.proxy.bytes_copied_by_memcpy_engine, 0);
        assert_eq!(out.proxy.encode_ops_on_cpu, 0);
        assert_eq!(
            (out.ledger.mmio_write.count, out.ledger.dma_read.count),
            (1, 1)
        );
        assert_eq!(out.ledger.dma_write.count, 0);
        assert!(out.ledger.dma_bytes() < 2048);
        assert_eq!(out.wire, ref_encode(&msg));
    }

    #[test]
    fn accel_only_chases_pointers() {
        let msg = sample();
        let (mut p, root, _a) = setup(&msg);
        let out = serialize_accel_only(&mut p, 1, root).unwrap();
        // root, name, inner, inner.next, xs
        assert_eq!(out.dependent_reads, 5);
        assert_eq!(out.ledger.dma_read.count, 5);
        assert_eq!(out.ledger.mmio_write.count, 0);
    }

    #[test]
    fn empty_message_is_header_only() {
        let (mut p, root, _a) = setup(&Message::new(1));
        for s in Strategy::ALL {
            let out = serialize(&mut p, s, 1, root).unwrap();
            assert!(out.wire.is_empty());
            assert_eq!(out.tx_arena.len(), RPC_HEADER_BYTES);
        }
    }

    #[test]
    fn dangling_handle() {
        let (mut p, _root, _a) = setup(&Message::new(1));
        let bogus = Handle {
            region: Region::Host,
            addr: 0x10,
            len: 64,
        };
        assert!(matches!(
            serialize_accel_only(&mut p, 1, bogus),
            Err(SerError::DanglingHandle { .. })
        ));
        assert!(matches!(
            serialize_memory_affinity(&mut p, 1, bogus),
            Err(SerError::DanglingHandle { .. })
        ));
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("gpu".parse::<Strategy>().is_err());
    }
}
