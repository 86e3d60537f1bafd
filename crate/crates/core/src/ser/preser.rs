//! Pre-serialized buffer used by the memory-affinity strategy.
//!
//! The host walks only the host-resident part of an object and writes it
//! out unencoded as a flat record stream:
//!
//! ```text
//! RAW     [1][kind u8][field u32][len u32][payload; len]
//! ACCPTR  [2][kind u8][field u32][len u32][addr u64][repeated u8][class u16]
//! BEGIN   [3][field u32][class u16]
//! END     [4]
//! ```
//!
//! All integers are little endian. Scalars travel as their 8-byte slot
//! image, packed repeated scalars as `count * 8` bytes, and each element of
//! a repeated string or bytes field as its own RAW record. An ACCPTR keeps
//! the slot of an accelerator-resident field verbatim so the device can
//! walk it in local memory. A root record in accelerator memory becomes a
//! single ACCPTR with field 0.

use crate::layout::{
    read_object, Handle, LayoutError, ObjectArena, Slot, FLAG_ACCEL, FLAG_PRESENT, SLOT_SIZE,
};
use crate::link::Purpose;
use crate::memory::{MemoryError, Region};
use crate::platform::Platform;
use crate::schema::{ClassId, FieldDescriptor, ScalarKind, SchemaTable};
use crate::value::{Message, Value};
use crate::wire::{encode_message, MAX_DECODE_DEPTH};

use super::{device_read_field, fill_tx_arena, CpuCycleProxy, SerError};

const TAG_RAW: u8 = 1;
const TAG_ACCPTR: u8 = 2;
const TAG_BEGIN: u8 = 3;
const TAG_END: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PreRecord {
    Raw {
        kind: u8,
        field: u32,
        payload: Vec<u8>,
    },
    AccPtr {
        kind: u8,
        field: u32,
        len: u32,
        addr: u64,
        repeated: bool,
        class: ClassId,
    },
    Begin {
        field: u32,
        class: ClassId,
    },
    End,
}

fn kind_code(k: ScalarKind) -> u8 {
    match k {
        ScalarKind::Int32 => 0,
        ScalarKind::Int64 => 1,
        ScalarKind::Uint64 => 2,
        ScalarKind::Double => 3,
        ScalarKind::Float => 4,
        ScalarKind::Bool => 5,
        ScalarKind::String => 6,
        ScalarKind::Bytes => 7,
        ScalarKind::Message(_) => 8,
    }
}

impl PreRecord {
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            PreRecord::Raw {
                kind,
                field,
                payload,
            } => {
                out.push(TAG_RAW);
                out.push(*kind);
                out.extend_from_slice(&field.to_le_bytes());
                out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                out.extend_from_slice(payload);
            }
            PreRecord::AccPtr {
                kind,
                field,
                len,
                addr,
                repeated,
                class,
            } => {
                out.push(TAG_ACCPTR);
                out.push(*kind);
                out.extend_from_slice(&field.to_le_bytes());
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(&addr.to_le_bytes());
                out.push(*repeated as u8);
                out.extend_from_slice(&class.to_le_bytes());
            }
            PreRecord::Begin { field, class } => {
                out.push(TAG_BEGIN);
                out.extend_from_slice(&field.to_le_bytes());
                out.extend_from_slice(&class.to_le_bytes());
            }
            PreRecord::End => out.push(TAG_END),
        }
    }

    /// Parses a whole record stream.
    pub fn parse_all(mut buf: &[u8]) -> Result<Vec<PreRecord>, SerError> {
        let short = SerError::CorruptBuffer("truncated record");
        fn take<'a>(buf: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
            if buf.len() < n {
                return None;
            }
            let (head, rest) = buf.split_at(n);
            *buf = rest;
            Some(head)
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let mut out = Vec::new();
        while let Some(&tag) = buf.first() {
            buf = &buf[1..];
            out.push(match tag {
                TAG_RAW => {
                    let h = take(&mut buf, 9).ok_or(short.clone())?;
                    let len = u32_at(&h[5..9]) as usize;
                    let payload = take(&mut buf, len).ok_or(short.clone())?.to_vec();
                    PreRecord::Raw {
                        kind: h[0],
                        field: u32_at(&h[1..5]),
                        payload,
                    }
                }
                TAG_ACCPTR => {
                    let h = take(&mut buf, 20).ok_or(short.clone())?;
                    PreRecord::AccPtr {
                        kind: h[0],
                        field: u32_at(&h[1..5]),
                        len: u32_at(&h[5..9]),
                        addr: u64::from_le_bytes(h[9..17].try_into().unwrap()),
                        repeated: h[17] != 0,
                        class: u16::from_le_bytes([h[18], h[19]]),
                    }
                }
                TAG_BEGIN => {
                    let h = take(&mut buf, 6).ok_or(short.clone())?;
                    PreRecord::Begin {
                        field: u32_at(&h[0..4]),
                        class: u16::from_le_bytes([h[4], h[5]]),
                    }
                }
                TAG_END => PreRecord::End,
                _ => return Err(SerError::CorruptBuffer("unknown record tag")),
            });
        }
        Ok(out)
    }
}

/// A pre-serialized buffer sitting in host scratch memory.
#[derive(Debug)]
pub struct PreSerialized {
    pub handle: Handle,
    pub records: usize,
    pub arena: ObjectArena,
}

struct Walk<'a> {
    table: &'a SchemaTable,
    records: Vec<PreRecord>,
    proxy: CpuCycleProxy,
    threshold: u64,
}

impl Walk<'_> {
    fn copy(&mut self, n: u64) {
        if n < self.threshold {
            self.proxy.cpu_copy(n);
        } else {
            self.proxy.bytes_copied_by_memcpy_engine += n;
        }
    }

    fn raw(&mut self, f: &FieldDescriptor, payload: Vec<u8>) {
        self.copy(payload.len() as u64);
        self.proxy.fields_visited += 1;
        self.records.push(PreRecord::Raw {
            kind: kind_code(f.kind),
            field: f.number,
            payload,
        });
    }

    fn record(
        &mut self,
        p: &Platform,
        class: ClassId,
        record: Handle,
        depth: usize,
    ) -> Result<(), LayoutError> {
        if depth > MAX_DECODE_DEPTH {
            return Err(LayoutError::DepthExceeded);
        }
        let table = self.table;
        let schema = table.get(class).ok_or(LayoutError::UnknownClass(class))?;
        let size = SLOT_SIZE * schema.fields.len() as u64;
        let raw = if size == 0 {
            Vec::new()
        } else {
            p.mem.host.read(record.addr, size)?
        };
        for (i, f) in schema.fields.iter().enumerate() {
            let slot = Slot::decode(&raw[i * 16..i * 16 + 16]);
            if !slot.present() {
                continue;
            }
            self.field(p, f, slot, depth)?;
        }
        Ok(())
    }

    fn field(
        &mut self,
        p: &Platform,
        f: &FieldDescriptor,
        slot: Slot,
        depth: usize,
    ) -> Result<(), LayoutError> {
        let h = slot.handle();
        let read = |addr: u64, len: u64| -> Result<Vec<u8>, LayoutError> {
            if len == 0 {
                Ok(Vec::new())
            } else {
                Ok(p.mem.host.read(addr, len)?)
            }
        };
        if slot.flags & FLAG_ACCEL != 0 {
            self.proxy.fields_visited += 1;
            self.records.push(PreRecord::AccPtr {
                kind: kind_code(f.kind),
                field: f.number,
                len: slot.len,
                addr: slot.word,
                repeated: f.is_repeated(),
                class: match f.kind {
                    ScalarKind::Message(c) => c,
                    _ => 0,
                },
            });
            return Ok(());
        }
        match (f.is_repeated(), f.kind) {
            (false, ScalarKind::Message(child)) => self.nested(p, f.number, child, h, depth),
            (false, k) if k.is_direct() => {
                self.raw(f, slot.word.to_le_bytes().to_vec());
                Ok(())
            }
            (false, _) => {
                let data = read(h.addr, h.len)?;
                self.raw(f, data);
                Ok(())
            }
            (true, _) if f.is_packed() => {
                let data = read(h.addr, h.len * 8)?;
                self.raw(f, data);
                Ok(())
            }
            (true, k) => {
                let array = read(h.addr, h.len * SLOT_SIZE)?;
                for c in array.chunks_exact(16) {
                    let e = Slot::decode(c).handle();
                    match k {
                        ScalarKind::Message(child) => self.nested(p, f.number, child, e, depth)?,
                        _ => {
                            let data = read(e.addr, e.len)?;
                            self.raw(f, data);
                        }
                    }
                }
                Ok(())
            }
        }
    }

    fn nested(
        &mut self,
        p: &Platform,
        field: u32,
        class: ClassId,
        h: Handle,
        depth: usize,
    ) -> Result<(), LayoutError> {
        self.proxy.fields_visited += 1;
        self.records.push(PreRecord::Begin { field, class });
        self.record(p, class, h, depth + 1)?;
        self.records.push(PreRecord::End);
        Ok(())
    }
}

/// Host side of the memory-affinity strategy. Returns the buffer, placed in
/// fresh host scratch chunks, and the CPU work it took.
pub fn pre_serialize(
    p: &mut Platform,
    table: &SchemaTable,
    class: ClassId,
    root: Handle,
    memcpy_threshold: u64,
) -> Result<(PreSerialized, CpuCycleProxy), SerError> {
    let mut walk = Walk {
        table,
        records: Vec::new(),
        proxy: CpuCycleProxy::default(),
        threshold: memcpy_threshold,
    };
    match root.region {
        Region::Accel => walk.records.push(PreRecord::AccPtr {
            kind: kind_code(ScalarKind::Message(class)),
            field: 0,
            len: root.len as u32,
            addr: root.addr,
            repeated: false,
            class,
        }),
        Region::Host => walk.record(p, class, root, 1)?,
    }
    let mut bytes = Vec::new();
    for r in &walk.records {
        r.encode_into(&mut bytes);
    }
    let mut arena = ObjectArena::new(p.cfg.memory.chunk_size);
    let placed = arena
        .alloc(&mut p.mem, Region::Host, bytes.len() as u64)
        .and_then(|addr| p.mem.host.write(addr, &bytes).map(|_| addr));
    let addr = match placed {
        Ok(a) => a,
        Err(e) => {
            arena.release(&mut p.mem)?;
            return Err(e.into());
        }
    };
    Ok((
        PreSerialized {
            handle: Handle {
                region: Region::Host,
                addr,
                len: bytes.len() as u64,
            },
            records: walk.records.len(),
            arena,
        },
        walk.proxy,
    ))
}

/// Result of the device half of the memory-affinity strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelStage {
    pub wire: Vec<u8>,
    pub tx_arena: Vec<u8>,
    pub link_ns: f64,
    pub device_ns: f64,
    pub dependent_reads: u64,
}

fn bad_acc(e: LayoutError, addr: u64) -> SerError {
    match e {
        LayoutError::Memory(MemoryError::UnallocatedAccess {
            region: Region::Accel,
            ..
        })
        | LayoutError::Memory(MemoryError::OutOfBounds {
            region: Region::Accel,
            ..
        }) => SerError::BadAccPtr { addr },
        e => e.into(),
    }
}

fn insert(msg: &mut Message, f: &FieldDescriptor, v: Value) {
    if !f.is_repeated() {
        msg.set(f.number, v);
        return;
    }
    let incoming = match v {
        Value::Repeated(items) => items,
        v => vec![v],
    };
    match msg.fields.get_mut(&f.number) {
        Some(Value::Repeated(items)) => items.extend(incoming),
        _ => msg.set(f.number, Value::Repeated(incoming)),
    }
}

fn descriptor(
    table: &SchemaTable,
    class: ClassId,
    field: u32,
    kind: u8,
) -> Result<FieldDescriptor, SerError> {
    let f = table
        .get(class)
        .and_then(|s| s.field(field))
        .ok_or(SerError::CorruptBuffer("field not in schema"))?;
    if kind_code(f.kind) != kind {
        return Err(SerError::CorruptBuffer("kind mismatch"));
    }
    Ok(f.clone())
}

fn raw_value(f: &FieldDescriptor, payload: Vec<u8>) -> Result<Value, SerError> {
    let bad = SerError::CorruptBuffer("malformed payload");
    let scalar =
        |b: &[u8]| Value::from_scalar_bits(f.kind, u64::from_le_bytes(b.try_into().unwrap()));
    Ok(match f.kind {
        ScalarKind::String => Value::String(String::from_utf8(payload).map_err(|_| bad)?),
        ScalarKind::Bytes => Value::Bytes(payload),
        ScalarKind::Message(_) => return Err(bad),
        _ if f.is_repeated() => {
            if !payload.len().is_multiple_of(8) {
                return Err(bad);
            }
            Value::Repeated(
                payload
                    .chunks_exact(8)
                    .map(|c| scalar(c).unwrap())
                    .collect(),
            )
        }
        _ => {
            if payload.len() != 8 {
                return Err(bad);
            }
            scalar(&payload).unwrap()
        }
    })
}

/// Device side of the memory-affinity strategy: one read of the buffer,
/// local reads of every ACCPTR, then encoding into the TX arena.
pub fn accel_serialize(
    p: &mut Platform,
    table: &SchemaTable,
    class: ClassId,
    buf: &PreSerialized,
) -> Result<AccelStage, SerError> {
    let mut device_ns = p.translate(buf.handle.addr);
    let mut link_ns = 0.0;
    let bytes = if buf.handle.len == 0 {
        Vec::new()
    } else {
        let (b, t) = p.link.dma_read(
            &p.mem.host,
            buf.handle.addr,
            buf.handle.len,
            Purpose::PreSerializedFetch,
        )?;
        link_ns += t;
        b
    };
    let mut cycles = (bytes.len() as u64).div_ceil(64);
    let mut reads = 0;

    let mut stack: Vec<(Message, Option<FieldDescriptor>)> = vec![(Message::new(class), None)];
    for rec in PreRecord::parse_all(&bytes)? {
        let cur = stack.last().unwrap().0.class_id;
        match rec {
            PreRecord::Raw {
                kind,
                field,
                payload,
            } => {
                let f = descriptor(table, cur, field, kind)?;
                let v = raw_value(&f, payload)?;
                insert(&mut stack.last_mut().unwrap().0, &f, v);
            }
            PreRecord::AccPtr {
                field: 0,
                addr,
                len,
                class: c,
                ..
            } => {
                if stack.len() != 1 || c != class {
                    return Err(SerError::CorruptBuffer("misplaced root pointer"));
                }
                let root = Handle {
                    region: Region::Accel,
                    addr,
                    len: len as u64,
                };
                let mut reader = super::DeviceReader {
                    p,
                    link_ns: 0.0,
                    device_ns: 0.0,
                    reads: 0,
                };
                let m =
                    read_object(&mut reader, table, class, root).map_err(|e| bad_acc(e, addr))?;
                link_ns += reader.link_ns;
                device_ns += reader.device_ns;
                reads += reader.reads;
                cycles += root.len.div_ceil(64);
                stack[0].0 = m;
            }
            PreRecord::AccPtr {
                kind,
                field,
                len,
                addr,
                ..
            } => {
                let f = descriptor(table, cur, field, kind)?;
                let slot = Slot {
                    word: addr,
                    len,
                    flags: FLAG_PRESENT | FLAG_ACCEL,
                };
                let (v, l, d, r) =
                    device_read_field(p, table, &f, slot).map_err(|e| bad_acc(e, addr))?;
                link_ns += l;
                device_ns += d;
                reads += r;
                cycles += crate::layout::block_bytes(&f, &slot).div_ceil(64);
                insert(&mut stack.last_mut().unwrap().0, &f, v);
            }
            PreRecord::Begin { field, class: c } => {
                let f = descriptor(table, cur, field, kind_code(ScalarKind::Message(c)))?;
                if f.kind != ScalarKind::Message(c) {
                    return Err(SerError::CorruptBuffer("class mismatch"));
                }
                if stack.len() > MAX_DECODE_DEPTH {
                    return Err(SerError::CorruptBuffer("nesting too deep"));
                }
                stack.push((Message::new(c), Some(f)));
            }
            PreRecord::End => {
                let (m, f) = stack.pop().unwrap();
                let Some(f) = f else {
                    return Err(SerError::CorruptBuffer("unbalanced END"));
                };
                insert(&mut stack.last_mut().unwrap().0, &f, Value::Message(m));
            }
        }
    }
    if stack.len() != 1 {
        return Err(SerError::CorruptBuffer("unterminated BEGIN"));
    }
    let msg = stack.pop().unwrap().0;
    let wire = encode_message(&msg, table)?;
    device_ns += p.cycles_ns(cycles);
    let (tx_arena, t) = fill_tx_arena(p, class, &wire)?;
    device_ns += t;
    Ok(AccelStage {
        wire,
        tx_arena,
        link_ns,
        device_ns,
        dependent_reads: reads,
    })
}
