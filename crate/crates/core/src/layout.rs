//! In-memory object layout shared by the deserializer, the serializers and
//! the host runtime.
//!
//! A message instance is a record of 16-byte slots, one per schema field in
//! field-number order:
//!
//! ```text
//! [0..8)   scalar bits, or address of the field's data block
//! [8..12)  byte length (string/bytes), record size (message) or element count
//! [12]     flags: bit 0 present, bit 1 data lives in accelerator memory
//! ```
//!
//! Direct scalars live inline. A singular string or bytes field points at
//! its payload, a singular message at the child record. Repeated scalars
//! point at an array of 8-byte values; other repeated fields point at an
//! array of 16-byte element slots. Data blocks, element arrays and child
//! records of a field all live in the region named by that field's
//! placement bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{MemoryError, MemorySystem, Region};
use crate::schema::{Addressing, ClassId, FieldDescriptor, MessageSchema, ScalarKind, SchemaTable};
use crate::value::{Message, Value};
use crate::wire::MAX_DECODE_DEPTH;

pub const SLOT_SIZE: u64 = 16;
pub const FLAG_PRESENT: u8 = 1;
pub const FLAG_ACCEL: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("unknown class id {0}")]
    UnknownClass(ClassId),
    #[error("field {field}: invalid UTF-8 in memory")]
    InvalidUtf8 { field: u32 },
    #[error("field {field}: value does not match declared type")]
    TypeMismatch { field: u32 },
    #[error("object nesting exceeds {MAX_DECODE_DEPTH}")]
    DepthExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Slot {
    pub word: u64,
    pub len: u32,
    pub flags: u8,
}

impl Slot {
    pub fn scalar(bits: u64) -> Self {
        Slot {
            word: bits,
            len: 0,
            flags: FLAG_PRESENT,
        }
    }

    pub fn pointer(h: Handle) -> Self {
        let accel = if h.region == Region::Accel {
            FLAG_ACCEL
        } else {
            0
        };
        Slot {
            word: h.addr,
            len: h.len as u32,
            flags: FLAG_PRESENT | accel,
        }
    }

    pub fn encode(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[..8].copy_from_slice(&self.word.to_le_bytes());
        b[8..12].copy_from_slice(&self.len.to_le_bytes());
        b[12] = self.flags;
        b
    }

    pub fn decode(b: &[u8]) -> Slot {
        Slot {
            word: u64::from_le_bytes(b[..8].try_into().unwrap()),
            len: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            flags: b[12],
        }
    }

    pub fn present(&self) -> bool {
        self.flags & FLAG_PRESENT != 0
    }

    pub fn region(&self) -> Region {
        if self.flags & FLAG_ACCEL != 0 {
            Region::Accel
        } else {
            Region::Host
        }
    }

    pub fn handle(&self) -> Handle {
        Handle {
            region: self.region(),
            addr: self.word,
            len: self.len as u64,
        }
    }
}

/// Region-tagged reference to a data block or record.
///
/// `len` follows the slot convention: bytes for string/bytes, record size
/// for messages, element count for repeated fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handle {
    pub region: Region,
    pub addr: u64,
    pub len: u64,
}

pub fn record_size(schema: &MessageSchema) -> u64 {
    SLOT_SIZE * schema.fields.len() as u64
}

/// Region holding a field's out-of-line data.
pub fn field_region(table: &SchemaTable, class: ClassId, f: &FieldDescriptor) -> Region {
    if f.addressing() == Addressing::Dereference && table.placement(class, f.number) {
        Region::Accel
    } else {
        Region::Host
    }
}

/// Size in bytes of the block a dereference slot points at.
pub fn block_bytes(f: &FieldDescriptor, slot: &Slot) -> u64 {
    let n = slot.len as u64;
    if f.is_repeated() {
        if f.is_packed() {
            n * 8
        } else {
            n * SLOT_SIZE
        }
    } else {
        n
    }
}

/// Bump allocator over chunks owned by one message.
///
/// Small blocks are carved from the current chunk of their region; a block
/// larger than a chunk gets a run of adjacent chunks to itself. Zero-length
/// blocks get address 0 and no storage.
#[derive(Debug, Clone, Default)]
pub struct ObjectArena {
    cursors: [Option<(u64, u64)>; 2],
    runs: Vec<(Region, u64, usize)>,
    used: [u64; 2],
    chunk_size: u64,
}

fn idx(r: Region) -> usize {
    match r {
        Region::Host => 0,
        Region::Accel => 1,
    }
}

impl ObjectArena {
    pub fn new(chunk_size: u64) -> Self {
        ObjectArena {
            chunk_size,
            ..Default::default()
        }
    }

    pub fn alloc(
        &mut self,
        mem: &mut MemorySystem,
        region: Region,
        len: u64,
    ) -> Result<u64, MemoryError> {
        if len == 0 {
            return Ok(0);
        }
        let len = len.next_multiple_of(8);
        self.used[idx(region)] += len;
        if len > self.chunk_size {
            let count = len.div_ceil(self.chunk_size) as usize;
            let base = mem.region_mut(region).alloc_run(count)?;
            self.runs.push((region, base, count));
            return Ok(base);
        }
        if let Some((base, used)) = &mut self.cursors[idx(region)] {
            if *used + len <= self.chunk_size {
                let addr = *base + *used;
                *used += len;
                return Ok(addr);
            }
        }
        let base = mem.region_mut(region).alloc_chunk()?;
        self.runs.push((region, base, 1));
        self.cursors[idx(region)] = Some((base, len));
        Ok(base)
    }

    /// Chunks held in `region`.
    pub fn chunks(&self, region: Region) -> usize {
        self.runs
            .iter()
            .filter(|r| r.0 == region)
            .map(|r| r.2)
            .sum()
    }

    pub fn used_bytes(&self, region: Region) -> u64 {
        self.used[idx(region)]
    }

    /// Bytes held in chunks but not handed out.
    pub fn wasted_bytes(&self) -> u64 {
        let held =
            (self.chunks(Region::Host) + self.chunks(Region::Accel)) as u64 * self.chunk_size;
        held - self.used[0] - self.used[1]
    }

    /// Takes ownership of everything `other` holds.
    pub fn absorb(&mut self, other: ObjectArena) {
        self.runs.extend(other.runs);
        self.used[0] += other.used[0];
        self.used[1] += other.used[1];
    }

    /// Returns every chunk to its free list.
    pub fn release(self, mem: &mut MemorySystem) -> Result<(), MemoryError> {
        for (region, base, count) in self.runs {
            for i in 0..count as u64 {
                mem.region_mut(region)
                    .free_chunk(base + i * self.chunk_size)?;
            }
        }
        Ok(())
    }
}

/// Content of one field collected before its record is laid out.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldContent {
    Scalar(u64),
    Data(Vec<u8>),
    Packed(Vec<u64>),
    Child(Handle),
    Elements(Vec<Element>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Data(Vec<u8>),
    Child(Handle),
}

/// One write produced by laying out a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub region: Region,
    pub addr: u64,
    pub bytes: Vec<u8>,
}

/// All writes that materialize one field of one record: data blocks first,
/// then the slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldWrites {
    pub number: u32,
    pub pieces: Vec<Piece>,
}

impl FieldWrites {
    pub fn touches(&self, region: Region) -> bool {
        self.pieces.iter().any(|p| p.region == region)
    }

    pub fn bytes_in(&self, region: Region) -> u64 {
        self.pieces
            .iter()
            .filter(|p| p.region == region)
            .map(|p| p.bytes.len() as u64)
            .sum()
    }
}

/// Allocates a record in `record_region` plus the data blocks of its
/// fields and returns the writes that fill them, in ascending field order.
///
/// `contents` pairs slot indices with field contents; child records must
/// already be laid out.
pub fn lay_out_record(
    mem: &mut MemorySystem,
    arena: &mut ObjectArena,
    table: &SchemaTable,
    schema: &MessageSchema,
    record_region: Region,
    contents: Vec<(usize, FieldContent)>,
) -> Result<(Handle, Vec<FieldWrites>), MemoryError> {
    let size = record_size(schema);
    let record = arena.alloc(mem, record_region, size)?;
    let mut out = Vec::with_capacity(contents.len());
    for (slot_idx, content) in contents {
        let f = &schema.fields[slot_idx];
        let region = field_region(table, schema.class_id, f);
        let mut pieces = Vec::new();
        let mut data = |bytes: Vec<u8>, pieces: &mut Vec<Piece>| -> Result<u64, MemoryError> {
            let addr = arena.alloc(mem, region, bytes.len() as u64)?;
            if !bytes.is_empty() {
                pieces.push(Piece {
                    region,
                    addr,
                    bytes,
                });
            }
            Ok(addr)
        };
        let slot = match content {
            FieldContent::Scalar(bits) => Slot::scalar(bits),
            FieldContent::Data(bytes) => {
                let len = bytes.len() as u64;
                let addr = data(bytes, &mut pieces)?;
                Slot::pointer(Handle { region, addr, len })
            }
            FieldContent::Packed(values) => {
                let len = values.len() as u64;
                let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
                let addr = data(bytes, &mut pieces)?;
                Slot::pointer(Handle { region, addr, len })
            }
            FieldContent::Child(h) => Slot::pointer(h),
            FieldContent::Elements(items) => {
                let len = items.len() as u64;
                let mut array = Vec::with_capacity(items.len() * SLOT_SIZE as usize);
                for item in items {
                    let h = match item {
                        Element::Data(bytes) => {
                            let n = bytes.len() as u64;
                            let addr = data(bytes, &mut pieces)?;
                            Handle {
                                region,
                                addr,
                                len: n,
                            }
                        }
                        Element::Child(h) => h,
                    };
                    array.extend_from_slice(&Slot::pointer(h).encode());
                }
                let addr = data(array, &mut pieces)?;
                Slot::pointer(Handle { region, addr, len })
            }
        };
        pieces.push(Piece {
            region: record_region,
            addr: record + slot_idx as u64 * SLOT_SIZE,
            bytes: slot.encode().to_vec(),
        });
        out.push(FieldWrites {
            number: f.number,
            pieces,
        });
    }
    Ok((
        Handle {
            region: record_region,
            addr: record,
            len: size,
        },
        out,
    ))
}

fn content_of(
    mem: &mut MemorySystem,
    arena: &mut ObjectArena,
    table: &SchemaTable,
    class: ClassId,
    f: &FieldDescriptor,
    value: &Value,
    depth: usize,
) -> Result<FieldContent, LayoutError> {
    let mismatch = LayoutError::TypeMismatch { field: f.number };
    let region = field_region(table, class, f);
    let single = |v: &Value| -> Option<Vec<u8>> {
        match v {
            Value::String(s) => Some(s.as_bytes().to_vec()),
            Value::Bytes(b) => Some(b.clone()),
            _ => None,
        }
    };
    Ok(match (f.is_repeated(), value) {
        (false, Value::Message(m)) => {
            FieldContent::Child(store_at(mem, arena, table, m, region, depth + 1)?)
        }
        (false, v) if f.kind.is_direct() => FieldContent::Scalar(v.scalar_bits().ok_or(mismatch)?),
        (false, v) => FieldContent::Data(single(v).ok_or(mismatch)?),
        (true, Value::Repeated(items)) if f.is_packed() => FieldContent::Packed(
            items
                .iter()
                .map(|v| {
                    v.scalar_bits()
                        .ok_or(LayoutError::TypeMismatch { field: f.number })
                })
                .collect::<Result<_, _>>()?,
        ),
        (true, Value::Repeated(items)) => {
            let mut elems = Vec::with_capacity(items.len());
            for item in items {
                elems.push(match item {
                    Value::Message(m) => {
                        Element::Child(store_at(mem, arena, table, m, region, depth + 1)?)
                    }
                    v => Element::Data(
                        single(v).ok_or(LayoutError::TypeMismatch { field: f.number })?,
                    ),
                });
            }
            FieldContent::Elements(elems)
        }
        _ => return Err(mismatch),
    })
}

fn store_at(
    mem: &mut MemorySystem,
    arena: &mut ObjectArena,
    table: &SchemaTable,
    msg: &Message,
    region: Region,
    depth: usize,
) -> Result<Handle, LayoutError> {
    if depth > MAX_DECODE_DEPTH {
        return Err(LayoutError::DepthExceeded);
    }
    let schema = table
        .get(msg.class_id)
        .ok_or(LayoutError::UnknownClass(msg.class_id))?;
    let mut contents = Vec::with_capacity(msg.fields.len());
    for (&number, value) in &msg.fields {
        let Some(slot) = schema.slot_index(number) else {
            continue;
        };
        let f = &schema.fields[slot];
        contents.push((
            slot,
            content_of(mem, arena, table, msg.class_id, f, value, depth)?,
        ));
    }
    let (handle, writes) = lay_out_record(mem, arena, table, schema, region, contents)?;
    for w in writes {
        for p in w.pieces {
            mem.write(p.region, p.addr, &p.bytes)?;
        }
    }
    Ok(handle)
}

/// Writes `msg` into memory with no cost accounting, as host software
/// building an object would. Placement follows the table's bits; the root
/// record goes to `region`.
pub fn store_message(
    mem: &mut MemorySystem,
    arena: &mut ObjectArena,
    table: &SchemaTable,
    msg: &Message,
    region: Region,
) -> Result<Handle, LayoutError> {
    store_at(mem, arena, table, msg, region, 1)
}

/// Memory reads issued while walking an object. Implementations decide
/// what each read costs.
pub trait ObjectReader {
    fn read(&mut self, region: Region, addr: u64, len: u64) -> Result<Vec<u8>, LayoutError>;
}

/// Reads with no side effects.
pub struct FreeReader<'a>(pub &'a MemorySystem);

impl ObjectReader for FreeReader<'_> {
    fn read(&mut self, region: Region, addr: u64, len: u64) -> Result<Vec<u8>, LayoutError> {
        Ok(self.0.read(region, addr, len)?)
    }
}

fn data_value(kind: ScalarKind, number: u32, bytes: Vec<u8>) -> Result<Value, LayoutError> {
    match kind {
        ScalarKind::String => String::from_utf8(bytes)
            .map(Value::String)
            .map_err(|_| LayoutError::InvalidUtf8 { field: number }),
        _ => Ok(Value::Bytes(bytes)),
    }
}

/// Walks the object rooted at `record` and returns its logical value.
/// Every memory access goes through `reader`: the record, then each data
/// block in field order, depth first. Empty blocks are not read.
pub fn read_object(
    reader: &mut dyn ObjectReader,
    table: &SchemaTable,
    class: ClassId,
    record: Handle,
) -> Result<Message, LayoutError> {
    read_at(reader, table, class, record, 1)
}

fn read_block(reader: &mut dyn ObjectReader, h: Handle, len: u64) -> Result<Vec<u8>, LayoutError> {
    if len == 0 {
        return Ok(Vec::new());
    }
    reader.read(h.region, h.addr, len)
}

fn read_at(
    reader: &mut dyn ObjectReader,
    table: &SchemaTable,
    class: ClassId,
    record: Handle,
    depth: usize,
) -> Result<Message, LayoutError> {
    if depth > MAX_DECODE_DEPTH {
        return Err(LayoutError::DepthExceeded);
    }
    let schema = table.get(class).ok_or(LayoutError::UnknownClass(class))?;
    let raw = read_block(reader, record, record_size(schema))?;
    let mut msg = Message::new(class);
    for (i, f) in schema.fields.iter().enumerate() {
        let slot = Slot::decode(&raw[i * 16..i * 16 + 16]);
        if !slot.present() {
            continue;
        }
        msg.set(f.number, read_field_at(reader, table, f, slot, depth)?);
    }
    Ok(msg)
}

/// Reads the value of one present field given its slot.
pub fn read_field(
    reader: &mut dyn ObjectReader,
    table: &SchemaTable,
    f: &FieldDescriptor,
    slot: Slot,
) -> Result<Value, LayoutError> {
    read_field_at(reader, table, f, slot, 1)
}

fn read_field_at(
    reader: &mut dyn ObjectReader,
    table: &SchemaTable,
    f: &FieldDescriptor,
    slot: Slot,
    depth: usize,
) -> Result<Value, LayoutError> {
    let h = slot.handle();
    Ok(match (f.is_repeated(), f.kind) {
        (false, ScalarKind::Message(child)) => {
            Value::Message(read_at(reader, table, child, h, depth + 1)?)
        }
        (false, k) if k.is_direct() => Value::from_scalar_bits(k, slot.word)
            .ok_or(LayoutError::TypeMismatch { field: f.number })?,
        (false, k) => data_value(k, f.number, read_block(reader, h, h.len)?)?,
        (true, k) if f.is_packed() => {
            let bytes = read_block(reader, h, h.len * 8)?;
            Value::Repeated(
                bytes
                    .chunks_exact(8)
                    .map(|c| {
                        Value::from_scalar_bits(k, u64::from_le_bytes(c.try_into().unwrap()))
                            .ok_or(LayoutError::TypeMismatch { field: f.number })
                    })
                    .collect::<Result<_, _>>()?,
            )
        }
        (true, k) => {
            let array = read_block(reader, h, h.len * SLOT_SIZE)?;
            let mut items = Vec::with_capacity(h.len as usize);
            for c in array.chunks_exact(16) {
                let e = Slot::decode(c).handle();
                items.push(match k {
                    ScalarKind::Message(child) => {
                        Value::Message(read_at(reader, table, child, e, depth + 1)?)
                    }
                    k => data_value(k, f.number, read_block(reader, e, e.len)?)?,
                });
            }
            Value::Repeated(items)
        }
    })
}

/// Reads an object back with no cost accounting.
pub fn read_back(
    mem: &MemorySystem,
    table: &SchemaTable,
    class: ClassId,
    record: Handle,
) -> Result<Message, LayoutError> {
    read_object(&mut FreeReader(mem), table, class, record)
}

/// Visits every present dereference field of an object as
/// `(class, field, region of its data)`, depth first. Used to check
/// placement.
pub fn visit_placement(
    mem: &MemorySystem,
    table: &SchemaTable,
    class: ClassId,
    record: Handle,
    visit: &mut dyn FnMut(ClassId, u32, Region),
) -> Result<(), LayoutError> {
    let schema = table.get(class).ok_or(LayoutError::UnknownClass(class))?;
    let raw = mem.read(record.region, record.addr, record_size(schema))?;
    for (i, f) in schema.fields.iter().enumerate() {
        let slot = Slot::decode(&raw[i * 16..i * 16 + 16]);
        if !slot.present() || f.addressing() == Addressing::Direct {
            continue;
        }
        visit(class, f.number, slot.region());
        let ScalarKind::Message(child) = f.kind else {
            continue;
        };
        let h = slot.handle();
        if f.is_repeated() {
            let array = mem.read(h.region, h.addr, h.len * SLOT_SIZE)?;
            for c in array.chunks_exact(16) {
                visit_placement(mem, table, child, Slot::decode(c).handle(), visit)?;
            }
        } else {
            visit_placement(mem, table, child, h, visit)?;
        }
    }
    Ok(())
}
