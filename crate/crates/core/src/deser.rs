//! Target-aware deserializer.
//!
//! Each lane parses one message at a time against a snapshot of the schema
//! table. Sub-messages are handled on an explicit schema stack; when a
//! frame ends its record is laid out in the region its parent field names
//! (the root always goes to host memory) and the field writes are issued.
//! Accelerator-bound writes stay on the device. Host-bound writes go
//! through the temp buffer in one-shot mode, or out as one DMA write per
//! field in field-by-field mode. A field too big for the temp buffer skips
//! it and goes out in one write either way. The final flush rides on the completion
//! record, so a small message costs a single host write.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{
    field_region, lay_out_record, Element, FieldContent, FieldWrites, Handle, ObjectArena,
};
use crate::link::{LinkError, Purpose, TxnLedger};
use crate::memory::{MemoryError, Region};
use crate::platform::{Platform, COMPLETION_RECORD_BYTES};
use crate::schema::{ClassId, ScalarKind, SchemaTable};
use crate::value::Value;
use crate::wire::{decode_field, Decoded, RpcHeader, WireError, MAX_DECODE_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeserMode {
    OneShot,
    FieldByField,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeserError {
    #[error("unknown class id {0}")]
    UnknownClassId(ClassId),
    #[error("malformed wire data: {0}")]
    MalformedWire(#[from] WireError),
    #[error("header says {header} payload bytes, got {actual}")]
    LengthMismatch { header: u32, actual: usize },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingEntry {
    pub dest: u64,
    pub offset: usize,
    pub len: usize,
}

/// Append-only staging buffer for host-bound bytes.
#[derive(Debug, Clone)]
pub struct TempBuffer {
    capacity: usize,
    data: Vec<u8>,
    pending: Vec<PendingEntry>,
}

impl TempBuffer {
    pub fn new(capacity: usize) -> Self {
        TempBuffer {
            capacity,
            data: Vec::with_capacity(capacity),
            pending: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn cursor(&self) -> usize {
        self.data.len()
    }

    pub fn is_full(&self) -> bool {
        self.data.len() == self.capacity
    }

    pub fn pending(&self) -> &[PendingEntry] {
        &self.pending
    }

    /// Appends as much of `bytes` as fits and returns how much was taken.
    pub fn append(&mut self, dest: u64, bytes: &[u8]) -> usize {
        let n = bytes.len().min(self.capacity - self.data.len());
        if n > 0 {
            self.pending.push(PendingEntry {
                dest,
                offset: self.data.len(),
                len: n,
            });
            self.data.extend_from_slice(&bytes[..n]);
        }
        n
    }

    /// Empties the buffer, returning each entry's destination and bytes.
    pub fn drain(&mut self) -> Vec<(u64, Vec<u8>)> {
        let out = self
            .pending
            .iter()
            .map(|e| (e.dest, self.data[e.offset..e.offset + e.len].to_vec()))
            .collect();
        self.pending.clear();
        self.data.clear();
        out
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: usize,
    pub temp: TempBuffer,
    /// Simulated time at which the lane finishes its current message.
    pub busy_until: f64,
}

impl Lane {
    pub fn new(id: usize, temp_capacity: usize) -> Self {
        Lane {
            id,
            temp: TempBuffer::new(temp_capacity),
            busy_until: 0.0,
        }
    }
}

/// Writes the temp buffer's contents to host memory in one DMA write.
/// A no-op on an empty buffer.
pub fn flush_temp_buffer(p: &mut Platform, lane: &mut Lane) -> Result<f64, LinkError> {
    if lane.temp.pending().is_empty() {
        return Ok(0.0);
    }
    let pieces = lane.temp.drain();
    let refs: Vec<(u64, &[u8])> = pieces.iter().map(|(a, b)| (*a, b.as_slice())).collect();
    p.link
        .dma_write_scatter(&mut p.mem.host, &refs, Purpose::Flush)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeserMetrics {
    pub elapsed_ns: f64,
    pub parse_ns: f64,
    pub link_ns: f64,
    pub accel_ns: f64,
    pub tlb_penalty_ns: f64,
    /// Field occurrences that wrote at least one byte to host memory.
    pub host_fields: u64,
    pub host_bytes: u64,
    pub accel_writes: u64,
    pub accel_bytes: u64,
    pub flushes: u64,
    pub ledger: TxnLedger,
}

/// A deserialized message resident in simulated memory. Owns its chunks
/// until [`release`] is called.
#[derive(Debug)]
pub struct Deserialized {
    pub class_id: ClassId,
    pub root: Handle,
    pub arena: ObjectArena,
    pub metrics: DeserMetrics,
}

/// Returns a message's chunks to the free lists.
pub fn release(p: &mut Platform, msg: Deserialized) -> Result<(), MemoryError> {
    msg.arena.release(&mut p.mem)
}

struct Frame {
    class: ClassId,
    end: usize,
    region: Region,
    contents: BTreeMap<usize, FieldContent>,
    parent_slot: Option<usize>,
}

struct Run<'a> {
    mode: DeserMode,
    lane: &'a mut Lane,
    arena: ObjectArena,
    m: DeserMetrics,
    cycles: u64,
}

impl Run<'_> {
    fn emit(&mut self, p: &mut Platform, writes: Vec<FieldWrites>) -> Result<(), DeserError> {
        for fw in writes {
            let mut host = Vec::new();
            for piece in fw.pieces {
                match piece.region {
                    Region::Accel => {
                        p.mem.accel.write(piece.addr, &piece.bytes)?;
                        self.m.accel_ns += p.accel_write_ns(piece.bytes.len() as u64);
                        self.m.accel_writes += 1;
                        self.m.accel_bytes += piece.bytes.len() as u64;
                    }
                    Region::Host => {
                        self.m.tlb_penalty_ns += p.translate(piece.addr);
                        self.m.host_bytes += piece.bytes.len() as u64;
                        host.push((piece.addr, piece.bytes));
                    }
                }
            }
            if host.is_empty() {
                continue;
            }
            self.m.host_fields += 1;
            let field_bytes: usize = host.iter().map(|(_, b)| b.len()).sum();
            // a field that would fill the buffer on its own goes out as one
            // transfer instead of in buffer-sized slices
            let direct = field_bytes >= self.lane.temp.capacity();
            match self.mode {
                DeserMode::FieldByField => {
                    let refs: Vec<(u64, &[u8])> =
                        host.iter().map(|(a, b)| (*a, b.as_slice())).collect();
                    self.m.link_ns +=
                        p.link
                            .dma_write_scatter(&mut p.mem.host, &refs, Purpose::FieldWrite)?;
                }
                DeserMode::OneShot if direct => {
                    let refs: Vec<(u64, &[u8])> =
                        host.iter().map(|(a, b)| (*a, b.as_slice())).collect();
                    self.m.link_ns +=
                        p.link
                            .dma_write_scatter(&mut p.mem.host, &refs, Purpose::Flush)?;
                    self.m.flushes += 1;
                }
                DeserMode::OneShot => {
                    for (addr, bytes) in host {
                        let mut off = 0;
                        while off < bytes.len() {
                            off += self.lane.temp.append(addr + off as u64, &bytes[off..]);
                            if self.lane.temp.is_full() {
                                self.m.link_ns += flush_temp_buffer(p, self.lane)?;
                                self.m.flushes += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the completion record, carrying whatever is still buffered.
    fn complete(
        &mut self,
        p: &mut Platform,
        class: ClassId,
        root: Handle,
        payload_len: usize,
    ) -> Result<(), DeserError> {
        let (seq, dest) = p.next_completion_slot();
        let mut record = vec![0u8; COMPLETION_RECORD_BYTES as usize];
        record[..2].copy_from_slice(&class.to_le_bytes());
        record[2] = self.lane.id as u8;
        record[8..16].copy_from_slice(&root.addr.to_le_bytes());
        record[16..20].copy_from_slice(&(root.len as u32).to_le_bytes());
        record[20..24].copy_from_slice(&(payload_len as u32).to_le_bytes());
        record[24..32].copy_from_slice(&seq.to_le_bytes());
        self.m.tlb_penalty_ns += p.translate(dest);
        if !self.lane.temp.pending().is_empty() {
            self.m.flushes += 1;
        }
        let mut pieces = self.lane.temp.drain();
        pieces.push((dest, record));
        let refs: Vec<(u64, &[u8])> = pieces.iter().map(|(a, b)| (*a, b.as_slice())).collect();
        self.m.link_ns += p
            .link
            .dma_write_scatter(&mut p.mem.host, &refs, Purpose::Completion)?;
        Ok(())
    }
}

fn store(frame: &mut Frame, table: &SchemaTable, slot: usize, v: Value) {
    let f = &table.get(frame.class).expect("frame class").fields[slot];
    if !f.is_repeated() {
        let content = match v {
            Value::String(s) => FieldContent::Data(s.into_bytes()),
            Value::Bytes(b) => FieldContent::Data(b),
            v => FieldContent::Scalar(v.scalar_bits().expect("direct scalar")),
        };
        frame.contents.insert(slot, content);
        return;
    }
    let entry = frame.contents.entry(slot);
    match v {
        Value::String(s) => push_element(entry, Element::Data(s.into_bytes())),
        Value::Bytes(b) => push_element(entry, Element::Data(b)),
        v => {
            let bits = v.scalar_bits().expect("direct scalar");
            let e = entry.or_insert_with(|| FieldContent::Packed(Vec::new()));
            if let FieldContent::Packed(items) = e {
                items.push(bits);
            }
        }
    }
}

fn push_element(entry: std::collections::btree_map::Entry<usize, FieldContent>, item: Element) {
    let e = entry.or_insert_with(|| FieldContent::Elements(Vec::new()));
    if let FieldContent::Elements(items) = e {
        items.push(item);
    }
}

/// Deserializes one message on `lane` and dispatches it to the host.
pub fn deserialize(
    p: &mut Platform,
    lane: &mut Lane,
    header: RpcHeader,
    payload: &[u8],
    mode: DeserMode,
) -> Result<Deserialized, DeserError> {
    let mut run = Run {
        mode,
        lane,
        arena: ObjectArena::new(p.cfg.memory.chunk_size),
        m: DeserMetrics::default(),
        cycles: 0,
    };
    let before = p.link.ledger();
    match parse(p, &mut run, header, payload) {
        Ok(root) => {
            let mut m = run.m;
            m.parse_ns = p.cycles_ns(run.cycles);
            m.elapsed_ns = m.parse_ns + m.link_ns + m.accel_ns + m.tlb_penalty_ns;
            m.ledger = p.link.ledger() - before;
            Ok(Deserialized {
                class_id: header.class_id,
                root,
                arena: run.arena,
                metrics: m,
            })
        }
        Err(e) => {
            run.lane.temp.drain();
            let _ = run.arena.release(&mut p.mem);
            Err(e)
        }
    }
}

fn parse(
    p: &mut Platform,
    run: &mut Run,
    header: RpcHeader,
    payload: &[u8],
) -> Result<Handle, DeserError> {
    // Snapshot: bit flips during this message apply to the next one.
    let table = p.table.clone();
    if table.get(header.class_id).is_none() {
        return Err(DeserError::UnknownClassId(header.class_id));
    }
    if header.msg_len as usize != payload.len() {
        return Err(DeserError::LengthMismatch {
            header: header.msg_len,
            actual: payload.len(),
        });
    }
    let mut stack = vec![Frame {
        class: header.class_id,
        end: payload.len(),
        region: Region::Host,
        contents: BTreeMap::new(),
        parent_slot: None,
    }];
    let mut pos = 0;
    loop {
        let depth = stack.len();
        let top = stack.last_mut().expect("non-empty stack");
        let schema = table.get(top.class).expect("resolved class");
        if pos >= top.end {
            let frame = stack.pop().expect("non-empty stack");
            let contents = frame.contents.into_iter().collect();
            let (h, writes) = lay_out_record(
                &mut p.mem,
                &mut run.arena,
                &table,
                schema,
                frame.region,
                contents,
            )?;
            run.emit(p, writes)?;
            let Some(slot) = frame.parent_slot else {
                run.complete(p, header.class_id, h, payload.len())?;
                return Ok(h);
            };
            let parent = stack.last_mut().expect("parent frame");
            let f = &table.get(parent.class).expect("resolved class").fields[slot];
            if f.is_repeated() {
                push_element(parent.contents.entry(slot), Element::Child(h));
            } else {
                parent.contents.insert(slot, FieldContent::Child(h));
            }
            continue;
        }
        let (number, decoded, n) = decode_field(&payload[pos..top.end], schema)?;
        run.cycles += 1;
        let start = pos;
        pos += n;
        let Some(slot) = schema.slot_index(number) else {
            continue;
        };
        match decoded {
            Decoded::Unknown => {}
            Decoded::Value(v) => {
                if let Value::String(s) = &v {
                    run.cycles += (s.len() as u64).div_ceil(64);
                } else if let Value::Bytes(b) = &v {
                    run.cycles += (b.len() as u64).div_ceil(64);
                }
                store(top, &table, slot, v);
            }
            Decoded::Packed(items) => {
                run.cycles += (n as u64).div_ceil(64);
                for v in items {
                    store(top, &table, slot, v);
                }
                // an empty packed run still leaves the field absent
                if matches!(top.contents.get(&slot), Some(FieldContent::Packed(v)) if v.is_empty())
                {
                    top.contents.remove(&slot);
                }
            }
            Decoded::Message(sub) => {
                if depth >= MAX_DECODE_DEPTH {
                    return Err(WireError::DepthExceeded(MAX_DECODE_DEPTH).into());
                }
                let f = &schema.fields[slot];
                let ScalarKind::Message(child) = f.kind else {
                    unreachable!("sub-message payload for a non-message field")
                };
                let region = field_region(&table, top.class, f);
                stack.push(Frame {
                    class: child,
                    end: start + n,
                    region,
                    contents: BTreeMap::new(),
                    parent_slot: Some(slot),
                });
                pos = start + n - sub.len();
            }
        }
    }
}

/// Delivery of a deserialized message to the host runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub seq: u64,
    pub class_id: ClassId,
    pub root: Handle,
    pub lane: usize,
    pub start_ns: f64,
    pub completed_ns: f64,
}

/// The set of lanes plus their scheduling.
#[derive(Debug, Clone)]
pub struct Deserializer {
    lanes: Vec<Lane>,
    submitted: u64,
}

impl Deserializer {
    pub fn new(lanes: usize, temp_capacity: usize) -> Self {
        Deserializer {
            lanes: (0..lanes).map(|i| Lane::new(i, temp_capacity)).collect(),
            submitted: 0,
        }
    }

    pub fn for_platform(p: &Platform) -> Self {
        Deserializer::new(p.cfg.deser.lanes, p.cfg.deser.temp_buffer_bytes)
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    /// Runs a message arriving at `arrival_ns` on the lowest-numbered idle
    /// lane, or queues it behind the lane that frees up first.
    pub fn submit(
        &mut self,
        p: &mut Platform,
        arrival_ns: f64,
        header: RpcHeader,
        payload: &[u8],
        mode: DeserMode,
    ) -> Result<(Deserialized, Notification), DeserError> {
        let idx = match self.lanes.iter().position(|l| l.busy_until <= arrival_ns) {
            Some(i) => i,
            None => {
                let mut best = 0;
                for (i, l) in self.lanes.iter().enumerate() {
                    if l.busy_until < self.lanes[best].busy_until {
                        best = i;
                    }
                }
                best
            }
        };
        let lane = &mut self.lanes[idx];
        let start = lane.busy_until.max(arrival_ns);
        let d = deserialize(p, lane, header, payload, mode)?;
        lane.busy_until = start + d.metrics.elapsed_ns;
        let note = Notification {
            seq: self.submitted,
            class_id: d.class_id,
            root: d.root,
            lane: idx,
            start_ns: start,
            completed_ns: lane.busy_until,
        };
        self.submitted += 1;
        Ok((d, note))
    }
}

/// Orders notifications as the host would see them: by completion time,
/// ties broken by lane.
pub fn completion_order(notes: &mut [Notification]) {
    notes.sort_by(|a, b| {
        a.completed_ns
            .total_cmp(&b.completed_ns)
            .then(a.lane.cmp(&b.lane))
    });
}
