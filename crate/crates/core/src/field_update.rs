//! Moving one field of a live object between host and accelerator memory.
//!
//! A move copies the blocks owned by the field across the link, rewrites
//! the slot that points at them and, when the platform has automatic field
//! update enabled, flips the field's placement bit so later messages of the
//! class land in the new region straight from the deserializer.
//!
//! Blocks owned by a field: the data of a string or bytes field, the value
//! array of a packed field, the element array plus element data of other
//! repeated fields, and the child record of a message field. Grandchild
//! fields keep their own placement.
//!
//! The device carries out the copy through its on-chip staging buffer, so
//! each block crosses the link in DMA transfers of at most the temp-buffer
//! size, one after the other. When all blocks are across, the device
//! writes a completion record the CPU waits on.

use thiserror::Error;

use crate::layout::{field_region, Handle, LayoutError, ObjectArena, Slot, SLOT_SIZE};
use crate::link::{LinkError, Purpose};
use crate::memory::{MemoryError, Region};
use crate::platform::Platform;
use crate::schema::{Addressing, ClassId, ScalarKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldUpdateError {
    #[error("class {class} has no field {field}")]
    NoSuchField { class: ClassId, field: u32 },
    #[error("path step {field} is not a present singular message")]
    BadPath { field: u32 },
    #[error("field {field} is stored inline and cannot move")]
    NotMovable { field: u32 },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// Size of the record the device writes when a move completes.
pub const MOVE_DONE_BYTES: usize = 16;

/// One field of one live object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldHandle {
    pub class_id: ClassId,
    pub field_number: u32,
    /// Record holding the field's slot.
    pub record: Handle,
    pub slot_index: usize,
    pub slot: Slot,
}

impl FieldHandle {
    /// Region of the field's data, or of its class default when absent.
    pub fn region(&self, p: &Platform) -> Region {
        if self.slot.present() {
            self.slot.region()
        } else if p.table.placement(self.class_id, self.field_number) {
            Region::Accel
        } else {
            Region::Host
        }
    }

    fn slot_addr(&self) -> u64 {
        self.record.addr + self.slot_index as u64 * SLOT_SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MoveOutcome {
    pub moved: bool,
    pub bytes: u64,
    pub link_ns: f64,
    pub device_ns: f64,
    pub placement_updated: bool,
}

fn read_slot(p: &Platform, record: Handle, index: usize) -> Result<Slot, MemoryError> {
    let raw = p.mem.read(
        record.region,
        record.addr + index as u64 * SLOT_SIZE,
        SLOT_SIZE,
    )?;
    Ok(Slot::decode(&raw))
}

/// Resolves `path` (field numbers from the root) to a field handle. Every
/// step but the last must be a present singular message.
pub fn resolve(
    p: &Platform,
    class: ClassId,
    root: Handle,
    path: &[u32],
) -> Result<FieldHandle, FieldUpdateError> {
    let (&last, steps) = path
        .split_last()
        .ok_or(FieldUpdateError::BadPath { field: 0 })?;
    let mut class = class;
    let mut record = root;
    for &step in steps {
        let schema = p.table.get(class).ok_or(LayoutError::UnknownClass(class))?;
        let i = schema
            .slot_index(step)
            .ok_or(FieldUpdateError::NoSuchField { class, field: step })?;
        let f = &schema.fields[i];
        let ScalarKind::Message(child) = f.kind else {
            return Err(FieldUpdateError::BadPath { field: step });
        };
        let slot = read_slot(p, record, i)?;
        if f.is_repeated() || !slot.present() {
            return Err(FieldUpdateError::BadPath { field: step });
        }
        class = child;
        record = slot.handle();
    }
    let schema = p.table.get(class).ok_or(LayoutError::UnknownClass(class))?;
    let i = schema
        .slot_index(last)
        .ok_or(FieldUpdateError::NoSuchField { class, field: last })?;
    Ok(FieldHandle {
        class_id: class,
        field_number: last,
        record,
        slot_index: i,
        slot: read_slot(p, record, i)?,
    })
}

pub fn is_in_acc(p: &Platform, h: &FieldHandle) -> bool {
    h.region(p) == Region::Accel
}

/// Copies the blocks of one field into `to`, cost accounted per block.
struct Mover<'a> {
    p: &'a mut Platform,
    arena: &'a mut ObjectArena,
    to: Region,
    out: MoveOutcome,
}

impl Mover<'_> {
    fn block(&mut self, from: Handle, len: u64) -> Result<u64, FieldUpdateError> {
        if len == 0 {
            return Ok(0);
        }
        let p = &mut *self.p;
        let dest = self.arena.alloc(&mut p.mem, self.to, len)?;
        let step = p.cfg.deser.temp_buffer_bytes as u64;
        let mut off = 0;
        while off < len {
            let n = step.min(len - off);
            match self.to {
                Region::Accel => {
                    let (data, t) =
                        p.link
                            .dma_read(&p.mem.host, from.addr + off, n, Purpose::FieldMove)?;
                    self.out.device_ns += p.translate(from.addr + off) + p.accel_write_ns(n);
                    self.out.link_ns += t;
                    p.mem.accel.write(dest + off, &data)?;
                }
                Region::Host => {
                    let data = p.mem.accel.read(from.addr + off, n)?;
                    self.out.device_ns += p.accel_read_ns(n) + p.translate(dest + off);
                    self.out.link_ns +=
                        p.link
                            .dma_write(&mut p.mem.host, dest + off, &data, Purpose::FieldMove)?;
                }
            }
            off += n;
        }
        self.out.bytes += len;
        Ok(dest)
    }

    fn relocate(&mut self, h: Handle, len: u64) -> Result<Handle, FieldUpdateError> {
        let addr = self.block(h, len)?;
        Ok(Handle {
            region: self.to,
            addr,
            len: h.len,
        })
    }
}

fn move_field(
    p: &mut Platform,
    arena: &mut ObjectArena,
    h: &mut FieldHandle,
    to: Region,
) -> Result<MoveOutcome, FieldUpdateError> {
    let schema = p
        .table
        .get(h.class_id)
        .ok_or(LayoutError::UnknownClass(h.class_id))?;
    let f = schema.fields[h.slot_index].clone();
    if f.addressing() == Addressing::Direct {
        return Err(FieldUpdateError::NotMovable { field: f.number });
    }
    let mut out = MoveOutcome::default();
    let already = if h.slot.present() {
        h.slot.region() == to
    } else {
        field_region(&p.table, h.class_id, &f) == to
    };
    if already {
        return Ok(out);
    }
    out.link_ns += p.link.mmio_write(0x30, h.slot_addr(), Purpose::FieldMove);

    if h.slot.present() {
        let old = h.slot.handle();
        let mut mv = Mover { p, arena, to, out };
        let moved = if f.is_repeated() && !f.is_packed() {
            let array = mv.p.mem.read(old.region, old.addr, old.len * SLOT_SIZE)?;
            let mut fresh = Vec::with_capacity(array.len());
            for c in array.chunks_exact(16) {
                let e = Slot::decode(c).handle();
                let bytes = match f.kind {
                    ScalarKind::Message(child) => {
                        let s =
                            mv.p.table
                                .get(child)
                                .ok_or(LayoutError::UnknownClass(child))?;
                        crate::layout::record_size(s)
                    }
                    _ => e.len,
                };
                fresh.extend_from_slice(&Slot::pointer(mv.relocate(e, bytes)?).encode());
            }
            let addr = if fresh.is_empty() {
                0
            } else {
                // copied across, then patched to the relocated elements
                let a = mv.block(old, old.len * SLOT_SIZE)?;
                mv.p.mem.write(to, a, &fresh)?;
                a
            };
            Handle {
                region: to,
                addr,
                len: old.len,
            }
        } else {
            let bytes = crate::layout::block_bytes(&f, &h.slot);
            mv.relocate(old, bytes)?
        };
        out = mv.out;
        let (_, done) = p.next_completion_slot();
        out.link_ns += p.link.dma_write(
            &mut p.mem.host,
            done,
            &[1u8; MOVE_DONE_BYTES],
            Purpose::FieldMove,
        )?;
        let slot = Slot::pointer(moved);
        p.mem
            .write(h.record.region, h.slot_addr(), &slot.encode())?;
        h.slot = slot;
        out.moved = true;
    }
    if p.cfg.auto_field_update {
        out.placement_updated = p
            .table
            .set_placement(h.class_id, f.number, to == Region::Accel);
    }
    Ok(out)
}

/// Moves a field's data to accelerator memory. A field already there is
/// left alone and costs nothing.
pub fn move_to_acc(
    p: &mut Platform,
    arena: &mut ObjectArena,
    h: &mut FieldHandle,
) -> Result<MoveOutcome, FieldUpdateError> {
    move_field(p, arena, h, Region::Accel)
}

/// Moves a field's data to host memory.
pub fn move_to_cpu(
    p: &mut Platform,
    arena: &mut ObjectArena,
    h: &mut FieldHandle,
) -> Result<MoveOutcome, FieldUpdateError> {
    move_field(p, arena, h, Region::Host)
}

/// Sets a placement bit directly, as the host does when it reprograms the
/// schema table. Costs one MMIO write.
pub fn set_placement(
    p: &mut Platform,
    class: ClassId,
    field: u32,
    acc: bool,
) -> Result<f64, FieldUpdateError> {
    if !p.table.set_placement(class, field, acc) {
        return Err(FieldUpdateError::NotMovable { field });
    }
    Ok(p.link.mmio_write(
        0x38,
        ((class as u64) << 32) | field as u64,
        Purpose::FieldMove,
    ))
}
