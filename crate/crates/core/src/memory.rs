//! Host and accelerator memory regions carved into fixed-size chunks.
//!
//! Each region owns a flat byte store. Chunks are handed out from a FIFO
//! free list; addresses are flat within a region, so adjacent allocated
//! chunks can be accessed as one range.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CHUNK_SIZE: u64 = 4096;
pub const DEFAULT_POOL_BYTES: u64 = 64 << 20;
pub const DEFAULT_TLB_ENTRIES: u64 = 16 * 1024;

pub const HOST_BASE: u64 = 0x0000_1000_0000;
pub const ACCEL_BASE: u64 = 0x4000_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Host,
    Accel,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Host => "host",
            Region::Accel => "accel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("{0} region is out of chunks")]
    OutOfChunks(Region),
    #[error("{region} access {addr:#x}+{len} is outside the region")]
    OutOfBounds { region: Region, addr: u64, len: u64 },
    #[error("{region} access {addr:#x} touches an unallocated chunk")]
    UnallocatedAccess { region: Region, addr: u64 },
    #[error("{region} address {addr:#x} is not an allocated chunk base")]
    BadFree { region: Region, addr: u64 },
    #[error("TLB miss for virtual address {0:#x}")]
    TlbMiss(u64),
    #[error("invalid memory configuration: {0}")]
    BadConfig(&'static str),
}

/// Fixed-size chunk allocator with a FIFO free list.
#[derive(Debug, Clone)]
pub struct ChunkAllocator {
    region: Region,
    base: u64,
    chunk_size: u64,
    free: VecDeque<usize>,
    allocated: Vec<bool>,
    allocs: u64,
    frees: u64,
}

impl ChunkAllocator {
    pub fn new(
        region: Region,
        base: u64,
        pool_bytes: u64,
        chunk_size: u64,
    ) -> Result<Self, MemoryError> {
        if chunk_size == 0 || pool_bytes < chunk_size {
            return Err(MemoryError::BadConfig("pool must hold at least one chunk"));
        }
        let n = (pool_bytes / chunk_size) as usize;
        Ok(ChunkAllocator {
            region,
            base,
            chunk_size,
            free: (0..n).collect(),
            allocated: vec![false; n],
            allocs: 0,
            frees: 0,
        })
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn chunk_size(&self) -> u64 {
        self.chunk_size
    }

    pub fn pool_chunks(&self) -> usize {
        self.allocated.len()
    }

    pub fn free_chunks(&self) -> usize {
        self.free.len()
    }

    pub fn outstanding(&self) -> usize {
        self.pool_chunks() - self.free_chunks()
    }

    /// Total chunk allocations and frees over the allocator's life.
    pub fn counters(&self) -> (u64, u64) {
        (self.allocs, self.frees)
    }

    fn addr_of(&self, index: usize) -> u64 {
        self.base + index as u64 * self.chunk_size
    }

    /// Pops the oldest free chunk.
    pub fn alloc_chunk(&mut self) -> Result<u64, MemoryError> {
        let index = self
            .free
            .pop_front()
            .ok_or(MemoryError::OutOfChunks(self.region))?;
        self.allocated[index] = true;
        self.allocs += 1;
        Ok(self.addr_of(index))
    }

    /// Allocates `count` address-adjacent chunks. Single chunks take the
    /// O(1) FIFO path; longer runs scan the free list for the oldest chunk
    /// that starts a free run.
    pub fn alloc_run(&mut self, count: usize) -> Result<u64, MemoryError> {
        match count {
            0 => Err(MemoryError::BadConfig("empty chunk run")),
            1 => self.alloc_chunk(),
            _ => {
                let n = self.allocated.len();
                let start = self
                    .free
                    .iter()
                    .copied()
                    .find(|&s| s + count <= n && (s..s + count).all(|i| !self.allocated[i]))
                    .ok_or(MemoryError::OutOfChunks(self.region))?;
                self.free.retain(|&i| i < start || i >= start + count);
                for flag in &mut self.allocated[start..start + count] {
                    *flag = true;
                }
                self.allocs += count as u64;
                Ok(self.addr_of(start))
            }
        }
    }

    /// Pushes a chunk back onto the free list.
    pub fn free_chunk(&mut self, addr: u64) -> Result<(), MemoryError> {
        let bad = MemoryError::BadFree {
            region: self.region,
            addr,
        };
        if addr < self.base || !(addr - self.base).is_multiple_of(self.chunk_size) {
            return Err(bad);
        }
        let index = ((addr - self.base) / self.chunk_size) as usize;
        match self.allocated.get_mut(index) {
            Some(flag) if *flag => {
                *flag = false;
                self.free.push_back(index);
                self.frees += 1;
                Ok(())
            }
            _ => Err(bad),
        }
    }

    fn check(&self, addr: u64, len: u64) -> Result<(usize, usize), MemoryError> {
        // empty blocks carry a null address
        if len == 0 {
            return Ok((0, 0));
        }
        let end = addr.checked_add(len);
        let limit = self.base + self.allocated.len() as u64 * self.chunk_size;
        match end {
            Some(end) if addr >= self.base && end <= limit => {}
            _ => {
                return Err(MemoryError::OutOfBounds {
                    region: self.region,
                    addr,
                    len,
                })
            }
        }
        let offset = (addr - self.base) as usize;
        let first = offset / self.chunk_size as usize;
        let last = (offset + len as usize - 1) / self.chunk_size as usize;
        if let Some(i) = (first..=last).find(|&i| !self.allocated[i]) {
            return Err(MemoryError::UnallocatedAccess {
                region: self.region,
                addr: self.addr_of(i).max(addr),
            });
        }
        Ok((offset, len as usize))
    }
}

/// One region: allocator plus backing bytes.
#[derive(Debug, Clone)]
pub struct RegionMemory {
    alloc: ChunkAllocator,
    store: Vec<u8>,
}

impl RegionMemory {
    pub fn new(region: Region, pool_bytes: u64, chunk_size: u64) -> Result<Self, MemoryError> {
        let base = match region {
            Region::Host => HOST_BASE,
            Region::Accel => ACCEL_BASE,
        };
        let alloc = ChunkAllocator::new(region, base, pool_bytes, chunk_size)?;
        let size = alloc.pool_chunks() * chunk_size as usize;
        Ok(RegionMemory {
            alloc,
            store: vec![0; size],
        })
    }

    pub fn allocator(&self) -> &ChunkAllocator {
        &self.alloc
    }

    pub fn region(&self) -> Region {
        self.alloc.region
    }

    pub fn chunk_size(&self) -> u64 {
        self.alloc.chunk_size
    }

    /// Allocates one chunk with zeroed contents.
    pub fn alloc_chunk(&mut self) -> Result<u64, MemoryError> {
        self.alloc_run(1)
    }

    /// Allocates `count` adjacent chunks with zeroed contents.
    pub fn alloc_run(&mut self, count: usize) -> Result<u64, MemoryError> {
        let addr = self.alloc.alloc_run(count)?;
        let off = (addr - self.alloc.base) as usize;
        let len = count * self.alloc.chunk_size as usize;
        self.store[off..off + len].fill(0);
        Ok(addr)
    }

    pub fn free_chunk(&mut self, addr: u64) -> Result<(), MemoryError> {
        self.alloc.free_chunk(addr)
    }

    pub fn read(&self, addr: u64, len: u64) -> Result<Vec<u8>, MemoryError> {
        let (off, n) = self.alloc.check(addr, len)?;
        Ok(self.store[off..off + n].to_vec())
    }

    pub fn write(&mut self, addr: u64, bytes: &[u8]) -> Result<(), MemoryError> {
        let (off, n) = self.alloc.check(addr, bytes.len() as u64)?;
        self.store[off..off + n].copy_from_slice(bytes);
        Ok(())
    }

    /// Validates that a range is readable without copying it.
    pub fn check_range(&self, addr: u64, len: u64) -> Result<(), MemoryError> {
        self.alloc.check(addr, len).map(|_| ())
    }
}

/// Both address spaces of one simulation.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    pub host: RegionMemory,
    pub accel: RegionMemory,
}

impl MemorySystem {
    pub fn new(host_pool: u64, accel_pool: u64, chunk_size: u64) -> Result<Self, MemoryError> {
        Ok(MemorySystem {
            host: RegionMemory::new(Region::Host, host_pool, chunk_size)?,
            accel: RegionMemory::new(Region::Accel, accel_pool, chunk_size)?,
        })
    }

    pub fn region(&self, region: Region) -> &RegionMemory {
        match region {
            Region::Host => &self.host,
            Region::Accel => &self.accel,
        }
    }

    pub fn region_mut(&mut self, region: Region) -> &mut RegionMemory {
        match region {
            Region::Host => &mut self.host,
            Region::Accel => &mut self.accel,
        }
    }

    pub fn read(&self, region: Region, addr: u64, len: u64) -> Result<Vec<u8>, MemoryError> {
        self.region(region).read(addr, len)
    }

    pub fn write(&mut self, region: Region, addr: u64, bytes: &[u8]) -> Result<(), MemoryError> {
        self.region_mut(region).write(addr, bytes)
    }
}

/// Address-translation buffer for host memory seen from the device.
///
/// Holds a single contiguous virtual range mapped onto a contiguous
/// physical range, one entry per page.
#[derive(Debug, Clone)]
pub struct Tlb {
    capacity: u64,
    page_size: u64,
    mapping: Option<(u64, u64, u64)>,
}

impl Tlb {
    pub fn new(capacity: u64, page_size: u64) -> Self {
        Tlb {
            capacity,
            page_size,
            mapping: None,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Maps `pages` pages starting at `virt` onto `phys`. Both bases must be
    /// page-aligned and the range must fit in the TLB.
    pub fn map(&mut self, virt: u64, phys: u64, pages: u64) -> Result<(), MemoryError> {
        if !virt.is_multiple_of(self.page_size) || !phys.is_multiple_of(self.page_size) {
            return Err(MemoryError::BadConfig("TLB mapping must be page aligned"));
        }
        if pages > self.capacity {
            return Err(MemoryError::BadConfig("TLB mapping exceeds capacity"));
        }
        self.mapping = Some((virt, phys, pages));
        Ok(())
    }

    pub fn translate(&self, virt: u64) -> Result<u64, MemoryError> {
        match self.mapping {
            Some((vbase, pbase, pages))
                if virt >= vbase && virt - vbase < pages * self.page_size =>
            {
                Ok(pbase + (virt - vbase))
            }
            _ => Err(MemoryError::TlbMiss(virt)),
        }
    }
}
