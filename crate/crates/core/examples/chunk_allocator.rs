//! The fixed-size chunk pools backing host and accelerator memory.

use rpcacc::memory::{ChunkAllocator, MemorySystem, Region, ACCEL_BASE};

fn main() {
    let mut a = ChunkAllocator::new(Region::Accel, ACCEL_BASE, 8 * 4096, 4096).unwrap();
    let first: Vec<u64> = (0..3).map(|_| a.alloc_chunk().unwrap()).collect();
    println!("allocated {:x?}", first);
    a.free_chunk(first[1]).unwrap();
    println!("double free: {}", a.free_chunk(first[1]).unwrap_err());

    // freed chunks go to the back of the queue
    let rest: Vec<u64> = std::iter::from_fn(|| a.alloc_chunk().ok()).collect();
    println!(
        "drained {} more, last one reused {:#x}",
        rest.len(),
        rest.last().unwrap()
    );
    let (allocs, frees) = a.counters();
    println!(
        "allocs {allocs}, frees {frees}, outstanding {}, free {}",
        a.outstanding(),
        a.free_chunks()
    );

    let mut mem = MemorySystem::new(1 << 20, 1 << 20, 4096).unwrap();
    let run = mem.accel.alloc_run(3).unwrap();
    mem.accel
        .write(run + 4000, b"spans a chunk boundary")
        .unwrap();
    let back = mem.accel.read(run + 4000, 22).unwrap();
    println!("{}", String::from_utf8(back).unwrap());
    println!("unallocated read: {}", mem.host.read(0, 1).unwrap_err());
}
