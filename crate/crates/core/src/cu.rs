//! Reconfigurable compute units.
//!
//! The host submits descriptors over MMIO into a per-unit ring on the
//! device. The unit consumes them in order, runs its kernel over
//! accelerator memory and reports each result with one DMA write into a
//! notification ring in host memory, where the host polls for it.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{LinkError, Purpose};
use crate::memory::{MemoryError, MemorySystem};
use crate::platform::{CuConfig, Platform};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CuError {
    #[error("no compute unit {0}")]
    NoSuchCu(usize),
    #[error("compute unit has tasks in flight")]
    CuBusy,
    #[error("compute unit is unavailable")]
    CuUnavailable,
    #[error("descriptor ring full")]
    RingFull,
    #[error("invalid descriptor: {0}")]
    DescriptorInvalid(&'static str),
    #[error("unknown task event")]
    UnknownTask,
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// A deterministic byte transform a unit can be programmed with.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    pub type_name: &'static str,
    transform: fn(&[u8]) -> Vec<u8>,
    bound: fn(usize) -> usize,
}

/// Type name reported by an unprogrammed or preempted unit.
pub const NO_KERNEL: &str = "none";

const XOR_KEY: [u8; 16] = *b"rpcacc-xor-key!!";

pub fn rle_compress(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < input.len() {
        let b = input[i];
        let mut run = 1;
        while run < 255 && i + run < input.len() && input[i + run] == b {
            run += 1;
        }
        out.push(run as u8);
        out.push(b);
        i += run;
    }
    out
}

/// Inverse of [`rle_compress`]. A trailing odd byte is ignored.
pub fn rle_decompress(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for pair in input.chunks_exact(2) {
        out.extend(std::iter::repeat_n(pair[1], pair[0] as usize));
    }
    out
}

pub fn xor_crypt(input: &[u8]) -> Vec<u8> {
    input
        .iter()
        .zip(XOR_KEY.iter().cycle())
        .map(|(b, k)| b ^ k)
        .collect()
}

impl Kernel {
    pub fn identity() -> Self {
        Kernel {
            type_name: "identity",
            transform: |b| b.to_vec(),
            bound: |n| n,
        }
    }

    pub fn rle_compress() -> Self {
        Kernel {
            type_name: "compress",
            transform: rle_compress,
            bound: |n| 2 * n,
        }
    }

    pub fn rle_decompress() -> Self {
        Kernel {
            type_name: "decompress",
            transform: rle_decompress,
            bound: |n| n / 2 * 255,
        }
    }

    pub fn xor_crypt() -> Self {
        Kernel {
            type_name: "crypt",
            transform: xor_crypt,
            bound: |n| n,
        }
    }

    /// Stand-in for a unit taken over by another tenant: accepts no work.
    pub fn unavailable() -> Self {
        Kernel {
            type_name: NO_KERNEL,
            transform: |_| Vec::new(),
            bound: |_| 0,
        }
    }

    pub fn by_name(name: &str) -> Option<Kernel> {
        registry().into_iter().find(|k| k.type_name == name)
    }

    pub fn apply(&self, input: &[u8]) -> Vec<u8> {
        (self.transform)(input)
    }

    /// Largest output the kernel can produce for `input_len` bytes.
    pub fn output_bound(&self, input_len: usize) -> usize {
        (self.bound)(input_len)
    }
}

pub fn registry() -> Vec<Kernel> {
    vec![
        Kernel::identity(),
        Kernel::rle_compress(),
        Kernel::rle_decompress(),
        Kernel::xor_crypt(),
        Kernel::unavailable(),
    ]
}

/// Work item; all addresses are in accelerator memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Descriptor {
    pub input_addr: u64,
    pub input_size: u64,
    pub output_addr: u64,
    pub output_buf_size: u64,
}

pub const NOTIFY_ENTRY_BYTES: u64 = 16;
const STATUS_DONE: u8 = 1;
const STATUS_ERROR: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationEntry {
    pub result_len: u32,
    pub done: bool,
    /// Set when the output did not fit; `result_len` is then the size the
    /// kernel needed.
    pub error: bool,
}

impl NotificationEntry {
    fn encode(&self) -> [u8; NOTIFY_ENTRY_BYTES as usize] {
        let mut b = [0u8; NOTIFY_ENTRY_BYTES as usize];
        b[..4].copy_from_slice(&self.result_len.to_le_bytes());
        b[4] = (self.done as u8 * STATUS_DONE) | (self.error as u8 * STATUS_ERROR);
        b
    }

    fn decode(b: &[u8]) -> Self {
        NotificationEntry {
            result_len: u32::from_le_bytes(b[..4].try_into().unwrap()),
            done: b[4] & STATUS_DONE != 0,
            error: b[4] & STATUS_ERROR != 0,
        }
    }
}

/// Handle returned by a submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub cu: usize,
    pub seq: u64,
    /// Host address of the notification entry.
    pub notify_addr: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub entry: NotificationEntry,
    /// Simulated time at which the notification landed in host memory.
    pub completed_ns: f64,
    pub compute_ns: f64,
}

#[derive(Debug, Clone)]
struct Queued {
    seq: u64,
    desc: Descriptor,
    submitted_ns: f64,
}

#[derive(Debug, Clone)]
pub struct ComputeUnit {
    pub id: usize,
    kernel: Option<Kernel>,
    ring: VecDeque<Queued>,
    ring_entries: usize,
    notify_base: u64,
    next_seq: u64,
    busy_until: f64,
    done: BTreeMap<u64, TaskResult>,
    throughput: f64,
    reprogram_ns: f64,
}

impl ComputeUnit {
    pub fn new(id: usize, cfg: &CuConfig, mem: &mut MemorySystem) -> Result<Self, MemoryError> {
        let bytes = cfg.ring_entries as u64 * NOTIFY_ENTRY_BYTES;
        let chunks = bytes.div_ceil(mem.host.chunk_size()) as usize;
        let notify_base = mem.host.alloc_run(chunks)?;
        Ok(ComputeUnit {
            id,
            kernel: None,
            ring: VecDeque::new(),
            ring_entries: cfg.ring_entries,
            notify_base,
            next_seq: 0,
            busy_until: 0.0,
            done: BTreeMap::new(),
            throughput: cfg.kernel_throughput_bytes_per_ns,
            reprogram_ns: cfg.reprogram_us * 1000.0,
        })
    }

    pub fn get_type(&self) -> &'static str {
        self.kernel.map_or(NO_KERNEL, |k| k.type_name)
    }

    pub fn in_flight(&self) -> usize {
        self.ring.len()
    }

    pub fn busy_until(&self) -> f64 {
        self.busy_until
    }
}

fn unit(p: &mut Platform, cu: usize) -> Result<&mut ComputeUnit, CuError> {
    p.cus.get_mut(cu).ok_or(CuError::NoSuchCu(cu))
}

/// Loads a kernel. Returns the time at which the unit is ready again.
pub fn program(p: &mut Platform, cu: usize, kernel: Kernel, now_ns: f64) -> Result<f64, CuError> {
    let u = unit(p, cu)?;
    if !u.ring.is_empty() {
        return Err(CuError::CuBusy);
    }
    u.kernel = Some(kernel);
    u.busy_until = u.busy_until.max(now_ns) + u.reprogram_ns;
    Ok(u.busy_until)
}

pub fn get_type(p: &Platform, cu: usize) -> Result<&'static str, CuError> {
    p.cus
        .get(cu)
        .map(|u| u.get_type())
        .ok_or(CuError::NoSuchCu(cu))
}

/// Queues a task. Costs one MMIO write; the task runs when the unit
/// reaches it.
pub fn submit_task(
    p: &mut Platform,
    cu: usize,
    desc: Descriptor,
    now_ns: f64,
) -> Result<TaskEvent, CuError> {
    let accel = &p.mem.accel;
    accel.check_range(desc.input_addr, desc.input_size)?;
    accel.check_range(desc.output_addr, desc.output_buf_size)?;
    let overlap = desc.input_size > 0
        && desc.output_buf_size > 0
        && desc.input_addr < desc.output_addr + desc.output_buf_size
        && desc.output_addr < desc.input_addr + desc.input_size;
    if overlap {
        return Err(CuError::DescriptorInvalid("input and output overlap"));
    }
    let u = unit(p, cu)?;
    match u.kernel {
        None => return Err(CuError::CuUnavailable),
        Some(k) if k.type_name == NO_KERNEL => return Err(CuError::CuUnavailable),
        Some(_) => {}
    }
    if u.ring.len() >= u.ring_entries {
        return Err(CuError::RingFull);
    }
    let seq = u.next_seq;
    u.next_seq += 1;
    let notify_addr = u.notify_base + (seq % u.ring_entries as u64) * NOTIFY_ENTRY_BYTES;
    let t = p
        .link
        .mmio_write(0x1000 + cu as u64, seq, Purpose::TaskSubmit);
    // the host clears the entry before handing it out
    p.mem
        .host
        .write(notify_addr, &[0u8; NOTIFY_ENTRY_BYTES as usize])?;
    let u = unit(p, cu)?;
    u.ring.push_back(Queued {
        seq,
        desc,
        submitted_ns: now_ns + t,
    });
    Ok(TaskEvent {
        cu,
        seq,
        notify_addr,
    })
}

fn run_next(p: &mut Platform, cu: usize) -> Result<(), CuError> {
    let u = unit(p, cu)?;
    let q = u.ring.pop_front().ok_or(CuError::UnknownTask)?;
    let kernel = u.kernel.ok_or(CuError::CuUnavailable)?;
    let notify_addr = u.notify_base + (q.seq % u.ring_entries as u64) * NOTIFY_ENTRY_BYTES;
    let start = u.busy_until.max(q.submitted_ns);
    let throughput = u.throughput;

    let input = p.mem.accel.read(q.desc.input_addr, q.desc.input_size)?;
    let output = kernel.apply(&input);
    let mut compute = q.desc.input_size as f64 / throughput + p.accel_read_ns(q.desc.input_size);
    let fits = output.len() as u64 <= q.desc.output_buf_size;
    if fits {
        p.mem.accel.write(q.desc.output_addr, &output)?;
        compute += p.accel_write_ns(output.len() as u64);
    }
    let entry = NotificationEntry {
        result_len: output.len() as u32,
        done: true,
        error: !fits,
    };
    let t = p.link.dma_write(
        &mut p.mem.host,
        notify_addr,
        &entry.encode(),
        Purpose::TaskNotify,
    )?;
    let completed = start + compute + t;
    let u = unit(p, cu)?;
    u.busy_until = completed;
    u.done.insert(
        q.seq,
        TaskResult {
            entry,
            completed_ns: completed,
            compute_ns: compute,
        },
    );
    Ok(())
}

/// Busy-waits for a task. The unit drains its ring in order up to the
/// task, then the host reads the notification entry.
pub fn poll(p: &mut Platform, ev: TaskEvent) -> Result<TaskResult, CuError> {
    loop {
        let u = unit(p, ev.cu)?;
        if let Some(r) = u.done.get(&ev.seq).copied() {
            let raw = p.mem.host.read(ev.notify_addr, NOTIFY_ENTRY_BYTES)?;
            let entry = NotificationEntry::decode(&raw);
            debug_assert_eq!(entry, r.entry);
            return Ok(TaskResult { entry, ..r });
        }
        if !u.ring.iter().any(|q| q.seq == ev.seq) {
            return Err(CuError::UnknownTask);
        }
        run_next(p, ev.cu)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::PlatformConfig;
    use crate::schema::compile_source;

    fn platform() -> Platform {
        let mut cfg = PlatformConfig::default();
        cfg.memory.host_pool_bytes = 1 << 20;
        cfg.memory.accel_pool_bytes = 1 << 20;
        Platform::new(
            cfg,
            compile_source("message M { int64 a = 1; }").unwrap().table,
        )
        .unwrap()
    }

    fn buffers(p: &mut Platform, input: &[u8], out_size: u64) -> Descriptor {
        let inp = p.mem.accel.alloc_chunk().unwrap();
        let out = p.mem.accel.alloc_run(2).unwrap();
        p.mem.accel.write(inp, input).unwrap();
        Descriptor {
            input_addr: inp,
            input_size: input.len() as u64,
            output_addr: out,
            output_buf_size: out_size,
        }
    }

    #[test]
    fn kernels() {
        assert_eq!(rle_decompress(&rle_compress(b"aaabccccd")), b"aaabccccd");
        let z = rle_compress(&[0u8; 4096]);
        assert_eq!(z.len(), 34);
        let data: Vec<u8> = (0..=255).collect();
        assert_eq!(xor_crypt(&xor_crypt(&data)), data);
        assert_eq!(Kernel::by_name("compress").unwrap().type_name, "compress");
        assert!(Kernel::by_name("gzip").is_none());
    }

    #[test]
    fn program_and_run_identity() {
        let mut p = platform();
        assert_eq!(get_type(&p, 0).unwrap(), NO_KERNEL);
        program(&mut p, 0, Kernel::identity(), 0.0).unwrap();
        assert_eq!(get_type(&p, 0).unwrap(), "identity");
        let data = vec![5u8; 100];
        let desc = buffers(&mut p, &data, 4096);
        let before = p.link.ledger();
        let ev = submit_task(&mut p, 0, desc, 0.0).unwrap();
        let raw = p.mem.host.read(ev.notify_addr, NOTIFY_ENTRY_BYTES).unwrap();
        assert!(!NotificationEntry::decode(&raw).done);
        let r = poll(&mut p, ev).unwrap();
        assert_eq!(r.entry.result_len, 100);
        assert!(r.entry.done && !r.entry.error);
        assert_eq!(p.mem.accel.read(desc.output_addr, 100).unwrap(), data);
        let d = p.link.ledger() - before;
        assert_eq!(
            (d.mmio_write.count, d.dma_write.count, d.dma_read.count),
            (1, 1, 0)
        );
    }

    #[test]
    fn compress_output_and_overflow() {
        let mut p = platform();
        program(&mut p, 0, Kernel::rle_compress(), 0.0).unwrap();
        let desc = buffers(&mut p, &[0u8; 4096], 8192);
        let ev = submit_task(&mut p, 0, desc, 0.0).unwrap();
        assert_eq!(
            poll(&mut p, ev).unwrap().entry.result_len,
            rle_compress(&[0u8; 4096]).len() as u32
        );

        let noisy: Vec<u8> = (0..64u8).collect();
        let desc = buffers(&mut p, &noisy, 16);
        let ev = submit_task(&mut p, 0, desc, 0.0).unwrap();
        let r = poll(&mut p, ev).unwrap();
        assert!(r.entry.error);
        assert_eq!(r.entry.result_len, 128);
    }

    #[test]
    fn ring_full_and_busy() {
        let mut p = platform();
        program(&mut p, 0, Kernel::identity(), 0.0).unwrap();
        let desc = buffers(&mut p, &[1; 8], 64);
        let mut last = None;
        for _ in 0..64 {
            last = Some(submit_task(&mut p, 0, desc, 0.0).unwrap());
        }
        assert_eq!(submit_task(&mut p, 0, desc, 0.0), Err(CuError::RingFull));
        assert_eq!(
            program(&mut p, 0, Kernel::xor_crypt(), 0.0),
            Err(CuError::CuBusy)
        );
        poll(&mut p, last.unwrap()).unwrap();
        assert_eq!(p.cus[0].in_flight(), 0);
        program(&mut p, 0, Kernel::unavailable(), 0.0).unwrap();
        assert_eq!(get_type(&p, 0).unwrap(), NO_KERNEL);
        assert_eq!(
            submit_task(&mut p, 0, desc, 0.0),
            Err(CuError::CuUnavailable)
        );
    }

    #[test]
    fn fifo_completion_order() {
        let mut p = platform();
        program(&mut p, 0, Kernel::identity(), 0.0).unwrap();
        let desc = buffers(&mut p, &[1; 512], 1024);
        let a = submit_task(&mut p, 0, desc, 0.0).unwrap();
        let b = submit_task(&mut p, 0, desc, 0.0).unwrap();
        let rb = poll(&mut p, b).unwrap();
        let ra = poll(&mut p, a).unwrap();
        assert!(ra.completed_ns < rb.completed_ns);
    }

    #[test]
    fn invalid_descriptors() {
        let mut p = platform();
        program(&mut p, 0, Kernel::identity(), 0.0).unwrap();
        let desc = buffers(&mut p, &[1; 8], 64);
        let overlapping = Descriptor {
            output_addr: desc.input_addr + 4,
            ..desc
        };
        assert!(matches!(
            submit_task(&mut p, 0, overlapping, 0.0),
            Err(CuError::DescriptorInvalid(_))
        ));
        let unmapped = Descriptor {
            input_addr: 0x10,
            ..desc
        };
        assert!(matches!(
            submit_task(&mut p, 0, unmapped, 0.0),
            Err(CuError::Memory(_))
        ));
    }
}
