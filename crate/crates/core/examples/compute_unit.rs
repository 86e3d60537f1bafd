//! Program a compute unit, push tasks through its descriptor ring and
//! collect notifications.

use rpcacc::cu::{self, registry, Descriptor, Kernel};
use rpcacc::platform::{Platform, PlatformConfig};
use rpcacc::schema::compile_source;

fn main() {
    let table = compile_source("message M { bytes b = 1 [Acc]; }")
        .unwrap()
        .table;
    let mut p = Platform::new(PlatformConfig::default(), table).unwrap();
    println!(
        "kernels: {:?}",
        registry().iter().map(|k| k.type_name).collect::<Vec<_>>()
    );
    println!("cu0 starts as {}", cu::get_type(&p, 0).unwrap());

    let ready = cu::program(&mut p, 0, Kernel::rle_compress(), 0.0).unwrap();
    println!(
        "cu0 is {} from t = {ready:.0} ns",
        cu::get_type(&p, 0).unwrap()
    );

    let inputs: Vec<Vec<u8>> = vec![
        vec![0; 5000],
        b"aaaabbbbccccdddd".repeat(40),
        (0..=255).collect(),
    ];
    let mut pending = Vec::new();
    for input in &inputs {
        let bound = Kernel::rle_compress().output_bound(input.len()) as u64;
        let inp = p.mem.accel.alloc_run(input.len().div_ceil(4096)).unwrap();
        let out = p
            .mem
            .accel
            .alloc_run(bound.div_ceil(4096) as usize)
            .unwrap();
        p.mem.accel.write(inp, input).unwrap();
        let desc = Descriptor {
            input_addr: inp,
            input_size: input.len() as u64,
            output_addr: out,
            output_buf_size: bound,
        };
        pending.push((cu::submit_task(&mut p, 0, desc, ready).unwrap(), desc));
    }
    for ((ev, desc), input) in pending.into_iter().zip(&inputs) {
        let r = cu::poll(&mut p, ev).unwrap();
        let out = p
            .mem
            .accel
            .read(desc.output_addr, r.entry.result_len as u64)
            .unwrap();
        assert_eq!(out, Kernel::rle_compress().apply(input));
        println!(
            "task {}: {} B -> {} B, compute {:.0} ns, notified at {:.0} ns",
            ev.seq,
            input.len(),
            r.entry.result_len,
            r.compute_ns,
            r.completed_ns
        );
    }
    let l = p.link.ledger();
    println!(
        "link: {} MMIO doorbells, {} notification writes; data never left the device",
        l.mmio_write.count, l.dma_write.count
    );
}
