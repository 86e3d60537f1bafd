//! Transaction costs on the interconnect profiles, and the ledger that
//! records every transfer.

use rpcacc::link::{cost_dma, Interconnect, LinkConfig, Purpose};
use rpcacc::memory::MemorySystem;

fn main() {
    let profiles = [
        ("pcie", LinkConfig::pcie()),
        ("upi", LinkConfig::upi()),
        ("onchip-70ns", LinkConfig::onchip_70ns()),
    ];
    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>12}",
        "profile", "16 B", "4 KiB", "64 KiB", "64 x 64 B"
    );
    for (name, cfg) in &profiles {
        let small = cost_dma(16, cfg);
        let page = cost_dma(4096, cfg);
        let big = cost_dma(65536, cfg);
        let many = 64.0 * cost_dma(64, cfg);
        println!("{name:<12} {small:>10.1} {page:>10.1} {big:>10.1} {many:>12.1}");
    }

    let mut mem = MemorySystem::new(1 << 20, 1 << 20, 4096).unwrap();
    let mut link = Interconnect::new(LinkConfig::pcie()).unwrap();
    let buf = mem.host.alloc_chunk().unwrap();
    link.dma_write(&mut mem.host, buf, &[1; 300], Purpose::Flush)
        .unwrap();
    link.dma_read(&mem.host, buf, 300, Purpose::ResponseFetch)
        .unwrap();
    link.mmio_write(0x40, buf, Purpose::Doorbell);
    for e in link.events() {
        println!("{e:?}");
    }
    let l = link.ledger();
    println!(
        "{} events, {} bytes, {:.1} ns on the link",
        l.total_events(),
        l.total_bytes(),
        l.total_time_ns()
    );
}
