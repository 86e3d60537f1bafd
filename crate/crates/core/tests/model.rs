mod common;

use proptest::prelude::*;

use rpcacc::deser::DeserMode;
use rpcacc::link::{cost_dma, Interconnect, LinkConfig, Purpose, TxnKind};
use rpcacc::memory::{ChunkAllocator, MemorySystem, Region, ACCEL_BASE};

use common::Sizes;

fn link_config() -> impl Strategy<Value = LinkConfig> {
    (
        1.0..2000.0f64,
        0.5..64.0f64,
        0.0..200.0f64,
        prop::sample::select(vec![64u64, 256, 4096]),
    )
        .prop_map(|(lat, bw, ovh, max)| LinkConfig {
            latency_ns: lat,
            bandwidth_bytes_per_ns: bw,
            per_txn_overhead_ns: ovh,
            mmio_write_ns: lat,
            max_txn_payload: max,
        })
}

proptest! {
    #[test]
    fn allocator_conservation(ops in prop::collection::vec((any::<bool>(), any::<prop::sample::Index>()), 0..400)) {
        let mut a = ChunkAllocator::new(Region::Accel, ACCEL_BASE, 64 * 4096, 4096).unwrap();
        let mut held = Vec::new();
        for (alloc, pick) in ops {
            if alloc {
                match a.alloc_chunk() {
                    Ok(addr) => {
                        prop_assert!(!held.contains(&addr));
                        held.push(addr);
                    }
                    Err(_) => prop_assert_eq!(held.len(), a.pool_chunks()),
                }
            } else if !held.is_empty() {
                let addr = held.swap_remove(pick.index(held.len()));
                a.free_chunk(addr).unwrap();
                // double free is refused
                prop_assert!(a.free_chunk(addr).is_err());
            }
            let (allocs, frees) = a.counters();
            prop_assert_eq!((allocs - frees) as usize, a.outstanding());
            prop_assert_eq!(a.outstanding(), held.len());
            prop_assert_eq!(a.free_chunks() + a.outstanding(), a.pool_chunks());
        }
    }

    #[test]
    fn fifo_reuse_order(n in 1usize..32) {
        let mut a = ChunkAllocator::new(Region::Host, 0x1000_0000, 32 * 4096, 4096).unwrap();
        let taken: Vec<u64> = (0..n).map(|_| a.alloc_chunk().unwrap()).collect();
        for &addr in taken.iter().rev() {
            a.free_chunk(addr).unwrap();
        }
        // untouched chunks come first, then the freed ones in free order
        let rest = 32 - n;
        for _ in 0..rest {
            a.alloc_chunk().unwrap();
        }
        let again: Vec<u64> = (0..n).map(|_| a.alloc_chunk().unwrap()).collect();
        prop_assert_eq!(again, taken.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn cost_monotonicity(cfg in link_config(), len in 0u64..100_000, extra in 1u64..10_000, d in 0.1..500.0f64) {
        let base = cost_dma(len, &cfg);
        prop_assert!(cost_dma(len + extra, &cfg) >= base);
        let slower = LinkConfig { latency_ns: cfg.latency_ns + d, ..cfg };
        prop_assert!(cost_dma(len, &slower) >= base);
        let costlier = LinkConfig { per_txn_overhead_ns: cfg.per_txn_overhead_ns + d, ..cfg };
        prop_assert!(cost_dma(len, &costlier) >= base);
        let faster = LinkConfig { bandwidth_bytes_per_ns: cfg.bandwidth_bytes_per_ns + d, ..cfg };
        if len > 0 {
            prop_assert!(cost_dma(len, &faster) < base);
        } else {
            prop_assert_eq!(cost_dma(len, &faster), base);
        }
    }

    #[test]
    fn batching_dominance(cfg in link_config(), parts in prop::collection::vec(1u64..512, 2..8)) {
        let total: u64 = parts.iter().sum();
        prop_assume!(total <= cfg.max_txn_payload);
        let separate: f64 = parts.iter().map(|&n| cost_dma(n, &cfg)).sum();
        prop_assert!(cost_dma(total, &cfg) < separate);
    }

    #[test]
    fn ledger_is_complete(seed in any::<u64>()) {
        let (table, class, msg) = common::case(seed, 5, Sizes::Mixed);
        let mut r = common::rng(seed);
        let table = common::random_labels(&mut r, &table, 0.5);
        let mut p = common::platform(&table);
        let d = common::deserialize_msg(&mut p, class, &msg, DeserMode::OneShot);
        let ledger = p.link.ledger();
        // every host byte the deserializer produced crossed the link once,
        // plus the completion record
        prop_assert_eq!(ledger.dma_write.bytes, d.metrics.host_bytes + 64);
        let events = p.link.events();
        let sum: u64 = events.iter().map(|e| e.bytes).sum();
        prop_assert_eq!(sum, ledger.total_bytes());
        prop_assert_eq!(events.len() as u64, ledger.total_events());
    }
}

#[test]
fn interconnect_moves_and_records() {
    let mut mem = MemorySystem::new(1 << 20, 1 << 20, 4096).unwrap();
    let mut link = Interconnect::new(LinkConfig::pcie()).unwrap();
    let addr = mem.host.alloc_chunk().unwrap();
    let t = link
        .dma_write(&mut mem.host, addr, b"hello", Purpose::Flush)
        .unwrap();
    assert_eq!(t, cost_dma(5, &LinkConfig::pcie()));
    let (back, _) = link
        .dma_read(&mem.host, addr, 5, Purpose::ResponseFetch)
        .unwrap();
    assert_eq!(back, b"hello");
    link.mmio_write(0x10, addr, Purpose::Doorbell);
    assert_eq!(link.register(0x10), Some(addr));
    let l = link.ledger();
    assert_eq!(
        (
            l.get(TxnKind::DmaWrite).count,
            l.get(TxnKind::DmaRead).count,
            l.get(TxnKind::MmioWrite).count
        ),
        (1, 1, 1)
    );
    // writes to unallocated host memory are refused and not recorded
    assert!(link
        .dma_write(&mut mem.host, addr + 4096, b"x", Purpose::Flush)
        .is_err());
    assert_eq!(link.ledger().total_events(), 3);
}

#[test]
fn link_config_rejects_nonsense() {
    for bad in [
        LinkConfig {
            latency_ns: 0.0,
            ..LinkConfig::pcie()
        },
        LinkConfig {
            bandwidth_bytes_per_ns: -1.0,
            ..LinkConfig::pcie()
        },
        LinkConfig {
            max_txn_payload: 0,
            ..LinkConfig::pcie()
        },
        LinkConfig {
            per_txn_overhead_ns: f64::NAN,
            ..LinkConfig::pcie()
        },
    ] {
        assert!(Interconnect::new(bad).is_err());
    }
    assert!(LinkConfig::with_profile("carrier-pigeon").is_err());
    assert_eq!(LinkConfig::with_profile("upi").unwrap(), LinkConfig::upi());
}
