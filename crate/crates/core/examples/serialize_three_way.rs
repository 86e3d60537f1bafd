//! Serialize the same in-memory response three ways and compare link
//! traffic, dependent reads and host work.

use rpcacc::layout::{store_message, ObjectArena};
use rpcacc::link::LinkConfig;
use rpcacc::memory::Region;
use rpcacc::oracle::ref_encode;
use rpcacc::platform::{Platform, PlatformConfig};
use rpcacc::schema::compile_source;
use rpcacc::ser::{serialize, Strategy};
use rpcacc::value::{Message, Value};

const PROTO: &str =
    "message Node { int64 id = 1; string label = 2; bytes data = 3; Node next = 4; }";

fn chain(depth: usize) -> Message {
    (0..depth)
        .fold(None, |inner: Option<Message>, i| {
            let mut m = Message::new(1)
                .with(1, Value::Int64(i as i64))
                .with(2, Value::String(format!("node-{i}")))
                .with(3, Value::Bytes(vec![i as u8; 64 + 32 * i]));
            if let Some(child) = inner {
                m.set(4, Value::Message(child));
            }
            Some(m)
        })
        .unwrap()
}

fn main() {
    let table = compile_source(PROTO).unwrap().table;
    let msg = chain(8);
    for latency in [70.0, 1250.0] {
        let cfg = PlatformConfig::with_link(LinkConfig::pcie().at_latency(latency));
        let mut p = Platform::new(cfg, table.clone()).unwrap();
        let mut arena = ObjectArena::new(4096);
        let root = store_message(&mut p.mem, &mut arena, &table, &msg, Region::Host).unwrap();
        println!("link latency {latency} ns");
        println!(
            "  {:<16} {:>10} {:>7} {:>6} {:>9} {:>10} {:>7}",
            "strategy", "elapsed", "events", "deps", "cpu copy", "host ns", "encodes"
        );
        for s in Strategy::ALL {
            let out = serialize(&mut p, s, 1, root).unwrap();
            assert_eq!(out.wire, ref_encode(&msg));
            println!(
                "  {:<16} {:>10.0} {:>7} {:>6} {:>9} {:>10.0} {:>7}",
                s.name(),
                out.elapsed_ns,
                out.ledger.total_events(),
                out.dependent_reads,
                out.proxy.bytes_copied_by_cpu,
                out.host_ns,
                out.proxy.encode_ops_on_cpu
            );
        }
        arena.release(&mut p.mem).unwrap();
    }
}
