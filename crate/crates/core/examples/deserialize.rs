//! Deserialize a request straight into simulated memory, one-shot versus
//! field by field, and see where each field landed.

use rpcacc::deser::{deserialize, release, DeserMode, Lane};
use rpcacc::layout::{read_back, visit_placement};
use rpcacc::oracle::ref_encode;
use rpcacc::platform::{Platform, PlatformConfig};
use rpcacc::schema::compile_source;
use rpcacc::value::{Message, Value};
use rpcacc::wire::RpcHeader;

const PROTO: &str = "
message Order { int64 id = 1; string customer = 2; repeated Item items = 3; bytes signature = 4 [Acc]; }
message Item { string sku = 1; int32 qty = 2; }
";

fn main() {
    let table = compile_source(PROTO).unwrap().table;
    let items = (0..40)
        .map(|i| {
            Value::Message(
                Message::new(2)
                    .with(1, Value::String(format!("sku-{i:04}")))
                    .with(2, Value::Int32(i)),
            )
        })
        .collect();
    let order = Message::new(1)
        .with(1, Value::Int64(991))
        .with(2, Value::String("acme".into()))
        .with(3, Value::Repeated(items))
        .with(4, Value::Bytes(vec![0xab; 256]));
    let payload = ref_encode(&order);
    let header = RpcHeader {
        class_id: 1,
        msg_len: payload.len() as u32,
    };

    let mut p = Platform::new(PlatformConfig::default(), table).unwrap();
    for mode in [DeserMode::OneShot, DeserMode::FieldByField] {
        let mut lane = Lane::new(0, p.cfg.deser.temp_buffer_bytes);
        let d = deserialize(&mut p, &mut lane, header, &payload, mode).unwrap();
        let m = &d.metrics;
        println!(
            "{mode:?}: {:.0} ns, {} host fields ({} B) in {} writes, {} B stayed on the accelerator",
            m.elapsed_ns, m.host_fields, m.host_bytes, m.ledger.dma_write.count, m.accel_bytes
        );
        assert_eq!(read_back(&p.mem, &p.table, 1, d.root).unwrap(), order);
        if mode == DeserMode::OneShot {
            let table = p.table.clone();
            visit_placement(&p.mem, &table, 1, d.root, &mut |class, field, region| {
                if class == 1 {
                    println!("  Order.{field} -> {region:?}");
                }
            })
            .unwrap();
        }
        release(&mut p, d).unwrap();
    }
}
