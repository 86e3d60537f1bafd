//! Move a field between host and accelerator memory at run time and watch
//! the placement bit follow it.

use rpcacc::deser::{deserialize, DeserMode, Lane};
use rpcacc::field_update::{is_in_acc, move_to_acc, move_to_cpu, resolve};
use rpcacc::layout::{read_back, ObjectArena};
use rpcacc::oracle::ref_encode;
use rpcacc::platform::{Platform, PlatformConfig};
use rpcacc::schema::compile_source;
use rpcacc::value::{Message, Value};
use rpcacc::wire::RpcHeader;

const PROTO: &str = "
message Upload { int64 id = 1; Blob blob = 2; }
message Blob { bytes content = 1 [Acc]; string mime = 2; }
";

fn main() {
    let table = compile_source(PROTO).unwrap().table;
    let msg = Message::new(1).with(1, Value::Int64(5)).with(
        2,
        Value::Message(
            Message::new(2)
                .with(1, Value::Bytes(vec![7; 10_000]))
                .with(2, Value::String("image/png".into())),
        ),
    );
    let payload = ref_encode(&msg);
    let mut p = Platform::new(PlatformConfig::default(), table).unwrap();
    let mut lane = Lane::new(0, p.cfg.deser.temp_buffer_bytes);
    let header = RpcHeader {
        class_id: 1,
        msg_len: payload.len() as u32,
    };
    let d = deserialize(&mut p, &mut lane, header, &payload, DeserMode::OneShot).unwrap();

    let mut arena = ObjectArena::new(4096);
    let mut h = resolve(&p, 1, d.root, &[2, 1]).unwrap();
    println!(
        "Blob.content on accelerator: {}, placement bit {}",
        is_in_acc(&p, &h),
        p.table.placement(2, 1)
    );

    let out = move_to_cpu(&mut p, &mut arena, &mut h).unwrap();
    println!(
        "move_to_cpu: {} B, link {:.0} ns, device {:.0} ns, bit updated {}",
        out.bytes, out.link_ns, out.device_ns, out.placement_updated
    );
    println!(
        "Blob.content on accelerator: {}, placement bit {}",
        is_in_acc(&p, &h),
        p.table.placement(2, 1)
    );
    assert!(!move_to_cpu(&mut p, &mut arena, &mut h).unwrap().moved);

    let back = move_to_acc(&mut p, &mut arena, &mut h).unwrap();
    println!("move_to_acc: {} B, link {:.0} ns", back.bytes, back.link_ns);
    assert_eq!(read_back(&p.mem, &p.table, 1, d.root).unwrap(), msg);
    println!("message unchanged after both moves");
}
