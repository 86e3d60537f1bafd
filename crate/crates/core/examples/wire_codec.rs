//! Encode a message with the codec, inspect the bytes, decode it back, and
//! show that unknown fields are skipped.

use rpcacc::schema::compile_source;
use rpcacc::value::{Message, Value};
use rpcacc::wire::{decode_message, decode_varint, encode_message, encode_varint};

const PROTO: &str = r#"
syntax = "proto3";
message User {
  int64 id = 1;
  string name = 2;
  repeated int32 scores = 3;
  Address home = 4;
}
message Address { string city = 1; uint64 zip = 2; }
"#;

fn hex(b: &[u8]) -> String {
    b.iter()
        .map(|x| format!("{x:02x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() {
    for v in [0u64, 1, 150, 300, u64::MAX] {
        let bytes = encode_varint(v);
        let (back, n) = decode_varint(&bytes).unwrap();
        assert_eq!((back, n), (v, bytes.len()));
        println!("varint {v:>20} -> {}", hex(&bytes));
    }

    let table = compile_source(PROTO).unwrap().table;
    let user = table.by_name("User").unwrap().class_id;
    let addr = table.by_name("Address").unwrap().class_id;
    let msg = Message::new(user)
        .with(1, Value::Int64(-7))
        .with(2, Value::String("ada".into()))
        .with(3, Value::Repeated(vec![Value::Int32(3), Value::Int32(270)]))
        .with(
            4,
            Value::Message(
                Message::new(addr)
                    .with(1, Value::String("Turin".into()))
                    .with(2, Value::Uint64(10121)),
            ),
        );

    let wire = encode_message(&msg, &table).unwrap();
    println!("\nUser ({} bytes): {}", wire.len(), hex(&wire));
    assert_eq!(decode_message(&wire, user, &table).unwrap(), msg);

    // field 9 is not in the schema: a varint the decoder steps over
    let mut extended = wire.clone();
    extended.extend_from_slice(&[9 << 3, 0x2a]);
    assert_eq!(decode_message(&extended, user, &table).unwrap(), msg);
    println!("unknown field 9 skipped");

    // a truncated buffer is an error, never a panic
    let err = decode_message(&wire[..wire.len() - 2], user, &table).unwrap_err();
    println!("truncated: {err}");
}
