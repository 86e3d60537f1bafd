mod common;

use std::time::Instant;

use proptest::prelude::*;
use serde_json::Value as Json;

use rpcacc::oracle::{ref_decode, ref_encode};
use rpcacc::schema::{compile_source, ClassId, ScalarKind, SchemaTable};
use rpcacc::value::{Message, Value};
use rpcacc::wire::{
    decode_field, decode_message, decode_varint, encode_field, encode_message, encode_varint,
    Decoded, WireError,
};

use common::Sizes;

const GOLDEN_PROTO: &str = include_str!("golden/golden.proto");
const GOLDEN_VECTORS: &str = include_str!("golden/vectors.json");

fn scalar_from_json(kind: ScalarKind, j: &Json) -> Value {
    let bits = || j["bits"].as_u64().expect("float bits");
    match kind {
        ScalarKind::Int32 => Value::Int32(j.as_i64().unwrap() as i32),
        ScalarKind::Int64 => Value::Int64(j.as_i64().unwrap()),
        ScalarKind::Uint64 => Value::Uint64(j.as_u64().unwrap()),
        ScalarKind::Double => Value::Double(f64::from_bits(bits())),
        ScalarKind::Float => Value::Float(f32::from_bits(bits() as u32)),
        ScalarKind::Bool => Value::Bool(j.as_bool().unwrap()),
        ScalarKind::String => Value::String(j.as_str().unwrap().to_owned()),
        ScalarKind::Bytes => Value::Bytes(hex_bytes(j.as_str().unwrap())),
        ScalarKind::Message(_) => unreachable!(),
    }
}

fn hex_bytes(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

fn message_from_json(table: &SchemaTable, class: ClassId, j: &Json) -> Message {
    let schema = table.get(class).unwrap();
    let mut m = Message::new(class);
    for (k, v) in j.as_object().unwrap() {
        let f = schema.field(k.parse().unwrap()).unwrap();
        let one = |x: &Json| match f.kind {
            ScalarKind::Message(c) => Value::Message(message_from_json(table, c, x)),
            kind => scalar_from_json(kind, x),
        };
        let value = if f.is_repeated() {
            Value::Repeated(v.as_array().unwrap().iter().map(one).collect())
        } else {
            one(v)
        };
        m.set(f.number, value);
    }
    m
}

#[test]
fn golden_vectors() {
    let table = compile_source(GOLDEN_PROTO).unwrap().table;
    let doc: Json = serde_json::from_str(GOLDEN_VECTORS).unwrap();
    let vectors = doc["vectors"].as_array().unwrap();
    assert!(vectors.len() >= 50);
    let mut failures = Vec::new();
    for v in vectors {
        let name = v["name"].as_str().unwrap();
        let class = table
            .by_name(v["message"].as_str().unwrap())
            .unwrap()
            .class_id;
        let expected = hex_bytes(v["hex"].as_str().unwrap());
        let msg = message_from_json(&table, class, &v["value"]);
        let ok = encode_message(&msg, &table).as_deref() == Ok(&expected[..])
            && ref_encode(&msg) == expected
            && decode_message(&expected, class, &table).as_ref() == Ok(&msg)
            && ref_decode(&expected, class, &table).as_ref() == Ok(&msg);
        if !ok {
            failures.push(name.to_owned());
        }
    }
    assert!(failures.is_empty(), "golden vectors failed: {failures:?}");
}

#[test]
fn varint_examples() {
    assert_eq!(encode_varint(0), [0x00]);
    assert_eq!(encode_varint(127), [0x7F]);
    assert_eq!(encode_varint(300), [0xAC, 0x02]);
    assert_eq!(decode_varint(&[0x00]), Ok((0, 1)));
    assert_eq!(decode_varint(&[0xAC, 0x02]), Ok((300, 2)));
    assert_eq!(decode_varint(&[0x80]), Err(WireError::Truncated));
    assert_eq!(decode_varint(&[0xFF; 11]), Err(WireError::Overflow));
}

#[test]
fn field_examples() {
    let table = compile_source("message M { int64 a = 1; string s = 2; float f = 3; }")
        .unwrap()
        .table;
    let schema = table.get(1).unwrap();
    let a = schema.field(1).unwrap();
    let s = schema.field(2).unwrap();
    assert_eq!(
        encode_field(a, &Value::Int64(0), &table).unwrap(),
        [0x08, 0x00]
    );
    assert_eq!(
        encode_field(s, &Value::String(String::new()), &table).unwrap(),
        [0x12, 0x00]
    );
    assert_eq!(
        encode_field(s, &Value::String("hi".into()), &table).unwrap(),
        [0x12, 0x02, 0x68, 0x69]
    );
    assert!(encode_field(s, &Value::Int64(1), &table).is_err());

    let (n, v, used) = decode_field(&[0x08, 0x00], schema).unwrap();
    assert_eq!((n, v, used), (1, Decoded::Value(Value::Int64(0)), 2));
    let (n, v, used) = decode_field(&[0x12, 0x02, 0x68, 0x69], schema).unwrap();
    assert_eq!(
        (n, v, used),
        (2, Decoded::Value(Value::String("hi".into())), 4)
    );
    let (n, v, used) = decode_field(&[0x38, 0x05, 0x08, 0x00], schema).unwrap();
    assert_eq!((n, v, used), (7, Decoded::Unknown, 2));
    assert_eq!(
        decode_field(&[0x1D, 1, 2, 3], schema).err(),
        Some(WireError::Truncated)
    );
}

#[test]
fn round_trip_depth_12_ten_thousand() {
    let start = Instant::now();
    let mut max_depth = 0;
    for seed in 0..10_000u64 {
        let (table, class, msg) = common::case(seed, 12, Sizes::Tiny);
        max_depth = max_depth.max(msg.depth());
        let wire = encode_message(&msg, &table).unwrap();
        assert_eq!(
            decode_message(&wire, class, &table).unwrap(),
            msg,
            "seed {seed}"
        );
    }
    assert_eq!(max_depth, 12);
    let secs = start.elapsed().as_secs_f64();
    // debug builds are slow; the bound is meant for release
    assert!(secs < 60.0, "round trip took {secs:.1}s");
}

proptest! {
    #[test]
    fn canonical_varint_length(v in any::<u64>()) {
        let bits = 64 - v.leading_zeros() as usize;
        prop_assert_eq!(encode_varint(v).len(), bits.max(1).div_ceil(7));
        prop_assert_eq!(decode_varint(&encode_varint(v)), Ok((v, encode_varint(v).len())));
    }

    #[test]
    fn round_trip_matches_oracle(seed in any::<u64>()) {
        let (table, class, msg) = common::case(seed, 12, Sizes::Small);
        let wire = encode_message(&msg, &table).unwrap();
        prop_assert_eq!(&wire, &ref_encode(&msg));
        prop_assert_eq!(ref_decode(&wire, class, &table).unwrap(), msg);
    }

    #[test]
    fn decoder_is_total(seed in any::<u64>(), junk in proptest::collection::vec(any::<u8>(), 0..256)) {
        let (table, class, _) = common::case(seed, 3, Sizes::Tiny);
        // any outcome is fine as long as it is a value or a typed error
        let _ = decode_message(&junk, class, &table);
        let _ = ref_decode(&junk, class, &table);
    }

    #[test]
    fn truncation_is_an_error(seed in any::<u64>(), cut in any::<prop::sample::Index>()) {
        let (table, class, msg) = common::case(seed, 6, Sizes::Tiny);
        let wire = encode_message(&msg, &table).unwrap();
        prop_assume!(!wire.is_empty());
        let at = cut.index(wire.len());
        // a prefix either fails or decodes to something other than a
        // longer message; it never reads past its end
        if let Ok(m) = decode_message(&wire[..at], class, &table) {
            prop_assert_ne!(m, msg);
        }
    }
}
