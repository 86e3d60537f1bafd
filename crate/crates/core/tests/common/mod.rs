//! Random schemas and messages for integration tests. Independent of the
//! crate's own workload generator.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpcacc::deser::{deserialize, DeserMode, Deserialized, Lane};
use rpcacc::memory::Region;
use rpcacc::oracle::ref_encode;
use rpcacc::platform::{Platform, PlatformConfig};
use rpcacc::schema::{
    compile_source, Addressing, ClassId, FieldDescriptor, ScalarKind, SchemaTable,
};
use rpcacc::value::{Message, Value};
use rpcacc::wire::RpcHeader;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Field payload sizes for generated strings and bytes.
#[derive(Debug, Clone, Copy)]
pub enum Sizes {
    /// 0..=64 bytes.
    Tiny,
    /// 0..=1024 bytes.
    Small,
    /// Mostly small with the occasional multi-KB field.
    Mixed,
}

impl Sizes {
    fn draw(self, r: &mut impl Rng) -> usize {
        match self {
            Sizes::Tiny => r.gen_range(0..=64),
            Sizes::Small => r.gen_range(0..=1024),
            Sizes::Mixed => {
                if r.gen_bool(0.1) {
                    r.gen_range(4096..=20_000)
                } else {
                    r.gen_range(0..=512)
                }
            }
        }
    }
}

const SCALARS: [&str; 8] = [
    "int32", "int64", "uint64", "double", "float", "bool", "string", "bytes",
];

/// Proto source for `classes` messages `C0..`. Every class has a singular
/// `next` link so chains of any depth exist; other message fields point
/// at random classes, including the enclosing one.
pub fn schema_source(r: &mut impl Rng, classes: usize) -> String {
    let mut src = String::from("syntax = \"proto3\";\n");
    for c in 0..classes {
        src.push_str(&format!("message C{c} {{\n"));
        let n = r.gen_range(1..=7);
        let mut number = 0u32;
        for i in 0..n {
            number += r.gen_range(1..=3);
            let label = if r.gen_bool(0.25) { "repeated " } else { "" };
            let ty = if r.gen_bool(0.15) {
                format!("C{}", r.gen_range(0..classes))
            } else {
                SCALARS.choose(r).unwrap().to_string()
            };
            src.push_str(&format!("  {label}{ty} f{i} = {number};\n"));
        }
        let next = r.gen_range(0..classes);
        src.push_str(&format!("  C{next} next = {};\n}}\n", number + 1));
    }
    src
}

pub fn random_table(r: &mut impl Rng) -> SchemaTable {
    let classes = r.gen_range(1..=4);
    let src = schema_source(r, classes);
    compile_source(&src)
        .unwrap_or_else(|e| panic!("generated schema rejected: {e}\n{src}"))
        .table
}

/// Flips every dereference field's placement bit with probability `p`.
pub fn random_labels(r: &mut impl Rng, table: &SchemaTable, p: f64) -> SchemaTable {
    table.relabeled(|_, _| r.gen_bool(p))
}

pub fn first_class(table: &SchemaTable) -> ClassId {
    table.classes().next().unwrap().class_id
}

fn scalar(r: &mut impl Rng, kind: ScalarKind, sizes: Sizes) -> Value {
    match kind {
        ScalarKind::Int32 => {
            Value::Int32(*[0, -1, 1, i32::MIN, i32::MAX, r.gen()].choose(r).unwrap())
        }
        ScalarKind::Int64 => {
            Value::Int64(*[0, -1, 300, i64::MIN, i64::MAX, r.gen()].choose(r).unwrap())
        }
        ScalarKind::Uint64 => Value::Uint64(*[0, 127, 128, u64::MAX, r.gen()].choose(r).unwrap()),
        ScalarKind::Double => Value::Double(
            *[0.0, -0.0, 1.5, f64::MAX, r.gen::<f64>() * 1e9]
                .choose(r)
                .unwrap(),
        ),
        ScalarKind::Float => Value::Float(
            *[0.0, -2.5, f32::MIN_POSITIVE, r.gen::<f32>()]
                .choose(r)
                .unwrap(),
        ),
        ScalarKind::Bool => Value::Bool(r.gen()),
        ScalarKind::String => {
            let n = sizes.draw(r);
            Value::String(
                (0..n)
                    .map(|_| *['a', 'z', '0', ' ', 'é', '中'].choose(r).unwrap())
                    .collect(),
            )
        }
        ScalarKind::Bytes => {
            let n = sizes.draw(r);
            Value::Bytes((0..n).map(|_| r.gen()).collect())
        }
        ScalarKind::Message(_) => unreachable!(),
    }
}

fn field_value(
    r: &mut impl Rng,
    table: &SchemaTable,
    f: &FieldDescriptor,
    depth_left: usize,
    sizes: Sizes,
) -> Value {
    let one = |r: &mut ChaCha8Rng| match f.kind {
        ScalarKind::Message(c) => Value::Message(message_at(r, table, c, depth_left - 1, sizes)),
        k => scalar(r, k, sizes),
    };
    // a local rng keeps the closure simple and the stream deterministic
    let mut local = ChaCha8Rng::seed_from_u64(r.gen());
    if f.is_repeated() {
        let n = local.gen_range(1..=3);
        Value::Repeated((0..n).map(|_| one(&mut local)).collect())
    } else {
        one(&mut local)
    }
}

fn message_at(
    r: &mut impl Rng,
    table: &SchemaTable,
    class: ClassId,
    depth_left: usize,
    sizes: Sizes,
) -> Message {
    let schema = table.get(class).unwrap();
    let mut m = Message::new(class);
    for f in &schema.fields {
        let is_msg = matches!(f.kind, ScalarKind::Message(_));
        if is_msg {
            if depth_left <= 1 {
                continue;
            }
            // chains reach the requested depth through `next`
            let p = if f.name == "next" {
                1.0
            } else {
                0.3 / depth_left as f64
            };
            if !r.gen_bool(p.min(1.0)) {
                continue;
            }
        } else if !r.gen_bool(0.7) {
            continue;
        }
        m.set(f.number, field_value(r, table, f, depth_left, sizes));
    }
    m
}

/// A message of `class` with depth at most `max_depth`.
pub fn random_message(
    r: &mut impl Rng,
    table: &SchemaTable,
    class: ClassId,
    max_depth: usize,
    sizes: Sizes,
) -> Message {
    let depth = r.gen_range(1..=max_depth);
    message_at(r, table, class, depth, sizes)
}

/// Schema, root class and one message, all from `seed`.
pub fn case(seed: u64, max_depth: usize, sizes: Sizes) -> (SchemaTable, ClassId, Message) {
    let mut r = rng(seed);
    let table = random_table(&mut r);
    let class = first_class(&table);
    let msg = random_message(&mut r, &table, class, max_depth, sizes);
    (table, class, msg)
}

pub fn small_config() -> PlatformConfig {
    let mut cfg = PlatformConfig::default();
    cfg.memory.host_pool_bytes = 16 << 20;
    cfg.memory.accel_pool_bytes = 16 << 20;
    cfg
}

pub fn platform(table: &SchemaTable) -> Platform {
    Platform::new(small_config(), table.clone()).unwrap()
}

/// Runs one message through the deserializer on a fresh lane.
pub fn deserialize_msg(
    p: &mut Platform,
    class: ClassId,
    msg: &Message,
    mode: DeserMode,
) -> Deserialized {
    let payload = ref_encode(msg);
    let header = RpcHeader {
        class_id: class,
        msg_len: payload.len() as u32,
    };
    let mut lane = Lane::new(0, p.cfg.deser.temp_buffer_bytes);
    deserialize(p, &mut lane, header, &payload, mode).unwrap()
}

/// Host-side footprint of a message laid out from a record in `region`:
/// (field occurrences writing anything to host memory, host bytes written).
/// Slots are 16 bytes, packed scalars 8 bytes each, and repeated
/// non-scalar fields keep an array of 16-byte element slots.
pub fn host_footprint(table: &SchemaTable, msg: &Message, region: Region) -> (u64, u64) {
    let schema = table.get(msg.class_id).unwrap();
    let (mut fields, mut bytes) = (0, 0);
    for (&n, v) in &msg.fields {
        let f = schema.field(n).unwrap();
        let data_region = if f.addressing() == Addressing::Dereference && f.acc {
            Region::Accel
        } else {
            Region::Host
        };
        let mut data = 0;
        let mut child = |m: &Message| {
            let (cf, cb) = host_footprint(table, m, data_region);
            fields += cf;
            bytes += cb;
        };
        match v {
            Value::Message(m) => child(m),
            Value::String(s) => data += s.len() as u64,
            Value::Bytes(b) => data += b.len() as u64,
            Value::Repeated(items) if f.is_packed() => data += 8 * items.len() as u64,
            Value::Repeated(items) => {
                data += 16 * items.len() as u64;
                for item in items {
                    match item {
                        Value::Message(m) => child(m),
                        Value::String(s) => data += s.len() as u64,
                        Value::Bytes(b) => data += b.len() as u64,
                        _ => unreachable!(),
                    }
                }
            }
            _ => {}
        }
        let slot = if region == Region::Host { 16 } else { 0 };
        let here = slot + if data_region == Region::Host { data } else { 0 };
        if here > 0 {
            fields += 1;
            bytes += here;
        }
    }
    (fields, bytes)
}
