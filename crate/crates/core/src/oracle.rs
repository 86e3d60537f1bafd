//! Cost-free reference codec.
//!
//! Written separately from [`crate::wire`] so that comparing the two means
//! something. Only the varint primitives are shared.

use thiserror::Error;

use crate::schema::{ClassId, FieldDescriptor, ScalarKind, SchemaTable};
use crate::value::{Message, Value};
use crate::wire::{decode_varint, put_varint, WireError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("malformed wire data: {0}")]
    MalformedWire(String),
    #[error("unknown class id {0}")]
    UnknownClass(ClassId),
}

impl From<WireError> for OracleError {
    fn from(e: WireError) -> Self {
        OracleError::MalformedWire(e.to_string())
    }
}

fn bad(msg: &str) -> OracleError {
    OracleError::MalformedWire(msg.to_owned())
}

fn put_tag(out: &mut Vec<u8>, number: u32, wt: u64) {
    put_varint(out, ((number as u64) << 3) | wt);
}

fn put_len_delimited(out: &mut Vec<u8>, number: u32, payload: &[u8]) {
    put_tag(out, number, 2);
    put_varint(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

fn scalar_payload(out: &mut Vec<u8>, v: &Value) {
    match v {
        Value::Int32(x) => put_varint(out, *x as i64 as u64),
        Value::Int64(x) => put_varint(out, *x as u64),
        Value::Uint64(x) => put_varint(out, *x),
        Value::Bool(b) => put_varint(out, *b as u64),
        Value::Double(d) => out.extend_from_slice(&d.to_le_bytes()),
        Value::Float(f) => out.extend_from_slice(&f.to_le_bytes()),
        _ => unreachable!("not a scalar"),
    }
}

fn scalar_wire_type(v: &Value) -> u64 {
    match v {
        Value::Double(_) => 1,
        Value::Float(_) => 5,
        _ => 0,
    }
}

fn encode_one(out: &mut Vec<u8>, number: u32, v: &Value) {
    match v {
        Value::String(s) => put_len_delimited(out, number, s.as_bytes()),
        Value::Bytes(b) => put_len_delimited(out, number, b),
        Value::Message(m) => put_len_delimited(out, number, &ref_encode(m)),
        Value::Repeated(items) => {
            let packed = items.first().is_some_and(|x| {
                !matches!(x, Value::String(_) | Value::Bytes(_) | Value::Message(_))
            });
            if packed {
                let mut body = Vec::new();
                for x in items {
                    scalar_payload(&mut body, x);
                }
                put_len_delimited(out, number, &body);
            } else {
                for x in items {
                    encode_one(out, number, x);
                }
            }
        }
        scalar => {
            put_tag(out, number, scalar_wire_type(scalar));
            scalar_payload(out, scalar);
        }
    }
}

/// Encodes fields in ascending number order, depth first. Schema-free:
/// the value carries everything needed.
pub fn ref_encode(msg: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    for (&number, v) in &msg.fields {
        encode_one(&mut out, number, v);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn varint(&mut self) -> Result<u64, OracleError> {
        let (v, n) = decode_varint(&self.buf[self.pos..])?;
        self.pos += n;
        Ok(v)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], OracleError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| bad("length overflow"))?;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| bad("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

fn scalar_from(kind: ScalarKind, c: &mut Cursor) -> Result<Value, OracleError> {
    Ok(match kind {
        ScalarKind::Int32 => Value::Int32(c.varint()? as i32),
        ScalarKind::Int64 => Value::Int64(c.varint()? as i64),
        ScalarKind::Uint64 => Value::Uint64(c.varint()?),
        ScalarKind::Bool => Value::Bool(c.varint()? != 0),
        ScalarKind::Double => Value::Double(f64::from_le_bytes(c.take(8)?.try_into().unwrap())),
        ScalarKind::Float => Value::Float(f32::from_le_bytes(c.take(4)?.try_into().unwrap())),
        _ => return Err(bad("not a scalar kind")),
    })
}

fn expected_wire_type(kind: ScalarKind) -> u64 {
    match kind {
        ScalarKind::Double => 1,
        ScalarKind::Float => 5,
        ScalarKind::String | ScalarKind::Bytes | ScalarKind::Message(_) => 2,
        _ => 0,
    }
}

fn skip(c: &mut Cursor, wt: u64) -> Result<(), OracleError> {
    match wt {
        0 => {
            c.varint()?;
        }
        1 => {
            c.take(8)?;
        }
        2 => {
            let n = c.varint()? as usize;
            c.take(n)?;
        }
        5 => {
            c.take(4)?;
        }
        _ => return Err(bad("unknown wire type")),
    }
    Ok(())
}

fn single(
    f: &FieldDescriptor,
    payload: &[u8],
    table: &SchemaTable,
    depth: usize,
) -> Result<Value, OracleError> {
    Ok(match f.kind {
        ScalarKind::String => {
            Value::String(String::from_utf8(payload.to_vec()).map_err(|_| bad("invalid UTF-8"))?)
        }
        ScalarKind::Bytes => Value::Bytes(payload.to_vec()),
        ScalarKind::Message(id) => Value::Message(decode_at(payload, id, table, depth + 1)?),
        _ => return Err(bad("length-delimited scalar outside a packed field")),
    })
}

fn decode_at(
    buf: &[u8],
    class: ClassId,
    table: &SchemaTable,
    depth: usize,
) -> Result<Message, OracleError> {
    if depth > 64 {
        return Err(bad("nesting too deep"));
    }
    let schema = table.get(class).ok_or(OracleError::UnknownClass(class))?;
    let mut msg = Message::new(class);
    let mut repeated: std::collections::BTreeMap<u32, Vec<Value>> = Default::default();
    let mut c = Cursor { buf, pos: 0 };
    while !c.done() {
        let tag = c.varint()?;
        let number = (tag >> 3) as u32;
        let wt = tag & 7;
        if number == 0 || tag >> 3 > u32::MAX as u64 {
            return Err(bad("bad field number"));
        }
        let Some(f) = schema.field(number) else {
            skip(&mut c, wt)?;
            continue;
        };
        let direct = f.kind.is_direct();
        if f.is_repeated() {
            let items = repeated.entry(number).or_default();
            if direct && wt == 2 {
                let n = c.varint()? as usize;
                let mut inner = Cursor {
                    buf: c.take(n)?,
                    pos: 0,
                };
                while !inner.done() {
                    items.push(scalar_from(f.kind, &mut inner)?);
                }
            } else if wt == expected_wire_type(f.kind) {
                if direct {
                    items.push(scalar_from(f.kind, &mut c)?);
                } else {
                    let n = c.varint()? as usize;
                    items.push(single(f, c.take(n)?, table, depth)?);
                }
            } else {
                return Err(bad("wire type mismatch"));
            }
            continue;
        }
        if wt != expected_wire_type(f.kind) {
            return Err(bad("wire type mismatch"));
        }
        let v = if direct {
            scalar_from(f.kind, &mut c)?
        } else {
            let n = c.varint()? as usize;
            single(f, c.take(n)?, table, depth)?
        };
        msg.set(number, v);
    }
    for (number, items) in repeated {
        msg.set(number, Value::Repeated(items));
    }
    Ok(msg)
}

/// Decodes `wire` as an instance of `class`. Unknown fields are skipped.
pub fn ref_decode(
    wire: &[u8],
    class: ClassId,
    table: &SchemaTable,
) -> Result<Message, OracleError> {
    decode_at(wire, class, table, 1)
}
