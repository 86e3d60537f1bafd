//! Protobuf3-subset wire format: varints, tags, TV and TLV fields.
//!
//! Signed integers use plain two's-complement varints (no zigzag), repeated
//! scalars are packed, and messages encode fields in ascending field-number
//! order so every encoder in the crate produces identical bytes.

use thiserror::Error;

use crate::schema::{ClassId, FieldDescriptor, MessageSchema, ScalarKind, SchemaTable};
use crate::value::{Message, Value};

/// Nesting limit applied when decoding untrusted input.
pub const MAX_DECODE_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("input truncated")]
    Truncated,
    #[error("varint longer than 10 bytes or wider than 64 bits")]
    Overflow,
    #[error("malformed tag {0:#x}")]
    MalformedTag(u64),
    #[error("value does not match the declared type of field {number}")]
    TypeMismatch { number: u32 },
    #[error("field {number} arrived with wire type {found:?}")]
    WireTypeMismatch { number: u32, found: WireType },
    #[error("field {number} is not valid UTF-8")]
    InvalidUtf8 { number: u32 },
    #[error("unknown message class {0}")]
    UnknownClass(ClassId),
    #[error("message nesting exceeds {0} levels")]
    DepthExceeded(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum WireType {
    Varint = 0,
    Fixed64 = 1,
    LenDelimited = 2,
    Fixed32 = 5,
}

impl WireType {
    pub fn from_bits(bits: u8) -> Option<WireType> {
        match bits {
            0 => Some(WireType::Varint),
            1 => Some(WireType::Fixed64),
            2 => Some(WireType::LenDelimited),
            5 => Some(WireType::Fixed32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldTag {
    pub field_number: u32,
    pub wire_type: WireType,
}

impl FieldTag {
    pub fn new(field_number: u32, wire_type: WireType) -> Self {
        FieldTag {
            field_number,
            wire_type,
        }
    }

    pub fn to_u64(self) -> u64 {
        ((self.field_number as u64) << 3) | self.wire_type as u64
    }

    pub fn encode(self, out: &mut Vec<u8>) {
        put_varint(out, self.to_u64());
    }

    pub fn decode(buf: &[u8]) -> Result<(FieldTag, usize), WireError> {
        let (raw, n) = decode_varint(buf)?;
        let wire_type = WireType::from_bits((raw & 7) as u8).ok_or(WireError::MalformedTag(raw))?;
        let number = raw >> 3;
        if number == 0 || number > crate::schema::MAX_FIELD_NUMBER as u64 {
            return Err(WireError::MalformedTag(raw));
        }
        Ok((FieldTag::new(number as u32, wire_type), n))
    }
}

/// Encoded length of `v` as a varint.
pub fn varint_len(v: u64) -> usize {
    let bits = 64 - v.leading_zeros() as usize;
    bits.max(1).div_ceil(7)
}

pub fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn encode_varint(v: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(varint_len(v));
    put_varint(&mut out, v);
    out
}

/// Decodes one varint from the front of `buf`, returning the value and the
/// number of bytes consumed.
pub fn decode_varint(buf: &[u8]) -> Result<(u64, usize), WireError> {
    let mut value = 0u64;
    for (i, &byte) in buf.iter().enumerate() {
        if i == 9 && byte > 1 {
            return Err(WireError::Overflow);
        }
        value |= ((byte & 0x7f) as u64) << (7 * i);
        if byte & 0x80 == 0 {
            return Ok((value, i + 1));
        }
        if i == 9 {
            return Err(WireError::Overflow);
        }
    }
    Err(WireError::Truncated)
}

fn take(buf: &[u8], n: usize) -> Result<&[u8], WireError> {
    buf.get(..n).ok_or(WireError::Truncated)
}

/// Writes the payload of a direct scalar without its tag.
pub(crate) fn put_scalar(out: &mut Vec<u8>, value: &Value) {
    match *value {
        Value::Int32(v) => put_varint(out, v as i64 as u64),
        Value::Int64(v) => put_varint(out, v as u64),
        Value::Uint64(v) => put_varint(out, v),
        Value::Bool(v) => put_varint(out, v as u64),
        Value::Double(v) => out.extend_from_slice(&v.to_le_bytes()),
        Value::Float(v) => out.extend_from_slice(&v.to_le_bytes()),
        _ => unreachable!("not a direct scalar"),
    }
}

fn kind_matches(kind: ScalarKind, value: &Value) -> bool {
    value.kind() == Some(kind)
}

/// Encodes one field in TV or TLV layout. Repeated strings, bytes and
/// messages produce one TLV per element.
pub fn encode_field(
    desc: &FieldDescriptor,
    value: &Value,
    table: &SchemaTable,
) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::new();
    put_field(&mut out, desc, value, table, 0)?;
    Ok(out)
}

fn put_field(
    out: &mut Vec<u8>,
    desc: &FieldDescriptor,
    value: &Value,
    table: &SchemaTable,
    depth: usize,
) -> Result<(), WireError> {
    let mismatch = WireError::TypeMismatch {
        number: desc.number,
    };
    if desc.is_repeated() {
        let Value::Repeated(items) = value else {
            return Err(mismatch);
        };
        if items.iter().any(|v| !kind_matches(desc.kind, v)) {
            return Err(mismatch);
        }
        if desc.is_packed() {
            let mut payload = Vec::new();
            for item in items {
                put_scalar(&mut payload, item);
            }
            FieldTag::new(desc.number, WireType::LenDelimited).encode(out);
            put_varint(out, payload.len() as u64);
            out.extend_from_slice(&payload);
        } else {
            for item in items {
                put_single(out, desc, item, table, depth)?;
            }
        }
        return Ok(());
    }
    if !kind_matches(desc.kind, value) {
        return Err(mismatch);
    }
    put_single(out, desc, value, table, depth)
}

fn put_single(
    out: &mut Vec<u8>,
    desc: &FieldDescriptor,
    value: &Value,
    table: &SchemaTable,
    depth: usize,
) -> Result<(), WireError> {
    FieldTag::new(desc.number, desc.kind.wire_type()).encode(out);
    match value {
        Value::String(s) => {
            put_varint(out, s.len() as u64);
            out.extend_from_slice(s.as_bytes());
        }
        Value::Bytes(b) => {
            put_varint(out, b.len() as u64);
            out.extend_from_slice(b);
        }
        Value::Message(m) => {
            let payload = encode_message_at(m, table, depth + 1)?;
            put_varint(out, payload.len() as u64);
            out.extend_from_slice(&payload);
        }
        scalar => put_scalar(out, scalar),
    }
    Ok(())
}

/// Encodes a whole message, fields in ascending number order.
pub fn encode_message(msg: &Message, table: &SchemaTable) -> Result<Vec<u8>, WireError> {
    encode_message_at(msg, table, 0)
}

fn encode_message_at(
    msg: &Message,
    table: &SchemaTable,
    depth: usize,
) -> Result<Vec<u8>, WireError> {
    if depth >= MAX_DECODE_DEPTH {
        return Err(WireError::DepthExceeded(MAX_DECODE_DEPTH));
    }
    let schema = table
        .get(msg.class_id)
        .ok_or(WireError::UnknownClass(msg.class_id))?;
    let mut out = Vec::new();
    for (&number, value) in &msg.fields {
        let desc = schema
            .field(number)
            .ok_or(WireError::TypeMismatch { number })?;
        put_field(&mut out, desc, value, table, depth)?;
    }
    Ok(out)
}

/// Size of the RPC header that precedes every message payload.
pub const RPC_HEADER_BYTES: usize = 8;

/// Message framing: class id, a reserved half-word and the payload length,
/// all little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RpcHeader {
    pub class_id: ClassId,
    pub msg_len: u32,
}

impl RpcHeader {
    pub fn encode(&self) -> [u8; RPC_HEADER_BYTES] {
        let mut b = [0u8; RPC_HEADER_BYTES];
        b[..2].copy_from_slice(&self.class_id.to_le_bytes());
        b[4..].copy_from_slice(&self.msg_len.to_le_bytes());
        b
    }

    pub fn decode(buf: &[u8]) -> Result<RpcHeader, WireError> {
        let b = take(buf, RPC_HEADER_BYTES)?;
        Ok(RpcHeader {
            class_id: u16::from_le_bytes([b[0], b[1]]),
            msg_len: u32::from_le_bytes(b[4..8].try_into().unwrap()),
        })
    }
}

/// Result of decoding one field.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded<'a> {
    /// A scalar, string or bytes value. For a repeated field this is one
    /// element sent unpacked.
    Value(Value),
    /// All elements of one packed run.
    Packed(Vec<Value>),
    /// The still-encoded payload of a sub-message.
    Message(&'a [u8]),
    /// A field number the schema does not declare; skipped.
    Unknown,
}

/// Reads one scalar of `kind` from `buf`, returning it and bytes consumed.
pub(crate) fn read_scalar(
    buf: &[u8],
    kind: ScalarKind,
    number: u32,
) -> Result<(Value, usize), WireError> {
    match kind {
        ScalarKind::Double => {
            let b = take(buf, 8)?;
            Ok((Value::Double(f64::from_le_bytes(b.try_into().unwrap())), 8))
        }
        ScalarKind::Float => {
            let b = take(buf, 4)?;
            Ok((Value::Float(f32::from_le_bytes(b.try_into().unwrap())), 4))
        }
        ScalarKind::Int32 | ScalarKind::Int64 | ScalarKind::Uint64 | ScalarKind::Bool => {
            let (raw, n) = decode_varint(buf)?;
            let v = Value::from_scalar_bits(kind, raw).expect("direct kind");
            Ok((v, n))
        }
        _ => Err(WireError::TypeMismatch { number }),
    }
}

fn skip_value(buf: &[u8], wire_type: WireType) -> Result<usize, WireError> {
    match wire_type {
        WireType::Varint => decode_varint(buf).map(|(_, n)| n),
        WireType::Fixed64 => take(buf, 8).map(|_| 8),
        WireType::Fixed32 => take(buf, 4).map(|_| 4),
        WireType::LenDelimited => {
            let (len, n) = decode_varint(buf)?;
            let len = usize::try_from(len).map_err(|_| WireError::Truncated)?;
            take(&buf[n..], len)?;
            Ok(n + len)
        }
    }
}

/// Decodes the field starting at the front of `buf`.
///
/// Never reads past `buf`; unknown field numbers are skipped according to
/// their wire type.
pub fn decode_field<'a>(
    buf: &'a [u8],
    schema: &MessageSchema,
) -> Result<(u32, Decoded<'a>, usize), WireError> {
    let (tag, tag_len) = FieldTag::decode(buf)?;
    let number = tag.field_number;
    let rest = &buf[tag_len..];
    let Some(desc) = schema.field(number) else {
        let n = skip_value(rest, tag.wire_type)?;
        return Ok((number, Decoded::Unknown, tag_len + n));
    };
    let wrong_type = WireError::WireTypeMismatch {
        number,
        found: tag.wire_type,
    };

    // Repeated scalars may arrive packed or as individual TV entries.
    if desc.is_packed() && tag.wire_type == desc.kind.wire_type() {
        let (v, n) = read_scalar(rest, desc.kind, number)?;
        return Ok((number, Decoded::Value(v), tag_len + n));
    }
    if tag.wire_type != desc.wire_type() {
        return Err(wrong_type);
    }
    if tag.wire_type != WireType::LenDelimited {
        let (v, n) = read_scalar(rest, desc.kind, number)?;
        return Ok((number, Decoded::Value(v), tag_len + n));
    }

    let (len, len_len) = decode_varint(rest)?;
    let len = usize::try_from(len).map_err(|_| WireError::Truncated)?;
    let payload = take(&rest[len_len..], len)?;
    let consumed = tag_len + len_len + len;
    let decoded = if desc.is_packed() {
        let mut items = Vec::new();
        let mut pos = 0;
        while pos < payload.len() {
            let (v, n) = read_scalar(&payload[pos..], desc.kind, number)?;
            items.push(v);
            pos += n;
        }
        Decoded::Packed(items)
    } else {
        match desc.kind {
            ScalarKind::String => {
                let s =
                    std::str::from_utf8(payload).map_err(|_| WireError::InvalidUtf8 { number })?;
                Decoded::Value(Value::String(s.to_owned()))
            }
            ScalarKind::Bytes => Decoded::Value(Value::Bytes(payload.to_vec())),
            ScalarKind::Message(_) => Decoded::Message(payload),
            _ => return Err(wrong_type),
        }
    };
    Ok((number, decoded, consumed))
}

/// Decodes a whole message of class `class_id`.
pub fn decode_message(
    buf: &[u8],
    class_id: ClassId,
    table: &SchemaTable,
) -> Result<Message, WireError> {
    decode_message_at(buf, class_id, table, 0)
}

fn decode_message_at(
    buf: &[u8],
    class_id: ClassId,
    table: &SchemaTable,
    depth: usize,
) -> Result<Message, WireError> {
    if depth >= MAX_DECODE_DEPTH {
        return Err(WireError::DepthExceeded(MAX_DECODE_DEPTH));
    }
    let schema = table
        .get(class_id)
        .ok_or(WireError::UnknownClass(class_id))?;
    let mut msg = Message::new(class_id);
    let mut pos = 0;
    while pos < buf.len() {
        let (number, decoded, n) = decode_field(&buf[pos..], schema)?;
        pos += n;
        let value = match decoded {
            Decoded::Unknown => continue,
            Decoded::Value(v) => v,
            Decoded::Packed(items) => Value::Repeated(items),
            Decoded::Message(payload) => {
                let ScalarKind::Message(child) = schema.field(number).unwrap().kind else {
                    unreachable!()
                };
                Value::Message(decode_message_at(payload, child, table, depth + 1)?)
            }
        };
        let desc = schema.field(number).unwrap();
        if desc.is_repeated() {
            let slot = msg
                .fields
                .entry(number)
                .or_insert_with(|| Value::Repeated(Vec::new()));
            let Value::Repeated(items) = slot else {
                unreachable!()
            };
            match value {
                Value::Repeated(more) => items.extend(more),
                v => items.push(v),
            }
        } else {
            msg.fields.insert(number, value);
        }
    }
    // An empty packed run leaves an empty list behind; canonicalize it away.
    msg.fields
        .retain(|_, v| !matches!(v, Value::Repeated(items) if items.is_empty()));
    Ok(msg)
}
