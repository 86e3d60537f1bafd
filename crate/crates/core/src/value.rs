//! Logical message values.
//!
//! A [`Message`] is the location-free view of an RPC message: typed field
//! values keyed by field number. It is what the workload generator emits,
//! what the reference codec encodes and decodes, and what a deserialized
//! object graph reads back as.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::schema::{ClassId, ScalarKind};

/// One field value.
///
/// `Repeated` holds elements of a single kind and is never empty in a
/// canonical message: an empty repeated field has no wire representation,
/// so it is modeled as an absent field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int32(i32),
    Int64(i64),
    Uint64(u64),
    Bool(bool),
    Double(f64),
    Float(f32),
    String(String),
    Bytes(Vec<u8>),
    Message(Message),
    Repeated(Vec<Value>),
}

impl Value {
    /// Scalar kind of this value, or of its elements for `Repeated`.
    pub fn kind(&self) -> Option<ScalarKind> {
        Some(match self {
            Value::Int32(_) => ScalarKind::Int32,
            Value::Int64(_) => ScalarKind::Int64,
            Value::Uint64(_) => ScalarKind::Uint64,
            Value::Bool(_) => ScalarKind::Bool,
            Value::Double(_) => ScalarKind::Double,
            Value::Float(_) => ScalarKind::Float,
            Value::String(_) => ScalarKind::String,
            Value::Bytes(_) => ScalarKind::Bytes,
            Value::Message(m) => ScalarKind::Message(m.class_id),
            Value::Repeated(items) => return items.first().and_then(Value::kind),
        })
    }

    /// Raw 64-bit image of a direct scalar, as stored inline in an object slot.
    pub fn scalar_bits(&self) -> Option<u64> {
        Some(match *self {
            Value::Int32(v) => v as i64 as u64,
            Value::Int64(v) => v as u64,
            Value::Uint64(v) => v,
            Value::Bool(v) => v as u64,
            Value::Double(v) => v.to_bits(),
            Value::Float(v) => v.to_bits() as u64,
            _ => return None,
        })
    }

    /// Inverse of [`Value::scalar_bits`].
    pub fn from_scalar_bits(kind: ScalarKind, bits: u64) -> Option<Value> {
        Some(match kind {
            ScalarKind::Int32 => Value::Int32(bits as i64 as i32),
            ScalarKind::Int64 => Value::Int64(bits as i64),
            ScalarKind::Uint64 => Value::Uint64(bits),
            ScalarKind::Bool => Value::Bool(bits != 0),
            ScalarKind::Double => Value::Double(f64::from_bits(bits)),
            ScalarKind::Float => Value::Float(f32::from_bits(bits as u32)),
            _ => return None,
        })
    }
}

/// A message instance of one class.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Message {
    pub class_id: ClassId,
    pub fields: BTreeMap<u32, Value>,
}

impl Message {
    pub fn new(class_id: ClassId) -> Self {
        Message {
            class_id,
            fields: BTreeMap::new(),
        }
    }

    /// Builder-style setter.
    pub fn with(mut self, number: u32, value: Value) -> Self {
        self.set(number, value);
        self
    }

    /// Sets a field. An empty `Repeated` clears the field.
    pub fn set(&mut self, number: u32, value: Value) {
        match value {
            Value::Repeated(ref items) if items.is_empty() => {
                self.fields.remove(&number);
            }
            v => {
                self.fields.insert(number, v);
            }
        }
    }

    pub fn get(&self, number: u32) -> Option<&Value> {
        self.fields.get(&number)
    }

    /// Nesting depth: 1 for a message without sub-messages.
    pub fn depth(&self) -> usize {
        1 + self.fields.values().map(value_depth).max().unwrap_or(0)
    }

    /// Number of tags the wire encoding of this message emits, counted
    /// recursively. Packed repeated scalars count once; repeated strings,
    /// bytes and messages count once per element.
    pub fn field_count(&self) -> usize {
        self.fields.values().map(value_field_count).sum()
    }
}

fn value_depth(v: &Value) -> usize {
    match v {
        Value::Message(m) => m.depth(),
        Value::Repeated(items) => items.iter().map(value_depth).max().unwrap_or(0),
        _ => 0,
    }
}

fn value_field_count(v: &Value) -> usize {
    match v {
        Value::Message(m) => 1 + m.field_count(),
        Value::Repeated(items) => match items.first() {
            Some(first) if first.scalar_bits().is_some() => 1,
            _ => items.iter().map(value_field_count).sum(),
        },
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_bits_round_trip() {
        let cases = [
            (ScalarKind::Int32, Value::Int32(-5)),
            (ScalarKind::Int64, Value::Int64(i64::MIN)),
            (ScalarKind::Uint64, Value::Uint64(u64::MAX)),
            (ScalarKind::Bool, Value::Bool(true)),
            (ScalarKind::Double, Value::Double(-1.5)),
            (ScalarKind::Float, Value::Float(3.25)),
        ];
        for (kind, v) in cases {
            let bits = v.scalar_bits().unwrap();
            assert_eq!(Value::from_scalar_bits(kind, bits), Some(v));
        }
    }

    #[test]
    fn empty_repeated_is_absent() {
        let m = Message::new(1).with(3, Value::Repeated(vec![]));
        assert!(m.fields.is_empty());
    }

    #[test]
    fn depth_and_field_count() {
        let inner = Message::new(2).with(1, Value::Int64(1));
        let m = Message::new(1)
            .with(1, Value::Message(inner.clone()))
            .with(2, Value::Repeated(vec![Value::Int32(1), Value::Int32(2)]))
            .with(
                3,
                Value::Repeated(vec![Value::Message(inner.clone()), Value::Message(inner)]),
            );
        assert_eq!(m.depth(), 2);
        // 1 sub-message tag + its field, 1 packed tag, 2 repeated message tags + 2 fields
        assert_eq!(m.field_count(), 2 + 1 + 4);
    }
}
