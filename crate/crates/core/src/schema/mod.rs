//! Message schemas: the proto3-dialect parser, the compiler that assigns
//! class ids, and the binary schema-table image loaded by the device.

mod compile;
mod image;
mod parser;
mod render;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use compile::{compile, compile_source, CompileError, CompiledSchema};
pub use image::{
    load_schema_table, serialize_schema_table, ImageError, IMAGE_MAGIC, IMAGE_VERSION,
};
pub use parser::{parse_proto, FieldDecl, MessageDecl, ParseError, ProtoFile, TypeRef};
pub use render::{render_proto, render_report};

use crate::wire::WireType;

/// Message class identifier carried in the RPC header.
pub type ClassId = u16;

/// Maximum number of fields in one message class.
pub const MAX_FIELDS_PER_MESSAGE: usize = 255;
/// Largest legal protobuf field number.
pub const MAX_FIELD_NUMBER: u32 = (1 << 29) - 1;

/// Declared type of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarKind {
    Int32,
    Int64,
    Uint64,
    Double,
    Float,
    Bool,
    String,
    Bytes,
    Message(ClassId),
}

impl ScalarKind {
    /// Wire type of a single (unpacked) value of this kind.
    pub fn wire_type(self) -> WireType {
        match self {
            ScalarKind::Int32 | ScalarKind::Int64 | ScalarKind::Uint64 | ScalarKind::Bool => {
                WireType::Varint
            }
            ScalarKind::Double => WireType::Fixed64,
            ScalarKind::Float => WireType::Fixed32,
            ScalarKind::String | ScalarKind::Bytes | ScalarKind::Message(_) => {
                WireType::LenDelimited
            }
        }
    }

    /// True for kinds whose value lives inline in the parent object.
    pub fn is_direct(self) -> bool {
        !matches!(
            self,
            ScalarKind::String | ScalarKind::Bytes | ScalarKind::Message(_)
        )
    }

    pub fn proto_name(self) -> &'static str {
        match self {
            ScalarKind::Int32 => "int32",
            ScalarKind::Int64 => "int64",
            ScalarKind::Uint64 => "uint64",
            ScalarKind::Double => "double",
            ScalarKind::Float => "float",
            ScalarKind::Bool => "bool",
            ScalarKind::String => "string",
            ScalarKind::Bytes => "bytes",
            ScalarKind::Message(_) => "message",
        }
    }

    pub fn from_proto_name(name: &str) -> Option<ScalarKind> {
        Some(match name {
            "int32" => ScalarKind::Int32,
            "int64" => ScalarKind::Int64,
            "uint64" => ScalarKind::Uint64,
            "double" => ScalarKind::Double,
            "float" => ScalarKind::Float,
            "bool" => ScalarKind::Bool,
            "string" => ScalarKind::String,
            "bytes" => ScalarKind::Bytes,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Singular,
    Repeated,
}

/// Where a field's value lives relative to its parent object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Addressing {
    /// Stored inside the parent's memory.
    Direct,
    /// Stored behind a pointer held by the parent.
    Dereference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub name: String,
    pub number: u32,
    pub kind: ScalarKind,
    pub label: Label,
    /// Placement bit: true places the deserialized value in accelerator
    /// memory. Always false for direct fields.
    pub acc: bool,
}

impl FieldDescriptor {
    pub fn addressing(&self) -> Addressing {
        if self.kind.is_direct() && self.label == Label::Singular {
            Addressing::Direct
        } else {
            Addressing::Dereference
        }
    }

    pub fn is_repeated(&self) -> bool {
        self.label == Label::Repeated
    }

    /// Repeated direct scalars travel as one packed length-delimited field.
    pub fn is_packed(&self) -> bool {
        self.is_repeated() && self.kind.is_direct()
    }

    /// Wire type this field is encoded with.
    pub fn wire_type(&self) -> WireType {
        if self.is_packed() {
            WireType::LenDelimited
        } else {
            self.kind.wire_type()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSchema {
    pub class_id: ClassId,
    pub name: String,
    /// Sorted by ascending field number.
    pub fields: Vec<FieldDescriptor>,
}

impl MessageSchema {
    pub fn field(&self, number: u32) -> Option<&FieldDescriptor> {
        self.slot_index(number).map(|i| &self.fields[i])
    }

    pub fn field_by_name(&self, name: &str) -> Option<&FieldDescriptor> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Position of the field in the object layout.
    pub fn slot_index(&self, number: u32) -> Option<usize> {
        self.fields.binary_search_by_key(&number, |f| f.number).ok()
    }
}

/// Device-resident table of compiled message classes.
///
/// Placement bits are changed after load only by the runtime field-update
/// protocol (see [`crate::field_update`]).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemaTable {
    classes: BTreeMap<ClassId, MessageSchema>,
}

impl SchemaTable {
    pub(crate) fn from_classes(classes: impl IntoIterator<Item = MessageSchema>) -> Self {
        SchemaTable {
            classes: classes.into_iter().map(|c| (c.class_id, c)).collect(),
        }
    }

    pub fn get(&self, class_id: ClassId) -> Option<&MessageSchema> {
        self.classes.get(&class_id)
    }

    pub fn by_name(&self, name: &str) -> Option<&MessageSchema> {
        self.classes.values().find(|c| c.name == name)
    }

    pub fn classes(&self) -> impl Iterator<Item = &MessageSchema> {
        self.classes.values()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Current placement bit of a field; false for unknown fields.
    pub fn placement(&self, class_id: ClassId, number: u32) -> bool {
        self.get(class_id)
            .and_then(|c| c.field(number))
            .map(|f| f.acc)
            .unwrap_or(false)
    }

    pub(crate) fn set_placement(&mut self, class_id: ClassId, number: u32, acc: bool) -> bool {
        let Some(field) = self
            .classes
            .get_mut(&class_id)
            .and_then(|c| c.fields.iter_mut().find(|f| f.number == number))
        else {
            return false;
        };
        if field.addressing() != Addressing::Dereference {
            return false;
        }
        field.acc = acc;
        true
    }

    /// A copy of this table with every dereference field's placement bit
    /// chosen by `pick(class, field)`. Direct fields keep no bit.
    pub fn relabeled(
        &self,
        mut pick: impl FnMut(&MessageSchema, &FieldDescriptor) -> bool,
    ) -> Self {
        let mut out = self.clone();
        for class in out.classes.values_mut() {
            let snapshot = class.clone();
            for (field, orig) in class.fields.iter_mut().zip(&snapshot.fields) {
                field.acc = orig.addressing() == Addressing::Dereference && pick(&snapshot, orig);
            }
        }
        out
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarKind::Message(id) => write!(f, "message#{id}"),
            k => f.write_str(k.proto_name()),
        }
    }
}
