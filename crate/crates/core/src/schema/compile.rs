use std::collections::HashMap;

use thiserror::Error;

use super::{
    parse_proto, Addressing, ClassId, FieldDescriptor, MessageSchema, ParseError, ProtoFile,
    ScalarKind, SchemaTable, TypeRef, MAX_FIELDS_PER_MESSAGE,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{message}.{field}: unresolved message type `{name}`")]
    UnresolvedReference {
        message: String,
        field: String,
        name: String,
    },
    #[error("{message}.{field}: `Acc` applies only to string, bytes, repeated and message fields")]
    AccOnDirectField { message: String, field: String },
    #[error("message {0} declares more than {MAX_FIELDS_PER_MESSAGE} fields")]
    TooManyFields(String),
    #[error("more than {} message classes", ClassId::MAX)]
    TooManyClasses,
}

/// Output of [`compile`]: the host-side descriptors and the device table.
///
/// The two agree field for field at compile time. The host copy keeps the
/// source annotations; the table's placement bits may later change at
/// runtime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledSchema {
    pub host: Vec<MessageSchema>,
    pub table: SchemaTable,
}

fn resolve<'a>(
    scope: &str,
    name: &str,
    package: Option<&str>,
    ids: &'a HashMap<String, ClassId>,
) -> Option<&'a ClassId> {
    let mut name = name.strip_prefix('.').unwrap_or(name);
    if let Some(pkg) = package {
        if let Some(rest) = name.strip_prefix(pkg).and_then(|r| r.strip_prefix('.')) {
            name = rest;
        }
    }
    // innermost scope first: A.B + C tries A.B.C, A.C, C
    let mut scope = scope;
    loop {
        let candidate = if scope.is_empty() {
            name.to_owned()
        } else {
            format!("{scope}.{name}")
        };
        if let Some(id) = ids.get(&candidate) {
            return Some(id);
        }
        if scope.is_empty() {
            return None;
        }
        scope = scope.rsplit_once('.').map(|(s, _)| s).unwrap_or("");
    }
}

/// Assigns class ids in declaration order starting at 1 and resolves all
/// message references.
pub fn compile(ast: &ProtoFile) -> Result<CompiledSchema, CompileError> {
    if ast.messages.len() > ClassId::MAX as usize {
        return Err(CompileError::TooManyClasses);
    }
    let ids: HashMap<String, ClassId> = ast
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| (m.name.clone(), (i + 1) as ClassId))
        .collect();

    let mut classes = Vec::with_capacity(ast.messages.len());
    for (i, decl) in ast.messages.iter().enumerate() {
        if decl.fields.len() > MAX_FIELDS_PER_MESSAGE {
            return Err(CompileError::TooManyFields(decl.name.clone()));
        }
        let mut fields = Vec::with_capacity(decl.fields.len());
        for f in &decl.fields {
            let kind = match &f.ty {
                TypeRef::Scalar(k) => *k,
                TypeRef::Named(name) => {
                    let id = resolve(&decl.name, name, ast.package.as_deref(), &ids).ok_or_else(
                        || CompileError::UnresolvedReference {
                            message: decl.name.clone(),
                            field: f.name.clone(),
                            name: name.clone(),
                        },
                    )?;
                    ScalarKind::Message(*id)
                }
            };
            let desc = FieldDescriptor {
                name: f.name.clone(),
                number: f.number,
                kind,
                label: f.label,
                acc: f.acc,
            };
            if desc.acc && desc.addressing() == Addressing::Direct {
                return Err(CompileError::AccOnDirectField {
                    message: decl.name.clone(),
                    field: f.name.clone(),
                });
            }
            fields.push(desc);
        }
        fields.sort_by_key(|f| f.number);
        classes.push(MessageSchema {
            class_id: (i + 1) as ClassId,
            name: decl.name.clone(),
            fields,
        });
    }
    Ok(CompiledSchema {
        table: SchemaTable::from_classes(classes.clone()),
        host: classes,
    })
}

/// Parses and compiles in one step.
pub fn compile_source(src: &str) -> Result<CompiledSchema, CompileError> {
    compile(&parse_proto(src)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const USER_PHOTO: &str = "
        message User { int64 id = 1; Photo avatar = 2; }
        message Photo { bytes image = 1 [Acc]; int64 size = 2; }
    ";

    #[test]
    fn user_photo_table() {
        let c = compile_source(USER_PHOTO).unwrap();
        assert_eq!(c.table.len(), 2);
        let photo = c.table.by_name("Photo").unwrap();
        assert_eq!(photo.class_id, 2);
        assert!(photo.field_by_name("image").unwrap().acc);
        assert!(!photo.field_by_name("size").unwrap().acc);
        let user = c.table.get(1).unwrap();
        assert_eq!(user.field(2).unwrap().kind, ScalarKind::Message(2));
        assert_eq!(c.host, c.table.classes().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn direct_fields_have_no_placement() {
        let c = compile_source("message M { int32 a = 1; double b = 2; bool c = 3; }").unwrap();
        assert!(c.table.get(1).unwrap().fields.iter().all(|f| !f.acc));
    }

    #[test]
    fn acc_on_direct_field_is_rejected() {
        assert_eq!(
            compile_source("message M { int64 x = 1 [Acc]; }"),
            Err(CompileError::AccOnDirectField {
                message: "M".into(),
                field: "x".into()
            })
        );
        // repeated scalars are dereference fields, so the label is legal
        assert!(compile_source("message M { repeated int64 x = 1 [Acc]; }").is_ok());
    }

    #[test]
    fn unresolved_reference() {
        assert!(matches!(
            compile_source("message M { Missing m = 1; }"),
            Err(CompileError::UnresolvedReference { .. })
        ));
    }

    #[test]
    fn scoped_and_recursive_references() {
        let c = compile_source(
            "package p; message A { message B { A back = 1; } B b = 1; .p.A self = 2; A.B again = 3; }",
        )
        .unwrap();
        let a = c.table.by_name("A").unwrap();
        assert_eq!(a.field(1).unwrap().kind, ScalarKind::Message(2));
        assert_eq!(a.field(2).unwrap().kind, ScalarKind::Message(1));
        assert_eq!(a.field(3).unwrap().kind, ScalarKind::Message(2));
        let b = c.table.by_name("A.B").unwrap();
        assert_eq!(b.field(1).unwrap().kind, ScalarKind::Message(1));
    }

    #[test]
    fn fields_sorted_by_number() {
        let c = compile_source("message M { int32 b = 5; int32 a = 2; }").unwrap();
        let numbers: Vec<u32> = c
            .table
            .get(1)
            .unwrap()
            .fields
            .iter()
            .map(|f| f.number)
            .collect();
        assert_eq!(numbers, vec![2, 5]);
    }
}
