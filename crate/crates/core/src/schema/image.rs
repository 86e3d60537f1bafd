//! Binary schema-table image.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "RPCT" | version u16 | class_count u16
//! per class:  class_id u16 | name_len u16 | name | field_count u8
//! per field:  number u32 | kind u8 | ref_class u16 | label u8 | acc u8 |
//!             name_len u16 | name
//! ```

use thiserror::Error;

use super::{ClassId, FieldDescriptor, Label, MessageSchema, ScalarKind, SchemaTable};

pub const IMAGE_MAGIC: [u8; 4] = *b"RPCT";
pub const IMAGE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("bad magic")]
    BadMagic,
    #[error("image version {found}, expected {IMAGE_VERSION}")]
    VersionMismatch { found: u16 },
    #[error("image truncated")]
    Truncated,
    #[error("corrupt image: {0}")]
    Corrupt(&'static str),
}

fn kind_code(kind: ScalarKind) -> (u8, u16) {
    match kind {
        ScalarKind::Int32 => (1, 0),
        ScalarKind::Int64 => (2, 0),
        ScalarKind::Uint64 => (3, 0),
        ScalarKind::Double => (4, 0),
        ScalarKind::Float => (5, 0),
        ScalarKind::Bool => (6, 0),
        ScalarKind::String => (7, 0),
        ScalarKind::Bytes => (8, 0),
        ScalarKind::Message(id) => (9, id),
    }
}

fn kind_from_code(code: u8, class: u16) -> Option<ScalarKind> {
    Some(match code {
        1 => ScalarKind::Int32,
        2 => ScalarKind::Int64,
        3 => ScalarKind::Uint64,
        4 => ScalarKind::Double,
        5 => ScalarKind::Float,
        6 => ScalarKind::Bool,
        7 => ScalarKind::String,
        8 => ScalarKind::Bytes,
        9 => ScalarKind::Message(class),
        _ => return None,
    })
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

pub fn serialize_schema_table(table: &SchemaTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGE_MAGIC);
    out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u16).to_le_bytes());
    for class in table.classes() {
        out.extend_from_slice(&class.class_id.to_le_bytes());
        put_name(&mut out, &class.name);
        out.push(class.fields.len() as u8);
        for f in &class.fields {
            let (code, class_ref) = kind_code(f.kind);
            out.extend_from_slice(&f.number.to_le_bytes());
            out.push(code);
            out.extend_from_slice(&class_ref.to_le_bytes());
            out.push(matches!(f.label, Label::Repeated) as u8);
            out.push(f.acc as u8);
            put_name(&mut out, &f.name);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], ImageError> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or(ImageError::Truncated)?;
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ImageError> {
        Ok(self.bytes(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ImageError> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ImageError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn name(&mut self) -> Result<String, ImageError> {
        let len = self.u16()? as usize;
        String::from_utf8(self.bytes(len)?.to_vec()).map_err(|_| ImageError::Corrupt("name"))
    }
}

pub fn load_schema_table(image: &[u8]) -> Result<SchemaTable, ImageError> {
    let mut r = Reader { buf: image, pos: 0 };
    if r.bytes(4).map_err(|_| ImageError::BadMagic)? != IMAGE_MAGIC {
        return Err(ImageError::BadMagic);
    }
    let version = r.u16()?;
    if version != IMAGE_VERSION {
        return Err(ImageError::VersionMismatch { found: version });
    }
    let count = r.u16()?;
    let mut classes: Vec<MessageSchema> = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let class_id: ClassId = r.u16()?;
        let name = r.name()?;
        let nfields = r.u8()?;
        let mut fields: Vec<FieldDescriptor> = Vec::with_capacity(nfields as usize);
        for _ in 0..nfields {
            let number = r.u32()?;
            let code = r.u8()?;
            let class_ref = r.u16()?;
            let label = match r.u8()? {
                0 => Label::Singular,
                1 => Label::Repeated,
                _ => return Err(ImageError::Corrupt("label")),
            };
            let acc = match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(ImageError::Corrupt("placement bit")),
            };
            let kind = kind_from_code(code, class_ref).ok_or(ImageError::Corrupt("kind"))?;
            let name = r.name()?;
            if fields.last().is_some_and(|p| p.number >= number) {
                return Err(ImageError::Corrupt("field order"));
            }
            fields.push(FieldDescriptor {
                name,
                number,
                kind,
                label,
                acc,
            });
        }
        if classes.iter().any(|c| c.class_id == class_id) {
            return Err(ImageError::Corrupt("duplicate class id"));
        }
        classes.push(MessageSchema {
            class_id,
            name,
            fields,
        });
    }
    if r.pos != image.len() {
        return Err(ImageError::Corrupt("trailing bytes"));
    }
    for c in &classes {
        for f in &c.fields {
            if let ScalarKind::Message(id) = f.kind {
                if !classes.iter().any(|k| k.class_id == id) {
                    return Err(ImageError::Corrupt("dangling class reference"));
                }
            }
        }
    }
    Ok(SchemaTable::from_classes(classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::compile_source;

    const SRC: &str = "
        message User { int64 id = 1; Photo avatar = 2; repeated string tags = 3 [acc = true]; }
        message Photo { bytes image = 1 [Acc]; int64 size = 2; }
    ";

    #[test]
    fn round_trip() {
        let table = compile_source(SRC).unwrap().table;
        let image = serialize_schema_table(&table);
        assert_eq!(load_schema_table(&image).unwrap(), table);
    }

    #[test]
    fn deterministic() {
        let a = serialize_schema_table(&compile_source(SRC).unwrap().table);
        let b = serialize_schema_table(&compile_source(SRC).unwrap().table);
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic_and_version() {
        let table = compile_source(SRC).unwrap().table;
        let mut image = serialize_schema_table(&table);
        image[0] = b'X';
        assert_eq!(load_schema_table(&image), Err(ImageError::BadMagic));
        let mut image = serialize_schema_table(&table);
        image[4] = 9;
        assert_eq!(
            load_schema_table(&image),
            Err(ImageError::VersionMismatch { found: 9 })
        );
        assert_eq!(load_schema_table(b"RP"), Err(ImageError::BadMagic));
    }

    #[test]
    fn acc_bits_match_compile_output() {
        let compiled = compile_source(SRC).unwrap();
        let loaded = load_schema_table(&serialize_schema_table(&compiled.table)).unwrap();
        for class in &compiled.host {
            for f in &class.fields {
                assert_eq!(loaded.placement(class.class_id, f.number), f.acc);
            }
        }
        assert!(loaded.placement(2, 1));
        assert!(loaded.placement(1, 3));
        assert!(!loaded.placement(1, 2));
    }

    #[test]
    fn truncated_images_are_rejected() {
        let image = serialize_schema_table(&compile_source(SRC).unwrap().table);
        for cut in 4..image.len() {
            assert!(load_schema_table(&image[..cut]).is_err(), "cut at {cut}");
        }
    }
}
