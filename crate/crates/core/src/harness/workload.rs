//! Synthetic workloads: a chain-shaped schema plus a seeded stream of
//! messages.
//!
//! Workload spec file (TOML, every key optional):
//!
//! ```toml
//! requests = 10
//! depth_min = 1              # nesting depth of each message, uniform
//! depth_max = 3
//! fields_min = 2             # data fields set per record, uniform
//! fields_max = 6
//! field_size_min = 16        # bytes per string/bytes/repeated field, uniform
//! field_size_max = 1024
//! small_fields = true        # clamp field sizes to 1 KB
//! acc_fraction = 0.0         # share of data fields labeled Acc
//! repeated_probability = 0.1 # share of data fields declared repeated
//! ```

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::schema::{compile_source, ClassId, FieldDescriptor, ScalarKind, SchemaTable};
use crate::value::{Message, Value};

use super::HarnessError;

/// Largest field in the small-field regime.
pub const SMALL_FIELD_LIMIT: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub requests: usize,
    pub depth_min: usize,
    pub depth_max: usize,
    pub fields_min: usize,
    pub fields_max: usize,
    pub field_size_min: u64,
    pub field_size_max: u64,
    pub small_fields: bool,
    pub acc_fraction: f64,
    pub repeated_probability: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            requests: 10,
            depth_min: 1,
            depth_max: 3,
            fields_min: 2,
            fields_max: 6,
            field_size_min: 16,
            field_size_max: 1024,
            small_fields: true,
            acc_fraction: 0.0,
            repeated_probability: 0.1,
        }
    }
}

impl WorkloadSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: WorkloadSpec =
            toml::from_str(text).map_err(|e| HarnessError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.to_owned()));
        if self.depth_min == 0 || self.depth_min > self.depth_max || self.depth_max > 32 {
            return bad("need 1 <= depth_min <= depth_max <= 32");
        }
        if self.fields_min > self.fields_max || self.fields_max == 0 || self.fields_max > 200 {
            return bad("need fields_min <= fields_max and 1 <= fields_max <= 200");
        }
        if self.field_size_min == 0
            || self.field_size_min > self.field_size_max
            || self.field_size_max > 16 << 20
        {
            return bad("need 1 <= field_size_min <= field_size_max <= 16 MiB");
        }
        if self.small_fields && self.field_size_min > SMALL_FIELD_LIMIT {
            return bad("small_fields needs field_size_min <= 1024");
        }
        if !(0.0..=1.0).contains(&self.acc_fraction)
            || !(0.0..=1.0).contains(&self.repeated_probability)
        {
            return bad("fractions must be within [0, 1]");
        }
        if self.requests > 1_000_000 {
            return bad("at most 1000000 requests");
        }
        Ok(())
    }

    fn size_range(&self) -> (u64, u64) {
        let max = if self.small_fields {
            self.field_size_max.min(SMALL_FIELD_LIMIT)
        } else {
            self.field_size_max
        };
        (self.field_size_min, max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub messages: usize,
    /// Mean bytes per string, bytes or repeated field.
    pub mean_field_size: f64,
    pub mean_depth: f64,
    pub total_field_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct Workload {
    /// Schema source, when the schema was generated.
    pub proto: Option<String>,
    pub table: SchemaTable,
    pub root: ClassId,
    pub messages: Vec<Message>,
    pub stats: WorkloadStats,
}

/// Proto source of the chain schema for `spec`: classes `L0 .. L{d-1}`,
/// each with an `id`, `fields_max` data fields and a link to the next
/// level.
pub fn generate_schema_source(spec: &WorkloadSpec, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c4e_3a11);
    let mut out = String::from("syntax = \"proto3\";\n");
    for level in 0..spec.depth_max {
        out.push_str(&format!("\nmessage L{level} {{\n  int64 id = 1;\n"));
        for i in 0..spec.fields_max {
            let number = i + 2;
            let repeated = rng.gen_bool(spec.repeated_probability);
            let ty = if repeated {
                ["repeated int64", "repeated string", "repeated bytes"][rng.gen_range(0..3)]
            } else {
                ["string", "bytes"][rng.gen_range(0..2)]
            };
            let acc = if rng.gen_bool(spec.acc_fraction) {
                " [Acc]"
            } else {
                ""
            };
            out.push_str(&format!("  {ty} f{number} = {number}{acc};\n"));
        }
        if level + 1 < spec.depth_max {
            let number = spec.fields_max + 2;
            out.push_str(&format!("  L{} next = {number};\n", level + 1));
        }
        out.push_str("}\n");
    }
    out
}

/// Generates the chain schema and `spec.requests` messages rooted at `L0`.
pub fn generate_workload(spec: &WorkloadSpec, seed: u64) -> Result<Workload, HarnessError> {
    spec.validate()?;
    let proto = generate_schema_source(spec, seed);
    let table = compile_source(&proto)
        .map_err(|e| HarnessError::InvalidSpec(format!("generated schema: {e}")))?
        .table;
    let root = table.by_name("L0").map(|c| c.class_id).unwrap_or(1);
    let mut w = generate_messages(spec, seed, &table, root)?;
    w.proto = Some(proto);
    Ok(w)
}

/// Generates messages for an existing schema. Depth and field counts are
/// met as far as the schema allows.
pub fn generate_messages(
    spec: &WorkloadSpec,
    seed: u64,
    table: &SchemaTable,
    root: ClassId,
) -> Result<Workload, HarnessError> {
    spec.validate()?;
    if table.get(root).is_none() {
        return Err(HarnessError::InvalidSpec(format!(
            "root class {root} not in schema"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Gen {
        rng: &mut rng,
        spec,
        table,
        sizes: Vec::new(),
    };
    let mut messages = Vec::with_capacity(spec.requests);
    let mut depth_sum = 0usize;
    for _ in 0..spec.requests {
        let depth = g.rng.gen_range(spec.depth_min..=spec.depth_max);
        let m = g.message(root, depth);
        depth_sum += m.depth();
        messages.push(m);
    }
    let total: u64 = g.sizes.iter().sum();
    let stats = WorkloadStats {
        messages: messages.len(),
        mean_field_size: if g.sizes.is_empty() {
            0.0
        } else {
            total as f64 / g.sizes.len() as f64
        },
        mean_depth: if messages.is_empty() {
            0.0
        } else {
            depth_sum as f64 / messages.len() as f64
        },
        total_field_bytes: total,
    };
    Ok(Workload {
        proto: None,
        table: table.clone(),
        root,
        messages,
        stats,
    })
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    spec: &'a WorkloadSpec,
    table: &'a SchemaTable,
    sizes: Vec<u64>,
}

impl Gen<'_> {
    fn size(&mut self) -> u64 {
        let (lo, hi) = self.spec.size_range();
        self.rng.gen_range(lo..=hi)
    }

    fn text(&mut self, n: u64) -> String {
        (0..n)
            .map(|_| self.rng.gen_range(b'a'..=b'z') as char)
            .collect()
    }

    fn blob(&mut self, n: u64) -> Vec<u8> {
        (0..n).map(|_| self.rng.gen()).collect()
    }

    fn message(&mut self, class: ClassId, depth: usize) -> Message {
        let schema = self.table.get(class).expect("class checked by caller");
        let mut msg = Message::new(class);
        let (children, mut data): (Vec<&FieldDescriptor>, Vec<&FieldDescriptor>) = schema
            .fields
            .iter()
            .partition(|f| matches!(f.kind, ScalarKind::Message(_)));
        data.shuffle(self.rng);
        let n = self
            .rng
            .gen_range(self.spec.fields_min..=self.spec.fields_max)
            .min(data.len());
        for f in data.into_iter().take(n) {
            let v = self.value(f);
            msg.set(f.number, v);
        }
        if depth > 1 {
            let pick = children
                .iter()
                .find(|f| !f.is_repeated())
                .or_else(|| children.first())
                .copied();
            if let Some(f) = pick {
                let ScalarKind::Message(child) = f.kind else {
                    unreachable!()
                };
                let m = Value::Message(self.message(child, depth - 1));
                msg.set(
                    f.number,
                    if f.is_repeated() {
                        Value::Repeated(vec![m])
                    } else {
                        m
                    },
                );
            }
        }
        msg
    }

    fn value(&mut self, f: &FieldDescriptor) -> Value {
        if f.is_repeated() {
            let size = self.size();
            self.sizes.push(size);
            if f.is_packed() {
                let count = (size / 8).clamp(1, 512);
                return Value::Repeated((0..count).map(|_| self.scalar(f.kind)).collect());
            }
            let count = self.rng.gen_range(1..=4u64).min(size);
            let each = size / count;
            return Value::Repeated((0..count).map(|_| self.single(f.kind, each)).collect());
        }
        if f.kind.is_direct() {
            return self.scalar(f.kind);
        }
        let size = self.size();
        self.sizes.push(size);
        self.single(f.kind, size)
    }

    fn single(&mut self, kind: ScalarKind, size: u64) -> Value {
        match kind {
            ScalarKind::String => Value::String(self.text(size)),
            ScalarKind::Message(c) => Value::Message(Message::new(c)),
            _ => Value::Bytes(self.blob(size)),
        }
    }

    fn scalar(&mut self, kind: ScalarKind) -> Value {
        match kind {
            ScalarKind::Int32 => Value::Int32(self.rng.gen()),
            ScalarKind::Int64 => Value::Int64(self.rng.gen()),
            ScalarKind::Uint64 => Value::Uint64(self.rng.gen()),
            ScalarKind::Bool => Value::Bool(self.rng.gen()),
            ScalarKind::Double => Value::Double(self.rng.gen_range(-1e6..1e6)),
            _ => Value::Float(self.rng.gen_range(-1e3f32..1e3)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ref_decode, ref_encode};

    #[test]
    fn deterministic() {
        let spec = WorkloadSpec::default();
        let a = generate_workload(&spec, 7).unwrap();
        let b = generate_workload(&spec, 7).unwrap();
        assert_eq!(a.proto, b.proto);
        assert_eq!(a.messages, b.messages);
        assert_ne!(a.messages, generate_workload(&spec, 8).unwrap().messages);
    }

    #[test]
    fn messages_fit_schema() {
        let spec = WorkloadSpec {
            repeated_probability: 0.5,
            acc_fraction: 0.3,
            depth_max: 4,
            ..Default::default()
        };
        let w = generate_workload(&spec, 3).unwrap();
        for m in &w.messages {
            assert_eq!(&ref_decode(&ref_encode(m), w.root, &w.table).unwrap(), m);
            assert!((1..=4).contains(&m.depth()));
        }
        assert!(w.stats.mean_field_size <= 1024.0);
    }

    #[test]
    fn flat_depth() {
        let spec = WorkloadSpec {
            depth_min: 1,
            depth_max: 1,
            ..Default::default()
        };
        let w = generate_workload(&spec, 1).unwrap();
        assert!(w.messages.iter().all(|m| m.depth() == 1));
        assert_eq!(w.stats.mean_depth, 1.0);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(WorkloadSpec::from_toml("depth_min = 3\ndepth_max = 2\n").is_err());
        assert!(WorkloadSpec::from_toml("colour = 1\n").is_err());
        assert!(WorkloadSpec::from_toml("acc_fraction = 1.5\n").is_err());
        assert_eq!(
            WorkloadSpec::from_toml("").unwrap(),
            WorkloadSpec::default()
        );
    }
}
