//! Simulation reports: one row per request plus aggregates and criteria.
//!
//! CSV columns are the fields of [`Row`] in declaration order. All times
//! are simulated nanoseconds.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::link::TxnLedger;
use crate::ser::CpuCycleProxy;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Row {
    pub request: usize,
    /// What the row measures within its report, e.g. `nested/accel-only`.
    pub label: String,
    pub strategy: String,
    pub link_latency_ns: f64,
    pub wire_bytes: u64,
    pub deser_ns: f64,
    pub host_ns: f64,
    pub device_ns: f64,
    pub link_ns: f64,
    pub elapsed_ns: f64,
    pub dma_read_count: u64,
    pub dma_read_bytes: u64,
    pub dma_write_count: u64,
    pub dma_write_bytes: u64,
    pub mmio_count: u64,
    pub mmio_bytes: u64,
    pub cpu_copy_bytes: u64,
    pub engine_copy_bytes: u64,
    pub encode_ops_on_cpu: u64,
    pub fields_visited: u64,
    pub field_moves: u64,
}

impl Row {
    pub fn set_ledger(&mut self, l: &TxnLedger) {
        self.dma_read_count = l.dma_read.count;
        self.dma_read_bytes = l.dma_read.bytes;
        self.dma_write_count = l.dma_write.count;
        self.dma_write_bytes = l.dma_write.bytes;
        self.mmio_count = l.mmio_write.count;
        self.mmio_bytes = l.mmio_write.bytes;
    }

    pub fn set_proxy(&mut self, p: &CpuCycleProxy) {
        self.cpu_copy_bytes = p.bytes_copied_by_cpu;
        self.engine_copy_bytes = p.bytes_copied_by_memcpy_engine;
        self.encode_ops_on_cpu = p.encode_ops_on_cpu;
        self.fields_visited = p.fields_visited;
    }

    pub fn link_bytes(&self) -> u64 {
        self.dma_read_bytes + self.dma_write_bytes + self.mmio_bytes
    }

    pub fn link_events(&self) -> u64 {
        self.dma_read_count + self.dma_write_count + self.mmio_count
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub requests: usize,
    pub total_elapsed_ns: f64,
    pub mean_elapsed_ns: f64,
    pub geomean_elapsed_ns: f64,
    /// Requests per simulated second when processed back to back.
    pub throughput_rps: f64,
    pub dma_read_bytes: u64,
    pub dma_write_bytes: u64,
    pub mmio_bytes: u64,
    pub link_events: u64,
}

impl Aggregate {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a Row>) -> Self {
        let mut a = Aggregate::default();
        let mut elapsed = Vec::new();
        for r in rows {
            a.requests += 1;
            a.total_elapsed_ns += r.elapsed_ns;
            a.dma_read_bytes += r.dma_read_bytes;
            a.dma_write_bytes += r.dma_write_bytes;
            a.mmio_bytes += r.mmio_bytes;
            a.link_events += r.link_events();
            elapsed.push(r.elapsed_ns);
        }
        if a.requests > 0 {
            a.mean_elapsed_ns = a.total_elapsed_ns / a.requests as f64;
            a.geomean_elapsed_ns = geomean(&elapsed);
        }
        if a.total_elapsed_ns > 0.0 {
            a.throughput_rps = a.requests as f64 * 1e9 / a.total_elapsed_ns;
        }
        a
    }
}

/// Geometric mean of positive values; 0 for an empty slice.
pub fn geomean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    /// Human-readable bound the value was checked against.
    pub bound: String,
}

impl Criterion {
    pub fn at_least(name: &str, value: f64, min: f64) -> Self {
        Criterion {
            name: name.to_owned(),
            passed: value >= min,
            value,
            bound: format!(">= {min}"),
        }
    }

    pub fn at_most(name: &str, value: f64, max: f64) -> Self {
        Criterion {
            name: name.to_owned(),
            passed: value <= max,
            value,
            bound: format!("<= {max}"),
        }
    }

    pub fn holds(name: &str, ok: bool, value: f64, bound: &str) -> Self {
        Criterion {
            name: name.to_owned(),
            passed: ok,
            value,
            bound: bound.to_owned(),
        }
    }

    pub fn line(&self, scenario: &str) -> String {
        format!(
            "{} {scenario}: {} = {} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            fmt_value(self.value),
            self.bound
        )
    }
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.4}")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub name: String,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    pub rows: Vec<Row>,
    pub aggregate: Aggregate,
    /// Aggregates over rows sharing a label.
    pub by_label: BTreeMap<String, Aggregate>,
    pub criteria: Vec<Criterion>,
}

impl SimReport {
    pub fn new(name: &str, seed: u64) -> Self {
        SimReport {
            name: name.to_owned(),
            seed,
            ..Default::default()
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_owned(), value.to_string());
    }

    /// Recomputes aggregates from the rows.
    pub fn finish(&mut self) {
        self.aggregate = Aggregate::from_rows(&self.rows);
        let mut labels: BTreeMap<String, Vec<&Row>> = BTreeMap::new();
        for r in &self.rows {
            labels.entry(r.label.clone()).or_default().push(r);
        }
        self.by_label = labels
            .into_iter()
            .map(|(k, rows)| (k, Aggregate::from_rows(rows)))
            .collect();
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.criteria.iter().map(|c| c.line(&self.name)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)
                .map_err(|e| HarnessError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
        Ok(())
    }
}
