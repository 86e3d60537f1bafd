//! The per-request path: arrival, deserialization, host kernel, response
//! serialization, TX arena handoff.
//!
//! Requests are processed back to back; the transport on either side is
//! free. The host kernel is an authorization stub followed by an echo, so
//! the response is the request object itself.

use crate::deser::{release, DeserMode, Deserializer};
use crate::layout::read_back;
use crate::oracle::{ref_decode, ref_encode};
use crate::platform::{Platform, PlatformConfig};
use crate::ser::{serialize, SerializeOutcome, Strategy};
use crate::value::Message;
use crate::wire::RpcHeader;

use super::report::{Criterion, Row, SimReport};
use super::workload::Workload;
use super::HarnessError;

#[derive(Debug, Clone)]
pub struct RequestOutcome {
    pub row: Row,
    pub response: SerializeOutcome,
}

fn one(
    p: &mut Platform,
    deser: &mut Deserializer,
    id: usize,
    now: f64,
    root: u16,
    msg: &Message,
    strategy: Strategy,
) -> Result<RequestOutcome, HarnessError> {
    let wire = ref_encode(msg);
    let header = RpcHeader {
        class_id: root,
        msg_len: wire.len() as u32,
    };
    let before = p.link.ledger();
    let (d, _note) = deser.submit(p, now, header, &wire, DeserMode::OneShot)?;
    let table = p.table.clone();
    let checked = read_back(&p.mem, &table, root, d.root)
        .map_err(HarnessError::from)
        .and_then(|m| {
            if &m == msg {
                Ok(())
            } else {
                Err(HarnessError::Closure { request: id })
            }
        })
        .and_then(|_| Ok(serialize(p, strategy, root, d.root)?));
    let deser_ns = d.metrics.elapsed_ns;
    release(p, d)?;
    let out = checked?;
    match ref_decode(&out.wire, root, &table) {
        Ok(m) if &m == msg => {}
        _ => return Err(HarnessError::Closure { request: id }),
    }
    let auth = p.cfg.host.auth_ns;
    let mut row = Row {
        request: id,
        label: strategy.name().to_owned(),
        strategy: strategy.name().to_owned(),
        link_latency_ns: p.cfg.link.latency_ns,
        wire_bytes: wire.len() as u64,
        deser_ns,
        host_ns: auth + out.host_ns,
        device_ns: out.device_ns,
        link_ns: out.link_ns,
        elapsed_ns: deser_ns + auth + out.elapsed_ns,
        ..Default::default()
    };
    row.set_ledger(&(p.link.ledger() - before));
    row.set_proxy(&out.proxy);
    Ok(RequestOutcome { row, response: out })
}

/// Runs every message of `workload` through the pipeline.
pub fn run_pipeline(
    workload: &Workload,
    cfg: &PlatformConfig,
    strategy: Strategy,
    seed: u64,
) -> Result<SimReport, HarnessError> {
    let mut p = Platform::new(cfg.clone(), workload.table.clone())?;
    let mut deser = Deserializer::for_platform(&p);
    let mut report = SimReport::new("run", seed);
    report.param("strategy", strategy);
    report.param("link_latency_ns", cfg.link.latency_ns);
    report.param(
        "link_bandwidth_bytes_per_ns",
        cfg.link.bandwidth_bytes_per_ns,
    );
    report.param("mean_field_size", workload.stats.mean_field_size);
    report.param("mean_depth", workload.stats.mean_depth);
    let start = p.link.ledger();
    let mut now = 0.0;
    for (id, msg) in workload.messages.iter().enumerate() {
        let out =
            one(&mut p, &mut deser, id, now, workload.root, msg, strategy).map_err(|e| e.at(id))?;
        now += out.row.elapsed_ns;
        report.rows.push(out.row);
    }
    report.finish();
    let total = p.link.ledger() - start;
    let a = &report.aggregate;
    let conserved = a.dma_read_bytes == total.dma_read.bytes
        && a.dma_write_bytes == total.dma_write.bytes
        && a.mmio_bytes == total.mmio_write.bytes
        && a.link_events == total.total_events();
    report.criteria.push(Criterion::holds(
        "ledger-conservation",
        conserved,
        total.total_bytes() as f64,
        "row ledgers sum to the link ledger",
    ));
    report.criteria.push(Criterion::holds(
        "responses-decode",
        true,
        report.rows.len() as f64,
        "every response decodes to its request",
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::workload::{generate_workload, WorkloadSpec};

    #[test]
    fn all_strategies_run() {
        let spec = WorkloadSpec {
            requests: 5,
            acc_fraction: 0.3,
            repeated_probability: 0.3,
            ..Default::default()
        };
        let w = generate_workload(&spec, 11).unwrap();
        for s in Strategy::ALL {
            let r = run_pipeline(&w, &PlatformConfig::default(), s, 11).unwrap();
            assert_eq!(r.rows.len(), 5);
            assert!(r.passed());
            assert_eq!(
                r,
                run_pipeline(&w, &PlatformConfig::default(), s, 11).unwrap()
            );
        }
    }

    #[test]
    fn empty_workload() {
        let spec = WorkloadSpec {
            requests: 0,
            ..Default::default()
        };
        let w = generate_workload(&spec, 1).unwrap();
        let r = run_pipeline(&w, &PlatformConfig::default(), Strategy::CpuOnly, 1).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.aggregate.requests, 0);
    }
}
