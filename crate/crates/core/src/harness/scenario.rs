//! Scripted experiments. Each returns a report whose criteria decide the
//! pass/fail result.
//!
//! - `fig2-latency-sweep`: accel-only serialization time against link
//!   latency, nested small fields versus one large flat field.
//! - `oneshot-vs-fieldbyfield`: deserialization with batched host writes
//!   versus one write per field.
//! - `serialization-three-way`: the three serializers on host-heavy nested
//!   messages and on a mixed regime.
//! - `auto-field-update`: an image service whose compute unit disappears
//!   (and, in reverse, appears) mid-run.
//! - `e2e-compression`: link traffic of the image service with and without
//!   the `Acc` label on the image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cu::{self, Descriptor, Kernel};
use crate::deser::{deserialize, release, DeserMode, Deserializer, Lane};
use crate::field_update::{is_in_acc, move_to_acc, move_to_cpu, resolve};
use crate::layout::{field_region, store_message, Handle, ObjectArena, Slot, SLOT_SIZE};
use crate::link::LinkConfig;
use crate::memory::Region;
use crate::oracle::{ref_decode, ref_encode};
use crate::platform::{Platform, PlatformConfig};
use crate::schema::{compile_source, Addressing, ClassId, SchemaTable};
use crate::ser::{serialize, serialize_memory_affinity, Strategy};
use crate::value::{Message, Value};
use crate::wire::RpcHeader;

use super::report::{geomean, Criterion, Row, SimReport};
use super::workload::{generate_workload, WorkloadSpec};
use super::HarnessError;

pub const SCENARIOS: [&str; 5] = [
    "fig2-latency-sweep",
    "oneshot-vs-fieldbyfield",
    "serialization-three-way",
    "auto-field-update",
    "e2e-compression",
];

pub fn run_scenario(name: &str, seed: u64) -> Result<SimReport, HarnessError> {
    let mut r = match name {
        "fig2-latency-sweep" => latency_sweep(seed),
        "oneshot-vs-fieldbyfield" => oneshot_vs_fieldbyfield(seed),
        "serialization-three-way" => three_way(seed),
        "auto-field-update" => auto_field_update(seed),
        "e2e-compression" => e2e_compression(seed),
        other => return Err(HarnessError::UnknownScenario(other.to_owned())),
    }?;
    r.name = name.to_owned();
    r.finish();
    Ok(r)
}

/// Stores each message in host memory as host software would.
fn store_all(
    p: &mut Platform,
    msgs: &[Message],
) -> Result<(ObjectArena, Vec<Handle>), HarnessError> {
    let table = p.table.clone();
    let mut arena = ObjectArena::new(p.cfg.memory.chunk_size);
    let mut roots = Vec::with_capacity(msgs.len());
    for m in msgs {
        roots.push(store_message(
            &mut p.mem,
            &mut arena,
            &table,
            m,
            Region::Host,
        )?);
    }
    Ok((arena, roots))
}

fn ser_row(
    p: &mut Platform,
    strategy: Strategy,
    id: usize,
    label: &str,
    class: ClassId,
    root: Handle,
    expect: &Message,
) -> Result<Row, HarnessError> {
    let out = serialize(p, strategy, class, root).map_err(|e| HarnessError::from(e).at(id))?;
    if out.wire != ref_encode(expect) {
        return Err(HarnessError::Closure { request: id });
    }
    let mut row = Row {
        request: id,
        label: format!("{label}/{strategy}"),
        strategy: strategy.name().to_owned(),
        link_latency_ns: p.cfg.link.latency_ns,
        wire_bytes: out.wire.len() as u64,
        host_ns: out.host_ns,
        device_ns: out.device_ns,
        link_ns: out.link_ns,
        elapsed_ns: out.elapsed_ns,
        ..Default::default()
    };
    row.set_ledger(&out.ledger);
    row.set_proxy(&out.proxy);
    Ok(row)
}

pub const SWEEP_LATENCIES_NS: [f64; 7] = [70.0, 125.0, 250.0, 500.0, 750.0, 1000.0, 1250.0];

fn nested_small_spec(requests: usize) -> WorkloadSpec {
    WorkloadSpec {
        requests,
        depth_min: 3,
        depth_max: 6,
        fields_min: 2,
        fields_max: 4,
        field_size_min: 8,
        field_size_max: 64,
        small_fields: true,
        acc_fraction: 0.0,
        repeated_probability: 0.1,
    }
}

fn latency_sweep(seed: u64) -> Result<SimReport, HarnessError> {
    let mut report = SimReport::new("", seed);
    let nested = generate_workload(&nested_small_spec(20), seed)?;
    let flat_table = compile_source("message Blob { bytes data = 1; }")
        .map_err(|e| HarnessError::Config(e.to_string()))?
        .table;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blob: Vec<u8> = (0..512 * 1024).map(|_| rng.gen()).collect();
    let flat = Message::new(1).with(1, Value::Bytes(blob));
    report.param("nested_mean_field_size", nested.stats.mean_field_size);
    report.param("nested_mean_depth", nested.stats.mean_depth);
    report.param("flat_field_bytes", 512 * 1024);

    // times[latency][message]
    let mut nested_t = Vec::new();
    let mut flat_t = Vec::new();
    for &lat in &SWEEP_LATENCIES_NS {
        let cfg = PlatformConfig::with_link(LinkConfig::pcie().at_latency(lat));
        let mut p = Platform::new(cfg.clone(), nested.table.clone())?;
        let (_arena, roots) = store_all(&mut p, &nested.messages)?;
        let mut ts = Vec::new();
        for (i, (m, &root)) in nested.messages.iter().zip(&roots).enumerate() {
            let row = ser_row(
                &mut p,
                Strategy::AccelOnly,
                i,
                "nested",
                nested.root,
                root,
                m,
            )?;
            ts.push(row.elapsed_ns);
            report.rows.push(row);
            report.rows.push(ser_row(
                &mut p,
                Strategy::MemoryAffinity,
                i,
                "nested",
                nested.root,
                root,
                m,
            )?);
        }
        nested_t.push(ts);

        let mut p = Platform::new(cfg, flat_table.clone())?;
        let (_arena, roots) = store_all(&mut p, std::slice::from_ref(&flat))?;
        let row = ser_row(&mut p, Strategy::AccelOnly, 0, "flat", 1, roots[0], &flat)?;
        flat_t.push(row.elapsed_ns);
        report.rows.push(row);
    }
    let last = SWEEP_LATENCIES_NS.len() - 1;
    let ratios: Vec<f64> = (0..nested.messages.len())
        .map(|i| nested_t[last][i] / nested_t[0][i])
        .collect();
    let monotone = (0..nested.messages.len())
        .all(|i| (1..=last).all(|k| nested_t[k][i] >= nested_t[k - 1][i]));
    report.criteria.push(Criterion::at_least(
        "nested-accel-only-geomean-increase",
        geomean(&ratios),
        2.0,
    ));
    report.criteria.push(Criterion::at_most(
        "flat-512k-accel-only-increase",
        flat_t[last] / flat_t[0],
        1.2,
    ));
    report.criteria.push(Criterion::holds(
        "nested-monotone-in-latency",
        monotone,
        ratios.len() as f64,
        "time never drops as latency grows",
    ));
    Ok(report)
}

fn small_field_spec(requests: usize) -> WorkloadSpec {
    WorkloadSpec {
        requests,
        depth_min: 1,
        depth_max: 2,
        fields_min: 6,
        fields_max: 12,
        field_size_min: 16,
        field_size_max: 256,
        small_fields: true,
        acc_fraction: 0.0,
        repeated_probability: 0.1,
    }
}

/// Deserializes `msg` on a fresh lane and checks the result against the
/// oracle. Returns the row and the metrics needed for bounds.
fn deser_row(
    p: &mut Platform,
    id: usize,
    label: &str,
    class: ClassId,
    msg: &Message,
    mode: DeserMode,
) -> Result<(Row, u64, u64), HarnessError> {
    let wire = ref_encode(msg);
    let header = RpcHeader {
        class_id: class,
        msg_len: wire.len() as u32,
    };
    let mut lane = Lane::new(0, p.cfg.deser.temp_buffer_bytes);
    let d =
        deserialize(p, &mut lane, header, &wire, mode).map_err(|e| HarnessError::from(e).at(id))?;
    let table = p.table.clone();
    let back = crate::layout::read_back(&p.mem, &table, class, d.root);
    let m = d.metrics.clone();
    release(p, d)?;
    if back?
        != ref_decode(&wire, class, &table).map_err(|_| HarnessError::Closure { request: id })?
    {
        return Err(HarnessError::Closure { request: id });
    }
    let mut row = Row {
        request: id,
        label: format!(
            "{label}/{}",
            if mode == DeserMode::OneShot {
                "one-shot"
            } else {
                "field-by-field"
            }
        ),
        strategy: String::new(),
        link_latency_ns: p.cfg.link.latency_ns,
        wire_bytes: wire.len() as u64,
        deser_ns: m.elapsed_ns,
        device_ns: m.parse_ns + m.accel_ns,
        link_ns: m.link_ns,
        elapsed_ns: m.elapsed_ns,
        ..Default::default()
    };
    row.set_ledger(&m.ledger);
    Ok((row, m.host_bytes, m.host_fields))
}

fn oneshot_vs_fieldbyfield(seed: u64) -> Result<SimReport, HarnessError> {
    let mut report = SimReport::new("", seed);
    let small = generate_workload(&small_field_spec(50), seed)?;
    let large_spec = WorkloadSpec {
        requests: 20,
        fields_min: 2,
        fields_max: 4,
        field_size_min: 4096,
        field_size_max: 65536,
        small_fields: false,
        ..small_field_spec(20)
    };
    let large = generate_workload(&large_spec, seed.wrapping_add(1))?;
    report.param("small_mean_field_size", small.stats.mean_field_size);
    report.param("large_mean_field_size", large.stats.mean_field_size);

    let mut bounds_ok = true;
    let mut worst_slack = f64::INFINITY;
    let mut ratios = Vec::new();
    for (label, w) in [("small", &small), ("large", &large)] {
        let mut p = Platform::new(PlatformConfig::default(), w.table.clone())?;
        let (mut one_total, mut fbf_total) = (0.0, 0.0);
        for (i, m) in w.messages.iter().enumerate() {
            let (a, host_bytes, _) = deser_row(&mut p, i, label, w.root, m, DeserMode::OneShot)?;
            let (b, _, host_fields) =
                deser_row(&mut p, i, label, w.root, m, DeserMode::FieldByField)?;
            let one_bound = host_bytes.div_ceil(4096) + 1;
            bounds_ok &= a.dma_write_count <= one_bound && b.dma_write_count == host_fields + 1;
            worst_slack = worst_slack.min(one_bound as f64 - a.dma_write_count as f64);
            one_total += a.elapsed_ns;
            fbf_total += b.elapsed_ns;
            report.rows.push(a);
            report.rows.push(b);
        }
        ratios.push(fbf_total / one_total);
        report.param(&format!("{label}_throughput_ratio"), fbf_total / one_total);
    }
    report.criteria.push(Criterion::holds(
        "dma-write-bounds",
        bounds_ok,
        worst_slack,
        "one-shot <= ceil(host_bytes/4096)+1, field-by-field = host fields + 1",
    ));
    report.criteria.push(Criterion::at_least(
        "small-field-throughput-ratio",
        ratios[0],
        2.0,
    ));
    Ok(report)
}

/// Bytes the host copies itself during pre-serialization: every host
/// field smaller than `threshold`, scalars as 8 bytes, nothing below an
/// accelerator-resident field.
pub fn small_host_field_bytes(table: &SchemaTable, msg: &Message, threshold: u64) -> u64 {
    let Some(schema) = table.get(msg.class_id) else {
        return 0;
    };
    let small = |n: u64| if n < threshold { n } else { 0 };
    let mut total = 0;
    for (&num, v) in &msg.fields {
        let Some(f) = schema.field(num) else { continue };
        if f.addressing() == Addressing::Dereference
            && field_region(table, msg.class_id, f) == Region::Accel
        {
            continue;
        }
        total += match v {
            Value::String(s) => small(s.len() as u64),
            Value::Bytes(b) => small(b.len() as u64),
            Value::Message(m) => small_host_field_bytes(table, m, threshold),
            Value::Repeated(items) if f.is_packed() => small(items.len() as u64 * 8),
            Value::Repeated(items) => items
                .iter()
                .map(|x| match x {
                    Value::String(s) => small(s.len() as u64),
                    Value::Bytes(b) => small(b.len() as u64),
                    Value::Message(m) => small_host_field_bytes(table, m, threshold),
                    _ => 0,
                })
                .sum(),
            _ => small(8),
        };
    }
    total
}

fn three_way(seed: u64) -> Result<SimReport, HarnessError> {
    let mut report = SimReport::new("", seed);
    let heavy_spec = WorkloadSpec {
        requests: 30,
        depth_min: 3,
        depth_max: 5,
        fields_min: 3,
        fields_max: 6,
        field_size_min: 32,
        field_size_max: 1024,
        small_fields: true,
        acc_fraction: 0.0,
        repeated_probability: 0.1,
    };
    let mixed_spec = WorkloadSpec {
        requests: 30,
        depth_min: 1,
        depth_max: 3,
        fields_min: 2,
        fields_max: 6,
        field_size_min: 16,
        field_size_max: 4096,
        small_fields: false,
        acc_fraction: 0.3,
        repeated_probability: 0.2,
    };
    let heavy = generate_workload(&heavy_spec, seed)?;
    let mixed = generate_workload(&mixed_spec, seed.wrapping_add(1))?;

    // host-heavy nested
    let mut p = Platform::new(PlatformConfig::default(), heavy.table.clone())?;
    let (_arena, roots) = store_all(&mut p, &heavy.messages)?;
    let mut speedups = Vec::new();
    let mut events_ok = true;
    let mut max_events = 0;
    for (i, (m, &root)) in heavy.messages.iter().zip(&roots).enumerate() {
        let rows: Vec<Row> = Strategy::ALL
            .iter()
            .map(|&s| ser_row(&mut p, s, i, "host-heavy", heavy.root, root, m))
            .collect::<Result<_, _>>()?;
        let (ao, ma) = (&rows[1], &rows[2]);
        speedups.push(ao.elapsed_ns / ma.elapsed_ns);
        events_ok &= ma.mmio_count == 1 && ma.dma_read_count == 1 && ma.dma_write_count == 0;
        max_events = max_events.max(ma.link_events());
        report.rows.extend(rows);
    }
    report.criteria.push(Criterion::at_least(
        "host-heavy-accel-only/memory-affinity",
        geomean(&speedups),
        1.5,
    ));
    report.criteria.push(Criterion::holds(
        "memory-affinity-link-events",
        events_ok,
        max_events as f64,
        "exactly 1 MMIO + 1 DMA read per message",
    ));

    // mixed regime
    let threshold = PlatformConfig::default().host.memcpy_threshold;
    let mut p = Platform::new(PlatformConfig::default(), mixed.table.clone())?;
    let (_arena, roots) = store_all(&mut p, &mixed.messages)?;
    let mut proxy_ratios = Vec::new();
    let mut encode_ops = 0;
    let mut copies_match = true;
    let mut small_bytes = 0;
    for (i, (m, &root)) in mixed.messages.iter().zip(&roots).enumerate() {
        let cpu = ser_row(&mut p, Strategy::CpuOnly, i, "mixed", mixed.root, root, m)?;
        let ao = ser_row(&mut p, Strategy::AccelOnly, i, "mixed", mixed.root, root, m)?;
        let ma = serialize_memory_affinity(&mut p, mixed.root, root)?;
        encode_ops += ma.proxy.encode_ops_on_cpu;
        let expected = small_host_field_bytes(&mixed.table, m, threshold);
        copies_match &= ma.proxy.bytes_copied_by_cpu == expected;
        small_bytes += expected;
        proxy_ratios.push(ma.host_ns / cpu.host_ns);
        let ma_row = ser_row(
            &mut p,
            Strategy::MemoryAffinity,
            i,
            "mixed",
            mixed.root,
            root,
            m,
        )?;
        report.rows.extend([cpu, ao, ma_row]);
    }
    report.criteria.push(Criterion::holds(
        "memory-affinity-cpu-encode-ops",
        encode_ops == 0,
        encode_ops as f64,
        "= 0",
    ));
    report.criteria.push(Criterion::holds(
        "memory-affinity-cpu-copy-bytes",
        copies_match,
        small_bytes as f64,
        "CPU copies = host fields below the memcpy threshold",
    ));
    report.criteria.push(Criterion::at_most(
        "mixed-proxy-memory-affinity/cpu-only",
        geomean(&proxy_ratios),
        0.5,
    ));
    Ok(report)
}

/// The image-compression service: authorize, compress the avatar image
/// on the compute unit when one is programmed for it, on the CPU
/// otherwise, and reply with the compressed image.
pub struct ImageService {
    pub p: Platform,
    deser: Deserializer,
    pub user: ClassId,
    pub photo: ClassId,
    now: f64,
}

/// One handled request.
#[derive(Debug, Clone)]
pub struct ImageStep {
    pub row: Row,
    pub moved: bool,
    pub on_cu: bool,
}

pub const IMAGE_PROTO: &str = "
message User { int64 id = 1; Photo avatar = 2; }
message Photo { bytes image = 1 [Acc]; int64 size = 2; }
";

impl ImageService {
    /// `image_acc` sets the initial label of `Photo.image`.
    pub fn new(cfg: PlatformConfig, image_acc: bool) -> Result<Self, HarnessError> {
        let compiled =
            compile_source(IMAGE_PROTO).map_err(|e| HarnessError::Config(e.to_string()))?;
        let user = compiled
            .table
            .by_name("User")
            .map(|c| c.class_id)
            .unwrap_or(1);
        let photo = compiled
            .table
            .by_name("Photo")
            .map(|c| c.class_id)
            .unwrap_or(2);
        let table = compiled
            .table
            .relabeled(|c, f| c.class_id == photo && f.number == 1 && image_acc);
        let p = Platform::new(cfg, table)?;
        let deser = Deserializer::for_platform(&p);
        Ok(ImageService {
            p,
            deser,
            user,
            photo,
            now: 0.0,
        })
    }

    /// Loads `kernel` into compute unit 0.
    pub fn program(&mut self, kernel: Kernel) -> Result<(), HarnessError> {
        cu::program(&mut self.p, 0, kernel, self.now)?;
        Ok(())
    }

    pub fn request(&self, id: i64, image: Vec<u8>) -> Message {
        Message::new(self.user).with(1, Value::Int64(id)).with(
            2,
            Value::Message(Message::new(self.photo).with(1, Value::Bytes(image))),
        )
    }

    /// A compressible image: random bytes in runs of 1 to 64.
    pub fn image(rng: &mut impl Rng, len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let b: u8 = rng.gen();
            let run = rng.gen_range(1..=64).min(len - out.len());
            out.extend(std::iter::repeat_n(b, run));
        }
        out
    }

    /// Host-built response record pointing at an existing image block.
    fn response(
        &mut self,
        arena: &mut ObjectArena,
        image: Handle,
        size: u64,
    ) -> Result<Handle, HarnessError> {
        let schema = self.p.table.get(self.photo).expect("photo class").clone();
        let len = SLOT_SIZE * schema.fields.len() as u64;
        let rec = arena.alloc(&mut self.p.mem, Region::Host, len)?;
        let mut bytes = vec![0u8; len as usize];
        let put = |bytes: &mut Vec<u8>, number: u32, slot: Slot| {
            let i = schema.slot_index(number).expect("photo field") * SLOT_SIZE as usize;
            bytes[i..i + SLOT_SIZE as usize].copy_from_slice(&slot.encode());
        };
        put(&mut bytes, 1, Slot::pointer(image));
        put(&mut bytes, 2, Slot::scalar(size));
        self.p.mem.host.write(rec, &bytes)?;
        Ok(Handle {
            region: Region::Host,
            addr: rec,
            len,
        })
    }

    pub fn handle(&mut self, id: usize, req: &Message) -> Result<ImageStep, HarnessError> {
        self.handle_inner(id, req).map_err(|e| e.at(id))
    }

    fn handle_inner(&mut self, id: usize, req: &Message) -> Result<ImageStep, HarnessError> {
        let p = &mut self.p;
        let wire = ref_encode(req);
        let header = RpcHeader {
            class_id: self.user,
            msg_len: wire.len() as u32,
        };
        let before = p.link.ledger();
        let (mut d, _) = self
            .deser
            .submit(p, self.now, header, &wire, DeserMode::OneShot)?;
        let result = self.serve(&mut d.arena, d.root);
        let deser_ns = d.metrics.elapsed_ns;
        release(&mut self.p, d)?;
        let (mut row, moved, on_cu, expect, out_wire) = result?;
        if ref_decode(&out_wire, self.photo, &self.p.table)
            .ok()
            .as_ref()
            != Some(&expect)
        {
            return Err(HarnessError::Closure { request: id });
        }
        row.request = id;
        row.deser_ns = deser_ns;
        row.elapsed_ns += deser_ns;
        row.link_latency_ns = self.p.cfg.link.latency_ns;
        row.wire_bytes = wire.len() as u64;
        row.field_moves = moved as u64;
        row.set_ledger(&(self.p.link.ledger() - before));
        self.now += row.elapsed_ns;
        Ok(ImageStep { row, moved, on_cu })
    }

    #[allow(clippy::type_complexity)]
    fn serve(
        &mut self,
        arena: &mut ObjectArena,
        root: Handle,
    ) -> Result<(Row, bool, bool, Message, Vec<u8>), HarnessError> {
        let mut row = Row::default();
        let auth = self.p.cfg.host.auth_ns;
        row.host_ns += auth;
        let mut h = resolve(&self.p, self.user, root, &[2, 1])?;
        let on_cu = cu::get_type(&self.p, 0)? == "compress";
        let mut moved = false;
        let resp;
        let image;
        if on_cu {
            if !is_in_acc(&self.p, &h) {
                let m = move_to_acc(&mut self.p, arena, &mut h)?;
                moved = m.moved;
                row.link_ns += m.link_ns;
                row.device_ns += m.device_ns;
            }
            let input = h.slot.handle();
            image = self.p.mem.accel.read(input.addr, input.len)?;
            let bound = Kernel::rle_compress().output_bound(input.len as usize) as u64;
            let out_addr = arena.alloc(&mut self.p.mem, Region::Accel, bound.max(1))?;
            let t0 = self.p.link.ledger().total_time_ns();
            let ev = cu::submit_task(
                &mut self.p,
                0,
                Descriptor {
                    input_addr: input.addr,
                    input_size: input.len,
                    output_addr: out_addr,
                    output_buf_size: bound.max(1),
                },
                self.now,
            )?;
            let r = cu::poll(&mut self.p, ev)?;
            row.device_ns += r.compute_ns;
            row.link_ns += self.p.link.ledger().total_time_ns() - t0;
            let n = r.entry.result_len as u64;
            let out = Handle {
                region: Region::Accel,
                addr: if n == 0 { 0 } else { out_addr },
                len: n,
            };
            resp = self.response(arena, out, n)?;
        } else {
            if is_in_acc(&self.p, &h) {
                let m = move_to_cpu(&mut self.p, arena, &mut h)?;
                moved = m.moved;
                row.link_ns += m.link_ns;
                row.device_ns += m.device_ns;
            }
            let input = h.slot.handle();
            image = if input.len == 0 {
                Vec::new()
            } else {
                self.p.mem.host.read(input.addr, input.len)?
            };
            let packed = cu::rle_compress(&image);
            row.host_ns += image.len() as f64 / self.p.cfg.host.compress_bytes_per_ns;
            let n = packed.len() as u64;
            let addr = arena.alloc(&mut self.p.mem, Region::Host, n)?;
            if n > 0 {
                self.p.mem.host.write(addr, &packed)?;
            }
            resp = self.response(
                arena,
                Handle {
                    region: Region::Host,
                    addr,
                    len: n,
                },
                n,
            )?;
        }
        let out = serialize_memory_affinity(&mut self.p, self.photo, resp)?;
        row.set_proxy(&out.proxy);
        row.host_ns += out.host_ns;
        row.device_ns += out.device_ns;
        row.link_ns += out.link_ns;
        row.elapsed_ns = row.host_ns + row.device_ns + row.link_ns;
        row.strategy = Strategy::MemoryAffinity.name().to_owned();
        row.label = if on_cu { "cu" } else { "cpu" }.to_owned();
        let packed = cu::rle_compress(&image);
        let expect = Message::new(self.photo)
            .with(1, Value::Bytes(packed.clone()))
            .with(2, Value::Int64(packed.len() as i64));
        Ok((row, moved, on_cu, expect, out.wire))
    }
}

const IMAGE_BYTES: usize = 32 * 1024;

fn images(seed: u64, n: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ImageService::image(&mut rng, IMAGE_BYTES))
        .collect()
}

/// Runs 8 requests; `flip` runs before request 4.
fn image_run(
    label: &str,
    cfg: &PlatformConfig,
    image_acc: bool,
    start: Kernel,
    flip: Option<Kernel>,
    imgs: &[Vec<u8>],
) -> Result<Vec<ImageStep>, HarnessError> {
    let mut svc = ImageService::new(cfg.clone(), image_acc)?;
    svc.program(start)?;
    let mut steps = Vec::new();
    for (i, img) in imgs.iter().enumerate() {
        if i == 3 {
            if let Some(k) = flip {
                svc.program(k)?;
            }
        }
        let req = svc.request(i as i64 + 1, img.clone());
        let mut s = svc.handle(i + 1, &req)?;
        s.row.label = format!("{label}/{}", s.row.label);
        steps.push(s);
    }
    Ok(steps)
}

fn auto_field_update(seed: u64) -> Result<SimReport, HarnessError> {
    let mut report = SimReport::new("", seed);
    let imgs = images(seed, 8);
    let on = PlatformConfig::default();
    let off = PlatformConfig {
        auto_field_update: false,
        ..PlatformConfig::default()
    };
    report.param("image_bytes", IMAGE_BYTES);
    report.param("flip_before_request", 4);

    let check = |report: &mut SimReport,
                 name: &str,
                 run: &[ImageStep],
                 before: &[ImageStep],
                 after: &[ImageStep]| {
        let moves: Vec<u64> = run.iter().map(|s| s.row.field_moves).collect();
        let only_fourth = moves == [0, 0, 0, 1, 0, 0, 0, 0];
        report.criteria.push(Criterion::holds(
            &format!("{name}-explicit-moves"),
            only_fourth,
            moves.iter().sum::<u64>() as f64,
            "exactly one move, at request 4",
        ));
        let dev = |xs: &[ImageStep], refs: &[ImageStep], range: std::ops::Range<usize>| {
            range
                .map(|i| (xs[i].row.elapsed_ns / refs[i].row.elapsed_ns - 1.0).abs())
                .fold(0.0, f64::max)
        };
        report.criteria.push(Criterion::at_most(
            &format!("{name}-requests-1-3-deviation"),
            dev(run, before, 0..3),
            0.01,
        ));
        report.criteria.push(Criterion::at_most(
            &format!("{name}-requests-5-8-deviation"),
            dev(run, after, 4..8),
            0.01,
        ));
        let steady = after[3].row.elapsed_ns;
        report.criteria.push(Criterion::at_least(
            &format!("{name}-request-4-elevation"),
            run[3].row.elapsed_ns / steady,
            1.01,
        ));
    };

    // CU taken away after request 3
    let fwd = image_run(
        "forward",
        &on,
        true,
        Kernel::rle_compress(),
        Some(Kernel::unavailable()),
        &imgs,
    )?;
    let ref_cu = image_run("ref-cu", &on, true, Kernel::rle_compress(), None, &imgs)?;
    let ref_cpu = image_run("ref-cpu", &on, false, Kernel::unavailable(), None, &imgs)?;
    check(&mut report, "forward", &fwd, &ref_cu, &ref_cpu);
    let stuck = image_run(
        "forward-no-auto",
        &off,
        true,
        Kernel::rle_compress(),
        Some(Kernel::unavailable()),
        &imgs,
    )?;
    let repeated = stuck[4..].iter().filter(|s| s.moved).count();
    report.criteria.push(Criterion::holds(
        "without-auto-update-moves-repeat",
        repeated == 4,
        repeated as f64,
        "= 4 moves in requests 5-8",
    ));

    // CU appears after request 3
    let rev = image_run(
        "reverse",
        &on,
        false,
        Kernel::unavailable(),
        Some(Kernel::rle_compress()),
        &imgs,
    )?;
    check(&mut report, "reverse", &rev, &ref_cpu, &ref_cu);

    for run in [fwd, stuck, rev, ref_cu, ref_cpu] {
        report.rows.extend(run.into_iter().map(|s| s.row));
    }
    Ok(report)
}

fn e2e_compression(seed: u64) -> Result<SimReport, HarnessError> {
    let mut report = SimReport::new("", seed);
    let imgs = images(seed, 10);
    let fixed = PlatformConfig {
        auto_field_update: false,
        ..PlatformConfig::default()
    };
    report.param("image_bytes", IMAGE_BYTES);
    let run = |label: &str, acc: bool, kernel: Kernel| -> Result<Vec<ImageStep>, HarnessError> {
        let mut svc = ImageService::new(fixed.clone(), acc)?;
        svc.program(kernel)?;
        let mut steps = Vec::new();
        for (i, img) in imgs.iter().enumerate() {
            let req = svc.request(i as i64 + 1, img.clone());
            let mut s = svc.handle(i + 1, &req)?;
            s.row.label = format!("{label}/{}", s.row.label);
            steps.push(s);
        }
        Ok(steps)
    };
    let acc = run("acc", true, Kernel::rle_compress())?;
    let plain = run("no-acc", false, Kernel::rle_compress())?;
    let cpu = run("cpu-only", false, Kernel::unavailable())?;

    let payload = IMAGE_BYTES as u64;
    let max_acc = acc.iter().map(|s| s.row.link_bytes()).max().unwrap_or(0);
    report.criteria.push(Criterion::at_most(
        "acc-link-bytes-per-request",
        max_acc as f64,
        payload as f64 - 1.0,
    ));
    let min_growth = acc
        .iter()
        .zip(&plain)
        .map(|(a, b)| b.row.link_bytes() as i64 - a.row.link_bytes() as i64)
        .min()
        .unwrap_or(0);
    report.criteria.push(Criterion::at_least(
        "no-acc-link-bytes-growth",
        min_growth as f64,
        payload as f64,
    ));
    for run in [acc, plain, cpu] {
        report.rows.extend(run.into_iter().map(|s| s.row));
    }
    Ok(report)
}
