//! Command-line front end. Exit codes: 0 pass, 1 a criterion failed,
//! 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rpcacc::harness::{
    generate_messages, generate_workload, run_pipeline, run_scenario, Criterion, SimConfig,
    SimReport, WorkloadSpec,
};
use rpcacc::oracle::ref_encode;
use rpcacc::schema::{compile_source, load_schema_table, render_report, serialize_schema_table};
use rpcacc::ser::Strategy;
use rpcacc::wire::RpcHeader;

#[derive(Parser)]
#[command(name = "rpcacc", version, about = "RPC accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a .proto file into a binary schema table.
    Compile {
        proto: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// Write a human-readable summary of the table here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a generated workload through the request pipeline.
    Run {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        mode: Strategy,
        /// Link profile: pcie, upi, onchip-70ns or custom (values from --config).
        #[arg(long, default_value = "pcie")]
        link: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulation config file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root message name; defaults to the first declared message.
        #[arg(long)]
        root: Option<String>,
        /// Also write per-request rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Fail (exit 1) if mean simulated request time exceeds this.
        #[arg(long)]
        max_mean_ns: Option<f64>,
    },
    /// Run a named experiment scenario.
    Scenario {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Workload utilities.
    Workload {
        #[command(subcommand)]
        cmd: WorkloadCmd,
    },
}

#[derive(Subcommand)]
enum WorkloadCmd {
    /// Write the generated schema and messages to a directory.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

type CmdResult = Result<bool, String>;

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), String> {
    fs::write(path, bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(report: &SimReport, out: Option<&Path>, csv: Option<&Path>) -> CmdResult {
    for line in report.lines() {
        println!("{line}");
    }
    if let Some(path) = out {
        write(path, report.to_json())?;
    }
    if let Some(path) = csv {
        let f = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        report.write_csv(f).map_err(|e| e.to_string())?;
    }
    Ok(report.passed())
}

fn compile(proto: &Path, out: &Path, report: Option<&Path>) -> CmdResult {
    let compiled =
        compile_source(&read_text(proto)?).map_err(|e| format!("{}: {e}", proto.display()))?;
    write(out, serialize_schema_table(&compiled.table))?;
    let summary = render_report(&compiled.table);
    match report {
        Some(path) => write(path, summary)?,
        None => print!("{summary}"),
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn run(
    workload: &Path,
    schema: &Path,
    mode: Strategy,
    link: &str,
    seed: u64,
    out: Option<&Path>,
    config: Option<&Path>,
    root: Option<&str>,
    csv: Option<&Path>,
    max_mean_ns: Option<f64>,
) -> CmdResult {
    let spec = WorkloadSpec::from_toml(&read_text(workload)?).map_err(|e| e.to_string())?;
    let table =
        load_schema_table(&read(schema)?).map_err(|e| format!("{}: {e}", schema.display()))?;
    let sim = match config {
        Some(path) => SimConfig::from_toml(&read_text(path)?).map_err(|e| e.to_string())?,
        None if link == "custom" => {
            return Err("--link custom needs --config with a [link] section".into())
        }
        None => SimConfig::default(),
    };
    let cfg = sim.platform_config(Some(link)).map_err(|e| e.to_string())?;
    let root = match root {
        Some(name) => {
            table
                .by_name(name)
                .ok_or_else(|| format!("no message `{name}` in schema"))?
                .class_id
        }
        None => {
            table
                .classes()
                .next()
                .ok_or("schema table is empty")?
                .class_id
        }
    };
    let w = generate_messages(&spec, seed, &table, root).map_err(|e| e.to_string())?;
    let mut report = run_pipeline(&w, &cfg, mode, seed).map_err(|e| e.to_string())?;
    report.param("link_profile", link);
    if let Some(max) = max_mean_ns {
        let mean = report.aggregate.mean_elapsed_ns;
        report
            .criteria
            .push(Criterion::at_most("mean-elapsed-ns", mean, max));
    }
    emit(&report, out, csv)
}

fn workload_gen(spec: &Path, seed: u64, out: &Path) -> CmdResult {
    let spec = WorkloadSpec::from_toml(&read_text(spec)?).map_err(|e| e.to_string())?;
    let w = generate_workload(&spec, seed).map_err(|e| e.to_string())?;
    fs::create_dir_all(out).map_err(|e| format!("{}: {e}", out.display()))?;
    write(
        &out.join("schema.proto"),
        w.proto.as_deref().unwrap_or_default(),
    )?;
    write(&out.join("schema.rpct"), serialize_schema_table(&w.table))?;
    for (i, m) in w.messages.iter().enumerate() {
        let payload = ref_encode(m);
        let mut bytes = RpcHeader {
            class_id: w.root,
            msg_len: payload.len() as u32,
        }
        .encode()
        .to_vec();
        bytes.extend_from_slice(&payload);
        write(&out.join(format!("msg_{i:05}.bin")), bytes)?;
    }
    let stats = serde_json::to_string_pretty(&w.stats).map_err(|e| e.to_string())?;
    write(&out.join("stats.json"), stats)?;
    println!(
        "{} messages, mean field size {:.1} B, mean depth {:.2}",
        w.stats.messages, w.stats.mean_field_size, w.stats.mean_depth
    );
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Compile { proto, out, report } => compile(proto, out, report.as_deref()),
        Cmd::Run {
            workload,
            schema,
            mode,
            link,
            seed,
            out,
            config,
            root,
            csv,
            max_mean_ns,
        } => run(
            workload,
            schema,
            *mode,
            link,
            *seed,
            out.as_deref(),
            config.as_deref(),
            root.as_deref(),
            csv.as_deref(),
            *max_mean_ns,
        ),
        Cmd::Scenario {
            name,
            out,
            seed,
            csv,
        } => run_scenario(name, *seed)
            .map_err(|e| e.to_string())
            .and_then(|r| emit(&r, out.as_deref(), csv.as_deref())),
        Cmd::Workload {
            cmd: WorkloadCmd::Gen { spec, seed, out },
        } => workload_gen(spec, *seed, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
