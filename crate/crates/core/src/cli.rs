//! Command-line front end. Reports go to `--out` (written atomically) or stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::arch::{ArchConfig, ArchVariant, DramBandwidth};
use crate::csc::{self, CscTensor, Signedness};
use crate::engine::{self, EngineError, LayerTensors, ModelReport, SimOptions, SyntheticSpec, TensorSource};
use crate::eyexam::{self, AnalyzeOptions, Dataflow, EyexamReport};
use crate::tensor_file::RawTensor;
use crate::workload::{self, DnnModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SIM: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "eyesim", version, about = "Sparse row-stationary accelerator simulator and bound analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer seven-step performance bounds.
    Analyze(AnalyzeArgs),
    /// Simulate a model on one architecture variant.
    Simulate(SimulateArgs),
    /// CSC-encode a tensor file, decode one back, or sweep count widths.
    Encode(EncodeArgs),
    /// Throughput at several PE counts.
    Sweep(SweepArgs),
    /// Print an architecture configuration summary.
    Arch(ArchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Model JSON file or bundled name.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value = "rs")]
    pub dataflow: String,
    #[arg(long, default_value = "v2")]
    pub variant: String,
    /// Scaled array size; the 192-PE preset when omitted.
    #[arg(long)]
    pub pes: Option<usize>,
    /// Keep groups off the array columns for RS.
    #[arg(long)]
    pub no_g_tiling: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    /// Directory of `<label>.iact.eyt` and `<label>.weight.eyt` files.
    #[arg(long)]
    pub tensors: Option<PathBuf>,
    #[arg(long, default_value = "v2")]
    pub variant: String,
    #[arg(long)]
    pub pes: Option<usize>,
    /// `unlimited`, `ddr4-3200` or a rate in MB/s.
    #[arg(long, default_value = "unlimited")]
    pub bw: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of zeros in generated tensors; dense timing when omitted and no tensors are given.
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Run every PE through the functional model and check outputs.
    #[arg(long)]
    pub functional: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// EYT1 tensor to encode, or a JSON dump to decode with `--decode`.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub decode: bool,
    #[arg(long, default_value_t = 16)]
    pub segment_len: usize,
    /// Encode the built-in 6x5 example weight matrix.
    #[arg(long)]
    pub example: bool,
    /// Mean compressed size per count width over a sparsity sweep.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: String,
    /// Comma-separated PE counts.
    #[arg(long, default_value = "256,1024,16384")]
    pub scales: String,
    /// Comma-separated variants.
    #[arg(long, default_value = "v1,v2")]
    pub variants: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    #[arg(long, default_value = "v2")]
    pub variant: String,
    #[arg(long)]
    pub pes: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Sim(#[from] EngineError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Sim(EngineError::TensorShape { .. } | EngineError::MissingTensors(_)) => EXIT_INPUT,
            CliError::Sim(_) => EXIT_SIM,
            CliError::Io(_) => EXIT_SIM,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

pub fn load_model_arg(arg: &str) -> Result<DnnModel, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| input(format!("{arg}: {e}")))?;
        workload::load_model(&text).map_err(|e| input(format!("{arg}: {e}")))
    } else {
        workload::bundled(arg).map_err(input)
    }
}

fn parse_variant(s: &str) -> Result<ArchVariant, CliError> {
    ArchVariant::parse(s).ok_or_else(|| input(format!("unknown variant `{s}` (v1, v15, v2)")))
}

pub fn parse_bw(s: &str) -> Result<DramBandwidth, CliError> {
    match s {
        "unlimited" => Ok(DramBandwidth::UNLIMITED),
        "ddr4-3200" => Ok(DramBandwidth::DDR4_3200),
        _ => match s.parse::<f64>() {
            Ok(mb) if mb > 0.0 && mb.is_finite() => Ok(DramBandwidth(Some(mb * 1e6))),
            _ => Err(input(format!("bad bandwidth `{s}` (unlimited, ddr4-3200 or MB/s)"))),
        },
    }
}

fn build_arch(variant: &str, pes: Option<usize>) -> Result<ArchConfig, CliError> {
    let v = parse_variant(variant)?;
    Ok(match pes {
        Some(0) => return Err(input("--pes must be positive")),
        Some(p) => ArchConfig::scaled(v, p),
        None => ArchConfig::variant(v),
    })
}

pub fn parse_scales(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(input(format!("bad scale `{t}`"))),
        })
        .collect()
}

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn emit(out: &OutputArgs, body: String) -> Result<(), CliError> {
    match &out.out {
        Some(p) => {
            write_atomic(p, body.as_bytes())?;
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let log = format!("finished_unix={stamp}\nargs={:?}\n", std::env::args().collect::<Vec<_>>());
            write_atomic(&p.with_extension(format!("{}.log", ext_of(p))), log.as_bytes())?;
        }
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

fn ext_of(p: &Path) -> String {
    p.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct AnalyzeLayer<'a> {
    label: &'a str,
    macs: u64,
    report: EyexamReport,
}

#[derive(Serialize)]
struct AnalyzeReport<'a> {
    schema: &'static str,
    model: &'a str,
    arch: &'a str,
    dataflow: &'static str,
    layers: Vec<AnalyzeLayer<'a>>,
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<String, CliError> {
    let model = load_model_arg(&a.model)?;
    let arch = build_arch(&a.variant, a.pes)?;
    let df = Dataflow::parse(&a.dataflow).ok_or_else(|| input(format!("unknown dataflow `{}`", a.dataflow)))?;
    let opts = AnalyzeOptions {
        g_tiling: !a.no_g_tiling,
        ..Default::default()
    };
    let layers: Vec<AnalyzeLayer> = model
        .layers
        .iter()
        .map(|l| AnalyzeLayer {
            label: &l.label,
            macs: l.shape.mac_count(),
            report: eyexam::analyze(&l.shape, &arch, df, opts),
        })
        .collect();
    Ok(match a.output.format {
        Format::Json => json(&AnalyzeReport {
            schema: "eyesim.analyze.v1",
            model: &model.name,
            arch: &arch.name,
            dataflow: df.name(),
            layers,
        }),
        Format::Csv => {
            let mut s = String::from("layer,macs,step1,step2,step3,step4,step5,step6,step7,active_pes,active_util,utilization\n");
            for l in &layers {
                let b: Vec<String> = l.report.steps.iter().map(|x| format!("{:.6}", x.bound)).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{:.6},{:.6},{:.6}",
                    l.label,
                    l.macs,
                    b.join(","),
                    l.report.active_pes,
                    l.report.active_util,
                    l.report.utilization
                );
            }
            s
        }
    })
}

fn load_tensor_dir(dir: &Path, model: &DnnModel) -> Result<(BTreeMap<String, LayerTensors>, Vec<String>), CliError> {
    let mut found = BTreeMap::new();
    let mut missing = Vec::new();
    for l in &model.layers {
        let ip = dir.join(format!("{}.iact.eyt", l.label));
        let wp = dir.join(format!("{}.weight.eyt", l.label));
        if !ip.exists() || !wp.exists() {
            missing.push(l.label.clone());
            continue;
        }
        let read = |p: &Path| -> Result<RawTensor, CliError> {
            let f = std::fs::File::open(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
            RawTensor::read_from(std::io::BufReader::new(f)).map_err(|e| input(format!("{}: {e}", p.display())))
        };
        let t = LayerTensors::from_raw(&l.label, &l.shape, read(&ip)?, read(&wp)?)?;
        found.insert(l.label.clone(), t);
    }
    Ok((found, missing))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String, CliError> {
    let model = load_model_arg(&a.model)?;
    let mut arch = build_arch(&a.variant, a.pes)?;
    arch.dram = parse_bw(&a.bw)?;
    if let Some(s) = a.sparsity {
        if !(0.0..=1.0).contains(&s) {
            return Err(input(format!("--sparsity {s} is outside [0, 1]")));
        }
    }
    let opts = SimOptions {
        functional: a.functional,
        ..Default::default()
    };
    let spec = a.sparsity.map(|s| SyntheticSpec::uniform(a.seed, 1.0 - s));
    let report: ModelReport = match (&a.tensors, &spec) {
        (Some(dir), _) => {
            let (mut found, missing) = load_tensor_dir(dir, &model)?;
            if !missing.is_empty() {
                let Some(spec) = &spec else {
                    return Err(input(format!("no tensor files for layers {missing:?} and no --sparsity")));
                };
                for (i, l) in model.layers.iter().enumerate() {
                    if missing.contains(&l.label) {
                        found.insert(l.label.clone(), spec.layer(i, &l.shape));
                    }
                }
            }
            engine::run_model(&model, &TensorSource::Provided(&found), &arch, opts)?
        }
        (None, Some(spec)) => engine::run_model(&model, &TensorSource::Synthetic(spec.clone()), &arch, opts)?,
        (None, None) => engine::run_model(&model, &TensorSource::Dense, &arch, opts)?,
    };
    let table = engine::EnergyCostTable::from_env().map_err(input)?;
    let energy = engine::energy_report(&report.layers, &table);
    Ok(match a.output.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Full<'a> {
                #[serde(flatten)]
                report: &'a ModelReport,
                energy: engine::EnergyBreakdown,
            }
            json(&Full { report: &report, energy })
        }
        Format::Csv => {
            let mut s = String::from("layer,kind,macs,cycles,passes,active_pes,active_util,bound_by,bound_cycles,dram_bytes\n");
            for l in &report.layers {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{:.6},{},{},{}",
                    l.label,
                    serde_json::to_value(l.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    l.macs,
                    l.cycles,
                    l.passes,
                    l.active_pes,
                    l.active_util,
                    serde_json::to_value(l.bound_by).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    l.bound_cycles,
                    l.dram.total()
                );
            }
            let _ = writeln!(s, "total,,{},{},,,,,,{}", report.total_macs, report.total_cycles, report.dram_bytes);
            s
        }
    })
}

#[derive(Serialize)]
struct EncodeReport<'a> {
    schema: &'static str,
    dims: Vec<usize>,
    values: usize,
    nonzeros: usize,
    entries: usize,
    raw_bits: u64,
    compressed_bits: u64,
    ratio: f64,
    tensor: &'a CscTensor,
}

/// The subset of an encode report that `--decode` reads back.
#[derive(Debug, serde::Deserialize)]
pub struct CscDump {
    pub dims: Vec<usize>,
    pub tensor: CscTensor,
}

/// A 6x5 weight matrix whose column 3 is empty; row-major.
pub fn example_matrix() -> (Vec<i32>, usize, usize) {
    #[rustfmt::skip]
    let m = vec![
        1, 0, 0, 0, 7,
        0, 3, 0, 0, 0,
        2, 0, 0, 0, 0,
        0, 4, 0, 0, 8,
        0, 5, 0, 0, 0,
        0, 0, 6, 0, 0,
    ];
    (m, 6, 5)
}

pub fn cmd_encode(a: &EncodeArgs) -> Result<Vec<u8>, CliError> {
    if a.sweep {
        let sparsities: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rows = csc::count_width_sweep(&sparsities, &[2, 3, 4, 5, 6], 4096, 16, 20, a.seed);
        let mut s = String::from("sparsity,width,mean_bits,best_width\n");
        for r in &rows {
            for (w, bits) in &r.mean_bits {
                let _ = writeln!(s, "{:.2},{},{:.3},{}", r.sparsity, w, bits, r.best_width);
            }
        }
        return Ok(s.into_bytes());
    }
    let (dims, t) = if a.example {
        let (m, rows, cols) = example_matrix();
        (vec![rows, cols], csc::encode_weight_matrix(&m, rows, cols).map_err(input)?)
    } else {
        let path = a.input.as_ref().ok_or_else(|| input("encode needs an input file, --example or --sweep"))?;
        let bytes = std::fs::read(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        if a.decode {
            let dump: CscDump = serde_json::from_slice(&bytes).map_err(|e| input(format!("{}: {e}", path.display())))?;
            let t = dump.tensor;
            t.validate().map_err(input)?;
            let values = t.decode().map_err(input)?;
            let n: usize = dump.dims.iter().product();
            let raw = RawTensor::new(dump.dims.clone(), values[..n.min(values.len())].to_vec()).map_err(input)?;
            return raw.to_bytes().map_err(input);
        }
        let raw = RawTensor::read_from(&bytes[..]).map_err(|e| input(format!("{}: {e}", path.display())))?;
        if a.segment_len == 0 {
            return Err(input("--segment-len must be positive"));
        }
        let t = csc::encode_stream(&raw.values, a.segment_len, csc::DEFAULT_COUNT_BITS, Signedness::Signed).map_err(input)?;
        (raw.dims, t)
    };
    let values: usize = dims.iter().product();
    let raw_bits = values as u64 * csc::VALUE_BITS;
    let compressed = t.compressed_size_bits();
    let rep = EncodeReport {
        schema: "eyesim.csc.v1",
        dims,
        values,
        nonzeros: t.nonzeros(),
        entries: t.entries(),
        raw_bits,
        compressed_bits: compressed,
        ratio: raw_bits as f64 / compressed.max(1) as f64,
        tensor: &t,
    };
    Ok(match a.output.format {
        Format::Json => json(&rep).into_bytes(),
        Format::Csv => {
            format!(
                "values,nonzeros,entries,raw_bits,compressed_bits,ratio\n{},{},{},{},{},{:.6}\n",
                rep.values, rep.nonzeros, rep.entries, rep.raw_bits, rep.compressed_bits, rep.ratio
            )
            .into_bytes()
        }
    })
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<String, CliError> {
    let model = load_model_arg(&a.model)?;
    let scales = parse_scales(&a.scales)?;
    let variants: Vec<ArchVariant> = a.variants.split(',').map(|v| parse_variant(v.trim())).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for v in variants {
        for p in engine::scalability_sweep(&model, &scales, v)? {
            rows.push((v, p));
        }
    }
    Ok(match a.output.format {
        Format::Csv => {
            let mut s = String::from("variant,pes,total_cycles,normalized,linear,fraction_of_linear\n");
            for (v, p) in &rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{:.6},{:.6},{:.6}",
                    v.name(),
                    p.pes,
                    p.total_cycles,
                    p.normalized,
                    p.linear,
                    p.normalized / p.linear
                );
            }
            s
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                variant: &'static str,
                #[serde(flatten)]
                point: &'a engine::ScalePoint,
            }
            let rows: Vec<Row> = rows.iter().map(|(v, p)| Row { variant: v.name(), point: p }).collect();
            json(&serde_json::json!({ "schema": "eyesim.sweep.v1", "model": model.name, "rows": rows }))
        }
    })
}

pub fn cmd_arch(a: &ArchArgs) -> Result<String, CliError> {
    let arch = build_arch(&a.variant, a.pes)?;
    let r = arch.report();
    Ok(match a.output.format {
        Format::Json => json(&r),
        Format::Csv => format!(
            "name,pes,macs,clock_mhz,peak_gops,glb_kib\n{},{},{},{},{},{}\n",
            r.name, r.pes, r.macs, r.clock_mhz, r.peak_gops, r.glb_kib
        ),
    })
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a).and_then(|s| emit(&a.output, s)),
        Command::Simulate(a) => cmd_simulate(a).and_then(|s| emit(&a.output, s)),
        Command::Encode(a) => cmd_encode(a).and_then(|b| match &a.output.out {
            Some(p) => write_atomic(p, &b).map_err(CliError::from),
            None => std::io::stdout().write_all(&b).map_err(CliError::from),
        }),
        Command::Sweep(a) => cmd_sweep(a).and_then(|s| emit(&a.output, s)),
        Command::Arch(a) => cmd_arch(a).and_then(|s| emit(&a.output, s)),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("eyesim: {e}");
            e.exit_code()
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}
