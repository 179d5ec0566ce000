//! The `edquant` command line.

pub mod fixtures;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::edcore::ExecMode;
use crate::error::{Error, Result};
use crate::formats::{lookup, BlockFormat, FormatSpec, REGISTRY_NAMES};
use crate::graph::{
    calibrate_model, evaluate_model, samples_matrix, weight_map, CalibMode, CalibOptions,
    ModelGraph, WeightMap, BYTES_PER_VALUE,
};
use crate::metrics::{bits_per_weight, CalibReport, RunEcho};
use crate::tensorio::{DType, DenseTensor, QuantizedContainer, TensorContainer};

/// Exit status of a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad arguments, unknown format, invalid model description.
pub const EXIT_CONFIG: i32 = 2;
/// Unreadable, unwritable or corrupt files.
pub const EXIT_IO: i32 = 3;
/// Tensor shapes that do not fit the model.
pub const EXIT_SHAPE: i32 = 4;
/// Non-finite values during calibration or encoding.
pub const EXIT_NUMERICAL: i32 = 5;
/// `eval` found artifacts inconsistent with the stored report.
pub const EXIT_MISMATCH: i32 = 6;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidFormat(_) | Error::UnknownFormat(_) | Error::Graph(_) => {
            EXIT_CONFIG
        }
        Error::Io { .. } | Error::Corrupt(_) => EXIT_IO,
        Error::Shape(_) => EXIT_SHAPE,
        Error::NumericalAbort { .. } | Error::NonFinite(_) | Error::Overflow { .. } => {
            EXIT_NUMERICAL
        }
        Error::Mismatch(_) => EXIT_MISMATCH,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "edquant",
    version,
    about = "Block-format emulation and error-diffusion quantization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate and quantize a model.
    Quantize(RunConfig),
    /// List the format registry or describe one format.
    Formats {
        /// Registry name or `b<block>e<exp>m<man>s<scalebits>` spec.
        name: Option<String>,
    },
    /// Recompute a run's report from its artifacts and check it.
    Eval(EvalArgs),
    /// Write a synthetic model, weights and samples.
    GenFixture(FixtureArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ed,
    Gpfq,
    Rtn,
}

impl From<ModeArg> for CalibMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ed => CalibMode::Ed,
            ModeArg::Gpfq => CalibMode::Gpfq,
            ModeArg::Rtn => CalibMode::Rtn,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    #[default]
    LowMemory,
    Direct,
}

impl ExecArg {
    fn mode(self) -> ExecMode {
        match self {
            ExecArg::LowMemory => ExecMode::LowMemory,
            ExecArg::Direct => ExecMode::Direct,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ExecArg::LowMemory => "low-memory",
            ExecArg::Direct => "direct",
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct RunConfig {
    /// Model description (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Weights container (.tct).
    #[arg(long)]
    pub weights: PathBuf,
    /// Calibration samples container (.tct) holding a `samples` tensor.
    #[arg(long)]
    pub samples: PathBuf,
    /// Target format name or spec.
    #[arg(long)]
    pub format: String,
    /// Override the format's block size.
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long, value_enum, default_value = "ed")]
    pub mode: ModeArg,
    /// Calibrate (without quantizing) layers whose policy is `frozen`.
    #[arg(long)]
    pub calibrate_unquantized: bool,
    /// Quantize linear-layer inputs with the weight format.
    #[arg(long)]
    pub quantize_activations: bool,
    /// Recorded in the report; the pipeline itself makes no random choices.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accumulator strategy for ED.
    #[arg(long, value_enum, default_value = "low-memory")]
    pub exec: ExecArg,
    /// Output base path; writes `<base>.tcq` and `<base>.tct`.
    #[arg(long)]
    pub out_weights: PathBuf,
    /// Report JSON path; the per-layer CSV goes next to it.
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Original weights (.tct).
    #[arg(long)]
    pub weights: PathBuf,
    /// Output base path of the run (`<base>.tcq` and `<base>.tct`).
    #[arg(long)]
    pub quantized: PathBuf,
    #[arg(long)]
    pub samples: PathBuf,
    /// Stored report to verify.
    #[arg(long)]
    pub report: PathBuf,
    /// Maximum relative deviation accepted.
    #[arg(long, default_value_t = 1e-12)]
    pub tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    Fig1,
    Mlp,
}

#[derive(Clone, Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, value_enum)]
    pub kind: FixtureKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving `model.json`, `weights.tct` and `samples.tct`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub output_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub num_samples: usize,
}

/// Parses `args` (including the program name), runs, and returns the exit
/// status. Diagnostics go to stderr, listings to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("edquant: error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    let w = |r: std::io::Result<()>| r.map_err(|e| Error::io("<stdout>", e));
    match cmd {
        Command::Quantize(cfg) => cmd_quantize(&cfg).map(|_| ()),
        Command::Formats { name } => w(out.write_all(cmd_formats(name.as_deref())?.as_bytes())),
        Command::Eval(args) => w(out.write_all(cmd_eval(&args)?.as_bytes())),
        Command::GenFixture(args) => cmd_gen_fixture(&args),
    }
}

/// `<base>.tcq` and `<base>.tct` for an output base path; a trailing
/// `.tcq`/`.tct` extension on `base` is dropped.
pub fn output_paths(base: &Path) -> (PathBuf, PathBuf) {
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("tcq" | "tct") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("tcq"), with("tct"))
}

fn resolve_format(name: &str, block_size: Option<usize>) -> Result<BlockFormat> {
    let mut fmt = lookup(name)?.as_block();
    if let Some(bs) = block_size {
        fmt = fmt.with_block_size(bs);
    }
    fmt.validate()?;
    Ok(fmt)
}

fn dtypes(c: &TensorContainer) -> BTreeMap<String, DType> {
    c.tensors
        .iter()
        .map(|(k, t)| (k.clone(), t.dtype))
        .collect()
}

pub fn cmd_quantize(cfg: &RunConfig) -> Result<CalibReport> {
    let fmt = resolve_format(&cfg.format, cfg.block_size)?;
    let graph = ModelGraph::read(&cfg.model)?;
    let container = TensorContainer::read(&cfg.weights)?;
    let samples = samples_matrix(&TensorContainer::read(&cfg.samples)?)?;
    let weights = weight_map(&container)?;
    let options = CalibOptions {
        mode: cfg.mode.into(),
        calibrate_unquantized: cfg.calibrate_unquantized,
        quantize_activations: cfg.quantize_activations,
        exec: cfg.exec.mode(),
    };
    info!(
        "quantizing {} linear layers to {} ({} bits/weight), mode {}",
        graph.linear_nodes().count(),
        fmt,
        bits_per_weight(&fmt),
        options.mode.as_str()
    );
    let outcome = calibrate_model(
        &graph,
        &weights,
        &dtypes(&container),
        &samples,
        &fmt,
        &options,
    )?;

    let mut qc = QuantizedContainer::new();
    let mut dense = container.clone();
    for (name, q) in outcome.quantized {
        dense.tensors.remove(&name);
        qc.insert(name, q);
    }
    for (name, t) in &container.tensors {
        let v = &outcome.weights[name];
        if qc.tensors.contains_key(name) || v.data() == t.data() {
            continue;
        }
        dense.insert(
            name.clone(),
            DenseTensor::new(t.shape.clone(), t.dtype, v.data().to_vec())?,
        );
    }
    let (tcq, tct) = output_paths(&cfg.out_weights);
    qc.write(&tcq)?;
    dense.write(&tct)?;

    let report = CalibReport {
        config: RunEcho {
            format: cfg.format.clone(),
            format_spec: fmt.spec_string(),
            block_size: fmt.block_size,
            bits_per_weight: bits_per_weight(&fmt),
            mode: options.mode.as_str().into(),
            exec_mode: cfg.exec.name().into(),
            calibrate_unquantized: cfg.calibrate_unquantized,
            quantize_activations: cfg.quantize_activations,
            seed: cfg.seed,
            bytes_per_value: BYTES_PER_VALUE,
            policies: outcome.policies,
        },
        layers: outcome.layers,
        end_to_end: outcome.end_to_end,
    };
    report.write(&cfg.out_report)?;
    report.write_csv(cfg.out_report.with_extension("csv"))?;
    for l in &report.layers {
        info!(
            "{}: {} error {:.6e} (rtn {}), zero-norm {}, clamps {}, rescales {}",
            l.node,
            l.action,
            l.error_after,
            l.rtn_error.map_or("-".into(), |e| format!("{e:.6e}")),
            l.zero_norm_columns,
            l.scale_clamps,
            l.rescales
        );
    }
    info!("end-to-end error {:.6e}", report.end_to_end.error);
    Ok(report)
}

/// Final weights of a run: the dense container with the quantized tensors
/// decoded on top.
pub fn load_run_weights(base: &Path) -> Result<WeightMap> {
    let (tcq, tct) = output_paths(base);
    let mut weights = weight_map(&TensorContainer::read(&tct)?)?;
    for (name, q) in QuantizedContainer::read(&tcq)?.tensors {
        if weights.insert(name.clone(), q.dequantize()).is_some() {
            return Err(Error::Corrupt(format!(
                "`{name}` stored both dense and quantized"
            )));
        }
    }
    Ok(weights)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let stored = CalibReport::read(&args.report)?;
    let c = &stored.config;
    let mode = match c.mode.as_str() {
        "ed" => CalibMode::Ed,
        "gpfq" => CalibMode::Gpfq,
        "rtn" => CalibMode::Rtn,
        m => return Err(Error::Corrupt(format!("report mode `{m}`"))),
    };
    let fmt = resolve_format(&c.format, Some(c.block_size))?;
    let options = CalibOptions {
        mode,
        calibrate_unquantized: c.calibrate_unquantized,
        quantize_activations: c.quantize_activations,
        exec: ExecMode::default(),
    };
    let graph = ModelGraph::read(&args.model)?;
    let original = weight_map(&TensorContainer::read(&args.weights)?)?;
    let samples = samples_matrix(&TensorContainer::read(&args.samples)?)?;
    let fin = load_run_weights(&args.quantized)?;
    if fin.keys().ne(original.keys()) {
        return Err(Error::Mismatch(
            "run weights do not cover the model's tensors".into(),
        ));
    }
    let (mut layers, end_to_end) =
        evaluate_model(&graph, &original, &fin, &samples, &fmt, &options)?;
    for (l, s) in layers.iter_mut().zip(&stored.layers) {
        l.zero_norm_columns = s.zero_norm_columns;
        l.scale_clamps = s.scale_clamps;
        l.rescales = s.rescales;
    }
    let recomputed = CalibReport {
        config: stored.config.clone(),
        layers,
        end_to_end,
    };

    let mut table =
        String::from("node\taction\terror_before\terror_after\trtn_error\tstored_error_after\n");
    for (l, s) in recomputed.layers.iter().zip(&stored.layers) {
        table.push_str(&format!(
            "{}\t{}\t{:.12e}\t{:.12e}\t{}\t{:.12e}\n",
            l.node,
            l.action,
            l.error_before,
            l.error_after,
            l.rtn_error.map_or("-".into(), |e| format!("{e:.12e}")),
            s.error_after
        ));
    }
    table.push_str(&format!(
        "end_to_end\t-\t-\t{:.12e}\t-\t{:.12e}\n",
        recomputed.end_to_end.error, stored.end_to_end.error
    ));
    let dev = recomputed.max_relative_deviation(&stored)?;
    if dev > args.tolerance {
        eprint!("{table}");
        return Err(Error::Mismatch(format!(
            "recomputed errors deviate by {dev:e} (tolerance {:e})",
            args.tolerance
        )));
    }
    table.push_str(&format!("ok: max relative deviation {dev:e}\n"));
    Ok(table)
}

/// Plain notation for moderate magnitudes, exponent notation otherwise.
fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn describe(name: &str, spec: &FormatSpec) -> String {
    let s = spec.stats();
    let bits = match spec {
        FormatSpec::Element(e) => e.width() as f64,
        FormatSpec::Block(b) => bits_per_weight(b),
    };
    format!(
        "{name:<12} {:<40} bits/value {bits:<6} values {:<5} alphabet {:<6} max {} precision {} dynamic range {}",
        spec.to_string(),
        s.unique_value_count,
        s.alphabet_size,
        num(s.max_value),
        num(s.precision),
        num(s.dynamic_range)
    )
}

pub fn cmd_formats(name: Option<&str>) -> Result<String> {
    let mut out = String::new();
    match name {
        None => {
            for n in REGISTRY_NAMES {
                out.push_str(&describe(n, &lookup(n)?));
                out.push('\n');
            }
        }
        Some(n) => {
            let spec = lookup(n)?;
            out.push_str(&describe(n, &spec));
            out.push('\n');
            let values: Vec<String> = spec.enumerate_values().iter().map(|&v| num(v)).collect();
            out.push_str(&format!("{} values:\n{}\n", values.len(), values.join(" ")));
        }
    }
    Ok(out)
}

pub fn cmd_gen_fixture(args: &FixtureArgs) -> Result<()> {
    let dims = fixtures::FixtureDims {
        input: args.input_dim,
        hidden: args.hidden_dim,
        output: args.output_dim,
        samples: args.num_samples,
    };
    let f = match args.kind {
        FixtureKind::Fig1 => fixtures::fig1(args.seed, dims)?,
        FixtureKind::Mlp => fixtures::mlp(args.seed, dims)?,
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    f.graph.write(args.out_dir.join("model.json"))?;
    f.weights.write(args.out_dir.join("weights.tct"))?;
    f.samples.write(args.out_dir.join("samples.tct"))?;
    info!("wrote fixture to {}", args.out_dir.display());
    Ok(())
}
