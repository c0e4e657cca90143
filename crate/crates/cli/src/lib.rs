//! Command-line surface for `imucal`.
//!
//! Every subcommand reads and writes the file formats documented in
//! [`imucal::io`]. Errors are reported on stderr as a single line
//! `error[<code>]: <message>` and mapped to a distinct exit status.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use imucal::calibration::{calibrate, detect_segments};
use imucal::detector::extract_segments;
use imucal::ec::{self, LossModel};
use imucal::eval::{self, EvalConfig};
use imucal::io::{self, RunConfig, StreamFormat};
use imucal::synth::{self, GroundTruth};
use imucal::{correct_accel, correct_gyro, AccelSource, Error, SampleStream};

/// Environment variable naming the default run configuration file.
pub const CONFIG_ENV: &str = "IMUCAL_CONFIG";

/// Default gyro quantization step: ±1000 °/s over a signed 16-bit range.
pub const DEFAULT_GYRO_LSB: f64 = 1000.0 * std::f64::consts::PI / 180.0 / 32768.0;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_UNDERDETERMINED: i32 = 4;
pub const EXIT_DIVERGED: i32 = 5;
pub const EXIT_MISSING_MOTION: i32 = 6;
pub const EXIT_NO_USABLE_K: i32 = 7;
pub const EXIT_INCONSISTENT_PARITY: i32 = 8;
pub const EXIT_INSUFFICIENT_DATA: i32 = 9;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Underdetermined { .. } => EXIT_UNDERDETERMINED,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::MissingMotionData { .. } => EXIT_MISSING_MOTION,
        Error::NoUsableThreshold { .. } => EXIT_NO_USABLE_K,
        Error::InconsistentParity { .. } => EXIT_INCONSISTENT_PARITY,
        Error::InsufficientData(_) => EXIT_INSUFFICIENT_DATA,
        Error::Malformed { .. }
        | Error::NonMonotonicIndex { .. }
        | Error::UnitHeader { .. }
        | Error::EmptyInput(_)
        | Error::InvalidConfig(_)
        | Error::InvalidParams(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(name = "imucal", version, about = "Multi-position IMU intrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate accelerometer and gyroscope parameters from a stream
    Calibrate(CalibrateArgs),
    /// Correct a stream with known parameters
    Apply(ApplyArgs),
    /// List the static segments of a stream
    DetectStatic(DetectArgs),
    /// Generate a synthetic multi-pose stream
    Simulate(SimulateArgs),
    /// Truncation study over several sequences of one device
    Evaluate(EvaluateArgs),
    /// Quantize gyro samples into packets with XOR parity
    EcEncode(EcEncodeArgs),
    /// Drop packets according to a loss model
    EcChannel(EcChannelArgs),
    /// Recover lost payloads from received packets
    EcDecode(EcDecodeArgs),
}

#[derive(Debug, Args)]
struct StreamInput {
    /// Stream CSV
    input: PathBuf,
    /// Sample rate in Hz; inferred from timestamps when omitted
    #[arg(long)]
    rate: Option<f64>,
}

impl StreamInput {
    fn read(&self) -> imucal::Result<SampleStream> {
        io::read_stream(&self.input, StreamFormat { sample_rate: self.rate })
    }
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Run configuration (TOML); defaults to $IMUCAL_CONFIG, then built-ins
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> imucal::Result<RunConfig> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        match path {
            Some(p) => io::read_config(&p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    stream: StreamInput,
    #[command(flatten)]
    config: ConfigArg,
    /// Parameter file to write (JSON for .json, key-value text otherwise)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full result as JSON, including the segments used
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[command(flatten)]
    stream: StreamInput,
    #[command(flatten)]
    config: ConfigArg,
    /// Parameter file (JSON or key-value text)
    #[arg(long)]
    params: PathBuf,
    /// Accelerometer column to correct; the other one is copied unchanged
    #[arg(long, value_enum)]
    source: Option<SourceArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SourceArg {
    Primary,
    Secondary,
}

impl From<SourceArg> for AccelSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Primary => AccelSource::Primary,
            SourceArg::Secondary => AccelSource::Secondary,
        }
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    stream: StreamInput,
    #[command(flatten)]
    config: ConfigArg,
    /// Use this threshold factor instead of sweeping
    #[arg(long)]
    k: Option<u32>,
    /// Segment CSV to write; printed when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of poses
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sensor model to simulate; drawn from the seed when omitted
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Where to write the sensor model used
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Disable all sensor noise
    #[arg(long)]
    noiseless: bool,
    /// Specific-force jitter during holds after the first, m/s²
    #[arg(long, default_value_t = 0.0)]
    hold_perturbation: f64,
    #[arg(long, default_value_t = 100.0)]
    rate: f64,
    /// Stream CSV to write; printed when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Stream CSVs, one per run
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Orientation counts to evaluate, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    config: ConfigArg,
    /// Long-format CSV report; printed when neither output is given
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON report
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EcEncodeArgs {
    #[command(flatten)]
    stream: StreamInput,
    #[command(flatten)]
    config: ConfigArg,
    /// Parity window; defaults to the configured one
    #[arg(long)]
    window: Option<usize>,
    /// Gyro quantization step in rad/s
    #[arg(long, default_value_t = DEFAULT_GYRO_LSB)]
    lsb: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EcChannelArgs {
    /// Packet CSV
    input: PathBuf,
    /// `iid:P` or `burst:LEN:P`
    #[arg(long, default_value = "iid:0.05")]
    loss: LossModel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EcDecodeArgs {
    /// Received packet CSV
    input: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    window: Option<usize>,
    /// Number of packets sent; defaults to the last received index + 1
    #[arg(long)]
    len: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the CLI with process stdout and stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI against the given writers and returns the exit status.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let first = text.lines().next().unwrap_or("invalid usage");
                    let first = first.strip_prefix("error: ").unwrap_or(first);
                    let _ = writeln!(err, "error[usage]: {first}");
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            exit_code(&e)
        }
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> imucal::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write) -> imucal::Result<()> {
    match command {
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Apply(a) => cmd_apply(a, out),
        Command::DetectStatic(a) => cmd_detect(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::EcEncode(a) => cmd_ec_encode(a, out),
        Command::EcChannel(a) => cmd_ec_channel(a, out),
        Command::EcDecode(a) => cmd_ec_decode(a, out),
    }
}

fn cmd_calibrate(a: CalibrateArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let cfg = a.config.load()?;
    let stream = a.stream.read()?;
    let result = calibrate(&stream, &cfg.detector, &cfg.solver)?;
    if let Some(p) = &a.out {
        io::write_params(p, &result.params)?;
    }
    if let Some(p) = &a.report {
        let mut json = serde_json::to_string_pretty(&result)?;
        json.push('\n');
        std::fs::write(p, json)?;
    }
    let mut summary = format!(
        "segments_used = {}\nk_selected = {}\nbaseline_variance = {:.6e}\naccel_residual = {:.6e}\ngyro_residual = {:.6e}\n",
        result.segments_used,
        result.k_selected,
        result.baseline_variance,
        result.accel_residual,
        result.gyro_residual
    );
    if a.out.is_none() {
        summary.push_str(&io::format_params_kv(&result.params));
    }
    emit(out, None, &summary)
}

fn cmd_apply(a: ApplyArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let cfg = a.config.load()?;
    let params = io::read_params(&a.params)?;
    let stream = a.stream.read()?;
    let source = a.source.map_or(cfg.detector.accel_source, AccelSource::from);
    let rate = stream.sample_rate();
    let metadata = stream.metadata.clone();
    let records = stream
        .into_records()
        .into_iter()
        .map(|mut r| {
            let slot = match source {
                AccelSource::Primary => &mut r.accel,
                AccelSource::Secondary => &mut r.accel_secondary,
            };
            *slot = slot.map(|v| correct_accel(&v, &params.accel));
            r.gyro = correct_gyro(&r.gyro, &params.gyro);
            r
        })
        .collect();
    let corrected = SampleStream::new(records, rate)?.with_metadata(metadata);
    emit(out, a.out.as_deref(), &io::format_stream(&corrected))
}

fn cmd_detect(a: DetectArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let cfg = a.config.load()?;
    let stream = a.stream.read()?;
    let (k, segments) = match a.k {
        Some(k) => {
            let baseline = imucal::detector::baseline_variance(&stream, &cfg.detector)?;
            (k, extract_segments(&stream, k, baseline, &cfg.detector)?)
        }
        None => {
            let sel = detect_segments(&stream, &cfg.detector, &cfg.solver)?;
            (sel.k, sel.segments)
        }
    };
    let csv = io::format_segments(&segments);
    match &a.out {
        Some(p) => {
            std::fs::write(p, csv)?;
            emit(out, None, &format!("k = {k}\nsegments = {}\n", segments.len()))
        }
        None => emit(out, None, &csv),
    }
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let params = match &a.truth {
        Some(p) => io::read_params(p)?,
        None => synth::random_params(a.seed),
    };
    let mut truth = if a.noiseless {
        GroundTruth::noiseless(params)
    } else {
        GroundTruth {
            params,
            secondary_accel: params.accel,
            ..GroundTruth::default()
        }
    };
    truth.sample_rate = a.rate;
    truth.hold_perturbation = a.hold_perturbation;
    let stream = synth::make_paper_sequence(a.n, &truth, a.seed)?;
    if let Some(p) = &a.truth_out {
        io::write_params(p, &params)?;
    }
    emit(out, a.out.as_deref(), &io::format_stream(&stream))
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let cfg = a.config.load()?;
    let format = StreamFormat { sample_rate: a.rate };
    let sequences = a
        .inputs
        .iter()
        .map(|p| io::read_stream(p, format))
        .collect::<imucal::Result<Vec<_>>>()?;
    let report = eval::truncation_sweep(
        &sequences,
        &a.n,
        &EvalConfig {
            detector: cfg.detector,
            solver: cfg.solver,
        },
    )?;
    if let Some(p) = &a.json {
        std::fs::write(p, eval::format_report_json(&report))?;
    }
    if a.csv.is_some() || a.json.is_none() {
        emit(out, a.csv.as_deref(), &eval::format_report_csv(&report))?;
    }
    Ok(())
}

fn cmd_ec_encode(a: EcEncodeArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let cfg = a.config.load()?;
    let window = a.window.unwrap_or(cfg.ec_window);
    if !(a.lsb.is_finite() && a.lsb > 0.0) {
        return Err(Error::InvalidConfig("lsb must be positive".into()));
    }
    let stream = a.stream.read()?;
    if !stream.gaps().is_empty() {
        return Err(Error::InsufficientData(
            "stream has lost packets; encoding needs a contiguous stream".into(),
        ));
    }
    let payloads: Vec<ec::Payload> = stream
        .records()
        .iter()
        .map(|r| ec::rate_to_payload(&r.gyro, a.lsb))
        .collect();
    let packets = ec::encode_all(&payloads, window)?;
    emit(out, a.out.as_deref(), &io::format_packets(&packets))
}

fn cmd_ec_channel(a: EcChannelArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let packets = io::parse_packets(&std::fs::read_to_string(&a.input)?)?;
    let received = ec::channel_simulate(&packets, a.loss, a.seed)?;
    emit(out, a.out.as_deref(), &io::format_packets(&received))
}

fn cmd_ec_decode(a: EcDecodeArgs, out: &mut dyn Write) -> imucal::Result<()> {
    let cfg = a.config.load()?;
    let window = a.window.unwrap_or(cfg.ec_window);
    let received = io::parse_packets(&std::fs::read_to_string(&a.input)?)?;
    let len = match a.len {
        Some(n) => n,
        None => received.last().map_or(0, |p| p.packet_index + 1),
    };
    let decoded = ec::decode_stream(&received, window, len)?;
    let csv = io::format_decoded(&decoded);
    match &a.out {
        Some(p) => {
            std::fs::write(p, csv)?;
            let mut s = String::new();
            let _ = writeln!(
                s,
                "received = {}\nrecovered = {}\nunrecovered = {}",
                received.len(),
                decoded.recovered.len(),
                decoded.unrecovered.len()
            );
            emit(out, None, &s)
        }
        None => emit(out, None, &csv),
    }
}
