//! File formats.
//!
//! # Sample stream CSV
//!
//! ```text
//! packet_index,t,ax1,ay1,az1,ax2,ay2,az2,gx,gy,gz
//! -,s,m/s^2,m/s^2,m/s^2,m/s^2,m/s^2,m/s^2,rad/s,rad/s,rad/s
//! 0,0,0.0012,-0.0003,9.8071,...
//! ```
//!
//! Columns `*1` are the primary (low-noise) accelerometer, `*2` the
//! secondary one, `g*` the gyroscope. The second line declares units and
//! must match exactly. An accelerometer triple may be left empty when that
//! sample was lost. Gaps in `packet_index` are lost packets. Numbers are
//! written in the shortest form that parses back to the same `f64`, so
//! reading and rewriting a file produced here gives identical bytes.
//!
//! # Parameter files
//!
//! Either JSON (the serde form of [`CalibrationParams`]) or flat
//! `key = value` text with one scalar per line and `#` comments:
//!
//! ```text
//! accel.misalignment.yz = 0.0012
//! accel.scale.x = 1.0021
//! gyro.bias.z = -0.0004
//! ```
//!
//! Accelerometer misalignment keys are `yz zy zx`, gyroscope keys are
//! `yz zy xz zx xy yx`; scale and bias keys are `x y z`.
//!
//! # Run configuration
//!
//! TOML with optional `[detector]` and `[solver]` tables whose keys mirror
//! [`DetectorConfig`] and [`SolverConfig`], plus a top-level `ec_window`.
//! Missing keys take their defaults; unknown keys are rejected.
//!
//! # Erasure-code packet CSV
//!
//! ```text
//! packet_index,payload,parity
//! 0,1a00f3ff0200,000000000000
//! ```
//!
//! Payload and parity are 6 bytes as 12 lowercase hex digits. The payload
//! is the gyro sample as three little-endian `i16` counts (x, y, z).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::calibration::SolverConfig;
use crate::detector::{DetectorConfig, StaticSegment};
use crate::ec::{self, EcPacket, Payload};
use crate::error::{Error, Result};
use crate::model::{AccelParams, CalibrationParams, GyroParams, TriSample};
use crate::stream::{Record, SampleStream};

pub const STREAM_HEADER: &str = "packet_index,t,ax1,ay1,az1,ax2,ay2,az2,gx,gy,gz";
pub const STREAM_UNITS: &str = "-,s,m/s^2,m/s^2,m/s^2,m/s^2,m/s^2,m/s^2,rad/s,rad/s,rad/s";
pub const PACKET_HEADER: &str = "packet_index,payload,parity";
pub const DECODED_HEADER: &str = "packet_index,payload,status";
pub const SEGMENT_HEADER: &str = "start,end,duration,mean_ax,mean_ay,mean_az";

/// How to interpret a stream file.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreamFormat {
    /// Overrides the rate inferred from the timestamps.
    pub sample_rate: Option<f64>,
}

fn malformed(line: u64, message: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        message: message.into(),
    }
}

fn csv_rows(text: &str) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .into_records()
        .map(|r| {
            r.map(|rec| (rec.position().map_or(0, |p| p.line()), rec))
                .map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line());
                    malformed(line, e.to_string())
                })
        })
}

fn expect_header(line: Option<&str>, expected: &str, lineno: u64) -> Result<()> {
    let found = line.unwrap_or("").trim_end_matches('\r');
    if found == expected {
        Ok(())
    } else {
        Err(malformed(lineno, format!("expected header `{expected}`, found `{found}`")))
    }
}

fn parse_f64(s: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| malformed(line, format!("bad number `{s}` in column {column}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed(line, format!("non-finite value in column {column}")))
    }
}

fn parse_triple(rec: &csv::StringRecord, at: usize, line: u64, optional: bool) -> Result<Option<TriSample>> {
    let cells = [&rec[at], &rec[at + 1], &rec[at + 2]];
    if optional && cells.iter().all(|c| c.is_empty()) {
        return Ok(None);
    }
    let names = STREAM_HEADER.split(',').collect::<Vec<_>>();
    let mut v = [0.0; 3];
    for (k, c) in cells.iter().enumerate() {
        v[k] = parse_f64(c, line, names[at + k])?;
    }
    Ok(Some(Vector3::from(v)))
}

pub fn parse_stream(text: &str, format: StreamFormat) -> Result<SampleStream> {
    let mut lines = text.lines();
    expect_header(lines.next(), STREAM_HEADER, 1)?;
    let units = lines.next().unwrap_or("").trim_end_matches('\r');
    if units != STREAM_UNITS {
        return Err(Error::UnitHeader {
            expected: STREAM_UNITS.into(),
            found: units.into(),
        });
    }
    let mut records: Vec<Record> = Vec::new();
    for row in csv_rows(text).skip(2) {
        let (line, rec) = row?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 11 {
            return Err(malformed(line, format!("expected 11 columns, found {}", rec.len())));
        }
        let packet_index: u64 = rec[0]
            .parse()
            .map_err(|_| malformed(line, format!("bad packet index `{}`", &rec[0])))?;
        if let Some(prev) = records.last() {
            if packet_index <= prev.packet_index {
                return Err(Error::NonMonotonicIndex {
                    line,
                    index: packet_index,
                    previous: prev.packet_index,
                });
            }
        }
        records.push(Record {
            packet_index,
            timestamp: parse_f64(&rec[1], line, "t")?,
            accel: parse_triple(&rec, 2, line, true)?,
            accel_secondary: parse_triple(&rec, 5, line, true)?,
            gyro: parse_triple(&rec, 8, line, false)?.expect("gyro is required"),
        });
    }
    let rate = match format.sample_rate {
        Some(r) => r,
        None => infer_rate(&records)?,
    };
    SampleStream::new(records, rate)
}

fn infer_rate(records: &[Record]) -> Result<f64> {
    let (Some(a), Some(b)) = (records.first(), records.last()) else {
        return Err(Error::EmptyInput("stream has no records".into()));
    };
    let span = b.timestamp - a.timestamp;
    if records.len() < 2 || span <= 0.0 {
        return Err(Error::InsufficientData(
            "cannot infer the sample rate from fewer than two timestamps".into(),
        ));
    }
    let rate = (b.packet_index - a.packet_index) as f64 / span;
    Ok((rate * 1e6).round() / 1e6)
}

pub fn read_stream(path: &Path, format: StreamFormat) -> Result<SampleStream> {
    parse_stream(&fs::read_to_string(path)?, format)
}

fn push_triple(out: &mut String, v: Option<&TriSample>) {
    match v {
        Some(v) => {
            let _ = write!(out, ",{},{},{}", v.x, v.y, v.z);
        }
        None => out.push_str(",,,"),
    }
}

pub fn format_stream(stream: &SampleStream) -> String {
    let mut out = String::with_capacity(stream.len() * 120);
    out.push_str(STREAM_HEADER);
    out.push('\n');
    out.push_str(STREAM_UNITS);
    out.push('\n');
    for r in stream.records() {
        let _ = write!(out, "{},{}", r.packet_index, r.timestamp);
        push_triple(&mut out, r.accel.as_ref());
        push_triple(&mut out, r.accel_secondary.as_ref());
        push_triple(&mut out, Some(&r.gyro));
        out.push('\n');
    }
    out
}

pub fn write_stream(path: &Path, stream: &SampleStream) -> Result<()> {
    Ok(fs::write(path, format_stream(stream))?)
}

const AXES: [&str; 3] = ["x", "y", "z"];
const ACCEL_ANGLES: [&str; 3] = ["yz", "zy", "zx"];
const GYRO_ANGLES: [&str; 6] = ["yz", "zy", "xz", "zx", "xy", "yx"];

fn param_entries(p: &CalibrationParams) -> Vec<(String, f64)> {
    let mut out = Vec::with_capacity(21);
    let mut add = |prefix: &str, names: &[&str], values: &[f64]| {
        for (n, v) in names.iter().zip(values) {
            out.push((format!("{prefix}.{n}"), *v));
        }
    };
    add("accel.misalignment", &ACCEL_ANGLES, &p.accel.misalignment);
    add("accel.scale", &AXES, &p.accel.scale);
    add("accel.bias", &AXES, &p.accel.bias);
    add("gyro.misalignment", &GYRO_ANGLES, &p.gyro.misalignment);
    add("gyro.scale", &AXES, &p.gyro.scale);
    add("gyro.bias", &AXES, &p.gyro.bias);
    out
}

pub fn format_params_kv(p: &CalibrationParams) -> String {
    let mut out = String::new();
    for (k, v) in param_entries(p) {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

pub fn parse_params_kv(text: &str) -> Result<CalibrationParams> {
    let keys: Vec<String> = param_entries(&CalibrationParams::identity())
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let mut values: Vec<Option<f64>> = vec![None; keys.len()];
    for (n, raw) in text.lines().enumerate() {
        let line = n as u64 + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| malformed(line, "expected `key = value`"))?;
        let k = k.trim();
        let slot = keys
            .iter()
            .position(|x| x == k)
            .ok_or_else(|| malformed(line, format!("unknown key `{k}`")))?;
        if values[slot].is_some() {
            return Err(malformed(line, format!("duplicate key `{k}`")));
        }
        values[slot] = Some(parse_f64(v.trim(), line, k)?);
    }
    let mut flat = Vec::with_capacity(keys.len());
    for (k, v) in keys.iter().zip(values) {
        flat.push(v.ok_or_else(|| Error::InvalidParams(format!("missing key `{k}`")))?);
    }
    let a: [f64; 9] = flat[..9].try_into().expect("9 accel values");
    let g = &flat[9..];
    let params = CalibrationParams {
        accel: AccelParams::from_slice(&a),
        gyro: GyroParams {
            misalignment: g[..6].try_into().expect("6 angles"),
            scale: g[6..9].try_into().expect("3 scales"),
            bias: g[9..12].try_into().expect("3 biases"),
        },
    };
    params.validate()?;
    Ok(params)
}

pub fn format_params_json(p: &CalibrationParams) -> String {
    let mut s = serde_json::to_string_pretty(p).expect("params serialize");
    s.push('\n');
    s
}

/// Accepts either JSON or key-value text.
pub fn parse_params(text: &str) -> Result<CalibrationParams> {
    if text.trim_start().starts_with('{') {
        let p: CalibrationParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    } else {
        parse_params_kv(text)
    }
}

pub fn read_params(path: &Path) -> Result<CalibrationParams> {
    parse_params(&fs::read_to_string(path)?)
}

/// Writes JSON for `.json` paths and key-value text otherwise.
pub fn write_params(path: &Path, p: &CalibrationParams) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e == "json") {
        format_params_json(p)
    } else {
        format_params_kv(p)
    };
    Ok(fs::write(path, text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub detector: DetectorConfig,
    pub solver: SolverConfig,
    pub ec_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            solver: SolverConfig::default(),
            ec_window: ec::DEFAULT_WINDOW,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.solver.validate()?;
        ec::validate_window(self.ec_window)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

pub fn format_config(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

pub fn format_packets(packets: &[EcPacket]) -> String {
    let mut out = String::with_capacity(packets.len() * 34);
    out.push_str(PACKET_HEADER);
    out.push('\n');
    for p in packets {
        let _ = writeln!(
            out,
            "{},{},{}",
            p.packet_index,
            ec::payload_to_hex(&p.payload),
            ec::payload_to_hex(&p.parity)
        );
    }
    out
}

fn parse_hex(s: &str, line: u64) -> Result<Payload> {
    ec::payload_from_hex(s).ok_or_else(|| malformed(line, format!("bad 6-byte hex `{s}`")))
}

pub fn parse_packets(text: &str) -> Result<Vec<EcPacket>> {
    expect_header(text.lines().next(), PACKET_HEADER, 1)?;
    let mut out: Vec<EcPacket> = Vec::new();
    for row in csv_rows(text).skip(1) {
        let (line, rec) = row?;
        if rec.len() != 3 {
            return Err(malformed(line, format!("expected 3 columns, found {}", rec.len())));
        }
        let packet_index: u64 = rec[0]
            .parse()
            .map_err(|_| malformed(line, format!("bad packet index `{}`", &rec[0])))?;
        if let Some(prev) = out.last() {
            if packet_index <= prev.packet_index {
                return Err(Error::NonMonotonicIndex {
                    line,
                    index: packet_index,
                    previous: prev.packet_index,
                });
            }
        }
        out.push(EcPacket {
            packet_index,
            payload: parse_hex(&rec[1], line)?,
            parity: parse_hex(&rec[2], line)?,
        });
    }
    Ok(out)
}

/// Known payloads with a `received`/`recovered` status column.
pub fn format_decoded(out: &ec::DecodeOutput) -> String {
    let mut s = String::from(DECODED_HEADER);
    s.push('\n');
    for (i, p) in out.payloads.iter().enumerate() {
        let Some(p) = p else { continue };
        let status = if out.recovered.binary_search(&(i as u64)).is_ok() {
            "recovered"
        } else {
            "received"
        };
        let _ = writeln!(s, "{i},{},{status}", ec::payload_to_hex(p));
    }
    s
}

pub fn format_segments(segments: &[StaticSegment]) -> String {
    let mut s = String::from(SEGMENT_HEADER);
    s.push('\n');
    for g in segments {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            g.start, g.end, g.duration, g.mean_accel.x, g.mean_accel.y, g.mean_accel.z
        );
    }
    s
}
