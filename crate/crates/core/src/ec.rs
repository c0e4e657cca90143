//! Sliding-window XOR erasure code for gyro packets.
//!
//! Every packet `i` carries its 6-byte gyro payload `G_i` and the parity
//! `E_i = G_{i−1} ⊕ … ⊕ G_{i−M}`. Indices below zero contribute nothing, so
//! the first `M` parities cover only the payloads that exist.
//!
//! A received packet `j` is one XOR equation over the payloads in
//! `[j−M, j)`. The decoder first peels equations with a single unknown, then
//! runs GF(2) elimination over what is left, so it recovers every payload
//! the received set determines. In particular any loss pattern in which a
//! run of losses is followed by `M` received packets is fully recovered.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TriSample;

pub const PAYLOAD_LEN: usize = 6;
pub const DEFAULT_WINDOW: usize = 4;
pub const MAX_WINDOW: usize = 16;

pub type Payload = [u8; PAYLOAD_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EcPacket {
    pub packet_index: u64,
    pub payload: Payload,
    pub parity: Payload,
}

#[inline]
pub fn xor_into(acc: &mut Payload, other: &Payload) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a ^= b;
    }
}

pub fn validate_window(window: usize) -> Result<()> {
    if (1..=MAX_WINDOW).contains(&window) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "erasure window must be in 1..={MAX_WINDOW}, got {window}"
        )))
    }
}

/// Sender-side state: the last `M` payloads and their running XOR.
#[derive(Debug, Clone)]
pub struct Encoder {
    window: usize,
    ring: Vec<Payload>,
    head: usize,
    running: Payload,
    next_index: u64,
}

impl Encoder {
    pub fn new(window: usize) -> Result<Self> {
        validate_window(window)?;
        Ok(Self {
            window,
            ring: Vec::with_capacity(window),
            head: 0,
            running: [0; PAYLOAD_LEN],
            next_index: 0,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn running_xor(&self) -> Payload {
        self.running
    }

    /// XOR of the ring contents, recomputed from scratch.
    pub fn ring_xor(&self) -> Payload {
        let mut acc = [0; PAYLOAD_LEN];
        for p in &self.ring {
            xor_into(&mut acc, p);
        }
        acc
    }

    /// Emits the packet for `payload` and folds it into the window.
    pub fn encode_next(&mut self, payload: Payload) -> EcPacket {
        let packet = EcPacket {
            packet_index: self.next_index,
            payload,
            parity: self.running,
        };
        self.next_index += 1;
        xor_into(&mut self.running, &payload);
        if self.ring.len() == self.window {
            xor_into(&mut self.running, &self.ring[self.head]);
            self.ring[self.head] = payload;
            self.head = (self.head + 1) % self.window;
        } else {
            self.ring.push(payload);
        }
        packet
    }
}

pub fn encode_all(payloads: &[Payload], window: usize) -> Result<Vec<EcPacket>> {
    let mut enc = Encoder::new(window)?;
    Ok(payloads.iter().map(|p| enc.encode_next(*p)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    /// Payload per packet index `0..stream_len`, `None` where unrecoverable.
    pub payloads: Vec<Option<Payload>>,
    pub recovered: Vec<u64>,
    pub unrecovered: Vec<u64>,
}

/// Reconstructs lost payloads of a stream of `stream_len` packets numbered
/// from zero.
pub fn decode_stream(received: &[EcPacket], window: usize, stream_len: u64) -> Result<DecodeOutput> {
    validate_window(window)?;
    let n = stream_len as usize;
    let mut payloads: Vec<Option<Payload>> = vec![None; n];
    let mut parity: Vec<Option<Payload>> = vec![None; n];
    for p in received {
        let i = p.packet_index as usize;
        if i >= n {
            return Err(Error::InvalidConfig(format!(
                "packet {} beyond stream length {n}",
                p.packet_index
            )));
        }
        if payloads[i].is_some_and(|q| q != p.payload) || parity[i].is_some_and(|q| q != p.parity) {
            return Err(Error::InconsistentParity {
                packet: p.packet_index,
            });
        }
        payloads[i] = Some(p.payload);
        parity[i] = Some(p.parity);
    }
    let lost: Vec<usize> = (0..n).filter(|&i| payloads[i].is_none()).collect();

    peel(&mut payloads, &parity, window);
    eliminate(&mut payloads, &parity, window)?;
    check_parities(&payloads, &parity, window)?;

    let (recovered, unrecovered): (Vec<u64>, Vec<u64>) = lost
        .into_iter()
        .map(|i| i as u64)
        .partition(|&i| payloads[i as usize].is_some());
    Ok(DecodeOutput {
        payloads,
        recovered,
        unrecovered,
    })
}

fn span(j: usize, window: usize) -> std::ops::Range<usize> {
    j.saturating_sub(window)..j
}

/// Resolves equations with exactly one unknown until none are left.
fn peel(payloads: &mut [Option<Payload>], parity: &[Option<Payload>], window: usize) {
    let n = payloads.len();
    let mut unknown = vec![0usize; n];
    let mut queue = VecDeque::new();
    for j in 0..n {
        if parity[j].is_some() {
            unknown[j] = span(j, window).filter(|&i| payloads[i].is_none()).count();
            if unknown[j] == 1 {
                queue.push_back(j);
            }
        }
    }
    while let Some(j) = queue.pop_front() {
        if unknown[j] != 1 {
            continue;
        }
        let mut value = parity[j].expect("queued packets were received");
        let mut missing = None;
        for i in span(j, window) {
            match &payloads[i] {
                Some(p) => xor_into(&mut value, p),
                None => missing = Some(i),
            }
        }
        let Some(i) = missing else { continue };
        payloads[i] = Some(value);
        for k in i + 1..=(i + window).min(n - 1) {
            if parity[k].is_some() {
                unknown[k] -= 1;
                if unknown[k] == 1 {
                    queue.push_back(k);
                }
            }
        }
    }
}

/// GF(2) elimination over clusters of unknowns that share equations.
fn eliminate(payloads: &mut [Option<Payload>], parity: &[Option<Payload>], window: usize) -> Result<()> {
    let n = payloads.len();
    let unknowns: Vec<usize> = (0..n).filter(|&i| payloads[i].is_none()).collect();
    let mut start = 0;
    while start < unknowns.len() {
        let mut end = start + 1;
        while end < unknowns.len() && unknowns[end] - unknowns[end - 1] < window {
            end += 1;
        }
        solve_cluster(payloads, parity, window, &unknowns[start..end])?;
        start = end;
    }
    Ok(())
}

fn solve_cluster(
    payloads: &mut [Option<Payload>],
    parity: &[Option<Payload>],
    window: usize,
    cluster: &[usize],
) -> Result<()> {
    let n = payloads.len();
    let cols = cluster.len();
    let words = cols.div_ceil(64);
    let first = cluster[0];
    let last = *cluster.last().expect("cluster is non-empty");

    let mut rows: Vec<(Vec<u64>, Payload, u64)> = Vec::new();
    for j in first + 1..=(last + window).min(n - 1) {
        let Some(mut rhs) = parity[j] else { continue };
        let mut bits = vec![0u64; words];
        for i in span(j, window) {
            match &payloads[i] {
                Some(p) => xor_into(&mut rhs, p),
                None => {
                    let c = cluster.binary_search(&i).expect("unknowns near a cluster belong to it");
                    bits[c / 64] |= 1 << (c % 64);
                }
            }
        }
        rows.push((bits, rhs, j as u64));
    }

    let mut pivot_row = 0;
    let mut pivots = Vec::new();
    for c in 0..cols {
        let (w, b) = (c / 64, 1u64 << (c % 64));
        let Some(r) = (pivot_row..rows.len()).find(|&r| rows[r].0[w] & b != 0) else {
            continue;
        };
        rows.swap(pivot_row, r);
        let (pivot_bits, pivot_rhs) = (rows[pivot_row].0.clone(), rows[pivot_row].1);
        for (r, row) in rows.iter_mut().enumerate() {
            if r != pivot_row && row.0[w] & b != 0 {
                for (x, y) in row.0.iter_mut().zip(&pivot_bits) {
                    *x ^= y;
                }
                xor_into(&mut row.1, &pivot_rhs);
            }
        }
        pivots.push(c);
        pivot_row += 1;
    }

    for (bits, rhs, j) in &rows[pivot_row..] {
        debug_assert!(bits.iter().all(|&x| x == 0));
        if rhs.iter().any(|&x| x != 0) {
            return Err(Error::InconsistentParity { packet: *j });
        }
    }
    // a pivot row that reduced to a single bit pins its unknown
    for (r, &c) in pivots.iter().enumerate() {
        let ones: u32 = rows[r].0.iter().map(|x| x.count_ones()).sum();
        if ones == 1 {
            payloads[cluster[c]] = Some(rows[r].1);
        }
    }
    Ok(())
}

fn check_parities(payloads: &[Option<Payload>], parity: &[Option<Payload>], window: usize) -> Result<()> {
    for (j, e) in parity.iter().enumerate() {
        let Some(e) = e else { continue };
        let mut acc = [0u8; PAYLOAD_LEN];
        let mut complete = true;
        for p in &payloads[span(j, window)] {
            match p {
                Some(p) => xor_into(&mut acc, p),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete && acc != *e {
            return Err(Error::InconsistentParity { packet: j as u64 });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossModel {
    /// Each packet lost independently with probability `p`.
    Iid { p: f64 },
    /// With probability `p` a burst of `len` consecutive losses starts.
    Burst { len: usize, p: f64 },
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        let p = match *self {
            LossModel::Iid { p } => p,
            LossModel::Burst { len, p } => {
                if len == 0 {
                    return Err(Error::InvalidConfig("burst length must be >= 1".into()));
                }
                p
            }
        };
        if (0.0..1.0).contains(&p) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("loss probability {p} not in [0, 1)")))
        }
    }
}

impl std::str::FromStr for LossModel {
    type Err = Error;

    /// `iid:P` or `burst:LEN:P`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("loss model `{s}`, expected iid:P or burst:LEN:P"));
        let parts: Vec<&str> = s.split(':').collect();
        let model = match parts.as_slice() {
            ["iid", p] => LossModel::Iid {
                p: p.parse().map_err(|_| bad())?,
            },
            ["burst", len, p] => LossModel::Burst {
                len: len.parse().map_err(|_| bad())?,
                p: p.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Per-item drop decisions; `true` means lost.
pub fn drop_mask(n: usize, model: LossModel, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    match model {
        LossModel::Iid { p } => {
            for m in &mut mask {
                *m = rng.random::<f64>() < p;
            }
        }
        LossModel::Burst { len, p } => {
            let mut i = 0;
            while i < n {
                if rng.random::<f64>() < p {
                    let end = (i + len).min(n);
                    mask[i..end].fill(true);
                    i = end;
                } else {
                    i += 1;
                }
            }
        }
    }
    mask
}

/// Drops whole items according to the loss model. Deterministic per seed.
pub fn channel_simulate<T: Clone>(items: &[T], model: LossModel, seed: u64) -> Result<Vec<T>> {
    model.validate()?;
    Ok(items
        .iter()
        .zip(drop_mask(items.len(), model, seed))
        .filter(|(_, lost)| !lost)
        .map(|(x, _)| x.clone())
        .collect())
}

/// Quantizes a body rate to three little-endian `i16` counts of `lsb` rad/s.
pub fn rate_to_payload(rate: &TriSample, lsb: f64) -> Payload {
    let mut out = [0u8; PAYLOAD_LEN];
    for (axis, chunk) in rate.iter().zip(out.chunks_exact_mut(2)) {
        let counts = (axis / lsb).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        chunk.copy_from_slice(&counts.to_le_bytes());
    }
    out
}

pub fn payload_to_rate(payload: &Payload, lsb: f64) -> TriSample {
    let c = |k: usize| f64::from(i16::from_le_bytes([payload[2 * k], payload[2 * k + 1]])) * lsb;
    Vector3::new(c(0), c(1), c(2))
}

pub fn payload_to_hex(p: &Payload) -> String {
    p.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn payload_from_hex(s: &str) -> Option<Payload> {
    if s.len() != 2 * PAYLOAD_LEN || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; PAYLOAD_LEN];
    for (k, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * k..2 * k + 2], 16).ok()?;
    }
    Some(out)
}
