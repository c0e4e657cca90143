//! Raw sample streams as recorded from the device.
//!
//! A stream is indexed by packet number. Lost packets show up as gaps in the
//! index sequence; most consumers work on the dense "slot" view where slot
//! `i` holds packet `first_index + i` or nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TriSample;

/// Which accelerometer feeds the calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccelSource {
    /// The low-noise accelerometer (ADXL355 role).
    #[default]
    Primary,
    /// The accelerometer integrated with the gyroscope (BMI160 role).
    Secondary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub packet_index: u64,
    pub timestamp: f64,
    /// Accelerometer samples are unprotected by the erasure code and may be
    /// missing on records whose gyro payload was recovered.
    pub accel: Option<TriSample>,
    pub accel_secondary: Option<TriSample>,
    pub gyro: TriSample,
}

impl Record {
    pub fn accel_from(&self, source: AccelSource) -> Option<TriSample> {
        match source {
            AccelSource::Primary => self.accel,
            AccelSource::Secondary => self.accel_secondary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamMetadata {
    pub device_id: String,
    pub primary_label: String,
    pub secondary_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    records: Vec<Record>,
    sample_rate: f64,
    pub metadata: StreamMetadata,
}

impl SampleStream {
    pub fn new(records: Vec<Record>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        for (i, pair) in records.windows(2).enumerate() {
            if pair[1].packet_index <= pair[0].packet_index {
                return Err(Error::NonMonotonicIndex {
                    line: i as u64 + 2,
                    index: pair[1].packet_index,
                    previous: pair[0].packet_index,
                });
            }
        }
        for r in &records {
            let finite = r.gyro.iter().all(|v| v.is_finite())
                && r.accel.is_none_or(|a| a.iter().all(|v| v.is_finite()))
                && r.accel_secondary
                    .is_none_or(|a| a.iter().all(|v| v.is_finite()));
            if !finite || !r.timestamp.is_finite() {
                return Err(Error::Malformed {
                    line: r.packet_index,
                    message: "non-finite sample".into(),
                });
            }
        }
        Ok(Self {
            records,
            sample_rate,
            metadata: StreamMetadata::default(),
        })
    }

    pub fn with_metadata(mut self, metadata: StreamMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn first_index(&self) -> u64 {
        self.records.first().map_or(0, |r| r.packet_index)
    }

    /// Number of slots spanned from the first to the last packet.
    pub fn slot_count(&self) -> usize {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => (b.packet_index - a.packet_index) as usize + 1,
            _ => 0,
        }
    }

    /// Packet indices missing between the first and last record.
    pub fn gaps(&self) -> Vec<u64> {
        self.records
            .windows(2)
            .flat_map(|w| (w[0].packet_index + 1)..w[1].packet_index)
            .collect()
    }

    /// Dense per-slot record view.
    pub fn slots(&self) -> Vec<Option<&Record>> {
        let mut out = vec![None; self.slot_count()];
        let first = self.first_index();
        for r in &self.records {
            out[(r.packet_index - first) as usize] = Some(r);
        }
        out
    }

    pub fn accel_slots(&self, source: AccelSource) -> Vec<Option<TriSample>> {
        self.slots()
            .into_iter()
            .map(|r| r.and_then(|r| r.accel_from(source)))
            .collect()
    }

    pub fn gyro_slots(&self) -> Vec<Option<TriSample>> {
        self.slots().into_iter().map(|r| r.map(|r| r.gyro)).collect()
    }

    /// Keeps only the first `slots` slots of the stream.
    pub fn truncated(&self, slots: usize) -> SampleStream {
        let first = self.first_index();
        let records = self
            .records
            .iter()
            .take_while(|r| ((r.packet_index - first) as usize) < slots)
            .cloned()
            .collect();
        SampleStream {
            records,
            sample_rate: self.sample_rate,
            metadata: self.metadata.clone(),
        }
    }

    /// Inserts records for recovered gyro payloads. The accelerometer fields of
    /// inserted records stay empty because accel data is not protected.
    pub fn with_recovered_gyro(&self, recovered: &[(u64, TriSample)]) -> Result<SampleStream> {
        let mut records = self.records.clone();
        for &(index, gyro) in recovered {
            if let Err(pos) = records.binary_search_by_key(&index, |r| r.packet_index) {
                records.insert(
                    pos,
                    Record {
                        packet_index: index,
                        timestamp: index as f64 / self.sample_rate,
                        accel: None,
                        accel_secondary: None,
                        gyro,
                    },
                );
            }
        }
        Ok(SampleStream::new(records, self.sample_rate)?.with_metadata(self.metadata.clone()))
    }
}
