use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Annotation, LabelKind};

/// Raw samples from one sensor. Missing samples are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub sensor_id: String,
    timestamps: Vec<f64>,
    /// One vector per channel, each the same length as `timestamps`.
    channels: Vec<Vec<f64>>,
}

impl SensorStream {
    pub fn new(sensor_id: impl Into<String>, timestamps: Vec<f64>, channels: Vec<Vec<f64>>) -> Result<Self> {
        let sensor_id = sensor_id.into();
        if channels.is_empty() {
            return Err(Error::invalid(format!("stream `{sensor_id}` has no channels")));
        }
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != timestamps.len() {
                return Err(Error::invalid(format!(
                    "stream `{sensor_id}` channel {c} has {} values for {} timestamps",
                    ch.len(),
                    timestamps.len()
                )));
            }
        }
        if let Some(i) = timestamps
            .windows(2)
            .position(|w| !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite())
        {
            return Err(Error::DataIntegrity(format!(
                "stream `{sensor_id}` timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(Self { sensor_id, timestamps, channels })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Median inter-sample interval, or `None` with fewer than two samples.
    pub fn sample_period(&self) -> Option<f64> {
        if self.timestamps.len() < 2 {
            return None;
        }
        let mut d: Vec<f64> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    }

    /// Reads a delimited stream file: header row, timestamp first, then one
    /// column per channel. Empty fields are missing samples.
    pub fn read_csv(path: &Path, sensor_id: impl Into<String>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, e))?;
        let width = r.headers().map_err(|e| Error::parse(path, e))?.len();
        if width < 2 {
            return Err(Error::parse(path, "need a timestamp column and at least one channel"));
        }
        let mut ts = Vec::new();
        let mut chans = vec![Vec::new(); width - 1];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            let t: f64 = rec[0]
                .parse()
                .map_err(|e| Error::parse(path, format!("row {}: timestamp: {e}", line + 2)))?;
            ts.push(t);
            for (c, ch) in chans.iter_mut().enumerate() {
                let field = rec.get(c + 1).unwrap_or("");
                let v = if field.is_empty() {
                    f64::NAN
                } else {
                    field
                        .parse()
                        .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 2)))?
                };
                ch.push(v);
            }
        }
        Self::new(sensor_id, ts, chans)
    }

    pub fn write_csv(&self, path: &Path, channel_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(channel_names.iter().cloned());
        w.write_record(&header).map_err(|e| Error::parse(path, e))?;
        for (i, t) in self.timestamps.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for ch in &self.channels {
                let v = ch[i];
                row.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            w.write_record(&row).map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `start_s,end_s,label_name,label_kind` rows.
pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        if rec.len() != 4 {
            return Err(Error::parse(path, "expected start_s,end_s,label_name,label_kind"));
        }
        let start_s: f64 = rec[0].parse().map_err(|e| Error::parse(path, e))?;
        let end_s: f64 = rec[1].parse().map_err(|e| Error::parse(path, e))?;
        if !(end_s > start_s) {
            return Err(Error::parse(path, format!("empty span {start_s}..{end_s}")));
        }
        let kind: LabelKind = rec[3].parse()?;
        out.push(Annotation { start_s, end_s, name: rec[2].to_string(), kind });
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(["start_s", "end_s", "label_name", "label_kind"])
        .map_err(|e| Error::parse(path, e))?;
    for a in annotations {
        w.write_record([a.start_s.to_string(), a.end_s.to_string(), a.name.clone(), a.kind.to_string()])
            .map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Channel counts per sensor, in the order sensors are stacked into a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub sensors: Vec<(String, usize)>,
}

impl SensorLayout {
    pub fn num_channels(&self) -> usize {
        self.sensors.iter().map(|(_, c)| c).sum()
    }

    /// Channel ranges of the sensors that have exactly three axes.
    pub fn triaxial_groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut off = 0;
        let mut out = Vec::new();
        for (_, c) in &self.sensors {
            if *c == 3 {
                out.push(off..off + 3);
            }
            off += c;
        }
        out
    }

    pub fn from_streams(streams: &[SensorStream]) -> Self {
        Self {
            sensors: streams
                .iter()
                .map(|s| (s.sensor_id.clone(), s.num_channels()))
                .collect(),
        }
    }
}
