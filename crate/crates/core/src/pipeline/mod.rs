//! Raw sensor streams to fixed-shape model instances: segmentation,
//! Fourier resampling, handcrafted features, normalization and conflict
//! filtering.

mod conflicts;
mod features;
mod normalize;
mod resample;
mod segment;
mod stream;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::debug;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use conflicts::{filter_conflicts, ConflictTable, ResolvedConflicts};
pub use features::{extract_features, feature_dim, feature_names, CHANNEL_FEATURES, MAGNITUDE_FEATURES};
pub use normalize::{Normalizer, STD_FLOOR};
pub use resample::resample_fourier;
pub use segment::{expected_samples, samples_in, segment_windows, window_grid, Segment};
pub use stream::{read_annotations, write_annotations, SensorLayout, SensorStream};

use crate::error::{Error, Result};
use crate::labels::{active_labels, Annotation, LabelKind, LabelSchema, LabelSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_s: f64,
    pub step_s: f64,
    pub target_len: usize,
    pub conflict_pairs: ConflictTable,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_s: 3.0,
            step_s: 1.5,
            target_len: 50,
            conflict_pairs: ConflictTable::default(),
        }
    }
}

/// A fixed-length multi-channel window, `channels × target_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawWindow {
    pub data: Array2<f64>,
    pub start_time: f64,
    pub end_time: f64,
    /// Channels with too few samples in the window; their rows are zero.
    pub missing_channels: Vec<bool>,
}

impl RawWindow {
    pub fn num_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One model-ready row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub window: RawWindow,
    pub features: FeatureVector,
    pub labels: LabelSet,
    pub user_id: String,
}

/// Builds a window from per-channel samples (missing samples already
/// removed). A channel holding fewer than half of `expected[c]` samples is
/// marked missing. Returns `None` when every channel is missing.
pub fn assemble_window(
    channels: &[Vec<f64>],
    expected: &[usize],
    target_len: usize,
    start_time: f64,
    end_time: f64,
) -> Result<Option<RawWindow>> {
    let mut data = Array2::zeros((channels.len(), target_len));
    let mut missing_channels = vec![false; channels.len()];
    for (c, samples) in channels.iter().enumerate() {
        if samples.len() < 2 || 2 * samples.len() < expected[c] {
            missing_channels[c] = true;
            continue;
        }
        let r = resample_fourier(samples, target_len)?;
        data.row_mut(c).iter_mut().zip(r).for_each(|(d, v)| *d = v);
    }
    if missing_channels.iter().all(|&m| m) {
        return Ok(None);
    }
    Ok(Some(RawWindow { data, start_time, end_time, missing_channels }))
}

/// Stream files and annotations of one recording session.
#[derive(Debug, Clone)]
pub struct Recording {
    pub name: String,
    pub streams: Vec<SensorStream>,
    pub annotations: Vec<Annotation>,
}

pub const ANNOTATION_FILE: &str = "annotations.csv";

impl Recording {
    /// Reads a directory holding `annotations.csv` plus one `<sensor>.csv`
    /// per stream. Sensors are ordered by file name.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .filter(|p| p.file_name().is_some_and(|n| n != ANNOTATION_FILE))
            .collect();
        files.sort();
        let streams = files
            .iter()
            .map(|p| {
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                SensorStream::read_csv(p, id)
            })
            .collect::<Result<Vec<_>>>()?;
        if streams.is_empty() {
            return Err(Error::invalid(format!("no stream files in {}", dir.display())));
        }
        let annotations = read_annotations(&dir.join(ANNOTATION_FILE))?;
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        Ok(Self { name, streams, annotations })
    }

    pub fn write_dir(&self, dir: &Path, channel_names: &[Vec<String>]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (s, names) in self.streams.iter().zip(channel_names) {
            s.write_csv(&dir.join(format!("{}.csv", s.sensor_id)), names)?;
        }
        write_annotations(&dir.join(ANNOTATION_FILE), &self.annotations)
    }

    pub fn layout(&self) -> SensorLayout {
        SensorLayout::from_streams(&self.streams)
    }
}

/// Schema with every label name seen in the recordings, sorted per kind.
pub fn schema_from_recordings(recordings: &[Recording]) -> Result<LabelSchema> {
    let mut sets: [BTreeSet<String>; 3] = Default::default();
    for r in recordings {
        for a in &r.annotations {
            let k = LabelKind::ALL.iter().position(|&k| k == a.kind).unwrap();
            sets[k].insert(a.name.clone());
        }
    }
    let [a, c, u] = sets.map(|s| s.into_iter().collect::<Vec<_>>());
    LabelSchema::new(a, c, u)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub windows: usize,
    pub dropped_short: usize,
    pub dropped_no_user: usize,
    pub dropped_conflict: usize,
    pub kept: usize,
}

impl std::ops::AddAssign for PrepareStats {
    fn add_assign(&mut self, o: Self) {
        self.windows += o.windows;
        self.dropped_short += o.dropped_short;
        self.dropped_no_user += o.dropped_no_user;
        self.dropped_conflict += o.dropped_conflict;
        self.kept += o.kept;
    }
}

enum WindowOutcome {
    Kept(Instance),
    Short,
    NoUser,
    Conflict,
}

/// Segments all streams of a recording on a shared window grid, resamples,
/// extracts (unnormalized) features and attaches labels.
pub fn recording_instances(
    rec: &Recording,
    layout: &SensorLayout,
    schema: &LabelSchema,
    config: &PipelineConfig,
) -> Result<(Vec<Instance>, PrepareStats)> {
    if rec.layout() != *layout {
        return Err(Error::DataIntegrity(format!(
            "recording `{}` has sensor layout {:?}, expected {:?}",
            rec.name,
            rec.layout().sensors,
            layout.sensors
        )));
    }
    if !(config.window_s > 0.0) || !(config.step_s > 0.0) || config.step_s > config.window_s {
        return Err(Error::invalid("need window_s > 0 and 0 < step_s <= window_s"));
    }
    let mut stats = PrepareStats::default();
    let mut periods = Vec::with_capacity(rec.streams.len());
    for s in &rec.streams {
        match s.sample_period() {
            Some(p) => periods.push(p),
            None => return Ok((Vec::new(), stats)),
        }
    }
    let t0 = rec.streams.iter().map(|s| s.timestamps()[0]).fold(f64::NEG_INFINITY, f64::max);
    let t_end = rec
        .streams
        .iter()
        .zip(&periods)
        .map(|(s, p)| s.timestamps()[s.len() - 1] + p)
        .fold(f64::INFINITY, f64::min);
    let conflicts = config.conflict_pairs.resolve(schema);

    let mut expected = Vec::new();
    for (s, p) in rec.streams.iter().zip(&periods) {
        expected.extend(std::iter::repeat_n(expected_samples(config.window_s, *p), s.num_channels()));
    }

    let grid = window_grid(t0, t_end, config.window_s, config.step_s);
    let per_window = crate::par::map(&grid, |&(start, end)| -> Result<WindowOutcome> {
        let mut channels = Vec::with_capacity(layout.num_channels());
        for (s, p) in rec.streams.iter().zip(&periods) {
            let idx = samples_in(s.timestamps(), *p, start, end);
            for ch in s.channels() {
                channels.push(ch[idx.clone()].iter().copied().filter(|v| !v.is_nan()).collect::<Vec<f64>>());
            }
        }
        let Some(window) = assemble_window(&channels, &expected, config.target_len, start, end)? else {
            return Ok(WindowOutcome::Short);
        };
        let active = active_labels(&rec.annotations, start, end);
        let labels = match schema.encode(&active) {
            Ok(l) => l,
            Err(Error::DataIntegrity(_)) => return Ok(WindowOutcome::NoUser),
            Err(e) => return Err(e),
        };
        if !conflicts.keep(&labels) {
            return Ok(WindowOutcome::Conflict);
        }
        let features = extract_features(&window, layout);
        let user_id = schema.names(LabelKind::User)[labels.user_index()].clone();
        Ok(WindowOutcome::Kept(Instance { window, features, labels, user_id }))
    });

    let mut out = Vec::new();
    stats.windows = grid.len();
    for r in per_window {
        match r? {
            WindowOutcome::Kept(inst) => out.push(inst),
            WindowOutcome::Short => stats.dropped_short += 1,
            WindowOutcome::NoUser => stats.dropped_no_user += 1,
            WindowOutcome::Conflict => stats.dropped_conflict += 1,
        }
    }
    stats.kept = out.len();
    debug!("recording {}: {:?}", rec.name, stats);
    Ok((out, stats))
}
