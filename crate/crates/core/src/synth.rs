//! Synthetic multi-user, multi-label sensor data.
//!
//! Each activity is a sinusoid at its own frequency with a dominant
//! channel. Users perturb it with a phase offset, an amplitude scale and a
//! per-channel bias. Context `k` damps the channels of sensor
//! `k % sensors`. Gaussian noise is added last.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Annotation, LabelKind, LabelSchema, LabelSet};
use crate::losses::cosine;
use crate::metrics::{confusion_counts, mcc, threshold_predictions};
use crate::pipeline::{extract_features, resample_fourier, Instance, Normalizer, RawWindow, Recording, SensorLayout, SensorStream};
use crate::training::{split_by_user, take_split, SplitSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySignal {
    pub frequency_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSignature {
    pub phase: f64,
    pub amplitude_scale: f64,
    /// One entry per channel.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_activities: usize,
    pub n_contexts: usize,
    pub instances_per_user: usize,
    /// Channels per window, grouped into three-axis sensors.
    pub channels: usize,
    /// Samples per model window after resampling.
    pub snapshots: usize,
    pub sample_rate_hz: f64,
    pub window_s: f64,
    pub activity_signal: Vec<ActivitySignal>,
    pub user_signature: Vec<UserSignature>,
    /// Gain on an activity's non-dominant channels.
    pub off_axis_gain: f64,
    pub noise_sigma: f64,
    pub co_occurrence_rate: f64,
    pub context_rate: f64,
    /// Gain applied to a damped sensor.
    pub context_damping: f64,
    /// `(user, activity)` index pairs kept out of train.
    pub holdout_pairs: Vec<(usize, usize)>,
}

impl SynthSpec {
    /// Evenly spaced activity frequencies and seeded user signatures.
    pub fn standard(n_users: usize, n_activities: usize, n_contexts: usize, instances_per_user: usize, seed: u64) -> Self {
        let channels = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51_6e_7e);
        let activity_signal = (0..n_activities)
            .map(|a| ActivitySignal { frequency_hz: 1.0 + 1.5 * a as f64, amplitude: 1.0 })
            .collect();
        let user_signature = (0..n_users)
            .map(|_| UserSignature {
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude_scale: rng.random_range(0.8..1.25),
                bias: (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        Self {
            n_users,
            n_activities,
            n_contexts,
            instances_per_user,
            channels,
            snapshots: 50,
            sample_rate_hz: 40.0,
            window_s: 3.0,
            activity_signal,
            user_signature,
            off_axis_gain: 0.3,
            noise_sigma: 0.2,
            co_occurrence_rate: 0.2,
            context_rate: 0.5,
            context_damping: 0.3,
            holdout_pairs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.n_users < 2 || self.n_activities < 2 {
            return bad("need at least 2 users and 2 activities".into());
        }
        if self.instances_per_user == 0 || self.channels == 0 || self.snapshots < 2 {
            return bad("instance, channel and snapshot counts must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0) || !(self.window_s > 0.0) || (self.window_s * self.sample_rate_hz).round() < 2.0 {
            return bad("window must hold at least 2 samples".into());
        }
        if self.activity_signal.len() != self.n_activities || self.user_signature.len() != self.n_users {
            return bad("one signal per activity and one signature per user".into());
        }
        if self.user_signature.iter().any(|u| u.bias.len() != self.channels) {
            return bad("user bias needs one entry per channel".into());
        }
        for (name, p) in [("co_occurrence_rate", self.co_occurrence_rate), ("context_rate", self.context_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability, got {p}"));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        for &(u, a) in &self.holdout_pairs {
            if u >= self.n_users || a >= self.n_activities {
                return bad(format!("holdout pair ({u}, {a}) out of range"));
            }
        }
        for u in 0..self.n_users {
            if (0..self.n_activities).all(|a| self.holdout_pairs.contains(&(u, a))) {
                return bad(format!("holdout covers every activity of user {u}"));
            }
        }
        for a in 0..self.n_activities {
            if (0..self.n_users).all(|u| self.holdout_pairs.contains(&(u, a))) {
                return bad(format!("holdout covers activity {a} for every user"));
            }
        }
        Ok(())
    }

    pub fn raw_len(&self) -> usize {
        (self.window_s * self.sample_rate_hz).round() as usize
    }

    pub fn layout(&self) -> SensorLayout {
        let mut sensors = Vec::new();
        let mut left = self.channels;
        while left > 0 {
            let c = left.min(3);
            sensors.push((format!("imu{}", sensors.len()), c));
            left -= c;
        }
        SensorLayout { sensors }
    }

    pub fn schema(&self) -> LabelSchema {
        LabelSchema::new(
            (0..self.n_activities).map(activity_name).collect(),
            (0..self.n_contexts).map(context_name).collect(),
            (0..self.n_users).map(user_name).collect(),
        )
        .expect("generated names are unique")
    }

    /// Probability that a given activity is active in an instance.
    pub fn activity_rate(&self) -> f64 {
        (1.0 + self.co_occurrence_rate) / self.n_activities as f64
    }

    fn sensor_of(&self, channel: usize) -> usize {
        channel / 3
    }

    /// Noise-free value of channel `c` at time `t`.
    fn clean(&self, user: usize, activities: &[usize], contexts: &[bool], c: usize, t: f64) -> f64 {
        let sig = &self.user_signature[user];
        let sensors = self.channels.div_ceil(3);
        let damp: f64 = contexts
            .iter()
            .enumerate()
            .filter(|&(k, &on)| on && k % sensors == self.sensor_of(c))
            .map(|_| self.context_damping)
            .product();
        let mut v = 0.0;
        for &a in activities {
            let s = &self.activity_signal[a];
            let gain = if c == a % self.channels { 1.0 } else { self.off_axis_gain };
            v += s.amplitude * gain * (2.0 * PI * s.frequency_hz * t + sig.phase + 0.5 * c as f64).sin();
        }
        sig.bias[c] + sig.amplitude_scale * damp * v
    }
}

pub fn activity_name(a: usize) -> String {
    format!("act{a:02}")
}

pub fn context_name(k: usize) -> String {
    format!("ctx{k:02}")
}

pub fn user_name(u: usize) -> String {
    format!("user{u:02}")
}

/// Ground-truth labels of one generated instance, as indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthLabels {
    pub user: usize,
    pub activities: Vec<usize>,
    pub contexts: Vec<bool>,
}

impl SynthLabels {
    fn label_set(&self, spec: &SynthSpec) -> LabelSet {
        let mut user = vec![false; spec.n_users];
        user[self.user] = true;
        let acts = (0..spec.n_activities).map(|a| self.activities.contains(&a)).collect();
        LabelSet::new(acts, self.contexts.clone(), user).expect("one-hot user")
    }
}

fn draw_labels(spec: &SynthSpec, user: usize, rng: &mut ChaCha8Rng) -> SynthLabels {
    let first = rng.random_range(0..spec.n_activities);
    let mut activities = vec![first];
    if rng.random_bool(spec.co_occurrence_rate) {
        let mut second = rng.random_range(0..spec.n_activities - 1);
        if second >= first {
            second += 1;
        }
        activities.push(second);
        activities.sort_unstable();
    }
    let contexts = (0..spec.n_contexts).map(|_| rng.random_bool(spec.context_rate)).collect();
    SynthLabels { user, activities, contexts }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub schema: LabelSchema,
    pub layout: SensorLayout,
    /// Features are not normalized.
    pub instances: Vec<Instance>,
    pub truth: Vec<SynthLabels>,
}

fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64 + 1);
    rng
}

/// Generates `instances_per_user` windows per user. Deterministic per seed.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let layout = spec.layout();
    let schema = spec.schema();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let raw_len = spec.raw_len();
    let per_user = crate::par::map_range(spec.n_users, |u| -> Result<Vec<(Instance, SynthLabels)>> {
        let mut rng = user_rng(seed, u);
        let mut out = Vec::with_capacity(spec.instances_per_user);
        for i in 0..spec.instances_per_user {
            let truth = draw_labels(spec, u, &mut rng);
            let t0 = i as f64 * spec.window_s;
            let mut data = Array2::zeros((spec.channels, spec.snapshots));
            for c in 0..spec.channels {
                let raw: Vec<f64> = (0..raw_len)
                    .map(|k| {
                        let t = k as f64 / spec.sample_rate_hz;
                        let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        spec.clean(u, &truth.activities, &truth.contexts, c, t) + n
                    })
                    .collect();
                let r = resample_fourier(&raw, spec.snapshots)?;
                data.row_mut(c).iter_mut().zip(r).for_each(|(d, v)| *d = v);
            }
            let window = RawWindow { data, start_time: t0, end_time: t0 + spec.window_s, missing_channels: vec![false; spec.channels] };
            let features = extract_features(&window, &layout);
            let labels = truth.label_set(spec);
            out.push((Instance { window, features, labels, user_id: user_name(u) }, truth));
        }
        Ok(out)
    });
    let mut instances = Vec::new();
    let mut truth = Vec::new();
    for r in per_user {
        for (inst, t) in r? {
            instances.push(inst);
            truth.push(t);
        }
    }
    Ok(SynthDataset { schema, layout, instances, truth })
}

/// Whether an instance belongs to a held-out `(user, activity)` pair.
pub fn is_heldout(truth: &SynthLabels, holdout: &[(usize, usize)]) -> bool {
    truth.activities.iter().any(|&a| holdout.contains(&(truth.user, a)))
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub schema: LabelSchema,
    pub layout: SensorLayout,
    pub normalizer: Normalizer,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    /// Ground truth aligned with `test`.
    pub test_truth: Vec<SynthLabels>,
    pub holdout_pairs: Vec<(usize, usize)>,
}

impl Benchmark {
    /// Test instances that belong to a held-out pair.
    pub fn heldout_mask(&self) -> Vec<bool> {
        self.test_truth.iter().map(|t| is_heldout(t, &self.holdout_pairs)).collect()
    }
}

/// Generates data, routes every held-out-pair instance to test and splits
/// the rest per user. Features are normalized with train statistics.
pub fn cross_user_benchmark(spec: &SynthSpec, split: &SplitSpec, seed: u64) -> Result<Benchmark> {
    let data = generate(spec, seed)?;
    let holdout = spec.holdout_pairs.clone();
    let mut pool = Vec::new();
    let mut pool_truth = Vec::new();
    let mut forced = Vec::new();
    for (inst, t) in data.instances.into_iter().zip(data.truth) {
        if is_heldout(&t, &holdout) {
            forced.push((inst, t));
        } else {
            pool.push(inst);
            pool_truth.push(t);
        }
    }
    let users: Vec<&str> = pool.iter().map(|i| i.user_id.as_str()).collect();
    let idx = split_by_user(&users, split)?;
    let (train, val, test_pool) = take_split(pool.into_iter().zip(pool_truth).collect(), &idx);
    let (mut train, _): (Vec<Instance>, Vec<SynthLabels>) = train.into_iter().unzip();
    let (mut val, _): (Vec<Instance>, Vec<SynthLabels>) = val.into_iter().unzip();
    let (mut test, mut test_truth): (Vec<Instance>, Vec<SynthLabels>) = test_pool.into_iter().chain(forced).unzip();

    let train_users: BTreeSet<&str> = train.iter().map(|i| i.user_id.as_str()).collect();
    let train_acts: BTreeSet<usize> = train.iter().flat_map(|i| (0..spec.n_activities).filter(|&a| i.labels.has_activity(a))).collect();
    if train_users.len() != spec.n_users || train_acts.len() != spec.n_activities {
        return Err(Error::Spec("holdout leaves a user or activity absent from train".into()));
    }
    let feats: Vec<_> = train.iter().map(|i| i.features.clone()).collect();
    let normalizer = Normalizer::fit(&feats)?;
    for set in [&mut train, &mut val, &mut test] {
        for inst in set.iter_mut() {
            inst.features = normalizer.apply(&inst.features)?;
        }
    }
    // keep test ordering stable: by user, then generation order
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by_key(|&i| test_truth[i].user);
    let reorder = |v: Vec<Instance>| {
        let mut slots: Vec<Option<Instance>> = v.into_iter().map(Some).collect();
        order.iter().map(|&i| slots[i].take().unwrap()).collect::<Vec<_>>()
    };
    test = reorder(test);
    test_truth = order.iter().map(|&i| test_truth[i].clone()).collect();
    Ok(Benchmark { schema: data.schema, layout: data.layout, normalizer, train, val, test, test_truth, holdout_pairs: holdout })
}

/// Activity macro-MCC over the rows in `mask`, averaged over the activity
/// labels that have at least one positive among those rows.
pub fn subset_activity_mcc(logits: ArrayView2<f64>, labels: &[&LabelSet], mask: &[bool]) -> Result<f64> {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::invalid("empty subset"));
    }
    let sub = logits.select(ndarray::Axis(0), &rows);
    let truth = crate::labels::head_matrix(rows.iter().map(|&i| labels[i]), LabelKind::Activity);
    let pred = threshold_predictions(sub.view(), LabelKind::Activity);
    let counts = confusion_counts(pred.view(), truth.view())?;
    let present: Vec<f64> = counts.iter().filter(|c| c.tp + c.fn_ > 0).map(mcc).collect();
    Ok(present.iter().sum::<f64>() / present.len().max(1) as f64)
}

/// Mean cosine similarity of fused representations over pairs that share
/// an activity but come from different users.
pub fn cross_user_similarity(fused: ArrayView2<f64>, labels: &[&LabelSet]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i].user_index() == labels[j].user_index() {
                continue;
            }
            let shared = labels[i].activities.iter().zip(&labels[j].activities).any(|(a, b)| *a && *b);
            if shared {
                sum += cosine(fused.row(i), fused.row(j));
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Writes one recording directory per user: continuous streams made of
/// `bout_s`-second bouts, each with its own labels, plus annotations.
/// Returns the directory names.
pub fn write_recordings(spec: &SynthSpec, seed: u64, bout_s: f64, step_s: f64, dir: &Path) -> Result<Vec<String>> {
    spec.validate()?;
    if !(bout_s > 0.0) || !(step_s > 0.0) {
        return Err(Error::Spec("bout and step lengths must be positive".into()));
    }
    let layout = spec.layout();
    let duration = spec.instances_per_user as f64 * step_s + spec.window_s;
    let n_bouts = (duration / bout_s).ceil() as usize;
    let n_samples = (n_bouts as f64 * bout_s * spec.sample_rate_hz).round() as usize;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let axis_names: Vec<Vec<String>> =
        layout.sensors.iter().map(|(_, c)| ["x", "y", "z"].iter().take(*c).map(|s| s.to_string()).collect()).collect();
    let written = crate::par::map_range(spec.n_users, |u| -> Result<String> {
        let mut rng = user_rng(seed, u);
        let bouts: Vec<SynthLabels> = (0..n_bouts).map(|_| draw_labels(spec, u, &mut rng)).collect();
        let ts: Vec<f64> = (0..n_samples).map(|k| k as f64 / spec.sample_rate_hz).collect();
        let mut channels = vec![Vec::with_capacity(n_samples); spec.channels];
        for &t in &ts {
            let b = ((t / bout_s) as usize).min(n_bouts - 1);
            for (c, ch) in channels.iter_mut().enumerate() {
                let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                ch.push(spec.clean(u, &bouts[b].activities, &bouts[b].contexts, c, t) + n);
            }
        }
        let mut streams = Vec::new();
        let mut off = 0;
        for (name, c) in &layout.sensors {
            streams.push(SensorStream::new(name.clone(), ts.clone(), channels[off..off + c].to_vec())?);
            off += c;
        }
        let end = n_samples as f64 / spec.sample_rate_hz;
        let mut annotations = vec![Annotation { start_s: 0.0, end_s: end, name: user_name(u), kind: LabelKind::User }];
        for (b, l) in bouts.iter().enumerate() {
            let (s, e) = (b as f64 * bout_s, (b + 1) as f64 * bout_s);
            for &a in &l.activities {
                annotations.push(Annotation { start_s: s, end_s: e, name: activity_name(a), kind: LabelKind::Activity });
            }
            for (k, _) in l.contexts.iter().enumerate().filter(|(_, &on)| on) {
                annotations.push(Annotation { start_s: s, end_s: e, name: context_name(k), kind: LabelKind::Context });
            }
        }
        let name = user_name(u);
        let rec = Recording { name: name.clone(), streams, annotations };
        rec.write_dir(&dir.join(&name), &axis_names)?;
        Ok(name)
    });
    written.into_iter().collect()
}

#[cfg(test)]
mod tests;
