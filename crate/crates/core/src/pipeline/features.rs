//! Handcrafted per-window features.
//!
//! Per channel, in this order: mean, standard deviation, min, max, median,
//! median absolute deviation, interquartile range, energy (mean of
//! squares), dominant FFT bin, spectral entropy. Each three-axis sensor
//! then adds the mean and standard deviation of its magnitude signal.

use rustfft::num_complex::Complex64;

use super::resample::fft_forward;
use super::stream::SensorLayout;
use super::{FeatureVector, RawWindow};

pub const CHANNEL_FEATURES: [&str; 10] = [
    "mean", "std", "min", "max", "median", "mad", "iqr", "energy", "dominant_bin", "spectral_entropy",
];

pub const MAGNITUDE_FEATURES: [&str; 2] = ["magnitude_mean", "magnitude_std"];

pub fn feature_dim(layout: &SensorLayout) -> usize {
    layout.num_channels() * CHANNEL_FEATURES.len()
        + layout.triaxial_groups().len() * MAGNITUDE_FEATURES.len()
}

/// Column names matching [`extract_features`] output order.
pub fn feature_names(layout: &SensorLayout) -> Vec<String> {
    let mut out = Vec::with_capacity(feature_dim(layout));
    for (sensor, channels) in &layout.sensors {
        for c in 0..*channels {
            for f in CHANNEL_FEATURES {
                out.push(format!("{sensor}.{c}.{f}"));
            }
        }
    }
    for (sensor, channels) in &layout.sensors {
        if *channels == 3 {
            for f in MAGNITUDE_FEATURES {
                out.push(format!("{sensor}.{f}"));
            }
        }
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn std_dev(x: &[f64], mu: f64) -> f64 {
    (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn spectral(x: &[f64]) -> (f64, f64) {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut buf);
    let power: Vec<f64> = buf[1..=x.len() / 2].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    // all-flat spectra (constant signals) report bin 0 and zero entropy
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    if total <= 1e-20 * scale * x.len() as f64 {
        return (0.0, 0.0);
    }
    let mut best = 0;
    for (i, &p) in power.iter().enumerate() {
        if p > power[best] {
            best = i;
        }
    }
    let entropy = -power
        .iter()
        .map(|&p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    ((best + 1) as f64, entropy)
}

fn channel_block(x: &[f64], out: &mut [f64]) {
    let mu = mean(x);
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let mut dev: Vec<f64> = x.iter().map(|v| (v - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let (dominant, entropy) = spectral(x);
    out[0] = mu;
    out[1] = std_dev(x, mu);
    out[2] = sorted[0];
    out[3] = sorted[sorted.len() - 1];
    out[4] = median;
    out[5] = quantile(&dev, 0.5);
    out[6] = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    out[7] = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    out[8] = dominant;
    out[9] = entropy;
}

/// Computes the feature vector of one window. Features of missing
/// channels are zero and flagged in the mask.
pub fn extract_features(window: &RawWindow, layout: &SensorLayout) -> FeatureVector {
    let dim = feature_dim(layout);
    let mut values = vec![0.0; dim];
    let mut missing = vec![false; dim];
    let nf = CHANNEL_FEATURES.len();
    for c in 0..window.num_channels() {
        let block = c * nf..(c + 1) * nf;
        if window.missing_channels[c] {
            missing[block].fill(true);
        } else {
            let row = window.data.row(c);
            let x: Vec<f64> = row.iter().copied().collect();
            channel_block(&x, &mut values[block]);
        }
    }
    let base = window.num_channels() * nf;
    for (g, group) in layout.triaxial_groups().into_iter().enumerate() {
        let at = base + g * MAGNITUDE_FEATURES.len();
        if group.clone().any(|c| window.missing_channels[c]) {
            missing[at..at + 2].fill(true);
            continue;
        }
        let mag: Vec<f64> = (0..window.len())
            .map(|t| group.clone().map(|c| window.data[[c, t]].powi(2)).sum::<f64>().sqrt())
            .collect();
        let mu = mean(&mag);
        values[at] = mu;
        values[at + 1] = std_dev(&mag, mu);
    }
    FeatureVector { values, missing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::f64::consts::PI;

    fn layout(channels: &[usize]) -> SensorLayout {
        SensorLayout {
            sensors: channels.iter().enumerate().map(|(i, &c)| (format!("s{i}"), c)).collect(),
        }
    }

    fn window(data: Array2<f64>) -> RawWindow {
        let s = data.nrows();
        RawWindow { data, start_time: 0.0, end_time: 3.0, missing_channels: vec![false; s] }
    }

    #[test]
    fn constant_channel() {
        let w = window(Array2::from_elem((1, 50), 2.5));
        let f = extract_features(&w, &layout(&[1]));
        let v = &f.values;
        assert_eq!(v.len(), 10);
        assert!((v[0] - 2.5).abs() < 1e-12);
        assert!(v[1].abs() < 1e-12);
        assert_eq!(v[2], 2.5);
        assert_eq!(v[3], 2.5);
        assert!((v[7] - 6.25).abs() < 1e-12);
        assert_eq!(v[9], 0.0);
    }

    #[test]
    fn sinusoid_statistics() {
        let t = 50;
        let bin = 3;
        let data = Array2::from_shape_fn((1, t), |(_, i)| (2.0 * PI * bin as f64 * i as f64 / t as f64).sin());
        let f = extract_features(&window(data), &layout(&[1]));
        assert!(f.values[0].abs() < 1e-12);
        assert!((f.values[1] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((f.values[7] - 0.5).abs() < 1e-12);
        assert_eq!(f.values[8], bin as f64);
        // all power in one bin
        assert!(f.values[9].abs() < 1e-9);
    }

    #[test]
    fn channel_permutation_permutes_blocks() {
        let a = Array2::from_shape_fn((3, 50), |(c, i)| ((c + 1) as f64 * i as f64 * 0.2).sin() + c as f64);
        let perm = [2usize, 0, 1];
        let b = Array2::from_shape_fn((3, 50), |(c, i)| a[[perm[c], i]]);
        let lay = layout(&[1, 1, 1]);
        let fa = extract_features(&window(a), &lay);
        let fb = extract_features(&window(b), &lay);
        for c in 0..3 {
            assert_eq!(fb.values[c * 10..(c + 1) * 10], fa.values[perm[c] * 10..(perm[c] + 1) * 10]);
        }
        // within a tri-axial sensor the magnitude block is unchanged
        let lay3 = layout(&[3]);
        let ma = extract_features(&window(Array2::from_shape_fn((3, 50), |(c, i)| (c * i) as f64 * 0.01)), &lay3);
        let mb = extract_features(&window(Array2::from_shape_fn((3, 50), |(c, i)| (perm[c] * i) as f64 * 0.01)), &lay3);
        assert_eq!(ma.values[30..], mb.values[30..]);
    }

    #[test]
    fn missing_channels_masked() {
        let mut w = window(Array2::from_elem((3, 50), 1.0));
        w.missing_channels = vec![true; 3];
        let f = extract_features(&w, &layout(&[3]));
        assert_eq!(f.values.len(), 32);
        assert!(f.missing.iter().all(|&m| m));
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compact_relative_to_raw() {
        let lay = layout(&[3, 3, 3, 3]);
        assert!(feature_dim(&lay) < 12 * 50);
        assert_eq!(feature_names(&lay).len(), feature_dim(&lay));
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.25), 1.75);
    }
}
