use std::ops::Range;

use crate::error::{Error, Result};

use super::stream::SensorStream;

/// One window of a stream: its time span and the sample indices inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub samples: Range<usize>,
}

/// Window start/end times `[t0 + i·step, t0 + i·step + window)` for every
/// window that ends no later than `t_end`.
pub fn window_grid(t0: f64, t_end: f64, window_s: f64, step_s: f64) -> Vec<(f64, f64)> {
    let tol = 1e-9 * window_s.max(1.0);
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let start = t0 + i as f64 * step_s;
        let end = start + window_s;
        if end > t_end + tol {
            break;
        }
        out.push((start, end));
        i += 1;
    }
    out
}

/// Index range of samples with `start <= t < end`, with a tolerance of a
/// millionth of a sample period on both edges.
pub fn samples_in(timestamps: &[f64], period: f64, start: f64, end: f64) -> Range<usize> {
    let tol = period * 1e-6;
    let lo = timestamps.partition_point(|&t| t < start - tol);
    let hi = timestamps.partition_point(|&t| t < end - tol);
    lo..hi.max(lo)
}

/// Number of samples a full window holds at `period`.
pub fn expected_samples(window_s: f64, period: f64) -> usize {
    (window_s / period).round() as usize
}

fn check_params(window_s: f64, step_s: f64) -> Result<()> {
    if !(window_s > 0.0) || !(step_s > 0.0) || step_s > window_s {
        return Err(Error::invalid(format!(
            "need window_s > 0 and 0 < step_s <= window_s, got window {window_s}, step {step_s}"
        )));
    }
    Ok(())
}

/// Cuts a stream into overlapping windows. Windows holding fewer than half
/// the samples a full window would hold are dropped.
pub fn segment_windows(stream: &SensorStream, window_s: f64, step_s: f64) -> Result<Vec<Segment>> {
    check_params(window_s, step_s)?;
    let Some(period) = stream.sample_period() else {
        return Ok(Vec::new());
    };
    let ts = stream.timestamps();
    let t0 = ts[0];
    let t_end = ts[ts.len() - 1] + period;
    let expected = expected_samples(window_s, period);
    Ok(window_grid(t0, t_end, window_s, step_s)
        .into_iter()
        .filter_map(|(start, end)| {
            let samples = samples_in(ts, period, start, end);
            (2 * samples.len() >= expected).then_some(Segment { start, end, samples })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream_at(rate: f64, secs: f64) -> SensorStream {
        let n = (rate * secs).round() as usize;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let v = ts.iter().map(|t| t.sin()).collect();
        SensorStream::new("s", ts, vec![v]).unwrap()
    }

    /// Independent reference: enumerate candidate starts on an integer grid
    /// and count samples with a linear scan.
    fn brute_force(ts: &[f64], window_s: f64, step_s: f64) -> Vec<(usize, usize)> {
        let mut d: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(f64::total_cmp);
        let period = d[d.len() / 2];
        let span = ts[ts.len() - 1] + period - ts[0];
        let expected = (window_s / period).round() as usize;
        let max_windows = ((span - window_s) / step_s + 1e-6).floor() as i64 + 1;
        let mut out = Vec::new();
        for i in 0..max_windows.max(0) as usize {
            let start = ts[0] + i as f64 * step_s;
            let end = start + window_s;
            let eps = period * 1e-6;
            let count = ts.iter().filter(|&&t| t >= start - eps && t < end - eps).count();
            if 2 * count >= expected {
                out.push((i, count));
            }
        }
        out
    }

    #[test]
    fn twelve_seconds_at_40hz() {
        let segs = segment_windows(&stream_at(40.0, 12.0), 3.0, 1.5).unwrap();
        assert_eq!(segs.len(), 7);
        assert!(segs.iter().all(|s| s.samples.len() == 120));
        assert!(segs.windows(2).all(|w| w[0].start < w[1].start));
    }

    #[test]
    fn exactly_one_window() {
        let segs = segment_windows(&stream_at(40.0, 3.0), 3.0, 1.5).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].samples, 0..120);
    }

    #[test]
    fn gap_drops_short_windows() {
        // 10 s at 40 Hz with samples in [4, 6) removed
        let ts: Vec<f64> = (0..400)
            .map(|i| i as f64 / 40.0)
            .filter(|t| !(*t >= 4.0 && *t < 6.0))
            .collect();
        let v = vec![0.0; ts.len()];
        let s = SensorStream::new("s", ts.clone(), vec![v]).unwrap();
        let segs = segment_windows(&s, 3.0, 1.5).unwrap();
        let reference = brute_force(&ts, 3.0, 1.5);
        assert_eq!(segs.len(), reference.len());
        for (seg, (i, count)) in segs.iter().zip(&reference) {
            assert!((seg.start - *i as f64 * 1.5).abs() < 1e-12);
            assert_eq!(seg.samples.len(), *count);
        }
        // window [4.5, 7.5) holds only 60 samples and is kept; [3.0, 6.0) holds 40
        assert!(segs.iter().all(|s| s.samples.len() >= 60));
        assert!(segs.iter().any(|s| (s.start - 3.0).abs() < 1e-9) == false);
    }

    #[test]
    fn empty_and_invalid() {
        let s = SensorStream::new("s", vec![], vec![vec![]]).unwrap();
        assert!(segment_windows(&s, 3.0, 1.5).unwrap().is_empty());
        let s = stream_at(40.0, 5.0);
        assert!(segment_windows(&s, 3.0, 4.0).is_err());
        assert!(segment_windows(&s, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(rate in 10.0f64..60.0, secs in 3.0f64..20.0,
                               gap_at in 0.0f64..1.0, gap_len in 0.0f64..4.0,
                               step_frac in 0.2f64..1.0) {
            let n = (rate * secs) as usize;
            let gap_start = gap_at * secs;
            let ts: Vec<f64> = (0..n).map(|i| i as f64 / rate)
                .filter(|t| !(*t > gap_start && *t < gap_start + gap_len))
                .collect();
            prop_assume!(ts.len() >= 2);
            let window = 3.0;
            let step = window * step_frac;
            let s = SensorStream::new("s", ts.clone(), vec![vec![0.0; ts.len()]]).unwrap();
            let segs = segment_windows(&s, window, step).unwrap();
            let reference = brute_force(&ts, window, step);
            prop_assert_eq!(segs.len(), reference.len());
            for (seg, (_, count)) in segs.iter().zip(&reference) {
                prop_assert_eq!(seg.samples.len(), *count);
            }
        }
    }
}
