use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(buf));
}

fn fft_inverse(buf: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()).process(buf));
}

/// Resamples a uniformly sampled signal to `target_len` points by
/// truncating or zero-padding its spectrum.
///
/// An even-length Nyquist bin is split in half when upsampling and folded
/// together when downsampling, so real input gives real output.
pub fn resample_fourier(signal: &[f64], target_len: usize) -> Result<Vec<f64>> {
    let n = signal.len();
    if n < 2 || target_len < 2 {
        return Err(Error::invalid(format!(
            "resampling needs at least 2 input and output samples, got {n} -> {target_len}"
        )));
    }
    if n == target_len {
        return Ok(signal.to_vec());
    }
    let mut spec: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut spec);

    let m = target_len;
    let k = n.min(m);
    let nyq = k / 2 + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    out[..nyq].copy_from_slice(&spec[..nyq]);
    let neg = k - nyq;
    if neg > 0 {
        out[m - neg..].copy_from_slice(&spec[n - neg..]);
    }
    if k.is_multiple_of(2) {
        let half = k / 2;
        if m < n {
            // out[half] is the shared +/- Nyquist bin of the shorter spectrum
            out[half] += spec[n - half];
        } else {
            out[half] *= 0.5;
            out[m - half] = out[half];
        }
    }
    fft_inverse(&mut out);
    // rustfft leaves the inverse unnormalised: 1/m, then rescale by m/n
    let scale = 1.0 / n as f64;
    Ok(out.into_iter().map(|c| c.re * scale).collect())
}
