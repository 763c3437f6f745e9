use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::EpochSequence;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub floor_epsilon: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            fft_size: 256,
            hop: 128,
            floor_epsilon: 1e-8,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Per-epoch `channels × bins` log-magnitude spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFeatures {
    pub epochs: Vec<Tensor>,
    pub params: StftParams,
}

impl SpectralFeatures {
    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Mean Hann-windowed magnitude spectrum over the frames of one channel window.
pub(crate) fn mean_magnitude(signal: &[f64], params: &StftParams, fft: &dyn rustfft::Fft<f64>, window: &[f64]) -> Vec<f64> {
    let n = params.fft_size;
    let bins = params.bins();
    let frames = (signal.len() - n) / params.hop + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..frames {
        let start = f * params.hop;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(signal[start + k] * window[k], 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf[..bins]) {
            *a += b.norm();
        }
    }
    let inv = 1.0 / frames as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Short-time Fourier transform of every epoch: Hann-windowed frames of
/// `fft_size` hopped by `hop`, magnitudes averaged over the frames of an epoch,
/// then `ln(max(·, floor_epsilon))`.
pub fn stft_log_spectrum(epochs: &EpochSequence<'_>, params: StftParams) -> Result<SpectralFeatures> {
    let n = params.fft_size;
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::invalid(format!("fft_size must be a power of two ≥ 2, got {n}")));
    }
    if n > epochs.window_samples() {
        return Err(Error::invalid(format!(
            "fft_size {n} exceeds the epoch length of {} samples",
            epochs.window_samples()
        )));
    }
    if params.hop == 0 {
        return Err(Error::invalid("hop must be positive"));
    }
    if !(params.floor_epsilon > 0.0) {
        return Err(Error::invalid("floor_epsilon must be positive"));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let window = hann_window(n);
    let floor = params.floor_epsilon;
    let bins = params.bins();
    let out: Vec<Tensor> = (0..epochs.len())
        .into_par_iter()
        .map(|i| {
            let epoch = epochs.epoch(i);
            let mut data = Vec::with_capacity(epoch.channels() * bins);
            for c in 0..epoch.channels() {
                let mags = mean_magnitude(epoch.channel(c), &params, fft.as_ref(), &window);
                data.extend(mags.into_iter().map(|m| m.max(floor).ln()));
            }
            Tensor::new(epoch.channels(), bins, data).expect("channels × bins")
        })
        .collect();
    Ok(SpectralFeatures { epochs: out, params })
}
