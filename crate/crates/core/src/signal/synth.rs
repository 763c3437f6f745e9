//! Seeded two-regime generator standing in for clinical recordings.
//!
//! Background: channels are grouped into contiguous regions; every region
//! carries its own low-frequency rhythms (≤ 12 Hz) shared by its channels with
//! per-channel gain and phase, plus independent white noise. Inside event
//! windows a common 20–32 Hz burst source is mixed into every channel with a
//! small per-channel lag, and the label track is 1.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SignalRecord;
use crate::error::{Error, Result};

pub const REGION_COUNT: usize = 4;

const REGION_BASE_HZ: [f64; REGION_COUNT] = [2.5, 5.0, 8.0, 11.0];
const BURST_BAND_HZ: (f64, f64) = (20.0, 32.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub channels: usize,
    pub sample_rate: f64,
    pub duration_s: f64,
    /// Half-open `[start, end)` intervals in seconds.
    pub event_windows: Vec<(f64, f64)>,
    pub seed: u64,
    /// Shortest allowed record, normally the epoch window length.
    pub min_duration_s: f64,
    pub noise_std: f64,
    pub burst_amplitude: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            channels: 19,
            sample_rate: 256.0,
            duration_s: 60.0,
            event_windows: Vec::new(),
            seed: 0,
            min_duration_s: 12.0,
            noise_std: 0.6,
            burst_amplitude: 1.0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(Error::invalid("synthetic record needs at least 2 channels"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !(self.duration_s >= self.min_duration_s) {
            return Err(Error::invalid(format!(
                "duration {} s is shorter than one {} s window",
                self.duration_s, self.min_duration_s
            )));
        }
        let mut windows = self.event_windows.clone();
        windows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in &windows {
            if !(w.0 < w.1) || w.0 < 0.0 {
                return Err(Error::invalid(format!("bad event window [{}, {})", w.0, w.1)));
            }
        }
        for pair in windows.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::invalid(format!(
                    "overlapping event windows [{}, {}) and [{}, {})",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(())
    }
}

struct Rhythm {
    freq: f64,
    amp: f64,
    phase: f64,
}

/// Generates a deterministic record from `spec`. Samples are rounded to `f32`
/// precision so the binary record format reproduces them exactly.
pub fn generate_synthetic_record(spec: &SyntheticSpec) -> Result<SignalRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs = spec.sample_rate;
    let n = (spec.duration_s * fs).round() as usize;
    let ch = spec.channels;
    let region_of = |c: usize| c * REGION_COUNT / ch;

    let regions: Vec<Vec<Rhythm>> = (0..REGION_COUNT)
        .map(|r| {
            let base = REGION_BASE_HZ[r] + rng.random_range(-0.5..0.5);
            vec![
                Rhythm {
                    freq: base,
                    amp: rng.random_range(1.0..2.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                },
                Rhythm {
                    freq: (base * 0.5 + rng.random_range(0.5..1.5)).min(12.0),
                    amp: rng.random_range(0.3..0.8),
                    phase: rng.random_range(0.0..2.0 * PI),
                },
            ]
        })
        .collect();
    let gains: Vec<f64> = (0..ch).map(|_| rng.random_range(0.6..1.4)).collect();
    let lags: Vec<f64> = (0..ch).map(|_| rng.random_range(-0.3..0.3)).collect();
    let burst_gains: Vec<f64> = (0..ch).map(|_| rng.random_range(0.6..1.0)).collect();
    let burst_lags: Vec<f64> = (0..ch).map(|_| rng.random_range(-0.2..0.2)).collect();
    let burst_strength = spec.burst_amplitude * rng.random_range(0.8..2.0);
    let bursts: Vec<Rhythm> = (0..3)
        .map(|_| Rhythm {
            freq: rng.random_range(BURST_BAND_HZ.0 + 1.0..BURST_BAND_HZ.1 - 1.0),
            amp: rng.random_range(0.5..1.0),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect();

    let mut labels = vec![0u8; n];
    for &(a, b) in &spec.event_windows {
        let s = ((a * fs).round() as usize).min(n);
        let e = ((b * fs).round() as usize).min(n);
        labels[s..e].iter_mut().for_each(|l| *l = 1);
    }

    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut samples = vec![0.0; ch * n];
    for c in 0..ch {
        let rhythms = &regions[region_of(c)];
        let row = &mut samples[c * n..(c + 1) * n];
        for (i, out) in row.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let mut v = 0.0;
            for r in rhythms {
                v += r.amp * (2.0 * PI * r.freq * t + r.phase + lags[c]).sin();
            }
            v *= gains[c];
            if labels[i] == 1 {
                let mut b = 0.0;
                for r in &bursts {
                    b += r.amp * (2.0 * PI * r.freq * t + r.phase + burst_lags[c]).sin();
                }
                v += burst_strength * burst_gains[c] * b;
            }
            v += noise.sample(&mut rng);
            *out = v as f32 as f64;
        }
    }

    SignalRecord::new(ch, fs, samples, Some(labels))
}
