//! Multichannel signals: synthesis, epoching, log-spectral features and record files.

mod io;
mod stft;
mod synth;

pub use io::{load_csv, read_record, read_record_bytes, write_record, write_record_bytes};
pub use stft::{hann_window, stft_log_spectrum, SpectralFeatures, StftParams};
pub use synth::{generate_synthetic_record, SyntheticSpec, REGION_COUNT};

use crate::error::{Error, Result};

/// Raw multichannel recording, `channels × samples`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalRecord {
    channels: usize,
    sample_rate: f64,
    samples: Vec<f64>,
    label_track: Option<Vec<u8>>,
}

impl SignalRecord {
    pub fn new(channels: usize, sample_rate: f64, samples: Vec<f64>, label_track: Option<Vec<u8>>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("record needs at least one channel"));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if samples.is_empty() || samples.len() % channels != 0 {
            return Err(Error::invalid(format!(
                "{} samples do not form {channels} non-empty rows",
                samples.len()
            )));
        }
        let len = samples.len() / channels;
        if let Some(labels) = &label_track {
            if labels.len() != len {
                return Err(Error::invalid(format!("label track has {} entries, expected {len}", labels.len())));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::invalid("label track values must be 0 or 1"));
            }
        }
        Ok(SignalRecord {
            channels,
            sample_rate,
            samples,
            label_track,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.len();
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn label_track(&self) -> Option<&[u8]> {
        self.label_track.as_deref()
    }

    /// Mean over channels, one value per sample.
    pub fn channel_mean(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.channel(c)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}

/// Left-aligned sliding windows over a record. Windows borrow the record.
#[derive(Clone, Debug)]
pub struct EpochSequence<'a> {
    record: &'a SignalRecord,
    window_samples: usize,
    step_samples: usize,
    window_seconds: f64,
    step_seconds: f64,
    epoch_labels: Vec<u8>,
}

/// One `channels × window` slice of a record.
#[derive(Clone, Copy, Debug)]
pub struct Epoch<'a> {
    record: &'a SignalRecord,
    start: usize,
    len: usize,
}

impl<'a> Epoch<'a> {
    pub fn channels(&self) -> usize {
        self.record.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn channel(&self, c: usize) -> &'a [f64] {
        &self.record.channel(c)[self.start..self.start + self.len]
    }
}

impl<'a> EpochSequence<'a> {
    pub fn len(&self) -> usize {
        self.epoch_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epoch_labels.is_empty()
    }

    pub fn window_samples(&self) -> usize {
        self.window_samples
    }

    pub fn step_samples(&self) -> usize {
        self.step_samples
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_seconds
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_seconds
    }

    pub fn sample_rate(&self) -> f64 {
        self.record.sample_rate
    }

    pub fn record(&self) -> &'a SignalRecord {
        self.record
    }

    pub fn epoch(&self, i: usize) -> Epoch<'a> {
        Epoch {
            record: self.record,
            start: i * self.step_samples,
            len: self.window_samples,
        }
    }

    pub fn epochs(&self) -> impl Iterator<Item = Epoch<'a>> + '_ {
        (0..self.len()).map(|i| self.epoch(i))
    }

    pub fn epoch_labels(&self) -> &[u8] {
        &self.epoch_labels
    }
}

/// Number of whole windows that fit, or 0 when the record is shorter than one window.
pub fn epoch_count(total_samples: usize, window_samples: usize, step_samples: usize) -> usize {
    if total_samples < window_samples || step_samples == 0 {
        0
    } else {
        (total_samples - window_samples) / step_samples + 1
    }
}

/// Cuts `record` into windows of `window_seconds`, hopped by `step_seconds`.
/// An epoch is labelled 1 when more than half of its label-track samples are 1.
pub fn segment_epochs(record: &SignalRecord, window_seconds: f64, step_seconds: f64) -> Result<EpochSequence<'_>> {
    if !(window_seconds > 0.0) || !(step_seconds > 0.0) {
        return Err(Error::invalid(format!(
            "segment_epochs: window ({window_seconds} s) and step ({step_seconds} s) must be positive"
        )));
    }
    let window_samples = (window_seconds * record.sample_rate).round() as usize;
    let step_samples = (step_seconds * record.sample_rate).round() as usize;
    if window_samples == 0 || step_samples == 0 {
        return Err(Error::invalid("segment_epochs: window or step rounds to zero samples"));
    }
    let count = epoch_count(record.len(), window_samples, step_samples);
    if count == 0 {
        return Err(Error::invalid(format!(
            "segment_epochs: record of {:.3} s is shorter than one {window_seconds} s window",
            record.duration_s()
        )));
    }
    let epoch_labels = (0..count)
        .map(|i| match record.label_track() {
            Some(track) => {
                let start = i * step_samples;
                let ones: usize = track[start..start + window_samples].iter().map(|&l| l as usize).sum();
                u8::from(2 * ones > window_samples)
            }
            None => 0,
        })
        .collect();
    Ok(EpochSequence {
        record,
        window_samples,
        step_samples,
        window_seconds,
        step_seconds,
        epoch_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn spec(events: Vec<(f64, f64)>) -> SyntheticSpec {
        SyntheticSpec {
            event_windows: events,
            ..SyntheticSpec::default()
        }
    }

    /// Direct O(L²) DFT magnitudes of the first `fft_size/2 + 1` bins.
    fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    /// Oracle for one channel of one epoch: windowed frames, DFT, mean, log.
    fn oracle_log_spectrum(signal: &[f64], fft: usize, hop: usize, floor: f64) -> Vec<f64> {
        let w = hann_window(fft);
        let frames = (signal.len() - fft) / hop + 1;
        let mut acc = vec![0.0; fft / 2 + 1];
        for f in 0..frames {
            let frame: Vec<f64> = (0..fft).map(|k| signal[f * hop + k] * w[k]).collect();
            for (a, m) in acc.iter_mut().zip(dft_magnitudes(&frame)) {
                *a += m / frames as f64;
            }
        }
        acc.into_iter().map(|m| m.max(floor).ln()).collect()
    }

    fn band_power(signal: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
        let mags = dft_magnitudes(signal);
        let n = signal.len() as f64;
        mags.iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = *k as f64 * fs / n;
                f >= lo && f <= hi
            })
            .map(|(_, m)| m * m)
            .sum()
    }

    #[test]
    fn default_record_shape_and_determinism() {
        let r = generate_synthetic_record(&spec(vec![(20.0, 30.0)])).unwrap();
        assert_eq!(r.channels(), 19);
        assert_eq!(r.len(), 15360);
        assert_eq!(r.samples().len(), 19 * 15360);
        let again = generate_synthetic_record(&spec(vec![(20.0, 30.0)])).unwrap();
        assert_eq!(r, again);
        let other = generate_synthetic_record(&SyntheticSpec { seed: 1, ..spec(vec![(20.0, 30.0)]) }).unwrap();
        assert_ne!(r.samples(), other.samples());
    }

    #[test]
    fn events_raise_burst_band_power() {
        let r = generate_synthetic_record(&spec(vec![(20.0, 30.0)])).unwrap();
        let fs = r.sample_rate() as usize;
        for c in 0..r.channels() {
            let ch = r.channel(c);
            let during = band_power(&ch[20 * fs..30 * fs], 256.0, 20.0, 32.0);
            let before = band_power(&ch[..10 * fs], 256.0, 20.0, 32.0);
            assert!(during > before, "channel {c}: {during} vs {before}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic_record(&SyntheticSpec { channels: 1, ..spec(vec![]) }).is_err());
        assert!(generate_synthetic_record(&SyntheticSpec { duration_s: 5.0, ..spec(vec![]) }).is_err());
        assert!(generate_synthetic_record(&spec(vec![(10.0, 5.0)])).is_err());
        assert!(generate_synthetic_record(&spec(vec![(10.0, 20.0), (15.0, 25.0)])).is_err());
    }

    #[test]
    fn epoch_counts() {
        let r = generate_synthetic_record(&spec(vec![])).unwrap();
        assert_eq!(segment_epochs(&r, 12.0, 1.0).unwrap().len(), 49);
        let short = SignalRecord::new(1, 10.0, vec![0.0; 120], None).unwrap();
        assert_eq!(segment_epochs(&short, 12.0, 1.0).unwrap().len(), 1);
        let shorter = SignalRecord::new(1, 10.0, vec![0.0; 119], None).unwrap();
        assert!(segment_epochs(&shorter, 12.0, 1.0).is_err());
        assert!(segment_epochs(&short, 0.0, 1.0).is_err());
    }

    #[test]
    fn epoch_labels_follow_majority_overlap() {
        let fs = 16.0;
        let n = 60 * 16;
        let labels: Vec<u8> = (0..n).map(|i| u8::from((320..480).contains(&i))).collect();
        let r = SignalRecord::new(1, fs, vec![0.0; n], Some(labels)).unwrap();
        let seq = segment_epochs(&r, 12.0, 1.0).unwrap();
        for (start, &l) in seq.epoch_labels().iter().enumerate() {
            let overlap = (start as f64 + 12.0).min(30.0) - (start as f64).max(20.0);
            assert_eq!(l == 1, overlap > 6.0, "start {start}");
            assert_eq!(l == 1, (15..=23).contains(&start));
        }
    }

    fn stft_of(r: &SignalRecord, params: StftParams) -> SpectralFeatures {
        let seq = segment_epochs(r, r.duration_s(), 1.0).unwrap();
        stft_log_spectrum(&seq, params).unwrap()
    }

    #[test]
    fn zero_signal_hits_floor() {
        let r = SignalRecord::new(2, 64.0, vec![0.0; 2 * 256], None).unwrap();
        let f = stft_of(&r, StftParams { fft_size: 64, hop: 32, floor_epsilon: 1e-8 });
        assert!(f.epochs[0].data().iter().all(|v| *v == 1e-8f64.ln()));
    }

    #[test]
    fn matches_dft_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..3 * 200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = SignalRecord::new(3, 100.0, samples, None).unwrap();
        let params = StftParams { fft_size: 32, hop: 12, floor_epsilon: 1e-8 };
        let f = stft_of(&r, params);
        for c in 0..3 {
            let want = oracle_log_spectrum(r.channel(c), 32, 12, 1e-8);
            for (a, b) in f.epochs[0].row_slice(c).iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_its_bin() {
        for k in [3usize, 10, 17, 30] {
            let fs = 128.0;
            let f0 = k as f64 * fs / 64.0;
            let samples: Vec<f64> = (0..512).map(|t| (2.0 * PI * f0 * t as f64 / fs).sin()).collect();
            let r = SignalRecord::new(1, fs, samples, None).unwrap();
            let f = stft_of(&r, StftParams { fft_size: 64, hop: 32, floor_epsilon: 1e-8 });
            let row = f.epochs[0].row_slice(0);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, k);
        }
    }

    #[test]
    fn white_noise_is_flat() {
        let bins = 33;
        let mut acc = vec![0.0; bins];
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..1024).map(|_| StandardNormal.sample(&mut rng)).collect();
            let r = SignalRecord::new(1, 256.0, samples, None).unwrap();
            let f = stft_of(&r, StftParams { fft_size: 64, hop: 32, floor_epsilon: 1e-8 });
            for (a, v) in acc.iter_mut().zip(f.epochs[0].row_slice(0)) {
                *a += v.exp() / 100.0;
            }
        }
        // DC and Nyquist bins are real-valued and sit lower; check the interior.
        let interior = &acc[1..bins - 1];
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!(interior.iter().all(|v| (v / mean - 1.0).abs() <= 0.2), "{interior:?}");
    }

    #[test]
    fn stft_rejects_bad_params() {
        let r = SignalRecord::new(1, 64.0, vec![0.0; 128], None).unwrap();
        let seq = segment_epochs(&r, 2.0, 1.0).unwrap();
        assert!(stft_log_spectrum(&seq, StftParams { fft_size: 48, hop: 8, floor_epsilon: 1e-8 }).is_err());
        assert!(stft_log_spectrum(&seq, StftParams { fft_size: 256, hop: 8, floor_epsilon: 1e-8 }).is_err());
        assert!(stft_log_spectrum(&seq, StftParams { fft_size: 64, hop: 0, floor_epsilon: 1e-8 }).is_err());
    }

    #[test]
    fn record_bytes_round_trip() {
        let r = generate_synthetic_record(&SyntheticSpec { duration_s: 12.0, ..spec(vec![(2.0, 5.0)]) }).unwrap();
        let bytes = write_record_bytes(&r);
        assert_eq!(read_record_bytes(&bytes).unwrap(), r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.lfsr");
        write_record(&path, &r).unwrap();
        assert_eq!(read_record(&path).unwrap(), r);
    }

    #[test]
    fn malformed_records_report_offsets() {
        let r = SignalRecord::new(2, 8.0, vec![1.0; 8], Some(vec![0, 1, 0, 1])).unwrap();
        let bytes = write_record_bytes(&r);
        let offset_of = |b: &[u8]| match read_record_bytes(b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("unexpected {other:?}"),
        };
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset_of(&bad), 0);
        assert_eq!(offset_of(&bytes[..30]), 28);
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] = 7;
        assert_eq!(offset_of(&bad), last as u64);
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(offset_of(&long), bytes.len() as u64);
    }

    #[test]
    fn csv_loading() {
        let r = load_csv("a,b,label\n1,2,0\n3,4,1\n", 2.0).unwrap();
        assert_eq!(r.channels(), 2);
        assert_eq!(r.channel(0), &[1.0, 3.0]);
        assert_eq!(r.channel(1), &[2.0, 4.0]);
        assert_eq!(r.label_track(), Some(&[0u8, 1][..]));
        assert!(load_csv("a,b\n1\n", 2.0).is_err());
        assert!(load_csv("a\nx\n", 2.0).is_err());
    }

    proptest! {
        #[test]
        fn epoch_count_formula(total in 1usize..5000, window in 1usize..600, step in 1usize..50) {
            let n = epoch_count(total, window, step);
            if total < window {
                prop_assert_eq!(n, 0);
            } else {
                prop_assert!((n - 1) * step + window <= total);
                prop_assert!(n * step + window > total);
            }
        }

        #[test]
        fn bytes_round_trip(ch in 1usize..4, len in 1usize..40, seed in any::<u64>(), labelled in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..ch * len).map(|_| { let v: f64 = StandardNormal.sample(&mut rng); v as f32 as f64 }).collect();
            let labels = labelled.then(|| (0..len).map(|i| (i % 2) as u8).collect());
            let r = SignalRecord::new(ch, 100.0, samples, labels).unwrap();
            prop_assert_eq!(read_record_bytes(&write_record_bytes(&r)).unwrap(), r);
        }
    }
}
