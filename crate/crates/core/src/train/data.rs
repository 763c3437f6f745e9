//! Corpus generation, featurization and the windowed sample layout.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::config::{CorpusSpec, FeaturizeConfig, TrainConfig};
use crate::autodiff::Tensor;
use crate::encoders::standardize_in_place;
use crate::error::{Error, Result};
use crate::graph::{correlation_adjacency, EpochGraph, SpectralGraphSequence};
use crate::signal::{generate_synthetic_record, segment_epochs, stft_log_spectrum, SignalRecord, SyntheticSpec};

/// One generated record with the parameters that reproduce it.
#[derive(Clone, Debug)]
pub struct CorpusRecord {
    pub name: String,
    pub spec: SyntheticSpec,
    pub record: SignalRecord,
}

impl CorpusRecord {
    pub fn has_events(&self) -> bool {
        !self.spec.event_windows.is_empty()
    }
}

/// Per-record specs of a corpus. The event records are a seeded subset of
/// size `round(records · event_fraction)`.
pub fn corpus_specs(spec: &CorpusSpec) -> Result<Vec<(String, SyntheticSpec)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_events = (spec.records as f64 * spec.event_fraction).round() as usize;
    let mut order: Vec<usize> = (0..spec.records).collect();
    order.shuffle(&mut rng);
    let mut is_event = vec![false; spec.records];
    for &i in &order[..n_events] {
        is_event[i] = true;
    }
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let mut out = Vec::with_capacity(spec.records);
    for (i, &event) in is_event.iter().enumerate() {
        let mut s = spec.record.clone();
        s.seed = rng.random();
        s.burst_amplitude = draw(&mut rng, spec.burst_amplitude);
        s.event_windows = Vec::new();
        let start = draw(&mut rng, spec.event_start_s);
        let length = draw(&mut rng, spec.event_length_s);
        if event {
            let end = (start + length).min(s.duration_s);
            if end <= start {
                return Err(Error::invalid(format!(
                    "corpus: event window starting at {start} s falls outside a {} s record",
                    s.duration_s
                )));
            }
            s.event_windows.push((start, end));
        }
        out.push((format!("rec{i:03}"), s));
    }
    Ok(out)
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<CorpusRecord>> {
    corpus_specs(spec)?
        .into_par_iter()
        .map(|(name, spec)| {
            let record = generate_synthetic_record(&spec)?;
            Ok(CorpusRecord { name, spec, record })
        })
        .collect()
}

/// Epochs → log spectra → one correlation graph per epoch.
pub fn featurize_record(record: &SignalRecord, cfg: &FeaturizeConfig, tau: usize) -> Result<SpectralGraphSequence> {
    let epochs = segment_epochs(record, cfg.window_s, cfg.step_s)?;
    let spectra = stft_log_spectrum(&epochs, cfg.stft)?;
    let graphs = spectra
        .epochs
        .par_iter()
        .map(|x| correlation_adjacency(x, tau))
        .collect::<Result<Vec<EpochGraph>>>()?;
    SpectralGraphSequence::new(graphs, epochs.epoch_labels().to_vec())
}

/// Standard EEG bands in Hz, half-open.
pub const BANDS_HZ: [(f64, f64); 5] = [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 45.0)];

/// Log of the channel-averaged periodogram power in each of [`BANDS_HZ`] for
/// every epoch.
pub fn epoch_band_powers(record: &SignalRecord, cfg: &FeaturizeConfig) -> Result<Vec<[f64; 5]>> {
    let epochs = segment_epochs(record, cfg.window_s, cfg.step_s)?;
    let len = epochs.window_samples();
    let fs = record.sample_rate();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let bins_of = |(lo, hi): (f64, f64)| -> Vec<usize> {
        (0..=len / 2)
            .filter(|&k| {
                let f = k as f64 * fs / len as f64;
                f >= lo && f < hi
            })
            .collect()
    };
    let bands: Vec<Vec<usize>> = BANDS_HZ.iter().map(|&b| bins_of(b)).collect();
    if bands.iter().any(Vec::is_empty) {
        return Err(Error::invalid("epoch too short to resolve the standard bands"));
    }
    Ok((0..epochs.len())
        .into_par_iter()
        .map(|i| {
            let epoch = epochs.epoch(i);
            let mut acc = [0.0; 5];
            let mut buf = vec![Complex::new(0.0, 0.0); len];
            for c in 0..epoch.channels() {
                for (b, v) in buf.iter_mut().zip(epoch.channel(c)) {
                    *b = Complex::new(*v, 0.0);
                }
                fft.process(&mut buf);
                for (a, bins) in acc.iter_mut().zip(&bands) {
                    let p: f64 = bins.iter().map(|&k| buf[k].norm_sqr()).sum::<f64>() / bins.len() as f64;
                    *a += p / (len as f64 * epoch.channels() as f64);
                }
            }
            acc.map(|a| a.max(1e-300).ln())
        })
        .collect())
}

/// Everything the trainer needs from one record.
#[derive(Clone, Debug)]
pub struct RecordData {
    pub name: String,
    pub graphs: SpectralGraphSequence,
    /// Channel-mean signal of the whole record.
    pub signal_mean: Vec<f64>,
    pub window_samples: usize,
    pub step_samples: usize,
    pub band_powers: Vec<[f64; 5]>,
    pub has_events: bool,
}

impl RecordData {
    pub fn new(name: impl Into<String>, record: &SignalRecord, graphs: SpectralGraphSequence, cfg: &FeaturizeConfig) -> Result<Self> {
        let epochs = segment_epochs(record, cfg.window_s, cfg.step_s)?;
        if epochs.len() != graphs.len() {
            return Err(Error::invalid(format!(
                "record has {} epochs but its graph sequence has {}",
                epochs.len(),
                graphs.len()
            )));
        }
        let has_events = record.label_track().is_some_and(|t| t.contains(&1));
        Ok(RecordData {
            name: name.into(),
            signal_mean: record.channel_mean(),
            window_samples: epochs.window_samples(),
            step_samples: epochs.step_samples(),
            band_powers: epoch_band_powers(record, cfg)?,
            graphs,
            has_events,
        })
    }

    /// `L × T` channel-mean window over the given epochs, standardized jointly.
    pub fn temporal_window(&self, epochs: &[usize]) -> Result<Tensor> {
        let (len, t) = (self.window_samples, epochs.len());
        let mut data = vec![0.0; len * t];
        for (k, &e) in epochs.iter().enumerate() {
            let start = e * self.step_samples;
            let src = self
                .signal_mean
                .get(start..start + len)
                .ok_or_else(|| Error::invalid(format!("epoch {e} runs past the end of {}", self.name)))?;
            for (i, v) in src.iter().enumerate() {
                data[i * t + k] = *v;
            }
        }
        standardize_in_place(&mut data);
        Tensor::new(len, t, data)
    }
}

/// Observed/future epoch layout of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub observed: usize,
    pub stride: usize,
    pub horizon: usize,
}

impl WindowSpec {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        WindowSpec {
            observed: cfg.observed_epochs,
            stride: cfg.epoch_stride,
            horizon: cfg.horizon,
        }
    }

    /// Anchors `t` (the last observed epoch) valid in a sequence of `n` epochs.
    pub fn anchors(&self, n: usize) -> std::ops::Range<usize> {
        let first = (self.observed - 1) * self.stride;
        let tail = self.horizon * self.stride;
        if n < first + tail + 1 {
            return 0..0;
        }
        first..n - tail
    }

    pub fn observed_epochs(&self, t: usize) -> Vec<usize> {
        (0..self.observed).map(|k| t - (self.observed - 1 - k) * self.stride).collect()
    }

    pub fn future_epochs(&self, t: usize) -> Vec<usize> {
        (1..=self.horizon).map(|k| t + k * self.stride).collect()
    }
}

/// One training example: record index, anchor epoch and the anchor's label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub record: usize,
    pub anchor: usize,
    pub label: u8,
}

/// Record indices of each split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Record-level 70/15/15 split, stratified by whether a record contains
/// events. Each stratum with at least three records contributes at least one
/// record to validation and test.
pub fn split_records(has_events: &[bool], seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits::default();
    for stratum in [false, true] {
        let mut idx: Vec<usize> = (0..has_events.len()).filter(|&i| has_events[i] == stratum).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let (mut n_val, mut n_test) = (
            (n as f64 * 0.15).round() as usize,
            (n as f64 * 0.15).round() as usize,
        );
        if n >= 3 {
            n_val = n_val.max(1);
            n_test = n_test.max(1);
        }
        let n_train = n - n_val - n_test;
        splits.train.extend_from_slice(&idx[..n_train]);
        splits.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}

/// Records plus the samples of each split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<RecordData>,
    pub window: WindowSpec,
    pub splits: Splits,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn new(records: Vec<RecordData>, window: WindowSpec, split_seed: u64) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::invalid("dataset has no records"))?;
        let shape = (first.graphs.graphs[0].nodes(), first.graphs.graphs[0].feature_dim(), first.window_samples);
        for r in &records {
            let g = &r.graphs.graphs[0];
            if (g.nodes(), g.feature_dim(), r.window_samples) != shape {
                return Err(Error::invalid(format!("record {} differs in channels, bins or window", r.name)));
            }
        }
        let has_events: Vec<bool> = records.iter().map(|r| r.has_events).collect();
        let splits = split_records(&has_events, split_seed);
        let samples_of = |idx: &[usize]| -> Vec<Sample> {
            idx.iter()
                .flat_map(|&ri| {
                    let r = &records[ri];
                    window.anchors(r.graphs.len()).map(move |t| Sample {
                        record: ri,
                        anchor: t,
                        label: r.graphs.labels[t],
                    })
                })
                .collect()
        };
        let (train, val, test) = (samples_of(&splits.train), samples_of(&splits.val), samples_of(&splits.test));
        if train.is_empty() || val.is_empty() || test.is_empty() {
            return Err(Error::invalid(format!(
                "window layout leaves an empty split ({} / {} / {} samples); records need at least {} epochs",
                train.len(),
                val.len(),
                test.len(),
                (window.observed - 1 + window.horizon) * window.stride + 1
            )));
        }
        Ok(Dataset {
            records,
            window,
            splits,
            train,
            val,
            test,
        })
    }

    pub fn nodes(&self) -> usize {
        self.records[0].graphs.graphs[0].nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.records[0].graphs.graphs[0].feature_dim()
    }

    pub fn window_samples(&self) -> usize {
        self.records[0].window_samples
    }

    pub fn observed_graphs(&self, s: &Sample) -> Vec<&EpochGraph> {
        let g = &self.records[s.record].graphs.graphs;
        self.window.observed_epochs(s.anchor).into_iter().map(|e| &g[e]).collect()
    }

    pub fn future_graphs(&self, s: &Sample) -> Vec<&EpochGraph> {
        let g = &self.records[s.record].graphs.graphs;
        self.window.future_epochs(s.anchor).into_iter().map(|e| &g[e]).collect()
    }

    pub fn temporal_window(&self, s: &Sample) -> Result<Tensor> {
        self.records[s.record].temporal_window(&self.window.observed_epochs(s.anchor))
    }
}
