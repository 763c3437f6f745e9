//! Two-stage optimization loops, held-out evaluation and inference timing.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use super::config::{Stage, TrainConfig};
use super::data::{Dataset, Sample};
use super::metrics::{compute_auroc, compute_f1_acc_recall, forecast_gji, row_cosine, MetricsReport, ThresholdPolicy};
use super::model::{sample_rng, Model};
use super::optim::{adam_step, clip_gradients, AdamConfig, AdamState};
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::graph::{binarize_adjacency, global_jaccard};

const STREAM_SHUFFLE: u64 = 0;
const STREAM_PRETRAIN: u64 = 1;
const STREAM_FINETUNE: u64 = 2;

/// One line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation forecasting loss in pretraining, validation AUROC in fine-tuning.
    pub val_metric: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub history: Vec<HistoryRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Serializes records as JSON lines.
pub fn history_jsonl(records: &[HistoryRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

fn with_position(err: Error, stage: &str, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!("{stage} diverged at epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

/// Sums per-sample gradients in sample order and divides by the batch size.
fn reduce_gradients(per_sample: Vec<Vec<Option<Tensor>>>) -> Vec<Option<Tensor>> {
    let n = per_sample.len() as f64;
    let mut iter = per_sample.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for grads in iter {
        for (a, g) in acc.iter_mut().zip(grads) {
            if let (Some(a), Some(g)) = (a.as_mut(), g) {
                a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
            }
        }
    }
    for g in acc.iter_mut().flatten() {
        g.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    acc
}

fn shuffled(samples: &[Sample], seed: u64, stage: u64, epoch: usize) -> Vec<Sample> {
    let mut order = samples.to_vec();
    order.shuffle(&mut sample_rng(seed, STREAM_SHUFFLE, stage, epoch as u64));
    order
}

fn elapsed(start: Instant, cfg: &TrainConfig) -> f64 {
    if cfg.record_wall_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

struct Tracker {
    best_metric: f64,
    best_tiebreak: f64,
    best_epoch: usize,
    best_store: Option<ParamStore>,
    higher_is_better: bool,
}

impl Tracker {
    fn new(higher_is_better: bool) -> Self {
        Tracker {
            best_metric: if higher_is_better { f64::NEG_INFINITY } else { f64::INFINITY },
            best_tiebreak: f64::INFINITY,
            best_epoch: 0,
            best_store: None,
            higher_is_better,
        }
    }

    /// Records the epoch's metric; `tiebreak` (lower is better) decides
    /// between equal metrics. Returns `true` when training should stop.
    fn update(&mut self, epoch: usize, metric: f64, tiebreak: f64, store: &ParamStore, patience: usize) -> bool {
        let better = if self.higher_is_better {
            metric > self.best_metric
        } else {
            metric < self.best_metric
        };
        if better || (metric == self.best_metric && tiebreak < self.best_tiebreak) {
            self.best_metric = metric;
            self.best_tiebreak = tiebreak;
            self.best_epoch = epoch;
            self.best_store = Some(store.clone());
        }
        epoch - self.best_epoch >= patience
    }
}

/// Stage 1: minimizes the forecasting loss; keeps the parameters of the epoch
/// with the lowest validation loss.
pub fn train_forecaster(model: &mut Model, data: &Dataset, cfg: &TrainConfig, pool: &ThreadPool) -> Result<StageOutcome> {
    cfg.validate()?;
    let adam = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    let mut state = AdamState::new(&model.store);
    let mut tracker = Tracker::new(false);
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let order = shuffled(&data.train, cfg.seed, STREAM_PRETRAIN, epoch);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, Vec<Tensor>)>> = pool.install(|| {
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let mut rng = sample_rng(cfg.seed, STREAM_PRETRAIN, epoch as u64, (b * cfg.batch_size + i) as u64);
                        let draws = model.draw(&mut rng);
                        model.forecast_pass(data, s, &draws)
                    })
                    .collect()
            });
            let mut per_sample = Vec::with_capacity(results.len());
            for r in results {
                let (loss, grads) = r.map_err(|e| with_position(e, "forecast pretraining", epoch, b))?;
                loss_sum += loss;
                per_sample.push(grads.into_iter().map(Some).collect());
            }
            let mut grads = reduce_gradients(per_sample);
            clip_gradients(&mut grads, cfg.grad_clip_norm);
            adam_step(&mut model.store, &grads, &mut state, &adam).map_err(|e| with_position(e, "forecast pretraining", epoch, b))?;
        }
        let val: Vec<Result<f64>> = pool.install(|| data.val.par_iter().map(|s| model.forecast_eval(data, s)).collect());
        let mut val_sum = 0.0;
        for v in val {
            val_sum += v?;
        }
        let val_loss = val_sum / data.val.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("forecast pretraining diverged at epoch {epoch}: validation loss")));
        }
        history.push(HistoryRecord {
            stage: Stage::ForecastPretrain,
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val_metric: val_loss,
            lr: cfg.learning_rate,
            seconds: elapsed(start, cfg),
        });
        if tracker.update(epoch, val_loss, 0.0, &model.store, cfg.early_stop_patience) {
            break;
        }
    }
    if let Some(best) = tracker.best_store {
        model.store = best;
    }
    Ok(StageOutcome {
        history,
        best_epoch: tracker.best_epoch,
        best_metric: tracker.best_metric,
    })
}

fn latents(model: &Model, data: &Dataset, samples: &[Sample], pool: &ThreadPool) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    pool.install(|| samples.par_iter().map(|s| model.latent(data, s)).collect())
}

fn require_both_classes(samples: &[Sample], split: &str) -> Result<()> {
    let pos = samples.iter().filter(|s| s.label != 0).count();
    if pos == 0 || pos == samples.len() {
        return Err(Error::SingleClass(format!("{split} split")));
    }
    Ok(())
}

/// Stage 2: trains the classification head (or the whole model with
/// `unfreeze_trunk`) on binary cross-entropy; keeps the parameters of the
/// epoch with the highest validation AUROC, ties going to the lower
/// validation cross-entropy.
pub fn finetune_classifier(model: &mut Model, data: &Dataset, cfg: &TrainConfig, pool: &ThreadPool) -> Result<StageOutcome> {
    cfg.validate()?;
    require_both_classes(&data.val, "validation")?;
    require_both_classes(&data.train, "training")?;
    let lr = cfg.finetune_lr();
    let adam = AdamConfig::new(lr, cfg.weight_decay);
    let mut state = AdamState::new(&model.store);
    let mut tracker = Tracker::new(true);
    let mut history = Vec::new();
    let frozen = !cfg.unfreeze_trunk;
    let train_pos: std::collections::HashMap<(usize, usize), usize> = data
        .train
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.record, s.anchor), i))
        .collect();
    let (train_cache, val_cache) = if frozen {
        (latents(model, data, &data.train, pool)?, latents(model, data, &data.val, pool)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let val_labels: Vec<u8> = data.val.iter().map(|s| s.label).collect();
    for epoch in 1..=cfg.finetune_epochs() {
        let start = Instant::now();
        let order = shuffled(&data.train, cfg.seed, STREAM_FINETUNE, epoch);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, Vec<Option<Tensor>>)>> = pool.install(|| {
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let mut rng = sample_rng(cfg.seed, STREAM_FINETUNE, epoch as u64, (b * cfg.batch_size + i) as u64);
                        let draws = model.draw(&mut rng);
                        if frozen {
                            let (zs, zg) = &train_cache[train_pos[&(s.record, s.anchor)]];
                            model.head_pass(zs, zg, s.label, &draws)
                        } else {
                            model.full_class_pass(data, s, &draws)
                        }
                    })
                    .collect()
            });
            let mut per_sample = Vec::with_capacity(results.len());
            for r in results {
                let (loss, grads) = r.map_err(|e| with_position(e, "classifier fine-tuning", epoch, b))?;
                loss_sum += loss;
                per_sample.push(grads);
            }
            let mut grads = reduce_gradients(per_sample);
            clip_gradients(&mut grads, cfg.grad_clip_norm);
            adam_step(&mut model.store, &grads, &mut state, &adam).map_err(|e| with_position(e, "classifier fine-tuning", epoch, b))?;
        }
        let scores: Vec<f64> = if frozen {
            let r: Vec<Result<(f64, usize)>> = pool.install(|| val_cache.par_iter().map(|(zs, zg)| model.score_latent(zs, zg)).collect());
            r.into_iter().map(|x| x.map(|v| v.0)).collect::<Result<_>>()?
        } else {
            let r: Vec<Result<f64>> = pool.install(|| {
                data.val
                    .par_iter()
                    .map(|s| {
                        let (zs, zg) = model.latent(data, s)?;
                        Ok(model.score_latent(&zs, &zg)?.0)
                    })
                    .collect()
            });
            r.into_iter().collect::<Result<_>>()?
        };
        let auroc = compute_auroc(&scores, &val_labels)?;
        let val_bce = scores
            .iter()
            .zip(&val_labels)
            .map(|(&p, &y)| -(if y != 0 { p } else { 1.0 - p }).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / scores.len() as f64;
        history.push(HistoryRecord {
            stage: Stage::ClassifyFinetune,
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val_metric: auroc,
            lr,
            seconds: elapsed(start, cfg),
        });
        if tracker.update(epoch, auroc, val_bce, &model.store, cfg.early_stop_patience) {
            break;
        }
    }
    if let Some(best) = tracker.best_store {
        model.store = best;
    }
    Ok(StageOutcome {
        history,
        best_epoch: tracker.best_epoch,
        best_metric: tracker.best_metric,
    })
}

/// Per-sample inference results on a split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// GJI of repeating the last observed graph.
    pub persistence_gji: f64,
    pub threshold: f64,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

struct SampleEval {
    score: f64,
    nfe: usize,
    gji: Vec<f64>,
    persistence: Vec<f64>,
    cosine: Vec<f64>,
}

fn evaluate_sample(model: &Model, data: &Dataset, s: &Sample, tau: usize) -> Result<SampleEval> {
    let graphs = data.observed_graphs(s);
    let window = data.temporal_window(s)?;
    let inf = model.infer(&graphs, &window, data.window.horizon)?;
    let last = graphs.last().expect("observed epochs");
    let last_edges = binarize_adjacency(&last.adjacency, tau)?;
    let mut out = SampleEval {
        score: inf.probability,
        nfe: inf.trajectory.nfe,
        gji: Vec::new(),
        persistence: Vec::new(),
        cosine: Vec::new(),
    };
    for (pred, truth) in inf.predictions.iter().zip(data.future_graphs(s)) {
        out.gji.push(forecast_gji(pred, &truth.adjacency, tau)?);
        out.persistence.push(global_jaccard(&binarize_adjacency(&truth.adjacency, tau)?, &last_edges));
        out.cosine.extend(row_cosine(pred, &truth.node_features));
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Classification and graph-forecast metrics on `samples`.
pub fn evaluate(model: &Model, data: &Dataset, samples: &[Sample], cfg: &TrainConfig, pool: &ThreadPool) -> Result<Evaluation> {
    let results: Vec<Result<SampleEval>> =
        pool.install(|| samples.par_iter().map(|s| evaluate_sample(model, data, s, cfg.tau)).collect());
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let auroc = compute_auroc(&scores, &labels)?;
    let bin = compute_f1_acc_recall(&scores, &labels, ThresholdPolicy::OptimalF1)?;
    let gji: Vec<f64> = results.iter().flat_map(|r| r.gji.iter().copied()).collect();
    let pers: Vec<f64> = results.iter().flat_map(|r| r.persistence.iter().copied()).collect();
    let cos: Vec<f64> = results.iter().flat_map(|r| r.cosine.iter().copied()).collect();
    let nfe = results.iter().map(|r| r.nfe).sum();
    let wall_seconds = if cfg.record_wall_time {
        let batch = &samples[..samples.len().min(cfg.eval_batch_size)];
        benchmark_inference(model, data, batch, 5, pool)?.median_seconds
    } else {
        0.0
    };
    Ok(Evaluation {
        report: MetricsReport {
            auroc,
            f1: bin.f1,
            accuracy: bin.accuracy,
            recall: bin.recall,
            gji: mean(&gji),
            cosine_similarity: mean(&cos),
            nfe,
            wall_seconds,
        },
        persistence_gji: mean(&pers),
        threshold: bin.threshold,
        scores,
        labels,
    })
}

/// Timing and function-evaluation counts for repeated inference on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceBenchmark {
    pub median_seconds: f64,
    pub runs: usize,
    /// NFE of each trajectory in the batch, in batch order.
    pub nfe_per_trajectory: Vec<usize>,
}

impl InferenceBenchmark {
    pub fn total_nfe(&self) -> usize {
        self.nfe_per_trajectory.iter().sum()
    }
}

/// Median wall time over `runs` (at least 5) inference passes on `batch`,
/// after one untimed warm-up pass.
pub fn benchmark_inference(model: &Model, data: &Dataset, batch: &[Sample], runs: usize, pool: &ThreadPool) -> Result<InferenceBenchmark> {
    let run = || -> Result<Vec<usize>> {
        let r: Vec<Result<usize>> = pool.install(|| {
            batch
                .par_iter()
                .map(|s| {
                    let graphs = data.observed_graphs(s);
                    let window = data.temporal_window(s)?;
                    Ok(model.infer(&graphs, &window, data.window.horizon)?.trajectory.nfe)
                })
                .collect()
        });
        r.into_iter().collect()
    };
    run()?;
    let runs = runs.max(5);
    let mut times = Vec::with_capacity(runs);
    let mut nfe = Vec::new();
    for _ in 0..runs {
        let start = Instant::now();
        nfe = run()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    Ok(InferenceBenchmark { median_seconds: median, runs, nfe_per_trajectory: nfe })
}
