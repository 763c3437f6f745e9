//! Training, evaluation and the data layout they share.

pub mod baseline;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod trainer;

pub use baseline::LogisticBaseline;
pub use config::{CorpusSpec, FeaturizeConfig, ModelConfig, PathsConfig, RunConfig, Stage, TrainConfig};
pub use data::{
    corpus_specs, epoch_band_powers, featurize_record, generate_corpus, split_records, CorpusRecord, Dataset, RecordData,
    Sample, Splits, WindowSpec,
};
pub use metrics::{compute_auroc, compute_f1_acc_recall, BinaryMetrics, MetricsReport, ThresholdPolicy};
pub use model::{sample_rng, Inference, Model, ModelOptions, SampleDraws};
pub use optim::{adam_step, clip_gradients, global_norm, AdamConfig, AdamState};
pub use trainer::{benchmark_inference, evaluate, finetune_classifier, history_jsonl, train_forecaster, Evaluation, HistoryRecord, InferenceBenchmark, StageOutcome};
