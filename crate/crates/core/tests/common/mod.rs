#![allow(dead_code)]

use latentflow::signal::{StftParams, SyntheticSpec};
use latentflow::train::{
    featurize_record, generate_corpus, CorpusSpec, Dataset, FeaturizeConfig, ModelConfig, RecordData, TrainConfig, WindowSpec,
};

pub fn tiny_featurize() -> FeaturizeConfig {
    FeaturizeConfig {
        stft: StftParams {
            fft_size: 16,
            hop: 8,
            floor_epsilon: 1e-8,
        },
        ..FeaturizeConfig::default()
    }
}

pub fn tiny_corpus(records: usize, seed: u64) -> CorpusSpec {
    CorpusSpec {
        records,
        seed,
        record: SyntheticSpec {
            channels: 4,
            sample_rate: 64.0,
            duration_s: 30.0,
            ..SyntheticSpec::default()
        },
        event_start_s: (8.0, 12.0),
        event_length_s: (6.0, 10.0),
        burst_amplitude: (1.0, 2.0),
        ..CorpusSpec::default()
    }
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        graph_dim: 6,
        stoch_dim: 2,
        gru_hidden: 4,
        gru_layers: 1,
        gnn_rounds: 1,
        conv_channels: 2,
        decay_hidden: 3,
        decoder_hidden: 5,
    }
}

pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        max_epochs: 3,
        horizon: 2,
        substeps_per_unit: 2,
        tau: 2,
        observed_epochs: 2,
        epoch_stride: 4,
        ..TrainConfig::default()
    }
}

pub fn tiny_dataset(records: usize, seed: u64, cfg: &TrainConfig) -> Dataset {
    let fcfg = tiny_featurize();
    let corpus = generate_corpus(&tiny_corpus(records, seed)).unwrap();
    let data: Vec<RecordData> = corpus
        .iter()
        .map(|c| {
            let g = featurize_record(&c.record, &fcfg, cfg.tau).unwrap();
            RecordData::new(&c.name, &c.record, g, &fcfg).unwrap()
        })
        .collect();
    Dataset::new(data, WindowSpec::from_config(cfg), cfg.split_seed).unwrap()
}
