use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::PoolingMode;
use crate::ode::GateMode;
use crate::signal::{StftParams, SyntheticSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    ForecastPretrain,
    ClassifyFinetune,
}

/// Optimization, ablation and windowing settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate of the classification stage; `learning_rate` when absent.
    pub finetune_learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub max_epochs: usize,
    pub finetune_max_epochs: Option<usize>,
    pub grad_clip_norm: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Seed of the record-level train/validation/test split.
    pub split_seed: u64,
    pub stage: Stage,
    /// Forecast horizon `K` in strided epochs.
    pub horizon: usize,
    pub substeps_per_unit: usize,
    pub freeze_stochastic_block: bool,
    pub gate_enabled: bool,
    pub stochastic_enabled: bool,
    pub random_gate: bool,
    pub pooling: PoolingMode,
    pub tau: usize,
    pub sigma_noise: f64,
    /// Weight of the correlation-structure term in the forecasting loss.
    pub adjacency_loss_weight: f64,
    /// Train the whole model during fine-tuning instead of the head alone.
    pub unfreeze_trunk: bool,
    /// Observed epochs `T` per sample.
    pub observed_epochs: usize,
    /// Distance in epochs between consecutive observed and future epochs.
    pub epoch_stride: usize,
    /// Write measured durations into the history and metrics. Off by default
    /// because timings make otherwise identical runs differ byte-wise.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            finetune_learning_rate: None,
            weight_decay: 5e-4,
            batch_size: 128,
            eval_batch_size: 256,
            max_epochs: 100,
            finetune_max_epochs: None,
            grad_clip_norm: 5.0,
            early_stop_patience: 5,
            seed: 0,
            split_seed: 0,
            stage: Stage::ForecastPretrain,
            horizon: 1,
            substeps_per_unit: 4,
            freeze_stochastic_block: true,
            gate_enabled: true,
            stochastic_enabled: true,
            random_gate: false,
            pooling: PoolingMode::Max,
            tau: 3,
            sigma_noise: 0.1,
            adjacency_loss_weight: 0.0,
            unfreeze_trunk: false,
            observed_epochs: 3,
            epoch_stride: 12,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("finetune_learning_rate", self.finetune_learning_rate.unwrap_or(1.0)),
            ("grad_clip_norm", self.grad_clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("train.{name} must be a positive finite number, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) || !(self.sigma_noise >= 0.0) || !(self.adjacency_loss_weight >= 0.0) {
            return Err(Error::invalid("train.weight_decay, sigma_noise and adjacency_loss_weight must be ≥ 0"));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("eval_batch_size", self.eval_batch_size),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
            ("horizon", self.horizon),
            ("substeps_per_unit", self.substeps_per_unit),
            ("tau", self.tau),
            ("observed_epochs", self.observed_epochs),
            ("epoch_stride", self.epoch_stride),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("train.{name} must be ≥ 1")));
            }
        }
        if self.random_gate && !self.gate_enabled {
            return Err(Error::invalid("train.random_gate requires train.gate_enabled"));
        }
        Ok(())
    }

    pub fn gate_mode(&self) -> GateMode {
        match (self.gate_enabled, self.random_gate) {
            (false, _) => GateMode::Disabled,
            (true, true) => GateMode::Random,
            (true, false) => GateMode::Learned,
        }
    }

    pub fn finetune_lr(&self) -> f64 {
        self.finetune_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn finetune_epochs(&self) -> usize {
        self.finetune_max_epochs.unwrap_or(self.max_epochs)
    }
}

/// Widths of the learned components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `m`.
    pub graph_dim: usize,
    /// `c`.
    pub stoch_dim: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub gnn_rounds: usize,
    pub conv_channels: usize,
    pub decay_hidden: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            graph_dim: 84,
            stoch_dim: 16,
            gru_hidden: 64,
            gru_layers: 2,
            gnn_rounds: 1,
            conv_channels: 16,
            decay_hidden: 32,
            decoder_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stoch_dim >= self.graph_dim {
            return Err(Error::invalid(format!(
                "model.stoch_dim ({}) must be smaller than model.graph_dim ({})",
                self.stoch_dim, self.graph_dim
            )));
        }
        let widths = [
            ("gru_hidden", self.gru_hidden),
            ("gru_layers", self.gru_layers),
            ("gnn_rounds", self.gnn_rounds),
            ("conv_channels", self.conv_channels),
            ("decay_hidden", self.decay_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("stoch_dim", self.stoch_dim),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} must be ≥ 1")));
            }
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.graph_dim + self.stoch_dim
    }
}

/// Epoch segmentation and spectral settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizeConfig {
    pub window_s: f64,
    pub step_s: f64,
    pub stft: StftParams,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            window_s: 12.0,
            step_s: 1.0,
            stft: StftParams::default(),
        }
    }
}

/// A seeded collection of synthetic records. Event records receive one event
/// window with start and length drawn from the given ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub records: usize,
    pub event_fraction: f64,
    pub event_start_s: (f64, f64),
    pub event_length_s: (f64, f64),
    /// Per-record burst amplitude range.
    pub burst_amplitude: (f64, f64),
    pub seed: u64,
    /// Template for every record; its `seed`, `event_windows` and
    /// `burst_amplitude` are replaced per record.
    pub record: SyntheticSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            records: 40,
            event_fraction: 0.5,
            event_start_s: (16.0, 40.0),
            event_length_s: (8.0, 24.0),
            burst_amplitude: (0.3, 1.5),
            seed: 0,
            record: SyntheticSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: String,
    pub features_dir: String,
    pub run_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            features_dir: "features".into(),
            run_dir: "run".into(),
        }
    }
}

/// Everything a pipeline run depends on, as one JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub featurize: FeaturizeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let c = &self.corpus;
        if c.records == 0 || !(0.0..=1.0).contains(&c.event_fraction) {
            return Err(Error::invalid("corpus.records must be ≥ 1 and event_fraction in [0, 1]"));
        }
        for (name, (lo, hi)) in [
            ("event_start_s", c.event_start_s),
            ("event_length_s", c.event_length_s),
            ("burst_amplitude", c.burst_amplitude),
        ] {
            if !(lo <= hi) || lo < 0.0 {
                return Err(Error::invalid(format!("corpus.{name} must be an ordered non-negative range")));
            }
        }
        if !(self.featurize.window_s > 0.0 && self.featurize.step_s > 0.0) {
            return Err(Error::invalid("featurize.window_s and step_s must be positive"));
        }
        Ok(())
    }
}
