//! The full model: encoders, vector field, decoder and head over one
//! parameter store, plus per-sample forward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, TrainConfig};
use super::data::{Dataset, Sample};
use crate::autodiff::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoders::{build_initial_state, gaussian_noise, GraphEncoder, TemporalEncoder};
use crate::error::{Error, Result};
use crate::forecaster::{bce_with_logit, forecast_loss, pool_trajectory, Classifier, Decoder, PoolingMode};
use crate::graph::EpochGraph;
use crate::init::Initializer;
use crate::ode::{solve_trajectory, FieldConfig, GateMode, TapeTrajectory, Trajectory, VectorFieldParams};

/// Behavioural switches that do not change the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOptions {
    pub gate: GateMode,
    pub freeze_stochastic: bool,
    pub stochastic: bool,
    pub sigma_noise: f64,
    pub substeps: usize,
    pub horizon: usize,
    pub pooling: PoolingMode,
    pub adjacency_loss_weight: f64,
}

impl ModelOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        ModelOptions {
            gate: cfg.gate_mode(),
            freeze_stochastic: cfg.freeze_stochastic_block,
            stochastic: cfg.stochastic_enabled,
            sigma_noise: cfg.sigma_noise,
            substeps: cfg.substeps_per_unit,
            horizon: cfg.horizon,
            pooling: cfg.pooling,
            adjacency_loss_weight: cfg.adjacency_loss_weight,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub options: ModelOptions,
    pub nodes: usize,
    pub feature_dim: usize,
    pub observed: usize,
    pub store: ParamStore,
    pub graph: GraphEncoder,
    pub temporal: TemporalEncoder,
    pub field: VectorFieldParams,
    pub decoder: Decoder,
    pub head: Classifier,
}

/// Output of [`Model::infer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub probability: f64,
    pub predictions: Vec<Tensor>,
    pub trajectory: Trajectory,
}

/// Random draws consumed by one stochastic forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleDraws {
    pub noise: Option<Vec<f64>>,
    pub gate: Option<Tensor>,
}

/// Seeds a generator from `(seed, stage, epoch, index)` without hashing.
pub fn sample_rng(seed: u64, stage: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (k, v) in [seed, stage, epoch, index].into_iter().enumerate() {
        bytes[8 * k..8 * k + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

impl Model {
    pub fn new(
        config: &ModelConfig,
        options: ModelOptions,
        nodes: usize,
        feature_dim: usize,
        observed: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let graph = GraphEncoder::register(
            &mut store,
            feature_dim,
            config.gru_hidden,
            config.gru_layers,
            config.gnn_rounds,
            config.graph_dim,
            init,
        )?;
        let temporal = TemporalEncoder::register(&mut store, observed, config.conv_channels, config.stoch_dim, init)?;
        let field = VectorFieldParams::register(
            &mut store,
            FieldConfig {
                dim: config.latent_dim(),
                stoch_dim: config.stoch_dim,
                decay_hidden: config.decay_hidden,
                gate: options.gate,
                freeze_stochastic: options.freeze_stochastic,
            },
            init,
        )?;
        let decoder = Decoder::register(&mut store, config.latent_dim(), config.decoder_hidden, nodes, feature_dim, init)?;
        let head = Classifier::register(&mut store, config.latent_dim(), init)?;
        Ok(Model {
            config: config.clone(),
            options,
            nodes,
            feature_dim,
            observed,
            store,
            graph,
            temporal,
            field,
            decoder,
            head,
        })
    }

    /// Replaces every parameter with the same-named one from `other`, which
    /// must cover the whole layout.
    pub fn load_params(&mut self, other: &ParamStore) -> Result<()> {
        let copied = self.store.load_matching(other);
        if copied != self.store.len() || other.len() != self.store.len() {
            return Err(Error::invalid(format!(
                "checkpoint layout mismatch: {copied} of {} parameters matched ({} in checkpoint)",
                self.store.len(),
                other.len()
            )));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    pub fn is_head(&self, id: ParamId) -> bool {
        id == self.head.w || id == self.head.b
    }

    /// Draws the noise and random-gate coefficients a training pass needs.
    pub fn draw(&self, rng: &mut impl Rng) -> SampleDraws {
        let noise = (self.options.stochastic && self.options.sigma_noise > 0.0)
            .then(|| gaussian_noise(rng, self.config.stoch_dim, self.options.sigma_noise));
        let gate = (self.options.gate == GateMode::Random)
            .then(|| Tensor::from_fn(1, self.latent_dim(), |_, _| rng.random_range(0.0..1.0)));
        SampleDraws { noise, gate }
    }

    /// `(z_s, z_g)` on the tape. With the stochastic branch disabled `z_s` is a
    /// zero constant.
    pub fn encode(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        graphs: &[&EpochGraph],
        window: &Tensor,
        noise: Option<&[f64]>,
    ) -> Result<(Var, Var)> {
        let last = graphs.last().ok_or_else(|| Error::invalid("encode: no observed epochs"))?;
        let features: Vec<&Tensor> = graphs.iter().map(|g| &g.node_features).collect();
        let adjacency: Vec<&Tensor> = graphs.iter().map(|g| &g.adjacency).collect();
        let h_nodes = self.graph.encode_node_sequences(tape, p, &features)?;
        let edges = self.graph.encode_edge_sequences(tape, p, &adjacency)?;
        let z_g = self.graph.aggregate_graph(tape, p, h_nodes, edges.as_ref(), &last.adjacency)?;
        let z_s = if self.options.stochastic {
            self.temporal.encode(tape, p, window, noise)?
        } else {
            tape.constant(Tensor::zeros(1, self.config.stoch_dim))
        };
        Ok((z_s, z_g))
    }

    /// Integrates from `[z_s; z_g]` over `horizon` unit intervals.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        z_s: Var,
        z_g: Var,
        gate: Option<Tensor>,
        horizon: usize,
    ) -> Result<TapeTrajectory> {
        let z0 = build_initial_state(tape, z_s, z_g, self.config.stoch_dim, self.config.graph_dim)?;
        let field = self.field.bind(tape, p, z_s, gate)?;
        solve_trajectory(tape, &field, z0, horizon, self.options.substeps)
    }

    /// Forecasting loss of one sample on a fresh tape, with gradients for
    /// every parameter.
    pub fn forecast_pass(&self, data: &Dataset, s: &Sample, draws: &SampleDraws) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, |_| true);
        let graphs = data.observed_graphs(s);
        let window = data.temporal_window(s)?;
        let (z_s, z_g) = self.encode(&mut tape, &p, &graphs, &window, draws.noise.as_deref())?;
        let traj = self.rollout(&mut tape, &p, z_s, z_g, draws.gate.clone(), data.window.horizon)?;
        let preds = traj
            .states
            .iter()
            .map(|z| self.decoder.decode_step(&mut tape, &p, *z))
            .collect::<Result<Vec<_>>>()?;
        let future = data.future_graphs(s);
        let truth: Vec<&Tensor> = future.iter().map(|g| &g.node_features).collect();
        let (loss, _) = forecast_loss(&mut tape, &preds, &truth, self.options.adjacency_loss_weight)?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite("forecast loss".into()));
        }
        let grads = tape.backward(loss)?;
        let out = p
            .vars()
            .iter()
            .zip(self.store.tensors())
            .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
            .collect();
        Ok((value, out))
    }

    /// Deterministic forecasting loss (no noise, mean gate).
    pub fn forecast_eval(&self, data: &Dataset, s: &Sample) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, |_| false);
        let graphs = data.observed_graphs(s);
        let window = data.temporal_window(s)?;
        let (z_s, z_g) = self.encode(&mut tape, &p, &graphs, &window, None)?;
        let traj = self.rollout(&mut tape, &p, z_s, z_g, None, data.window.horizon)?;
        let preds = traj
            .states
            .iter()
            .map(|z| self.decoder.decode_step(&mut tape, &p, *z))
            .collect::<Result<Vec<_>>>()?;
        let future = data.future_graphs(s);
        let truth: Vec<&Tensor> = future.iter().map(|g| &g.node_features).collect();
        let (loss, _) = forecast_loss(&mut tape, &preds, &truth, self.options.adjacency_loss_weight)?;
        Ok(tape.item(loss))
    }

    /// Deterministic inference on one window: event probability from the
    /// pooled trajectory and decoded node attributes for every step.
    pub fn infer(&self, graphs: &[&EpochGraph], window: &Tensor, horizon: usize) -> Result<Inference> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, |_| false);
        let (z_s, z_g) = self.encode(&mut tape, &p, graphs, window, None)?;
        let traj = self.rollout(&mut tape, &p, z_s, z_g, None, horizon)?;
        let pooled = pool_trajectory(&mut tape, &traj.states, self.options.pooling)?;
        let logit = self.head.logit(&mut tape, &p, pooled)?;
        let prob = tape.sigmoid(logit);
        let mut predictions = Vec::with_capacity(horizon);
        for z in &traj.states {
            let x = self.decoder.decode_step(&mut tape, &p, *z)?;
            predictions.push(tape.value(x).clone());
        }
        Ok(Inference {
            probability: tape.item(prob),
            predictions,
            trajectory: traj.values(&tape),
        })
    }

    /// Deterministic `(z_s, z_g)` values of a sample.
    pub fn latent(&self, data: &Dataset, s: &Sample) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, |_| false);
        let graphs = data.observed_graphs(s);
        let window = data.temporal_window(s)?;
        let (z_s, z_g) = self.encode(&mut tape, &p, &graphs, &window, None)?;
        Ok((tape.value(z_s).data().to_vec(), tape.value(z_g).data().to_vec()))
    }

    fn head_from_latent(&self, tape: &mut Tape, p: &BoundParams, z_s: Var, z_g: Var, gate: Option<Tensor>) -> Result<(Var, usize)> {
        let traj = self.rollout(tape, p, z_s, z_g, gate, self.options.horizon)?;
        let pooled = pool_trajectory(tape, &traj.states, self.options.pooling)?;
        Ok((self.head.logit(tape, p, pooled)?, traj.nfe))
    }

    /// Classification loss from cached trunk outputs; gradients for the head
    /// only.
    pub fn head_pass(&self, z_s: &[f64], z_g: &[f64], label: u8, draws: &SampleDraws) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, |id| self.is_head(id));
        let mut zs = z_s.to_vec();
        if let Some(eps) = &draws.noise {
            zs.iter_mut().zip(eps).for_each(|(a, e)| *a += e);
        }
        let zs = tape.constant(Tensor::row(zs));
        let zg = tape.constant(Tensor::row(z_g.to_vec()));
        let (logit, _) = self.head_from_latent(&mut tape, &p, zs, zg, draws.gate.clone())?;
        let loss = bce_with_logit(&mut tape, logit, f64::from(label))?;
        let value = tape.item(loss);
        let grads = tape.backward(loss)?;
        let out = self
            .store
            .ids()
            .map(|id| self.is_head(id).then(|| grads.get_or_zeros(p.var(id), self.store.get(id).shape())))
            .collect();
        Ok((value, out))
    }

    /// Classification loss through the whole model; gradients for everything.
    pub fn full_class_pass(&self, data: &Dataset, s: &Sample, draws: &SampleDraws) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, |_| true);
        let graphs = data.observed_graphs(s);
        let window = data.temporal_window(s)?;
        let (z_s, z_g) = self.encode(&mut tape, &p, &graphs, &window, draws.noise.as_deref())?;
        let (logit, _) = self.head_from_latent(&mut tape, &p, z_s, z_g, draws.gate.clone())?;
        let loss = bce_with_logit(&mut tape, logit, f64::from(s.label))?;
        let value = tape.item(loss);
        let grads = tape.backward(loss)?;
        let out = p
            .vars()
            .iter()
            .zip(self.store.tensors())
            .map(|(v, t)| Some(grads.get_or_zeros(*v, t.shape())))
            .collect();
        Ok((value, out))
    }

    /// Event probability from trunk outputs, deterministic, with the solver's NFE.
    pub fn score_latent(&self, z_s: &[f64], z_g: &[f64]) -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, |_| false);
        let zs = tape.constant(Tensor::row(z_s.to_vec()));
        let zg = tape.constant(Tensor::row(z_g.to_vec()));
        let (logit, nfe) = self.head_from_latent(&mut tape, &p, zs, zg, None)?;
        let prob = tape.sigmoid(logit);
        Ok((tape.item(prob), nfe))
    }
}
