//! Initial-state encoders: the graph descriptor (GRUs over node spectra and
//! edge weights followed by message passing) and the stochastic temporal
//! descriptor (a small 1-D CNN over the raw window).

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::signal::Epoch;

/// One GRU cell in row-vector convention (`x: B × in`, `h: B × hidden`).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_ir: ParamId,
    w_iz: ParamId,
    w_in: ParamId,
    w_hr: ParamId,
    w_hz: ParamId,
    w_hn: ParamId,
    b_r: ParamId,
    b_z: ParamId,
    b_in: ParamId,
    b_hn: ParamId,
}

impl GruCell {
    pub fn register(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden_dim: usize, init: &mut Initializer) -> Result<Self> {
        let h = hidden_dim;
        let mut w = |name: &str, rows: usize, store: &mut ParamStore| {
            store.add(format!("{prefix}.{name}"), init.uniform(rows, h, h))
        };
        Ok(GruCell {
            input_dim,
            hidden_dim,
            w_ir: w("w_ir", input_dim, store)?,
            w_iz: w("w_iz", input_dim, store)?,
            w_in: w("w_in", input_dim, store)?,
            w_hr: w("w_hr", h, store)?,
            w_hz: w("w_hz", h, store)?,
            w_hn: w("w_hn", h, store)?,
            b_r: w("b_r", 1, store)?,
            b_z: w("b_z", 1, store)?,
            b_in: w("b_in", 1, store)?,
            b_hn: w("b_hn", 1, store)?,
        })
    }

    /// `r = σ(xW_ir + hW_hr + b_r)`, `u = σ(xW_iz + hW_hz + b_z)`,
    /// `n = tanh(xW_in + b_in + r ⊙ (hW_hn + b_hn))`, `h' = n + u ⊙ (h − n)`.
    pub fn step(&self, tape: &mut Tape, p: &BoundParams, x: Var, h: Var) -> Result<Var> {
        let gate = |tape: &mut Tape, wi: ParamId, wh: ParamId, b: ParamId| -> Result<Var> {
            let xi = tape.matmul(x, p.var(wi))?;
            let hh = tape.matmul(h, p.var(wh))?;
            let s = tape.add(xi, hh)?;
            let s = tape.add_bias(s, p.var(b))?;
            Ok(tape.sigmoid(s))
        };
        let r = gate(tape, self.w_ir, self.w_hr, self.b_r)?;
        let u = gate(tape, self.w_iz, self.w_hz, self.b_z)?;
        let xn = tape.matmul(x, p.var(self.w_in))?;
        let xn = tape.add_bias(xn, p.var(self.b_in))?;
        let hn = tape.matmul(h, p.var(self.w_hn))?;
        let hn = tape.add_bias(hn, p.var(self.b_hn))?;
        let rh = tape.mul(r, hn)?;
        let pre = tape.add(xn, rh)?;
        let n = tape.tanh(pre);
        let diff = tape.sub(h, n)?;
        let ud = tape.mul(u, diff)?;
        tape.add(n, ud)
    }
}

/// Stacked GRU; layer `l+1` consumes the hidden sequence of layer `l`.
#[derive(Clone, Debug)]
pub struct GruStack {
    pub layers: Vec<GruCell>,
}

impl GruStack {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let layers = (0..layers.max(1))
            .map(|l| {
                let inp = if l == 0 { input_dim } else { hidden_dim };
                GruCell::register(store, &format!("{prefix}.l{l}"), inp, hidden_dim, init)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GruStack { layers })
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim
    }

    /// Runs the stack over `inputs` (each `B × input_dim`) from a zero state and
    /// returns the top layer's final hidden state.
    pub fn run(&self, tape: &mut Tape, p: &BoundParams, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::invalid("GRU over an empty sequence"))?;
        let batch = tape.value(*first).rows();
        let mut seq = inputs.to_vec();
        for cell in &self.layers {
            let mut h = tape.constant(Tensor::zeros(batch, cell.hidden_dim));
            let mut outs = Vec::with_capacity(seq.len());
            for &x in &seq {
                if tape.value(x).cols() != cell.input_dim {
                    return Err(Error::ShapeMismatch {
                        op: "gru input",
                        lhs: tape.value(x).shape(),
                        rhs: [batch, cell.input_dim],
                    });
                }
                h = cell.step(tape, p, x, h)?;
                outs.push(h);
            }
            seq = outs;
        }
        Ok(*seq.last().expect("non-empty"))
    }
}

/// Hidden states for the ordered node pairs that carry weight at some epoch.
#[derive(Clone, Debug)]
pub struct EdgeStates {
    pub pairs: Vec<(usize, usize)>,
    pub states: Var,
}

#[derive(Clone, Debug)]
struct GnnRound {
    w_self: ParamId,
    w_nbr: ParamId,
    w_edge: ParamId,
    bias: ParamId,
}

/// Graph descriptor: node GRU, edge GRU, message passing, mean pooling and a
/// projection to the graph embedding of width `m`.
#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub node_gru: GruStack,
    pub edge_gru: GruStack,
    rounds: Vec<GnnRound>,
    proj_w: ParamId,
    proj_b: ParamId,
    pub out_dim: usize,
}

impl GraphEncoder {
    pub fn register(
        store: &mut ParamStore,
        feature_dim: usize,
        hidden: usize,
        layers: usize,
        rounds: usize,
        out_dim: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::invalid("graph embedding width must be positive"));
        }
        let node_gru = GruStack::register(store, "phi.node_gru", feature_dim, hidden, layers, init)?;
        let edge_gru = GruStack::register(store, "phi.edge_gru", 1, hidden, layers, init)?;
        let rounds = (0..rounds.max(1))
            .map(|r| -> Result<GnnRound> {
                Ok(GnnRound {
                    w_self: store.add(format!("phi.gnn.r{r}.w_self"), init.weight(hidden, hidden))?,
                    w_nbr: store.add(format!("phi.gnn.r{r}.w_nbr"), init.weight(hidden, hidden))?,
                    w_edge: store.add(format!("phi.gnn.r{r}.w_edge"), init.weight(hidden, hidden))?,
                    bias: store.add(format!("phi.gnn.r{r}.bias"), init.bias(hidden, hidden))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let proj_w = store.add("phi.gnn.proj_w", init.weight(hidden, out_dim))?;
        let proj_b = store.add("phi.gnn.proj_b", init.bias(hidden, out_dim))?;
        Ok(GraphEncoder {
            node_gru,
            edge_gru,
            rounds,
            proj_w,
            proj_b,
            out_dim,
        })
    }

    /// Final hidden state per node (`N × hidden`) of the shared node GRU run over
    /// each node's spectral feature sequence.
    pub fn encode_node_sequences(&self, tape: &mut Tape, p: &BoundParams, features: &[&Tensor]) -> Result<Var> {
        if features.is_empty() {
            return Err(Error::invalid("encode_node_sequences: empty graph sequence"));
        }
        let inputs: Vec<Var> = features.iter().map(|f| tape.constant((*f).clone())).collect();
        self.node_gru.run(tape, p, &inputs)
    }

    /// Runs the edge GRU over the weight sequence of every ordered pair `(i, j)`
    /// that is nonzero at some epoch. Returns `None` when no pair ever has weight.
    pub fn encode_edge_sequences(&self, tape: &mut Tape, p: &BoundParams, adjacency: &[&Tensor]) -> Result<Option<EdgeStates>> {
        let first = adjacency
            .first()
            .ok_or_else(|| Error::invalid("encode_edge_sequences: empty graph sequence"))?;
        let n = first.rows();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && adjacency.iter().any(|a| a.get(i, j) != 0.0))
            .collect();
        if pairs.is_empty() {
            return Ok(None);
        }
        self.encode_edge_pairs(tape, p, adjacency, pairs).map(Some)
    }

    /// Edge GRU over an explicit list of ordered pairs.
    pub fn encode_edge_pairs(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        adjacency: &[&Tensor],
        pairs: Vec<(usize, usize)>,
    ) -> Result<EdgeStates> {
        if pairs.is_empty() {
            return Err(Error::invalid("no edges"));
        }
        let inputs: Vec<Var> = adjacency
            .iter()
            .map(|a| tape.constant(Tensor::from_fn(pairs.len(), 1, |e, _| a.get(pairs[e].0, pairs[e].1))))
            .collect();
        let states = self.edge_gru.run(tape, p, &inputs)?;
        Ok(EdgeStates { pairs, states })
    }

    /// Message passing over the neighbourhoods of `last_adjacency`:
    /// `h_i ← relu(W_self h_i + Σ_j a_ij (W_nbr h_j + W_edge h_ij) + b)`, then
    /// mean over nodes and a linear projection.
    pub fn aggregate_graph(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        h_nodes: Var,
        edges: Option<&EdgeStates>,
        last_adjacency: &Tensor,
    ) -> Result<Var> {
        let n = tape.value(h_nodes).rows();
        if last_adjacency.shape() != [n, n] {
            return Err(Error::ShapeMismatch {
                op: "aggregate_graph",
                lhs: tape.value(h_nodes).shape(),
                rhs: last_adjacency.shape(),
            });
        }
        let adj = tape.constant(last_adjacency.clone());
        let scatter = edges.map(|e| {
            let s = Tensor::from_fn(n, e.pairs.len(), |i, k| {
                let (a, b) = e.pairs[k];
                if a == i {
                    last_adjacency.get(a, b)
                } else {
                    0.0
                }
            });
            (tape.constant(s), e.states)
        });
        let mut h = h_nodes;
        for round in &self.rounds {
            let self_term = tape.matmul(h, p.var(round.w_self))?;
            let nbr = tape.matmul(h, p.var(round.w_nbr))?;
            let nbr = tape.matmul(adj, nbr)?;
            let mut acc = tape.add(self_term, nbr)?;
            if let Some((s, states)) = scatter {
                let e = tape.matmul(states, p.var(round.w_edge))?;
                let e = tape.matmul(s, e)?;
                acc = tape.add(acc, e)?;
            }
            let acc = tape.add_bias(acc, p.var(round.bias))?;
            h = tape.relu(acc);
        }
        let pooled = tape.mean_rows(h);
        let z = tape.matmul(pooled, p.var(self.proj_w))?;
        tape.add_bias(z, p.var(self.proj_b))
    }
}

#[derive(Clone, Debug)]
struct ConvStage {
    weight: ParamId,
    bias: ParamId,
}

/// Stochastic temporal descriptor: three `kernel 2 / stride 1` convolutions,
/// each followed by per-channel standardization over time, relu and a width-2
/// max-pool, then a time average and a projection to width `c`.
#[derive(Clone, Debug)]
pub struct TemporalEncoder {
    stages: Vec<ConvStage>,
    proj_w: ParamId,
    proj_b: ParamId,
    pub in_channels: usize,
    pub out_dim: usize,
}

pub const CONV_STAGES: usize = 3;

impl TemporalEncoder {
    pub fn register(
        store: &mut ParamStore,
        in_channels: usize,
        conv_channels: usize,
        out_dim: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(CONV_STAGES);
        let mut cin = in_channels;
        for s in 0..CONV_STAGES {
            stages.push(ConvStage {
                weight: store.add(format!("psi.conv{s}.w"), init.weight(2 * cin, conv_channels))?,
                bias: store.add(format!("psi.conv{s}.b"), init.bias(2 * cin, conv_channels))?,
            });
            cin = conv_channels;
        }
        Ok(TemporalEncoder {
            stages,
            proj_w: store.add("psi.proj_w", init.weight(conv_channels, out_dim))?,
            proj_b: store.add("psi.proj_b", init.bias(conv_channels, out_dim))?,
            in_channels,
            out_dim,
        })
    }

    /// Shortest input length the three stages accept.
    pub fn min_length() -> usize {
        let mut len = 1;
        for _ in 0..CONV_STAGES {
            len = 2 * len + 1;
        }
        len
    }

    /// `window` is `L × in_channels` (time along rows). `noise`, when given, is
    /// added to the output.
    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, window: &Tensor, noise: Option<&[f64]>) -> Result<Var> {
        if window.cols() != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "temporal encoder input",
                lhs: window.shape(),
                rhs: [window.rows(), self.in_channels],
            });
        }
        if window.rows() < Self::min_length() {
            return Err(Error::invalid(format!(
                "temporal window of {} samples is shorter than the receptive field ({})",
                window.rows(),
                Self::min_length()
            )));
        }
        let mut x = tape.constant(window.clone());
        for stage in &self.stages {
            let len = tape.value(x).rows();
            let a = tape.slice_rows(x, 0, len - 1)?;
            let b = tape.slice_rows(x, 1, len - 1)?;
            let pair = tape.concat_cols(&[a, b])?;
            let y = tape.matmul(pair, p.var(stage.weight))?;
            let y = tape.add_bias(y, p.var(stage.bias))?;
            let y = tape.standardize_cols(y);
            let y = tape.relu(y);
            x = tape.max_pool2_rows(y)?;
        }
        let pooled = tape.mean_rows(x);
        let z = tape.matmul(pooled, p.var(self.proj_w))?;
        let z = tape.add_bias(z, p.var(self.proj_b))?;
        match noise {
            Some(eps) => {
                if eps.len() != self.out_dim {
                    return Err(Error::invalid("noise width differs from the temporal embedding width"));
                }
                let n = tape.constant(Tensor::row(eps.to_vec()));
                tape.add(z, n)
            }
            None => Ok(z),
        }
    }
}

/// Gaussian noise of scale `sigma` for the stochastic embedding.
pub fn gaussian_noise(rng: &mut impl rand::Rng, width: usize, sigma: f64) -> Vec<f64> {
    (0..width)
        .map(|_| { let n: f64 = StandardNormal.sample(rng); sigma * n })
        .collect::<Vec<f64>>()
}

/// Mean over channels of each epoch, standardized over the whole window, as
/// an `L × T` matrix (one column per epoch).
pub fn temporal_input(epochs: &[Epoch<'_>]) -> Result<Tensor> {
    let first = epochs.first().ok_or_else(|| Error::invalid("temporal input needs at least one epoch"))?;
    let len = first.len();
    let t = epochs.len();
    let mut data = vec![0.0; len * t];
    for (k, e) in epochs.iter().enumerate() {
        if e.len() != len {
            return Err(Error::invalid("epochs of unequal length"));
        }
        let inv = 1.0 / e.channels() as f64;
        for c in 0..e.channels() {
            for (i, v) in e.channel(c).iter().enumerate() {
                data[i * t + k] += v * inv;
            }
        }
    }
    standardize_in_place(&mut data);
    Tensor::new(len, t, data)
}

pub(crate) fn standardize_in_place(data: &mut [f64]) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    data.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}

/// `z₀ = [z_s; z_g]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z_s: Vec<f64>,
    pub z_g: Vec<f64>,
}

impl LatentState {
    pub fn z0(&self) -> Vec<f64> {
        let mut v = self.z_s.clone();
        v.extend_from_slice(&self.z_g);
        v
    }

    pub fn dim(&self) -> usize {
        self.z_s.len() + self.z_g.len()
    }

    /// Splits `z0` with the stochastic block in the leading `c` coordinates.
    pub fn split(z0: &[f64], c: usize) -> Result<Self> {
        if c > z0.len() {
            return Err(Error::invalid(format!("cannot split {} coordinates at {c}", z0.len())));
        }
        Ok(LatentState {
            z_s: z0[..c].to_vec(),
            z_g: z0[c..].to_vec(),
        })
    }
}

/// Concatenates the embeddings on the tape, stochastic block first.
pub fn build_initial_state(tape: &mut Tape, z_s: Var, z_g: Var, c: usize, m: usize) -> Result<Var> {
    let (s, g) = (tape.value(z_s).shape(), tape.value(z_g).shape());
    if s != [1, c] || g != [1, m] {
        return Err(Error::ShapeMismatch {
            op: "build_initial_state",
            lhs: s,
            rhs: g,
        });
    }
    tape.concat_cols(&[z_s, z_g])
}
