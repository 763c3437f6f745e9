//! Decoding latent trajectories into future node attributes, the graph
//! forecasting loss, trajectory pooling and the classification head.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{correlation_adjacency, pearson, EpochGraph};
use crate::init::Initializer;

/// Two-layer decoder `ℝ^{m+c} → ℝ^{N·d}` with a relu hidden layer.
#[derive(Clone, Debug)]
pub struct Decoder {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    pub nodes: usize,
    pub feature_dim: usize,
}

impl Decoder {
    pub fn register(
        store: &mut ParamStore,
        latent_dim: usize,
        hidden: usize,
        nodes: usize,
        feature_dim: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if hidden == 0 || nodes == 0 || feature_dim == 0 {
            return Err(Error::invalid("decoder dimensions must be positive"));
        }
        let out = nodes * feature_dim;
        Ok(Decoder {
            w1: store.add("omega.w1", init.weight(latent_dim, hidden))?,
            b1: store.add("omega.b1", init.bias(latent_dim, hidden))?,
            w2: store.add("omega.w2", init.weight(hidden, out))?,
            b2: store.add("omega.b2", init.bias(hidden, out))?,
            nodes,
            feature_dim,
        })
    }

    /// Maps a `1 × (m+c)` state to an `N × d` node-attribute matrix.
    pub fn decode_step(&self, tape: &mut Tape, p: &BoundParams, z: Var) -> Result<Var> {
        let h = tape.matmul(z, p.var(self.w1))?;
        let h = tape.add_bias(h, p.var(self.b1))?;
        let h = tape.relu(h);
        let y = tape.matmul(h, p.var(self.w2))?;
        let y = tape.add_bias(y, p.var(self.b2))?;
        tape.reshape(y, self.nodes, self.feature_dim)
    }
}

fn abs(x: f64) -> f64 {
    x.abs()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dense `|corr|` between the rows of an `N × d` matrix on the tape. Rows are
/// standardized with the same `1e-5` variance floor as `standardize_cols`.
pub fn abs_correlation(tape: &mut Tape, x: Var) -> Result<Var> {
    let d = tape.value(x).cols() as f64;
    let xt = tape.transpose(x);
    let zt = tape.standardize_cols(xt);
    let z = tape.transpose(zt);
    let c = tape.matmul(z, zt)?;
    let c = tape.scale(c, 1.0 / d);
    Ok(tape.map(c, abs, sign))
}

/// Plain-value `|pearson|` between rows, with a unit diagonal.
pub fn abs_correlation_values(x: &Tensor) -> Tensor {
    let n = x.rows();
    Tensor::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            pearson(x.row_slice(i), x.row_slice(j)).abs()
        }
    })
}

/// Mean over steps of `‖X̂ − X‖_F`, plus `beta` times the mean Frobenius
/// distance between the dense `|corr|` matrices when `beta > 0`. Returns the
/// total and the per-step node-attribute terms.
pub fn forecast_loss(tape: &mut Tape, predicted: &[Var], truth: &[&Tensor], beta: f64) -> Result<(Var, Vec<f64>)> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::invalid(format!(
            "forecast_loss: {} predicted steps vs {} ground-truth epochs",
            predicted.len(),
            truth.len()
        )));
    }
    let k = predicted.len() as f64;
    let mut terms = Vec::with_capacity(predicted.len());
    let mut per_step = Vec::with_capacity(predicted.len());
    for (&pred, &t) in predicted.iter().zip(truth) {
        let tv = tape.constant(t.clone());
        let diff = tape.sub(pred, tv)?;
        let norm = tape.l2_norm(diff);
        per_step.push(tape.item(norm));
        let mut term = norm;
        if beta > 0.0 {
            let pc = abs_correlation(tape, pred)?;
            let tc = tape.constant(abs_correlation_values(t));
            let ad = tape.sub(pc, tc)?;
            let an = tape.l2_norm(ad);
            let an = tape.scale(an, beta);
            term = tape.add(term, an)?;
        }
        terms.push(term);
    }
    let stacked = tape.concat_rows(&terms)?;
    let total = tape.sum(stacked);
    Ok((tape.scale(total, 1.0 / k), per_step))
}

/// Reduction applied to the trajectory before classification.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    #[default]
    Max,
    Mean,
    Sum,
}

/// Coordinatewise reduction of `K` states (`1 × D` each) to `1 × D`.
pub fn pool_trajectory(tape: &mut Tape, states: &[Var], mode: PoolingMode) -> Result<Var> {
    if states.is_empty() {
        return Err(Error::invalid("pool_trajectory: empty trajectory"));
    }
    let stacked = tape.concat_rows(states)?;
    Ok(match mode {
        PoolingMode::Max => tape.max_rows(stacked),
        PoolingMode::Mean => tape.mean_rows(stacked),
        PoolingMode::Sum => tape.sum_rows(stacked),
    })
}

/// Plain-value pooling.
pub fn pool_values(states: &[Vec<f64>], mode: PoolingMode) -> Result<Vec<f64>> {
    let first = states.first().ok_or_else(|| Error::invalid("pool_trajectory: empty trajectory"))?;
    let mut out = first.clone();
    for s in &states[1..] {
        if s.len() != out.len() {
            return Err(Error::invalid("pool_trajectory: states of unequal width"));
        }
        for (o, v) in out.iter_mut().zip(s) {
            match mode {
                PoolingMode::Max => *o = o.max(*v),
                PoolingMode::Mean | PoolingMode::Sum => *o += v,
            }
        }
    }
    if mode == PoolingMode::Mean {
        let k = states.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
    }
    Ok(out)
}

/// Linear logit head on the pooled trajectory.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub w: ParamId,
    pub b: ParamId,
}

impl Classifier {
    pub fn register(store: &mut ParamStore, latent_dim: usize, init: &mut Initializer) -> Result<Self> {
        Ok(Classifier {
            w: store.add("head.w", init.weight(latent_dim, 1))?,
            b: store.add("head.b", init.bias(latent_dim, 1))?,
        })
    }

    /// `1 × 1` logit.
    pub fn logit(&self, tape: &mut Tape, p: &BoundParams, pooled: Var) -> Result<Var> {
        let y = tape.matmul(pooled, p.var(self.w))?;
        tape.add_bias(y, p.var(self.b))
    }

    /// Probability `σ(logit)`.
    pub fn classify(&self, tape: &mut Tape, p: &BoundParams, pooled: Var) -> Result<Var> {
        let l = self.logit(tape, p, pooled)?;
        Ok(tape.sigmoid(l))
    }
}

/// Binary cross-entropy on a logit: `softplus(l) − y·l`.
pub fn bce_with_logit(tape: &mut Tape, logit: Var, label: f64) -> Result<Var> {
    let sp = tape.softplus(logit);
    let yl = tape.scale(logit, label);
    tape.sub(sp, yl)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    /// Offset in epochs from the last observed epoch.
    pub offset: usize,
    /// Row-major `N × d` node attributes.
    pub features: Vec<f64>,
    /// `(i, j, w)` for `i < j` of the adjacency derived from the prediction.
    pub edges: Vec<(usize, usize, f64)>,
    /// Node-attribute error against ground truth, when it was available.
    pub loss: Option<f64>,
}

/// Predicted future epochs with derived adjacencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub nodes: usize,
    pub feature_dim: usize,
    pub tau: usize,
    pub nfe: usize,
    pub steps: Vec<ForecastStep>,
}

impl ForecastResult {
    /// Builds the result from decoded node attributes; `truth` may be shorter
    /// than `predicted`.
    pub fn new(predicted: &[Tensor], offsets: &[usize], truth: &[&Tensor], tau: usize, nfe: usize) -> Result<Self> {
        let first = predicted.first().ok_or_else(|| Error::invalid("forecast with no steps"))?;
        let (n, d) = (first.rows(), first.cols());
        let mut steps = Vec::with_capacity(predicted.len());
        for (k, x) in predicted.iter().enumerate() {
            let g = correlation_adjacency(x, tau)?;
            let loss = truth.get(k).map(|t| {
                x.data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            });
            steps.push(ForecastStep {
                offset: offsets[k],
                features: x.data().to_vec(),
                edges: upper_edges(&g),
                loss,
            });
        }
        Ok(ForecastResult {
            nodes: n,
            feature_dim: d,
            tau,
            nfe,
            steps,
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn upper_edges(g: &EpochGraph) -> Vec<(usize, usize, f64)> {
    let n = g.nodes();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = g.adjacency.get(i, j);
            if w != 0.0 {
                out.push((i, j, w));
            }
        }
    }
    out
}
