//! Sparse correlation graphs over spectral node features and edge-set scoring.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Graph for one epoch: node features `N × d` and a symmetric `N × N` adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochGraph {
    pub node_features: Tensor,
    pub adjacency: Tensor,
    pub tau: usize,
    /// Largest per-row nonzero count before symmetrization (always ≤ `tau`).
    pub presym_max_row_nnz: usize,
}

impl EpochGraph {
    pub fn nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralGraphSequence {
    pub graphs: Vec<EpochGraph>,
    pub labels: Vec<u8>,
}

impl SpectralGraphSequence {
    pub fn new(graphs: Vec<EpochGraph>, labels: Vec<u8>) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} graphs but {} labels",
                graphs.len(),
                labels.len()
            )));
        }
        if let Some(first) = graphs.first() {
            let key = (first.nodes(), first.feature_dim(), first.tau);
            if graphs.iter().any(|g| (g.nodes(), g.feature_dim(), g.tau) != key) {
                return Err(Error::invalid("graphs in a sequence must share N, d and tau"));
            }
        }
        Ok(SpectralGraphSequence { graphs, labels })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

/// Undirected edges stored as `(i, j)` with `i < j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSet(BTreeSet<(usize, usize)>);

impl EdgeSet {
    pub fn new() -> Self {
        EdgeSet::default()
    }

    /// Inserts the undirected pair; self-loops are ignored.
    pub fn insert(&mut self, a: usize, b: usize) {
        if a != b {
            self.0.insert((a.min(b), a.max(b)));
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.0.contains(&(a.min(b), a.max(b)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.0.iter()
    }
}

impl FromIterator<(usize, usize)> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        let mut s = EdgeSet::new();
        for (a, b) in iter {
            s.insert(a, b);
        }
        s
    }
}

/// Pearson correlation; 0 when either row has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Off-diagonal columns of `row` ranked by weight, descending, ties to the lower column.
fn ranked_columns(row: &[f64], skip: usize) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..row.len()).filter(|&j| j != skip).collect();
    cols.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
    cols
}

/// Builds the epoch graph: `|pearson|` between the spectral rows of every pair
/// of channels, clamped to `[0, 1]`; each row keeps its `tau` largest
/// off-diagonal entries and the result is symmetrized by elementwise max.
/// Symmetrization can push a row above `tau` nonzeros.
pub fn correlation_adjacency(features: &Tensor, tau: usize) -> Result<EpochGraph> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::invalid("correlation_adjacency needs at least 2 nodes"));
    }
    if tau == 0 || tau > n - 1 {
        return Err(Error::invalid(format!("tau must lie in [1, {}], got {tau}", n - 1)));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("correlation_adjacency: node features".into()));
    }
    let mut sim = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(features.row_slice(i), features.row_slice(j)).abs().clamp(0.0, 1.0);
            sim.set(i, j, r);
            sim.set(j, i, r);
        }
    }
    let mut kept = Tensor::zeros(n, n);
    let mut presym_max_row_nnz = 0;
    for i in 0..n {
        let row = sim.row_slice(i).to_vec();
        let mut nnz = 0;
        for &j in ranked_columns(&row, i).iter().take(tau) {
            if row[j] > 0.0 {
                kept.set(i, j, row[j]);
                nnz += 1;
            }
        }
        presym_max_row_nnz = presym_max_row_nnz.max(nnz);
    }
    let adjacency = Tensor::from_fn(n, n, |i, j| kept.get(i, j).max(kept.get(j, i)));
    Ok(EpochGraph {
        node_features: features.clone(),
        adjacency,
        tau,
        presym_max_row_nnz,
    })
}

/// Top-`tau` positive off-diagonal entries of each row, as undirected edges.
pub fn binarize_adjacency(adjacency: &Tensor, tau: usize) -> Result<EdgeSet> {
    if adjacency.rows() != adjacency.cols() {
        return Err(Error::ShapeMismatch {
            op: "binarize_adjacency",
            lhs: adjacency.shape(),
            rhs: [adjacency.rows(), adjacency.rows()],
        });
    }
    let mut edges = EdgeSet::new();
    for i in 0..adjacency.rows() {
        let row = adjacency.row_slice(i);
        for &j in ranked_columns(row, i).iter().take(tau) {
            if row[j] > 0.0 {
                edges.insert(i, j);
            }
        }
    }
    Ok(edges)
}

/// Undirected edges whose weight (either direction) is at least `threshold`.
pub fn threshold_adjacency(adjacency: &Tensor, threshold: f64) -> EdgeSet {
    let n = adjacency.rows();
    let mut edges = EdgeSet::new();
    for i in 0..n {
        for j in 0..adjacency.cols() {
            if i != j && adjacency.get(i, j) >= threshold && adjacency.get(i, j) > 0.0 {
                edges.insert(i, j);
            }
        }
    }
    edges
}

/// `|true ∩ pred| / |true ∪ pred|`, defined as 1 when both sets are empty.
pub fn global_jaccard(true_edges: &EdgeSet, pred_edges: &EdgeSet) -> f64 {
    let inter = true_edges.0.intersection(&pred_edges.0).count();
    let union = true_edges.len() + pred_edges.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochGraphJson {
    n: usize,
    d: usize,
    tau: usize,
    presym_max_row_nnz: usize,
    features: Vec<f64>,
    /// `(row, col, weight)` for every nonzero entry.
    adjacency: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceJson {
    n: usize,
    d: usize,
    tau: usize,
    presym_row_bound_holds: bool,
    labels: Vec<u8>,
    graphs: Vec<EpochGraphJson>,
}

impl EpochGraph {
    fn to_json(&self) -> EpochGraphJson {
        let n = self.nodes();
        let mut coo = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.adjacency.get(i, j);
                if w != 0.0 {
                    coo.push((i, j, w));
                }
            }
        }
        EpochGraphJson {
            n,
            d: self.feature_dim(),
            tau: self.tau,
            presym_max_row_nnz: self.presym_max_row_nnz,
            features: self.node_features.data().to_vec(),
            adjacency: coo,
        }
    }

    fn from_json(j: EpochGraphJson) -> Result<Self> {
        let node_features = Tensor::new(j.n, j.d, j.features)?;
        let mut adjacency = Tensor::zeros(j.n, j.n);
        for (r, c, w) in j.adjacency {
            if r >= j.n || c >= j.n {
                return Err(Error::invalid(format!("adjacency entry ({r}, {c}) outside {} nodes", j.n)));
            }
            adjacency.set(r, c, w);
        }
        Ok(EpochGraph {
            node_features,
            adjacency,
            tau: j.tau,
            presym_max_row_nnz: j.presym_max_row_nnz,
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_json())?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        EpochGraph::from_json(serde_json::from_str(s)?)
    }
}

impl SpectralGraphSequence {
    pub fn to_json_string(&self) -> Result<String> {
        let first = self.graphs.first();
        let tau = first.map_or(0, |g| g.tau);
        let doc = SequenceJson {
            n: first.map_or(0, EpochGraph::nodes),
            d: first.map_or(0, EpochGraph::feature_dim),
            tau,
            presym_row_bound_holds: self.graphs.iter().all(|g| g.presym_max_row_nnz <= tau),
            labels: self.labels.clone(),
            graphs: self.graphs.iter().map(EpochGraph::to_json).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: SequenceJson = serde_json::from_str(s)?;
        let graphs = doc
            .graphs
            .into_iter()
            .map(EpochGraph::from_json)
            .collect::<Result<Vec<_>>>()?;
        SpectralGraphSequence::new(graphs, doc.labels)
    }
}
