//! Logistic regression on the channel-averaged log band powers of the
//! labelled epoch.

use super::data::{Dataset, Sample};
use crate::autodiff::sigmoid;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticBaseline {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn features(data: &Dataset, s: &Sample) -> Vec<f64> {
    data.records[s.record].band_powers[s.anchor].to_vec()
}

impl LogisticBaseline {
    /// Full-batch gradient descent on the mean cross-entropy of standardized
    /// features.
    pub fn fit(x: &[Vec<f64>], y: &[u8], iterations: usize, learning_rate: f64) -> Self {
        let dim = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for row in x {
            for (k, v) in row.iter().enumerate() {
                std[k] += (v - mean[k]).powi(2) / n;
            }
        }
        std.iter_mut().for_each(|s| *s = if *s > 0.0 { s.sqrt() } else { 1.0 });
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|row| row.iter().enumerate().map(|(k, v)| (v - mean[k]) / std[k]).collect())
            .collect();
        let mut weights = vec![0.0; dim];
        let mut bias = 0.0;
        for _ in 0..iterations {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (row, &label) in z.iter().zip(y) {
                let logit = bias + row.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
                let r = sigmoid(logit) - f64::from(label);
                gb += r / n;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += r * v / n;
                }
            }
            bias -= learning_rate * gb;
            for (w, g) in weights.iter_mut().zip(&gw) {
                *w -= learning_rate * g;
            }
        }
        LogisticBaseline { mean, std, weights, bias }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let logit = self.bias
            + x.iter()
                .enumerate()
                .map(|(k, v)| (v - self.mean[k]) / self.std[k] * self.weights[k])
                .sum::<f64>();
        sigmoid(logit)
    }

    /// Fits on the training samples of `data`.
    pub fn fit_dataset(data: &Dataset) -> Result<Self> {
        let x: Vec<Vec<f64>> = data.train.iter().map(|s| features(data, s)).collect();
        let y: Vec<u8> = data.train.iter().map(|s| s.label).collect();
        Ok(Self::fit(&x, &y, 2000, 0.5))
    }

    pub fn score_samples(&self, data: &Dataset, samples: &[Sample]) -> Vec<f64> {
        samples.iter().map(|s| self.score(&features(data, s))).collect()
    }
}
