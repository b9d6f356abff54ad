use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierOptions {
    pub max_iter: usize,
    pub learning_rate: f64,
    /// Ridge penalty on the weights (not the intercept).
    pub l2: f64,
    pub tol: f64,
    /// Fit on `ln x` instead of `x`. All inputs must then be positive.
    pub log_features: bool,
    pub threshold: f64,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self { max_iter: 5000, learning_rate: 1.0, l2: 1e-4, tol: 1e-8, log_features: true, threshold: 0.5 }
    }
}

/// Logistic regression on standardized (optionally log-transformed) inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityClassifier {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub log_features: bool,
    pub threshold: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn features(x: &[f64], log: bool) -> Result<Vec<f64>> {
    if log {
        if x.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("log features need positive inputs".into()));
        }
        Ok(x.iter().map(|v| v.ln()).collect())
    } else {
        Ok(x.to_vec())
    }
}

impl FeasibilityClassifier {
    /// Maximum-likelihood fit by gradient ascent. `x` is `n × d`, `labels`
    /// true for feasible.
    pub fn train(x: &DMatrix<f64>, labels: &[bool], opts: &ClassifierOptions) -> Result<Self> {
        let (n, d) = x.shape();
        if labels.len() != n || n == 0 {
            return Err(Error::DimensionMismatch(format!("{n} inputs and {} labels", labels.len())));
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 || positives == n {
            return Err(Error::Degenerate(format!("all {n} labels are {}", labels[0])));
        }
        let rows = (0..n)
            .map(|i| features(&x.row(i).iter().copied().collect::<Vec<_>>(), opts.log_features))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for k in 0..d {
            mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n as f64;
            scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let z = DMatrix::from_fn(n, d, |i, k| (rows[i][k] - mean[k]) / scale[k]);
        let t = DVector::from_iterator(n, labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));

        let mut w = DVector::zeros(d);
        let mut b = 0.0;
        for _ in 0..opts.max_iter {
            let mut logits = &z * &w;
            logits.add_scalar_mut(b);
            let resid = DVector::from_iterator(n, logits.iter().zip(t.iter()).map(|(&s, &y)| y - sigmoid(s)));
            let gw = (z.transpose() * &resid) / n as f64 - &w * opts.l2;
            let gb = resid.sum() / n as f64;
            w += &gw * opts.learning_rate;
            b += gb * opts.learning_rate;
            if gw.amax().max(gb.abs()) < opts.tol {
                break;
            }
        }
        Ok(Self {
            weights: w.iter().copied().collect(),
            intercept: b,
            feature_mean: mean,
            feature_scale: scale,
            log_features: opts.log_features,
            threshold: opts.threshold,
        })
    }

    /// Probability of feasibility.
    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "classifier expects {} inputs, got {}",
                self.weights.len(),
                x.len()
            )));
        }
        let f = features(x, self.log_features)?;
        let s = f
            .iter()
            .enumerate()
            .map(|(k, v)| self.weights[k] * (v - self.feature_mean[k]) / self.feature_scale[k])
            .sum::<f64>()
            + self.intercept;
        Ok(sigmoid(s))
    }

    pub fn accept(&self, x: &[f64]) -> Result<bool> {
        Ok(self.probability(x)? > self.threshold)
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, labels: &[bool]) -> Result<f64> {
        let mut hits = 0;
        for (i, &l) in labels.iter().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            if self.accept(&row)? == l {
                hits += 1;
            }
        }
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::lhs_sample;

    #[test]
    fn separable_labels_are_learned_exactly() {
        let x = lhs_sample(200, &[(-1.0, 1.0), (-1.0, 1.0)], 1, 1).points;
        let labels: Vec<bool> = (0..200).map(|i| x[(i, 0)] + 0.5 * x[(i, 1)] > 0.1).collect();
        let opts = ClassifierOptions { log_features: false, l2: 0.0, max_iter: 20000, ..Default::default() };
        let c = FeasibilityClassifier::train(&x, &labels, &opts).unwrap();
        assert_eq!(c.accuracy(&x, &labels).unwrap(), 1.0);
    }

    #[test]
    fn identical_labels_are_degenerate() {
        let x = DMatrix::from_element(10, 2, 1.0);
        let err = FeasibilityClassifier::train(&x, &[true; 10], &ClassifierOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn log_features_reject_non_positive_inputs() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        assert!(FeasibilityClassifier::train(&x, &[true, false], &ClassifierOptions::default()).is_err());
    }
}
