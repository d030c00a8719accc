use serde::{Deserialize, Serialize};

use crate::error::{GpcmError, Result};

/// Discrete latent-trait grid used to integrate abilities out of the
/// likelihood. Weights are normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Builds a grid from strictly increasing nodes and positive weights.
    /// Weights are renormalized.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(GpcmError::InvalidInput("quadrature grid needs nodes".into()));
        }
        if nodes.len() != weights.len() {
            return Err(GpcmError::DimensionMismatch {
                what: "quadrature weights",
                expected: nodes.len(),
                found: weights.len(),
            });
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GpcmError::InvalidInput(
                "quadrature nodes must be finite and strictly increasing".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(GpcmError::InvalidInput("quadrature weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(QuadratureGrid { nodes, weights })
    }

    /// `n_nodes` equally spaced points on `[-half_width, half_width]` weighted
    /// by the standard normal density.
    pub fn standard_normal(n_nodes: usize, half_width: f64) -> Result<Self> {
        if n_nodes < 2 || !(half_width > 0.0) {
            return Err(GpcmError::InvalidInput(format!(
                "need at least 2 nodes and a positive width, got {n_nodes} and {half_width}"
            )));
        }
        let step = 2.0 * half_width / (n_nodes - 1) as f64;
        let nodes: Vec<f64> = (0..n_nodes).map(|q| -half_width + step * q as f64).collect();
        let weights = nodes.iter().map(|x| (-0.5 * x * x).exp()).collect();
        QuadratureGrid::new(nodes, weights)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    pub fn sd(&self) -> f64 {
        let mu = self.mean();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - mu).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl Default for QuadratureGrid {
    /// 61 nodes on [-5, 5].
    fn default() -> Self {
        QuadratureGrid::standard_normal(61, 5.0).expect("static grid is valid")
    }
}
