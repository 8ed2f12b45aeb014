//! Gauss–Hermite rules for expectations over independent Gaussian errors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Nodes and weights of the `n`-point rule for `E[g(X)]`, `X ~ N(0, 1)`.
///
/// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
/// polynomials (off-diagonal `√k`). Nodes ascend; weights sum to one.
pub fn standard_normal_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(invalid("quadrature needs at least one node"));
    }
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize away eigensolver round-off.
    for k in 0..n / 2 {
        let (x, w) = (pairs[k], pairs[n - 1 - k]);
        let node = 0.5 * (w.0 - x.0);
        let weight = 0.5 * (x.1 + w.1);
        pairs[k] = (-node, weight);
        pairs[n - 1 - k] = (node, weight);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(pairs.into_iter().map(|(x, w)| (x, w / total)).unzip())
}

/// Per-channel rules scaled to `N(0, σ_i)`, evaluated as a tensor product.
///
/// Tensor nodes are enumerated in row-major order: the last channel varies
/// fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl QuadratureRule {
    pub fn gauss_hermite(sigmas: &[f64], nodes_per_channel: usize) -> Result<Self> {
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("error widths must be finite and non-negative"));
        }
        let (x, w) = standard_normal_rule(nodes_per_channel)?;
        Ok(Self {
            nodes: sigmas.iter().map(|s| x.iter().map(|xi| s * xi).collect()).collect(),
            weights: vec![w; sigmas.len()],
        })
    }

    pub fn channel_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of tensor-product points (1 when there are no channels).
    pub fn len(&self) -> usize {
        self.nodes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(ε, weight)` tensor points.
    pub fn tensor_points(&self) -> Vec<(Vec<f64>, f64)> {
        let mut points = vec![(Vec::with_capacity(self.channel_count()), 1.0)];
        for (nodes, weights) in self.nodes.iter().zip(&self.weights) {
            points = points
                .into_iter()
                .flat_map(|(eps, w)| {
                    nodes.iter().zip(weights).map(move |(x, wx)| {
                        let mut e = eps.clone();
                        e.push(*x);
                        (e, w * wx)
                    })
                })
                .collect();
        }
        points
    }
}
