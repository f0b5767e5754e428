//! Supervised cross-entropy and the information-maximization (IM) terms.
//!
//! Every loss takes raw logits and returns a differentiable 1×1 node. All
//! logarithms go through [`Graph::log`], which clamps at `1e-12`.
//!
//! * `ce_loss`: mean over rows of `−log δ_y(z)`.
//! * `certainty_loss`: mean Shannon entropy of the softmax rows, in `[0, ln N]`.
//! * `diversity_loss`: `Σ_n p̂_n log p̂_n` of the batch-mean prediction `p̂`,
//!   in `[−ln N, 0]`; lowest when `p̂` is uniform.
//! * `im_loss`: `certainty + λ_div · diversity`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};

/// Weights of the composed objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Diversity weight inside the IM loss.
    pub lambda_div: f64,
    /// IM weight in the supervised phase objective.
    pub lambda_im: f64,
    /// Contrastive weight in the transductive phase objective.
    pub lambda_dcl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_div: 1.0,
            lambda_im: 1.0,
            lambda_dcl: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_div", self.lambda_div),
            ("lambda_im", self.lambda_im),
            ("lambda_dcl", self.lambda_dcl),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn rows_of(graph: &Graph, v: Var) -> Result<usize> {
    let m = graph.value(v).rows();
    if m == 0 {
        return Err(Error::InvalidArgument("loss over an empty batch".into()));
    }
    Ok(m)
}

/// Mean cross-entropy against integer labels.
pub fn ce_loss(graph: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (m, n) = graph.value(logits).shape();
    if labels.len() != m {
        return Err(Error::dim(
            "ce_loss",
            format!("{m} logit rows, {} labels", labels.len()),
        ));
    }
    rows_of(graph, logits)?;
    let mut onehot = Matrix::zeros(m, n);
    for (r, &y) in labels.iter().enumerate() {
        if y >= n {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: n,
            });
        }
        onehot[(r, y)] = 1.0;
    }
    let p = graph.softmax_rows(logits);
    let logp = graph.log(p);
    let y = graph.constant(onehot);
    let picked = graph.mul(logp, y)?;
    let total = graph.sum(picked);
    Ok(graph.scale(total, -1.0 / m as f64))
}

fn certainty_from_probs(graph: &mut Graph, p: Var) -> Result<Var> {
    let m = rows_of(graph, p)?;
    let logp = graph.log(p);
    let plogp = graph.mul(p, logp)?;
    let total = graph.sum(plogp);
    Ok(graph.scale(total, -1.0 / m as f64))
}

fn diversity_from_probs(graph: &mut Graph, p: Var) -> Result<Var> {
    let m = rows_of(graph, p)?;
    let avg = graph.constant(Matrix::filled(1, m, 1.0 / m as f64));
    let p_hat = graph.matmul(avg, p)?;
    let log_hat = graph.log(p_hat);
    let terms = graph.mul(p_hat, log_hat)?;
    Ok(graph.sum(terms))
}

/// Mean per-row entropy (individual certainty).
pub fn certainty_loss(graph: &mut Graph, logits: Var) -> Result<Var> {
    let p = graph.softmax_rows(logits);
    certainty_from_probs(graph, p)
}

/// Negative entropy of the batch-mean prediction (global diversity).
pub fn diversity_loss(graph: &mut Graph, logits: Var) -> Result<Var> {
    let p = graph.softmax_rows(logits);
    diversity_from_probs(graph, p)
}

/// `certainty_loss + lambda_div · diversity_loss`.
pub fn im_loss(graph: &mut Graph, logits: Var, weights: &LossWeights) -> Result<Var> {
    let p = graph.softmax_rows(logits);
    let cer = certainty_from_probs(graph, p)?;
    let div = diversity_from_probs(graph, p)?;
    let div = graph.scale(div, weights.lambda_div);
    graph.add(cer, div)
}

/// Evaluates a loss builder on constant logits.
pub fn loss_value<F>(logits: &Matrix, build: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let out = build(&mut g, z)?;
    g.value(out).item()
}
