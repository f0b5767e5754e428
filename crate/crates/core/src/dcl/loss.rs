use super::bank::MemoryBank;
use super::weights::ContrastiveWeights;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Trainable slope and midpoint of the logistic negative map, as `1×1`
/// graph parameters.
#[derive(Clone, Copy, Debug)]
pub struct LogisticVars {
    pub k: Var,
    pub x0: Var,
}

/// The weighted bilinear contrastive bound.
///
/// `live_probs` holds the `m×N` softmax predictions that carry gradients, in
/// bank order. With `logistic` set, negative weights are rebuilt inside the
/// graph as `sigmoid(k·(w⁺ − x0))` over `weights.negative_mask`, so `k` and
/// `x0` receive gradients; otherwise `weights.negative` is used as is.
pub fn dcl_loss(
    graph: &mut Graph,
    live_probs: Var,
    bank: &MemoryBank,
    weights: &ContrastiveWeights,
    logistic: Option<LogisticVars>,
    lambda_n: f64,
) -> Result<Var> {
    let m = bank.len();
    let (rows, cols) = graph.value(live_probs).shape();
    if rows != m || cols != bank.predictions().cols() {
        return Err(Error::dim(
            "dcl_loss",
            format!(
                "live predictions {rows}×{cols} vs bank {m}×{}",
                bank.predictions().cols()
            ),
        ));
    }
    if weights.len() != m || weights.positive.cols() != m {
        return Err(Error::Contract(format!(
            "weights built for a bank of {} rows, bank has {m}",
            weights.len()
        )));
    }
    if !lambda_n.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda_n = {lambda_n}")));
    }

    // C = λ·W⁻ − W⁺, so the loss is (1/m)·Σ_t p_t·(C·P)_t
    let coeff = match logistic {
        None => {
            let c = weights
                .negative
                .scale(lambda_n)
                .sub(&weights.positive)?;
            graph.constant(c)
        }
        Some(LogisticVars { k, x0 }) => {
            for v in [k, x0] {
                if graph.value(v).shape() != (1, 1) {
                    return Err(Error::dim("dcl_loss", "logistic parameters must be 1×1"));
                }
            }
            let base = graph.constant(weights.positive_base.clone());
            let mask = graph.constant(weights.negative_mask.clone());
            let shifted = graph.sub(base, x0)?;
            let z = graph.mul(shifted, k)?;
            let s = graph.sigmoid(z);
            let neg = graph.mul(s, mask)?;
            let neg = graph.scale(neg, lambda_n);
            let pos = graph.constant(weights.positive.clone());
            graph.sub(neg, pos)?
        }
    };
    let bank_p = graph.constant(bank.predictions().clone());
    let agg = graph.matmul(coeff, bank_p)?;
    let prod = graph.mul(live_probs, agg)?;
    let total = graph.sum(prod);
    Ok(graph.scale(total, 1.0 / m as f64))
}
