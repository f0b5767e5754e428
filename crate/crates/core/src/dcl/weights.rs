//! Positive and negative weight construction.

use serde::{Deserialize, Serialize};

use super::bank::MemoryBank;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};

/// Initial slope of the logistic negative map; negative so that far
/// features (small positive weight) get large negative weight.
pub const LOGISTIC_INIT_K: f64 = -5.0;
/// Initial midpoint of the logistic map: the normalized mean weight.
pub const LOGISTIC_INIT_X0: f64 = 1.0;

/// How negative weights are derived from positive ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightScheme {
    /// Rank reversal: the i-th largest positive weight receives the i-th
    /// smallest positive value.
    ReverseOrder,
    /// Reflection about the range midpoint: `(max + min) − w`.
    Opposite,
    /// `1 / (1 + exp(−k·(w − x0)))` with `L = 1`; `k` and `x0` are trained.
    NonlinearLogistic { k: f64, x0: f64 },
}

impl WeightScheme {
    pub fn logistic() -> Self {
        WeightScheme::NonlinearLogistic {
            k: LOGISTIC_INIT_K,
            x0: LOGISTIC_INIT_X0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::ReverseOrder => "ReverseOrder",
            WeightScheme::Opposite => "Opposite",
            WeightScheme::NonlinearLogistic { .. } => "NonlinearLogistic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let WeightScheme::NonlinearLogistic { k, x0 } = self {
            if !k.is_finite() || !x0.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "logistic parameters must be finite (k={k}, x0={x0})"
                )));
            }
        }
        Ok(())
    }
}

/// Which bank rows enter each anchor's sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DclMode {
    /// Every other row is in both sets with its soft weights.
    Full,
    /// The positive set keeps only the `k` rows with the largest weight
    /// after labeled support rows are multiplied by `sigma`; the negative set
    /// stays full.
    TopK { k: usize, sigma: f64 },
    /// No soft weights: the `k` most similar rows are positives with weight 1
    /// and all remaining rows are negatives with weight 1.
    HardSplit { k: usize },
}

/// `f_i · f_t / (‖f_i‖ ‖f_t‖)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(
            "cosine_sim",
            format!("{} vs {} entries", a.len(), b.len()),
        ));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    for n in [na, nb] {
        if n < 1e-12 {
            return Err(Error::DegenerateFeature { norm: n });
        }
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Positive weights of `anchor` over every other bank row, in bank order:
/// cosine similarity mapped to `[0, 1]` by `(s + 1) / 2`, then divided by
/// the vector mean.
pub fn positive_weights(bank: &MemoryBank, anchor: usize) -> Result<Vec<f64>> {
    let m = bank.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "positive weights need at least 2 bank rows, got {m}"
        )));
    }
    if anchor >= m {
        return Err(Error::InvalidArgument(format!(
            "anchor {anchor} outside bank of {m}"
        )));
    }
    let f = bank.features();
    let ft = f.row(anchor);
    let mut w = Vec::with_capacity(m - 1);
    for i in (0..m).filter(|&i| i != anchor) {
        w.push((cosine_sim(f.row(i), ft)? + 1.0) / 2.0);
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    if mean < 1e-12 {
        return Err(Error::Contract(format!(
            "anchor {anchor}: every bank feature points opposite the anchor"
        )));
    }
    w.iter_mut().for_each(|v| *v /= mean);
    Ok(w)
}

/// Negative weights derived from mean-normalized positive weights.
pub fn negative_weights(scheme: &WeightScheme, positive: &[f64]) -> Result<Vec<f64>> {
    if positive.is_empty() {
        return Err(Error::InvalidArgument("empty positive weight vector".into()));
    }
    Ok(match *scheme {
        WeightScheme::ReverseOrder => {
            let n = positive.len();
            let order = stable_ascending_order(positive);
            let mut out = vec![0.0; n];
            for (rank, &i) in order.iter().enumerate() {
                out[i] = positive[order[n - 1 - rank]];
            }
            out
        }
        WeightScheme::Opposite => {
            let max = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = positive.iter().copied().fold(f64::INFINITY, f64::min);
            positive.iter().map(|w| (max + min) - w).collect()
        }
        WeightScheme::NonlinearLogistic { k, x0 } => {
            positive.iter().map(|w| sigmoid(k * (w - x0))).collect()
        }
    })
}

/// Indices sorted by ascending value; ties keep index order.
fn stable_ascending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Both weight vectors of one anchor, indexed over the other bank rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorWeights {
    pub anchor_index: usize,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

pub fn anchor_weights(bank: &MemoryBank, anchor: usize, scheme: &WeightScheme) -> Result<AnchorWeights> {
    let positive = positive_weights(bank, anchor)?;
    let negative = negative_weights(scheme, &positive)?;
    Ok(AnchorWeights {
        anchor_index: anchor,
        positive,
        negative,
    })
}

/// Per-anchor weights laid out as `m×m` matrices (row = anchor, column =
/// bank row, zero diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveWeights {
    /// Effective positive multipliers, after top-k selection and support boost.
    pub positive: Matrix,
    /// Negative multipliers at the scheme's current parameters.
    pub negative: Matrix,
    /// Mean-normalized positive weights before any mode-specific change;
    /// the logistic scheme maps these to negatives.
    pub positive_base: Matrix,
    /// 1 where the column belongs to the anchor's positive set.
    pub positive_mask: Matrix,
    /// 1 where the column belongs to the anchor's negative set.
    pub negative_mask: Matrix,
}

impl ContrastiveWeights {
    pub fn len(&self) -> usize {
        self.positive.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.rows() == 0
    }

    /// Copy with every positive weight set to zero.
    pub fn without_positives(&self) -> Self {
        let mut w = self.clone();
        w.positive = Matrix::zeros(w.positive.rows(), w.positive.cols());
        w
    }
}

fn top_k(values: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut order: Vec<&(usize, f64)> = values.iter().collect();
    // descending by value, ascending index on ties
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.iter().take(k).map(|p| p.0).collect()
}

/// Weight matrices for every anchor of `bank`.
pub fn build_weights(bank: &MemoryBank, scheme: &WeightScheme, mode: &DclMode) -> Result<ContrastiveWeights> {
    scheme.validate()?;
    let m = bank.len();
    let mut out = ContrastiveWeights {
        positive: Matrix::zeros(m, m),
        negative: Matrix::zeros(m, m),
        positive_base: Matrix::zeros(m, m),
        positive_mask: Matrix::zeros(m, m),
        negative_mask: Matrix::zeros(m, m),
    };
    for t in 0..m {
        let pos = positive_weights(bank, t)?;
        let others: Vec<usize> = (0..m).filter(|&i| i != t).collect();
        for (&i, &w) in others.iter().zip(&pos) {
            out.positive_base[(t, i)] = w;
        }
        match *mode {
            DclMode::Full => {
                let neg = negative_weights(scheme, &pos)?;
                for ((&i, &wp), &wn) in others.iter().zip(&pos).zip(&neg) {
                    out.positive[(t, i)] = wp;
                    out.negative[(t, i)] = wn;
                    out.positive_mask[(t, i)] = 1.0;
                    out.negative_mask[(t, i)] = 1.0;
                }
            }
            DclMode::TopK { k, sigma } => {
                let boosted: Vec<(usize, f64)> = others
                    .iter()
                    .zip(&pos)
                    .map(|(&i, &w)| {
                        let w = if bank.origin()[i].is_support() { sigma * w } else { w };
                        (i, w)
                    })
                    .collect();
                for i in top_k(&boosted, k) {
                    let w = boosted.iter().find(|p| p.0 == i).expect("member").1;
                    out.positive[(t, i)] = w;
                    out.positive_mask[(t, i)] = 1.0;
                }
                let neg = negative_weights(scheme, &pos)?;
                for (&i, &wn) in others.iter().zip(&neg) {
                    out.negative[(t, i)] = wn;
                    out.negative_mask[(t, i)] = 1.0;
                }
            }
            DclMode::HardSplit { k } => {
                let ranked: Vec<(usize, f64)> =
                    others.iter().copied().zip(pos.iter().copied()).collect();
                let chosen = top_k(&ranked, k);
                for &i in &others {
                    if chosen.contains(&i) {
                        out.positive[(t, i)] = 1.0;
                        out.positive_mask[(t, i)] = 1.0;
                    } else {
                        out.negative[(t, i)] = 1.0;
                        out.negative_mask[(t, i)] = 1.0;
                    }
                }
            }
        }
    }
    Ok(out)
}
