use super::bank::MemoryBank;
use super::weights::ContrastiveWeights;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Negative log likelihood ratio `−log[P(𝒫)/P(𝒩)]`, averaged over anchors.
///
/// For anchor `t`, each set's likelihood is the product over its members of
/// `exp(p_t·(w_i p_i)) / Σ_{j≠t} exp(p_t·p_j)`. Plain `f64` evaluation, meant
/// as a reference for small banks.
pub fn dcl_exact_nll(predictions: &Matrix, bank: &MemoryBank, weights: &ContrastiveWeights) -> Result<f64> {
    let m = bank.len();
    if predictions.shape() != bank.predictions().shape() {
        return Err(Error::dim(
            "dcl_exact_nll",
            format!(
                "predictions {:?} vs bank {:?}",
                predictions.shape(),
                bank.predictions().shape()
            ),
        ));
    }
    if weights.len() != m {
        return Err(Error::Contract(format!(
            "weights built for a bank of {} rows, bank has {m}",
            weights.len()
        )));
    }
    let mut total = 0.0;
    for t in 0..m {
        let dots: Vec<f64> = (0..m)
            .map(|i| {
                predictions
                    .row(t)
                    .iter()
                    .zip(bank.predictions().row(i))
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let hi = dots
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .map(|(_, &d)| d)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = hi
            + dots
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != t)
                .map(|(_, &d)| (d - hi).exp())
                .sum::<f64>()
                .ln();
        let mut log_pos = 0.0;
        let mut log_neg = 0.0;
        for i in (0..m).filter(|&i| i != t) {
            if weights.positive_mask[(t, i)] != 0.0 {
                log_pos += weights.positive[(t, i)] * dots[i] - lse;
            }
            if weights.negative_mask[(t, i)] != 0.0 {
                log_neg += weights.negative[(t, i)] * dots[i] - lse;
            }
        }
        total += log_neg - log_pos;
    }
    Ok(total / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcl::{build_weights, dcl_loss, DclMode, Origin, WeightScheme};
    use crate::numerics::Graph;
    use crate::rng::rng;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn bank(m: usize, seed: u64) -> MemoryBank {
        let origin = (0..m)
            .map(|i| if i < 3 { Origin::Support(i) } else { Origin::Query })
            .collect();
        MemoryBank::from_parts(random(m, 4, seed), random(m, 3, seed + 1).scale(3.0).softmax_rows(), origin)
            .unwrap()
    }

    #[test]
    fn identical_sets_give_zero() {
        let b = bank(6, 1);
        let mut w = build_weights(&b, &WeightScheme::ReverseOrder, &DclMode::Full).unwrap();
        w.negative = w.positive.clone();
        assert!(dcl_exact_nll(b.predictions(), &b, &w).unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_positive_is_log_softmax() {
        let p = Matrix::from_rows(&[[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]]).unwrap();
        let b = MemoryBank::from_parts(random(3, 2, 4), p.clone(), vec![Origin::Query; 3]).unwrap();
        let z = Matrix::zeros(3, 3);
        let mut w = ContrastiveWeights {
            positive: z.clone(),
            negative: z.clone(),
            positive_base: z.clone(),
            positive_mask: z.clone(),
            negative_mask: z,
        };
        w.positive[(0, 1)] = 1.0;
        w.positive_mask[(0, 1)] = 1.0;
        // anchor 0: −log(e^{p0·p1} / (e^{p0·p1} + e^{p0·p2})), other anchors contribute 0
        let d01: f64 = 0.7 * 0.2 + 0.3 * 0.8;
        let d02 = 0.5;
        let expected = -(d01.exp() / (d01.exp() + f64::exp(d02))).ln() / 3.0;
        assert!((dcl_exact_nll(&p, &b, &w).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn full_mode_equals_bound_at_unit_lambda() {
        // equal set sizes make the normalizers cancel
        let b = bank(8, 3);
        let live = random(8, 3, 9).softmax_rows();
        let w = build_weights(&b, &WeightScheme::Opposite, &DclMode::Full).unwrap();
        let mut g = Graph::new();
        let p = g.constant(live.clone());
        let l = dcl_loss(&mut g, p, &b, &w, None, 1.0).unwrap();
        let exact = dcl_exact_nll(&live, &b, &w).unwrap();
        assert!((g.value(l).item().unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn directional_agreement() {
        let mut agree = 0;
        for seed in 0..20 {
            let b = bank(10, 100 + seed);
            let w = build_weights(&b, &WeightScheme::ReverseOrder, &DclMode::TopK { k: 3, sigma: 2.0 })
                .unwrap();
            let logits = random(10, 3, 200 + seed).scale(2.0);
            let eval = |z: &Matrix| -> (f64, f64, Matrix) {
                let mut g = Graph::new();
                let zv = g.param(z.clone());
                let p = g.softmax_rows(zv);
                let l = dcl_loss(&mut g, p, &b, &w, None, 1.0).unwrap();
                g.backward(l).unwrap();
                let probs = g.value(p).clone();
                let bound = g.value(l).item().unwrap();
                (bound, dcl_exact_nll(&probs, &b, &w).unwrap(), g.grad(zv).unwrap().clone())
            };
            let (b0, e0, grad) = eval(&logits);
            let stepped = logits.sub(&grad.scale(0.5)).unwrap();
            let (b1, e1, _) = eval(&stepped);
            if b1 < b0 && e1 < e0 {
                agree += 1;
            }
        }
        assert!(agree >= 16, "{agree}/20");
    }
}
