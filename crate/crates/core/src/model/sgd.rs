use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-3,
        }
    }
}

/// SGD with momentum and coupled weight decay:
///
/// ```text
/// v ← momentum·v + (g + weight_decay·w)
/// w ← w − lr·v
/// ```
///
/// Velocities are created at zero on the first step and must keep the same
/// shapes afterwards.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }

    /// Updates every parameter whose gradient is `Some`; `None` marks a
    /// frozen parameter, which is left untouched along with its velocity.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                "sgd_step",
                format!("{} parameters, {} gradients", params.len(), grads.len()),
            ));
        }
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect();
        } else if self.velocity.len() != params.len() {
            return Err(Error::dim(
                "sgd_step",
                format!(
                    "optimizer tracks {} parameters, got {}",
                    self.velocity.len(),
                    params.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if p.shape() != g.shape() || self.velocity[i].shape() != p.shape() {
                return Err(Error::dim(
                    "sgd_step",
                    format!(
                        "parameter {i} is {:?}, gradient {:?}, velocity {:?}",
                        p.shape(),
                        g.shape(),
                        self.velocity[i].shape()
                    ),
                ));
            }
        }

        let SgdConfig {
            lr,
            momentum,
            weight_decay,
        } = self.config;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let v = self.velocity[i].as_mut_slice();
            let w = p.as_mut_slice();
            for ((vk, wk), gk) in v.iter_mut().zip(w.iter_mut()).zip(g.as_slice()) {
                *vk = momentum * *vk + (gk + weight_decay * *wk);
                *wk -= lr * *vk;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, momentum: f64, weight_decay: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum,
            weight_decay,
        }
    }

    #[test]
    fn plain_gradient_descent() {
        let mut w = Matrix::row_vector(&[1.0, -2.0]);
        let g = Matrix::row_vector(&[0.5, 1.0]);
        let mut sgd = Sgd::new(cfg(0.1, 0.0, 0.0));
        sgd.step(&mut [&mut w], &[Some(&g)]).unwrap();
        assert_eq!(w.as_slice(), &[0.95, -2.1]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut w = Matrix::row_vector(&[1.0, -2.0]);
        let before = w.clone();
        let g = Matrix::zeros(1, 2);
        let mut sgd = Sgd::new(cfg(0.1, 0.9, 0.0));
        for _ in 0..5 {
            sgd.step(&mut [&mut w], &[Some(&g)]).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn momentum_unrolls() {
        // constant g: displacements lr·g, then lr·(1 + 0.9)·g
        let mut w = Matrix::scalar(0.0);
        let g = Matrix::scalar(2.0);
        let mut sgd = Sgd::new(cfg(0.01, 0.9, 0.0));
        sgd.step(&mut [&mut w], &[Some(&g)]).unwrap();
        let first = w.item().unwrap();
        assert!((first - (-0.02)).abs() < 1e-15);
        sgd.step(&mut [&mut w], &[Some(&g)]).unwrap();
        let second = w.item().unwrap() - first;
        assert!((second - (-0.01 * 1.9 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let mut w = Matrix::scalar(2.0);
        let g = Matrix::scalar(0.0);
        let mut sgd = Sgd::new(cfg(0.5, 0.0, 0.1));
        sgd.step(&mut [&mut w], &[Some(&g)]).unwrap();
        assert!((w.item().unwrap() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut w = Matrix::row_vector(&[0.3, 0.7]);
        let before = w.clone();
        let g = Matrix::row_vector(&[5.0, -5.0]);
        let mut sgd = Sgd::new(cfg(0.0, 0.9, 1e-3));
        for _ in 0..3 {
            sgd.step(&mut [&mut w], &[Some(&g)]).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn frozen_entries_untouched() {
        let mut a = Matrix::row_vector(&[1.0]);
        let mut b = Matrix::row_vector(&[1.0]);
        let g = Matrix::row_vector(&[1.0]);
        let mut sgd = Sgd::new(cfg(0.1, 0.9, 1e-3));
        sgd.step(&mut [&mut a, &mut b], &[None, Some(&g)]).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
        assert_ne!(b.as_slice(), &[1.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut w = Matrix::zeros(1, 2);
        let g = Matrix::zeros(2, 1);
        let mut sgd = Sgd::new(SgdConfig::default());
        assert!(matches!(
            sgd.step(&mut [&mut w], &[Some(&g)]),
            Err(Error::Dimension { .. })
        ));
        assert!(sgd.step(&mut [&mut w], &[]).is_err());
    }
}
