//! The source model `C ∘ M`: an MLP encoder `M` followed by a linear
//! classifier `C`, plus the SGD optimizer used to train it.

mod checkpoint;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use sgd::{Sgd, SgdConfig};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};
use crate::rng::{derive_seed, rng};

/// Affine map `x·W + b` with `W: d_in×d_out` and a `1×d_out` bias row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// Glorot-uniform weights on `(−a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, seed: u64) -> Self {
        let a = glorot_bound(fan_in, fan_out);
        let mut r = rng(seed);
        let data = (0..fan_in * fan_out)
            .map(|_| r.random_range(-a..a))
            .collect();
        Self {
            weight: Matrix::from_vec(fan_in, fan_out, data).expect("shape"),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(self.bias.as_slice()) {
                *v += b;
            }
        }
        Ok(y)
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Layer widths of a [`SourceModel`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.num_classes == 0
            || self.hidden.contains(&0)
        {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Encoder layers plus classifier. Hidden encoder layers apply ReLU; the last
/// encoder layer is affine only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub encoder: Vec<Linear>,
    pub classifier: Linear,
    pub encoder_frozen: bool,
}

/// Graph handles for every parameter of a bound model, in
/// [`SourceModel::params`] order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub params: Vec<Var>,
}

impl SourceModel {
    /// Random model: every layer Glorot-uniform from a stream derived from `seed`.
    pub fn init(seed: u64, dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        let mut widths = vec![dims.input_dim];
        widths.extend(&dims.hidden);
        widths.push(dims.feature_dim);
        let encoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::glorot(w[0], w[1], derive_seed(seed, "encoder", i as u64)))
            .collect();
        let classifier = Linear::glorot(
            dims.feature_dim,
            dims.num_classes,
            derive_seed(seed, "classifier", 0),
        );
        Self::from_parts(encoder, classifier, false)
    }

    pub fn from_parts(encoder: Vec<Linear>, classifier: Linear, encoder_frozen: bool) -> Result<Self> {
        let model = Self {
            encoder,
            classifier,
            encoder_frozen,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks that layer shapes chain.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::InvalidArgument("encoder has no layers".into()));
        }
        let mut prev = self.encoder[0].in_dim();
        for (i, l) in self.encoder.iter().chain([&self.classifier]).enumerate() {
            if l.in_dim() != prev || l.bias.shape() != (1, l.out_dim()) {
                return Err(Error::dim(
                    "model",
                    format!(
                        "layer {i} is {}x{} with bias {:?}, expected input {prev}",
                        l.in_dim(),
                        l.out_dim(),
                        l.bias.shape()
                    ),
                ));
            }
            prev = l.out_dim();
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.input_dim(),
            hidden: self.encoder[..self.encoder.len() - 1]
                .iter()
                .map(Linear::out_dim)
                .collect(),
            feature_dim: self.feature_dim(),
            num_classes: self.num_classes(),
        }
    }

    /// Same encoder, new random classifier head for `num_classes` classes.
    pub fn with_fresh_classifier(&self, num_classes: usize, seed: u64) -> Self {
        Self {
            encoder: self.encoder.clone(),
            classifier: Linear::glorot(self.feature_dim(), num_classes, seed),
            encoder_frozen: self.encoder_frozen,
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(
                "forward",
                format!("input has {} columns, encoder expects {}", x.cols(), self.input_dim()),
            ));
        }
        Ok(())
    }

    /// `M(x)`, one feature row per input row.
    pub fn forward_features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let last = self.encoder.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.encoder.iter().enumerate() {
            h = layer.apply(&h)?;
            if i < last {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    /// `C(M(x))`.
    pub fn forward_logits(&self, x: &Matrix) -> Result<Matrix> {
        let f = self.forward_features(x)?;
        self.classifier_logits(&f)
    }

    /// `C(f)` for precomputed features.
    pub fn classifier_logits(&self, features: &Matrix) -> Result<Matrix> {
        self.classifier.apply(features)
    }

    /// All parameter matrices: encoder `(W, b)` pairs, then classifier `(W, b)`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.encoder
            .iter()
            .chain([&self.classifier])
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .iter_mut()
            .chain([&mut self.classifier])
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Per-parameter trainability; encoder entries are `false` when frozen.
    pub fn trainable(&self) -> Vec<bool> {
        let enc = 2 * self.encoder.len();
        (0..enc + 2).map(|i| i >= enc || !self.encoder_frozen).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Registers the parameters on `graph`. Frozen encoder parameters become
    /// constants, so they never receive gradients.
    pub fn bind(&self, graph: &mut Graph) -> ModelVars {
        let params = self
            .params()
            .into_iter()
            .zip(self.trainable())
            .map(|(p, t)| {
                if t {
                    graph.param(p.clone())
                } else {
                    graph.constant(p.clone())
                }
            })
            .collect();
        ModelVars { params }
    }

    /// Differentiable counterpart of [`Self::forward_features`].
    pub fn features_var(&self, graph: &mut Graph, vars: &ModelVars, x: Var) -> Result<Var> {
        self.check_input(graph.value(x))?;
        let layers = self.encoder.len();
        let mut h = x;
        for i in 0..layers {
            let z = graph.matmul(h, vars.params[2 * i])?;
            h = graph.add(z, vars.params[2 * i + 1])?;
            if i + 1 < layers {
                h = graph.relu(h);
            }
        }
        Ok(h)
    }

    /// Differentiable counterpart of [`Self::forward_logits`].
    pub fn logits_var(&self, graph: &mut Graph, vars: &ModelVars, x: Var) -> Result<Var> {
        let f = self.features_var(graph, vars, x)?;
        let c = 2 * self.encoder.len();
        let z = graph.matmul(f, vars.params[c])?;
        graph.add(z, vars.params[c + 1])
    }

    /// Gradients from a finished backward sweep, `None` for frozen entries.
    pub fn collect_grads(&self, graph: &Graph, vars: &ModelVars) -> Vec<Option<Matrix>> {
        vars.params.iter().map(|&v| graph.grad(v).cloned()).collect()
    }

    /// One optimizer step over the trainable parameters.
    pub fn apply_sgd(&mut self, sgd: &mut Sgd, grads: &[Option<Matrix>]) -> Result<()> {
        let trainable = self.trainable();
        let grads: Vec<Option<&Matrix>> = grads
            .iter()
            .zip(trainable)
            .map(|(g, t)| if t { g.as_ref() } else { None })
            .collect();
        sgd.step(&mut self.params_mut(), &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            input_dim: 3,
            hidden: vec![4],
            feature_dim: 2,
            num_classes: 2,
        }
    }

    #[test]
    fn zero_encoder_gives_zero_features() {
        let model = SourceModel::from_parts(
            vec![Linear::zeros(3, 4), Linear::zeros(4, 2)],
            Linear::zeros(2, 2),
            false,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 3.0, 3.0]]).unwrap();
        assert_eq!(model.forward_features(&x).unwrap(), Matrix::zeros(2, 2));
        let p = model.forward_logits(&x).unwrap().softmax_rows();
        assert!(p.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let enc = Linear {
            weight: Matrix::identity(3),
            bias: Matrix::zeros(1, 3),
        };
        let cls = Linear {
            weight: Matrix::identity(3),
            bias: Matrix::zeros(1, 3),
        };
        let model = SourceModel::from_parts(vec![enc], cls, false).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(model.forward_features(&x).unwrap(), x);
        assert_eq!(model.forward_logits(&x).unwrap(), x);
    }

    #[test]
    fn two_layer_hand_value() {
        // h = relu((1,1)·[[1,-1],[2,-3]] + (0.5,0)) = relu(3.5, -4) = (3.5, 0)
        // f = (3.5,0)·[[2],[7]] + (-1) = 6
        // logits = 6·[[1, -0.5]] + (0, 1) = (6, -2)
        let l1 = Linear {
            weight: Matrix::from_rows(&[[1.0, -1.0], [2.0, -3.0]]).unwrap(),
            bias: Matrix::row_vector(&[0.5, 0.0]),
        };
        let l2 = Linear {
            weight: Matrix::from_rows(&[[2.0], [7.0]]).unwrap(),
            bias: Matrix::row_vector(&[-1.0]),
        };
        let cls = Linear {
            weight: Matrix::from_rows(&[[1.0, -0.5]]).unwrap(),
            bias: Matrix::row_vector(&[0.0, 1.0]),
        };
        let model = SourceModel::from_parts(vec![l1, l2], cls, false).unwrap();
        let x = Matrix::row_vector(&[1.0, 1.0]);
        assert_eq!(model.forward_features(&x).unwrap().as_slice(), &[6.0]);
        assert_eq!(model.forward_logits(&x).unwrap().as_slice(), &[6.0, -2.0]);
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let model = SourceModel::init(3, &dims()).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]]).unwrap();
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let xv = g.constant(x.clone());
        let l = model.logits_var(&mut g, &vars, xv).unwrap();
        let plain = model.forward_logits(&x).unwrap();
        for (a, b) in g.value(l).as_slice().iter().zip(plain.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn input_shape_is_checked() {
        let model = SourceModel::init(3, &dims()).unwrap();
        assert!(model.forward_features(&Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = SourceModel::init(11, &dims()).unwrap();
        let b = SourceModel::init(11, &dims()).unwrap();
        let c = SourceModel::init(12, &dims()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);

        let big = Linear::glorot(64, 32, 5);
        let bound = glorot_bound(64, 32);
        assert!(big.weight.as_slice().iter().all(|w| w.abs() < bound));
        // the sample should spread over most of the interval
        assert!(big.weight.max_abs() > 0.95 * bound);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let err = SourceModel::from_parts(vec![Linear::zeros(3, 4)], Linear::zeros(5, 2), false);
        assert!(err.is_err());
    }

    #[test]
    fn frozen_encoder_binds_as_constants() {
        let mut model = SourceModel::init(1, &dims()).unwrap();
        model.encoder_frozen = true;
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        assert!(!g.requires_grad(vars.params[0]));
        assert!(g.requires_grad(vars.params[4]));
        assert_eq!(model.trainable(), vec![false, false, false, false, true, true]);
    }
}
