use crate::data::TargetTask;
use crate::error::{Error, Result};
use crate::model::SourceModel;
use crate::numerics::Matrix;

/// Where a bank row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Support(usize),
    Query,
}

impl Origin {
    pub fn is_support(self) -> bool {
        matches!(self, Origin::Support(_))
    }
}

/// Detached snapshot of every target feature and prediction. Rows are the
/// support samples followed by the query samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    features: Matrix,
    predictions: Matrix,
    origin: Vec<Origin>,
}

impl MemoryBank {
    /// Recomputes features and softmax predictions of the current model over
    /// the whole task.
    pub fn refresh(model: &SourceModel, task: &TargetTask<'_>) -> Result<Self> {
        let x = task.all_inputs()?;
        let features = model.forward_features(&x)?;
        let logits = model.classifier_logits(&features)?;
        let origin = task
            .support_y
            .iter()
            .map(|&y| Origin::Support(y))
            .chain(std::iter::repeat_n(Origin::Query, task.query_x.rows()))
            .collect();
        Self::from_parts(features, logits.softmax_rows(), origin)
    }

    /// Validates shapes and that each prediction row is a distribution.
    pub fn from_parts(features: Matrix, predictions: Matrix, origin: Vec<Origin>) -> Result<Self> {
        let m = features.rows();
        if predictions.rows() != m || origin.len() != m {
            return Err(Error::dim(
                "memory_bank",
                format!(
                    "{m} features, {} predictions, {} origin tags",
                    predictions.rows(),
                    origin.len()
                ),
            ));
        }
        for (r, row) in predictions.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::Contract(format!(
                    "bank prediction row {r} is not a distribution (sum {s})"
                )));
            }
        }
        Ok(Self {
            features,
            predictions,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn predictions(&self) -> &Matrix {
        &self.predictions
    }

    pub fn origin(&self) -> &[Origin] {
        &self.origin
    }

    pub fn features_mut(&mut self) -> &mut Matrix {
        &mut self.features
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_domain_pair, sample_episode, DomainConfig};
    use crate::model::{ModelDims, Sgd, SgdConfig};
    use crate::numerics::Graph;

    fn setup() -> (SourceModel, crate::data::Episode) {
        let pair = make_domain_pair(&DomainConfig::default(), 1).unwrap();
        let ep = sample_episode(&pair.target_pool, 5, 1, 15, 2).unwrap();
        let dims = ModelDims {
            input_dim: 16,
            hidden: vec![8],
            feature_dim: 6,
            num_classes: 5,
        };
        (SourceModel::init(4, &dims).unwrap(), ep)
    }

    #[test]
    fn bank_covers_support_and_query() {
        let (model, ep) = setup();
        let bank = MemoryBank::refresh(&model, &ep.task()).unwrap();
        assert_eq!(bank.len(), 5 + 75);
        assert_eq!(bank.origin().iter().filter(|o| o.is_support()).count(), 5);
        assert_eq!(bank.origin()[0], Origin::Support(ep.support_y()[0]));
    }

    #[test]
    fn bank_predictions_match_forward() {
        let (model, ep) = setup();
        let bank = MemoryBank::refresh(&model, &ep.task()).unwrap();
        let x = ep.task().all_inputs().unwrap();
        let p = model.forward_logits(&x).unwrap().softmax_rows();
        assert_eq!(bank.predictions(), &p);
        assert_eq!(bank.features(), &model.forward_features(&x).unwrap());
    }

    #[test]
    fn refresh_tracks_model_updates() {
        let (mut model, ep) = setup();
        let before = MemoryBank::refresh(&model, &ep.task()).unwrap();
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let x = g.constant(ep.support_x().clone());
        let z = model.logits_var(&mut g, &vars, x).unwrap();
        let loss = crate::losses::ce_loss(&mut g, z, ep.support_y()).unwrap();
        g.backward(loss).unwrap();
        let grads = model.collect_grads(&g, &vars);
        model
            .apply_sgd(&mut Sgd::new(SgdConfig::default()), &grads)
            .unwrap();
        let after = MemoryBank::refresh(&model, &ep.task()).unwrap();
        assert_ne!(before.features(), after.features());
        assert_ne!(before.predictions(), after.predictions());
    }

    #[test]
    fn rejects_non_distributions() {
        let f = Matrix::ones(2, 2);
        let p = Matrix::from_rows(&[[0.5, 0.6], [0.5, 0.5]]).unwrap();
        assert!(MemoryBank::from_parts(f.clone(), p, vec![Origin::Query; 2]).is_err());
        let p = Matrix::filled(2, 2, 0.5);
        assert!(MemoryBank::from_parts(f, p, vec![Origin::Query; 3]).is_err());
    }
}
