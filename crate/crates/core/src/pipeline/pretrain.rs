use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::accuracy;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::ce_loss;
use crate::model::{ModelDims, Sgd, SgdConfig, SourceModel};
use crate::numerics::Graph;
use crate::rng::{derive_seed, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            feature_dim: 16,
            epochs: 30,
            batch_size: 50,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("pretrain_epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite())
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite())
        {
            return Err(Error::Config(format!(
                "pretrain optimizer out of range: lr={} momentum={} weight_decay={}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Result of source training.
#[derive(Clone, Debug)]
pub struct Pretrained {
    /// Encoder plus the source-class head; adaptation always swaps the head
    /// for a fresh one.
    pub model: SourceModel,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Mini-batch cross-entropy training on the labeled source domain for a
/// fixed number of epochs.
pub fn pretrain_source(data: &Dataset, config: &PretrainConfig, seed: u64) -> Result<Pretrained> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("empty source dataset".into()));
    }
    let present = data.rows_by_class().iter().filter(|r| !r.is_empty()).count();
    if data.num_classes() < 2 || present < 2 {
        return Err(Error::InvalidArgument(format!(
            "source training needs at least 2 populated classes, found {present}"
        )));
    }
    let dims = ModelDims {
        input_dim: data.x.cols(),
        hidden: config.hidden.clone(),
        feature_dim: config.feature_dim,
        num_classes: data.num_classes(),
    };
    let mut model = SourceModel::init(derive_seed(seed, "pretrain-init", 0), &dims)?;
    let mut sgd = Sgd::new(SgdConfig {
        lr: config.lr,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    });
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng(derive_seed(seed, "pretrain-shuffle", epoch as u64)));
        for batch in order.chunks(config.batch_size) {
            let x = data.x.gather_rows(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| data.y[i]).collect();
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let xv = g.constant(x);
            let z = model.logits_var(&mut g, &vars, xv)?;
            let loss = ce_loss(&mut g, z, &y)?;
            last_loss = g.value(loss).item()?;
            if !last_loss.is_finite() {
                return Err(Error::NumericalAbort(format!(
                    "source loss became {last_loss} in epoch {epoch}"
                )));
            }
            g.backward(loss)?;
            let grads = model.collect_grads(&g, &vars);
            model.apply_sgd(&mut sgd, &grads)?;
            if !model.params().iter().all(|p| p.is_finite()) {
                return Err(Error::NumericalAbort(format!(
                    "source parameters became non-finite in epoch {epoch}"
                )));
            }
        }
    }
    let logits = model.forward_logits(&data.x)?;
    Ok(Pretrained {
        train_accuracy: accuracy(&logits, &data.y)?,
        final_loss: last_loss,
        model,
    })
}
