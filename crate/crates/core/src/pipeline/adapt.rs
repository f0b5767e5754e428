use serde::{Deserialize, Serialize};

use super::evaluate::accuracy;
use super::{AdaptConfig, Method};
use crate::data::{jitter, TargetTask};
use crate::dcl::{build_weights, dcl_loss, LambdaNSchedule, LogisticVars, MemoryBank, WeightScheme};
use crate::error::{Error, Result};
use crate::losses::{ce_loss, im_loss};
use crate::model::{Sgd, SgdConfig, SourceModel};
use crate::numerics::{Graph, Matrix};
use crate::rng::derive_seed;

/// One line of the adaptation trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// First-phase objective and its parts.
    pub l_s: f64,
    pub l_src: f64,
    pub l_im_support: f64,
    /// Second-phase objective and its parts; absent when the phase is skipped.
    pub l_q: Option<f64>,
    pub l_im_all: Option<f64>,
    pub l_dcl: Option<f64>,
    pub lambda_n: Option<f64>,
    /// Logistic slope and midpoint after this epoch's update.
    pub logistic: Option<(f64, f64)>,
    /// Support accuracy of the model before this epoch's first update.
    pub support_accuracy: f64,
}

/// An adapted model with its per-epoch log.
#[derive(Clone, Debug)]
pub struct Adapted {
    pub model: SourceModel,
    pub trajectory: Vec<EpochLog>,
}

fn check_params(model: &SourceModel, epoch: usize) -> Result<()> {
    if model.params().iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalAbort(format!("parameters became non-finite in epoch {epoch}")))
    }
}

fn finite(value: f64, epoch: usize, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericalAbort(format!("{what} became {value} in epoch {epoch}")))
    }
}

/// Adapts a copy of `source` to `task`.
///
/// The classifier is replaced by a fresh random head with `task.way`
/// outputs. Each epoch first takes one step on the support objective
/// `L_src + λ_IM·L_IM(support)` (cross-entropy only for fine-tuning), then,
/// for transductive methods, refreshes the memory bank and takes one step on
/// `L_IM(support ∪ query) + λ_dcl·L_dcl`. With `epochs == 0` the model is
/// returned untouched.
pub fn adapt_episode(source: &SourceModel, task: TargetTask<'_>, config: &AdaptConfig) -> Result<Adapted> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(Adapted {
            model: source.clone(),
            trajectory: Vec::new(),
        });
    }
    if task.support_len() == 0 || task.query_x.rows() == 0 {
        return Err(Error::InsufficientData("task needs support and query rows".into()));
    }
    let mut model = source.with_fresh_classifier(task.way, derive_seed(config.seed, "classifier", 0));
    model.encoder_frozen = config.encoder_frozen;

    let method = config.method;
    let mode = config.effective_dcl_mode();
    let schedule = LambdaNSchedule::new(config.epochs)?;
    let all_x = task.all_inputs()?;
    let mut sgd = Sgd::new(config.sgd);

    // The logistic map's parameters get their own optimizer without weight decay.
    let learn_logistic = method == Method::ImDcl && matches!(config.scheme, WeightScheme::NonlinearLogistic { .. });
    let mut logistic = match config.scheme {
        WeightScheme::NonlinearLogistic { k, x0 } => (k, x0),
        _ => (0.0, 0.0),
    };
    let mut logistic_sgd = Sgd::new(SgdConfig {
        weight_decay: 0.0,
        ..config.sgd
    });

    let mut trajectory = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let support_accuracy = accuracy(&model.forward_logits(task.support_x)?, task.support_y)?;

        // supervised step on the support set
        let support_x = if config.augment {
            jitter(
                task.support_x,
                config.augment_sigma,
                derive_seed(config.seed, "augment", epoch as u64),
            )?
        } else {
            task.support_x.clone()
        };
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let xv = g.constant(support_x);
        let z = model.logits_var(&mut g, &vars, xv)?;
        let src = ce_loss(&mut g, z, task.support_y)?;
        let l_src = g.value(src).item()?;
        let (loss, l_im_support) = if method.support_im() {
            let im = im_loss(&mut g, z, &config.loss)?;
            let l_im = g.value(im).item()?;
            let weighted = g.scale(im, config.loss.lambda_im);
            (g.add(src, weighted)?, l_im)
        } else {
            (src, 0.0)
        };
        let l_s = finite(g.value(loss).item()?, epoch, "support loss")?;
        g.backward(loss)?;
        let grads = model.collect_grads(&g, &vars);
        model.apply_sgd(&mut sgd, &grads)?;
        check_params(&model, epoch)?;

        let mut log = EpochLog {
            epoch,
            l_s,
            l_src,
            l_im_support,
            l_q: None,
            l_im_all: None,
            l_dcl: None,
            lambda_n: None,
            logistic: None,
            support_accuracy,
        };

        if method.transductive() {
            let mut g = Graph::new();
            let vars = model.bind(&mut g);
            let xv = g.constant(all_x.clone());
            let z = model.logits_var(&mut g, &vars, xv)?;
            let im = im_loss(&mut g, z, &config.loss)?;
            log.l_im_all = Some(g.value(im).item()?);
            let mut loss = im;
            let mut logistic_vars = None;
            if method.contrastive() {
                let bank = MemoryBank::refresh(&model, &task)?;
                let scheme = match config.scheme {
                    WeightScheme::NonlinearLogistic { .. } => WeightScheme::NonlinearLogistic {
                        k: logistic.0,
                        x0: logistic.1,
                    },
                    s => s,
                };
                let weights = build_weights(&bank, &scheme, &mode)?;
                let lambda_n = config.lambda_n_mode.value(&schedule, epoch)?;
                let lv = learn_logistic.then(|| LogisticVars {
                    k: g.param(Matrix::scalar(logistic.0)),
                    x0: g.param(Matrix::scalar(logistic.1)),
                });
                let p = g.softmax_rows(z);
                let dcl = dcl_loss(&mut g, p, &bank, &weights, lv, lambda_n)?;
                log.l_dcl = Some(g.value(dcl).item()?);
                log.lambda_n = Some(lambda_n);
                let weighted = g.scale(dcl, config.loss.lambda_dcl);
                loss = g.add(im, weighted)?;
                logistic_vars = lv;
            }
            log.l_q = Some(finite(g.value(loss).item()?, epoch, "transductive loss")?);
            g.backward(loss)?;
            let grads = model.collect_grads(&g, &vars);
            model.apply_sgd(&mut sgd, &grads)?;
            check_params(&model, epoch)?;
            if let Some(LogisticVars { k, x0 }) = logistic_vars {
                let mut kv = Matrix::scalar(logistic.0);
                let mut xv = Matrix::scalar(logistic.1);
                let gk = g.grad(k).cloned();
                let gx = g.grad(x0).cloned();
                logistic_sgd.step(&mut [&mut kv, &mut xv], &[gk.as_ref(), gx.as_ref()])?;
                logistic = (finite(kv.item()?, epoch, "logistic k")?, finite(xv.item()?, epoch, "logistic x0")?);
                log.logistic = Some(logistic);
            }
        }
        trajectory.push(log);
    }
    Ok(Adapted { model, trajectory })
}
