//! Finite-difference verification of every training objective.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dcl::{build_weights, dcl_loss, DclMode, LogisticVars, MemoryBank, Origin, WeightScheme};
use crate::error::Result;
use crate::losses::{ce_loss, certainty_loss, diversity_loss, im_loss, LossWeights};
use crate::model::{ModelDims, ModelVars, SourceModel};
use crate::numerics::{grad_check, Graph, Matrix, Var};
use crate::rng::{derive_seed, rng, Rng};

/// Relative-error bound the suite enforces.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

/// Worst result over all instances of one objective.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn normal(rows: usize, cols: usize, scale: f64, r: &mut Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            scale * z
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// A small random task: model, support inputs and labels, query inputs.
struct Instance {
    model: SourceModel,
    support_x: Matrix,
    support_y: Vec<usize>,
    all_x: Matrix,
    logits: Matrix,
    labels: Vec<usize>,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let way = 3;
    let dims = ModelDims {
        input_dim: 4,
        hidden: vec![5],
        feature_dim: 4,
        num_classes: way,
    };
    let mut model = SourceModel::init(derive_seed(seed, "model", 0), &dims).expect("valid dims");
    // nonzero biases keep every feature row away from the origin
    for p in model.params_mut() {
        if p.rows() == 1 {
            *p = normal(1, p.cols(), 0.5, &mut r);
        }
    }
    let support_y: Vec<usize> = (0..way * 2).map(|i| i % way).collect();
    let support_x = normal(support_y.len(), 4, 1.0, &mut r);
    let query_x = normal(6, 4, 1.0, &mut r);
    let all_x = Matrix::concat_rows(&[&support_x, &query_x]).expect("same width");
    let rows = r.random_range(3..8);
    let logits = normal(rows, 4, 1.5, &mut r);
    let labels = (0..rows).map(|_| r.random_range(0..4)).collect();
    Instance {
        model,
        support_x,
        support_y,
        all_x,
        logits,
        labels,
    }
}

fn bank_for(inst: &Instance) -> Result<MemoryBank> {
    let f = inst.model.forward_features(&inst.all_x)?;
    let p = inst.model.classifier_logits(&f)?.softmax_rows();
    let origin = (0..f.rows())
        .map(|i| {
            if i < inst.support_y.len() {
                Origin::Support(inst.support_y[i])
            } else {
                Origin::Query
            }
        })
        .collect();
    MemoryBank::from_parts(f, p, origin)
}

fn model_logits(g: &mut Graph, model: &SourceModel, params: &[Var], x: &Matrix) -> Result<Var> {
    let vars = ModelVars {
        params: params.to_vec(),
    };
    let xv = g.constant(x.clone());
    model.logits_var(g, &vars, xv)
}

fn params_of(model: &SourceModel) -> Vec<Matrix> {
    model.params().into_iter().cloned().collect()
}

fn record(name: &'static str, errors: Vec<f64>) -> LossCheck {
    let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
    LossCheck {
        name,
        instances: errors.len(),
        max_rel_error,
        passed: max_rel_error <= GRADIENT_TOLERANCE,
    }
}

fn dcl_check(inst: &Instance, scheme: WeightScheme, lambda_n: f64) -> Result<f64> {
    let bank = bank_for(inst)?;
    let weights = build_weights(&bank, &scheme, &DclMode::Full)?;
    let logistic = matches!(scheme, WeightScheme::NonlinearLogistic { .. });
    let mut params = params_of(&inst.model);
    let n = params.len();
    if let WeightScheme::NonlinearLogistic { k, x0 } = scheme {
        params.push(Matrix::scalar(k));
        params.push(Matrix::scalar(x0));
    }
    let c = grad_check(
        |g, v| {
            let z = model_logits(g, &inst.model, &v[..n], &inst.all_x)?;
            let p = g.softmax_rows(z);
            let lv = logistic.then(|| LogisticVars { k: v[n], x0: v[n + 1] });
            dcl_loss(g, p, &bank, &weights, lv, lambda_n)
        },
        &params,
        STEP,
        GRADIENT_TOLERANCE,
    )?;
    Ok(c.max_rel_error)
}

/// Runs every objective on `instances` random small problems derived from
/// `seed`. Logit-level losses are checked against free logits; the composite
/// phase objectives and the contrastive loss against all model parameters.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<LossCheck>> {
    let weights = LossWeights::default();
    let mut errs: Vec<(&'static str, Vec<f64>)> = [
        "L_src",
        "L_cer",
        "L_div",
        "L_IM",
        "L_dcl/ReverseOrder",
        "L_dcl/Opposite",
        "L_dcl/NonlinearLogistic",
        "L_s",
        "L_q",
    ]
    .into_iter()
    .map(|n| (n, Vec::with_capacity(instances)))
    .collect();

    for i in 0..instances {
        let inst = instance(derive_seed(seed, "gradcheck", i as u64));
        let z = std::slice::from_ref(&inst.logits);
        let labels = &inst.labels;
        errs[0].1.push(grad_check(|g, v| ce_loss(g, v[0], labels), z, STEP, GRADIENT_TOLERANCE)?.max_rel_error);
        errs[1].1.push(grad_check(|g, v| certainty_loss(g, v[0]), z, STEP, GRADIENT_TOLERANCE)?.max_rel_error);
        errs[2].1.push(grad_check(|g, v| diversity_loss(g, v[0]), z, STEP, GRADIENT_TOLERANCE)?.max_rel_error);
        errs[3].1.push(grad_check(|g, v| im_loss(g, v[0], &weights), z, STEP, GRADIENT_TOLERANCE)?.max_rel_error);

        let lambda_n = 0.5;
        errs[4].1.push(dcl_check(&inst, WeightScheme::ReverseOrder, lambda_n)?);
        errs[5].1.push(dcl_check(&inst, WeightScheme::Opposite, lambda_n)?);
        let mut r = rng(derive_seed(seed, "gradcheck-logistic", i as u64));
        let logistic = WeightScheme::NonlinearLogistic {
            k: r.random_range(-6.0..-1.0),
            x0: r.random_range(0.7..1.3),
        };
        errs[6].1.push(dcl_check(&inst, logistic, lambda_n)?);

        let params = params_of(&inst.model);
        let l_s = grad_check(
            |g, v| {
                let z = model_logits(g, &inst.model, v, &inst.support_x)?;
                let src = ce_loss(g, z, &inst.support_y)?;
                let im = im_loss(g, z, &weights)?;
                let im = g.scale(im, weights.lambda_im);
                g.add(src, im)
            },
            &params,
            STEP,
            GRADIENT_TOLERANCE,
        )?;
        errs[7].1.push(l_s.max_rel_error);

        let bank = bank_for(&inst)?;
        let dw = build_weights(&bank, &WeightScheme::ReverseOrder, &DclMode::Full)?;
        let l_q = grad_check(
            |g, v| {
                let z = model_logits(g, &inst.model, v, &inst.all_x)?;
                let im = im_loss(g, z, &weights)?;
                let p = g.softmax_rows(z);
                let dcl = dcl_loss(g, p, &bank, &dw, None, lambda_n)?;
                let dcl = g.scale(dcl, weights.lambda_dcl);
                g.add(im, dcl)
            },
            &params,
            STEP,
            GRADIENT_TOLERANCE,
        )?;
        errs[8].1.push(l_q.max_rel_error);
    }
    Ok(errs.into_iter().map(|(n, e)| record(n, e)).collect())
}
