//! Synthetic source/target domains, episode sampling and input jitter.
//!
//! Each domain is a mixture of isotropic Gaussians, one per class. The source
//! domain samples `μ_c + σ·z` directly. The target domain uses freshly drawn
//! class means (so its label space is disjoint from the source) and pushes
//! every sample through an affine shift `x ↦ A·x + b` with
//! `A = I + s·R`, `R_ij ~ U(−1, 1)` and `b_i ~ s·U(−1, 1)`, where `s` is the
//! shift severity.

mod csv_io;
mod episode;

pub use csv_io::{read_csv, write_csv};
pub use episode::{sample_episode, Episode, TargetTask};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{derive_seed, rng};

/// Shape and difficulty of a synthetic domain pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub input_dim: usize,
    pub source_classes: usize,
    pub target_classes: usize,
    pub source_samples_per_class: usize,
    pub target_samples_per_class: usize,
    /// Per-coordinate standard deviation of the class noise.
    pub class_cov_scale: f64,
    /// Standard deviation of the class-mean prior.
    pub mean_scale: f64,
    /// `0` keeps the target inputs untransformed; `0.2` is the near regime
    /// and `0.8` the distant one.
    pub shift_severity: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            source_classes: 20,
            target_classes: 10,
            source_samples_per_class: 100,
            target_samples_per_class: 60,
            class_cov_scale: 0.3,
            mean_scale: 0.35,
            shift_severity: 0.2,
        }
    }
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("domain config: {what}")));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.source_classes < 2 {
            return bad("source_classes must be at least 2");
        }
        if self.target_classes < 2 {
            return bad("target_classes must be at least 2");
        }
        if self.source_samples_per_class == 0 || self.target_samples_per_class == 0 {
            return bad("samples per class must be positive");
        }
        if !(self.class_cov_scale >= 0.0 && self.class_cov_scale.is_finite()) {
            return bad("class_cov_scale must be a finite value >= 0");
        }
        if !(self.mean_scale > 0.0 && self.mean_scale.is_finite()) {
            return bad("mean_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.shift_severity) {
            return bad("shift_severity must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One Gaussian-mixture domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Global class ids; source and target never share one.
    pub class_ids: Vec<usize>,
    /// `num_classes × input_dim`, before the domain transform.
    pub class_means: Matrix,
    pub class_cov_scale: f64,
    /// `A` of the affine shift, applied as `x·Aᵀ + b` to row vectors.
    pub transform: Matrix,
    pub offset: Matrix,
    pub shift_severity: f64,
    pub seed: u64,
}

impl DomainSpec {
    /// Class means after the domain transform.
    pub fn shifted_means(&self) -> Matrix {
        self.apply_transform(&self.class_means)
    }

    fn apply_transform(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.transform.transpose()).expect("square transform");
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(self.offset.as_slice()) {
                *v += b;
            }
        }
        y
    }

    /// `per_class` samples from every class, in class order.
    pub fn sample(&self, per_class: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let d = self.input_dim;
        let mut x = Matrix::zeros(self.num_classes * per_class, d);
        let mut y = Vec::with_capacity(self.num_classes * per_class);
        for c in 0..self.num_classes {
            for k in 0..per_class {
                let row = x.row_mut(c * per_class + k);
                for (j, v) in row.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut r);
                    *v = self.class_means[(c, j)] + self.class_cov_scale * z;
                }
                y.push(c);
            }
        }
        let x = self.apply_transform(&x);
        Dataset {
            x,
            y,
            class_ids: self.class_ids.clone(),
        }
    }
}

/// Labeled samples. `y` holds local class indices into `class_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub class_ids: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Row ids of each class.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &c) in self.y.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Source domain with its training set, and the target domain with the pool
/// episodes are drawn from.
#[derive(Clone, Debug)]
pub struct DomainPair {
    pub source: DomainSpec,
    pub source_data: Dataset,
    pub target: DomainSpec,
    pub target_pool: Dataset,
}

fn random_means(classes: usize, dim: usize, scale: f64, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let data = (0..classes * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            scale * z
        })
        .collect();
    Matrix::from_vec(classes, dim, data).expect("shape")
}

/// Builds the source and target domains and samples their datasets.
pub fn make_domain_pair(config: &DomainConfig, seed: u64) -> Result<DomainPair> {
    config.validate()?;
    let d = config.input_dim;

    let source = DomainSpec {
        input_dim: d,
        num_classes: config.source_classes,
        class_ids: (0..config.source_classes).collect(),
        class_means: random_means(
            config.source_classes,
            d,
            config.mean_scale,
            derive_seed(seed, "source-means", 0),
        ),
        class_cov_scale: config.class_cov_scale,
        transform: Matrix::identity(d),
        offset: Matrix::zeros(1, d),
        shift_severity: 0.0,
        seed,
    };

    let s = config.shift_severity;
    let mut r = rng(derive_seed(seed, "target-shift", 0));
    let mut transform = Matrix::identity(d);
    for v in transform.as_mut_slice() {
        *v += s * r.random_range(-1.0..1.0);
    }
    let offset_data = (0..d).map(|_| s * r.random_range(-1.0..1.0)).collect();
    let target = DomainSpec {
        input_dim: d,
        num_classes: config.target_classes,
        class_ids: (config.source_classes..config.source_classes + config.target_classes)
            .collect(),
        class_means: random_means(
            config.target_classes,
            d,
            config.mean_scale,
            derive_seed(seed, "target-means", 0),
        ),
        class_cov_scale: config.class_cov_scale,
        transform,
        offset: Matrix::from_vec(1, d, offset_data).expect("shape"),
        shift_severity: s,
        seed,
    };

    let source_data = source.sample(
        config.source_samples_per_class,
        derive_seed(seed, "source-samples", 0),
    );
    let target_pool = target.sample(
        config.target_samples_per_class,
        derive_seed(seed, "target-samples", 0),
    );
    Ok(DomainPair {
        source,
        source_data,
        target,
        target_pool,
    })
}

/// `x + sigma·z` with standard-normal `z` drawn from `seed`.
pub fn jitter(x: &Matrix, sigma: f64, seed: u64) -> Result<Matrix> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("jitter sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let mut r = rng(seed);
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        let z: f64 = StandardNormal.sample(&mut r);
        *v += sigma * z;
    }
    Ok(out)
}
