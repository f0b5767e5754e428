//! Source pretraining, two-phase episode adaptation, evaluation and the
//! experiment runners built on them.

mod adapt;
mod evaluate;
mod experiment;
mod pretrain;
mod report;

pub use adapt::{adapt_episode, Adapted, EpochLog};
pub use evaluate::{accuracy, evaluate, nearest_centroid_logits, oracle_accuracy};
pub use experiment::{
    lambda_study, prepare, run_ablation, run_experiment, summarize, Benchmark, ComparisonTable,
    PairedDelta, RunReport,
};
pub use pretrain::{pretrain_source, PretrainConfig, Pretrained};
pub use report::{write_csv_report, write_json_report, write_trajectories};

use serde::{Deserialize, Serialize};

use crate::data::DomainConfig;
use crate::dcl::{DclMode, LambdaNSchedule, WeightScheme};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::SgdConfig;

/// Which losses an adaptation run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Cross-entropy on the support set only.
    FineTune,
    /// Cross-entropy plus information maximization on the support set.
    #[serde(rename = "SIM")]
    Sim,
    /// Adds a transductive phase with information maximization over support
    /// and query.
    #[serde(rename = "IM")]
    Im,
    /// As [`Method::ImDcl`] but with a hard top-k positive/negative split and
    /// unit weights.
    #[serde(rename = "IM_DCL_Unweighted")]
    ImDclUnweighted,
    #[serde(rename = "IM_DCL")]
    ImDcl,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FineTune,
        Method::Sim,
        Method::Im,
        Method::ImDclUnweighted,
        Method::ImDcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FineTune => "FineTune",
            Method::Sim => "SIM",
            Method::Im => "IM",
            Method::ImDclUnweighted => "IM_DCL_Unweighted",
            Method::ImDcl => "IM_DCL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }

    /// Information maximization on the support set in the first phase.
    pub fn support_im(self) -> bool {
        self != Method::FineTune
    }

    /// Whether the transductive phase runs at all.
    pub fn transductive(self) -> bool {
        matches!(self, Method::Im | Method::ImDclUnweighted | Method::ImDcl)
    }

    pub fn contrastive(self) -> bool {
        matches!(self, Method::ImDclUnweighted | Method::ImDcl)
    }
}

/// How the repulsive-term weight evolves over adaptation epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LambdaNMode {
    /// Follows the decaying schedule epoch by epoch.
    Variable,
    /// The schedule's final value throughout.
    FixedMin,
    /// 1 throughout.
    FixedMax,
}

impl LambdaNMode {
    pub const ALL: [LambdaNMode; 3] = [LambdaNMode::FixedMin, LambdaNMode::FixedMax, LambdaNMode::Variable];

    pub fn name(self) -> &'static str {
        match self {
            LambdaNMode::Variable => "Variable",
            LambdaNMode::FixedMin => "FixedMin",
            LambdaNMode::FixedMax => "FixedMax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        LambdaNMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown lambda_n_mode `{s}`")))
    }

    pub fn value(self, schedule: &LambdaNSchedule, epoch: usize) -> Result<f64> {
        match self {
            LambdaNMode::Variable => schedule.value(epoch),
            LambdaNMode::FixedMin => Ok(schedule.min()),
            LambdaNMode::FixedMax => Ok(schedule.max()),
        }
    }
}

/// Everything [`adapt_episode`] needs besides the model and the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub loss: LossWeights,
    pub method: Method,
    pub scheme: WeightScheme,
    pub lambda_n_mode: LambdaNMode,
    /// `Full` or `TopK`; the unweighted method always uses a hard split of
    /// `top_k` positives.
    pub dcl_mode: DclMode,
    pub top_k: usize,
    pub encoder_frozen: bool,
    /// Gaussian input jitter on the support set in the first phase.
    pub augment: bool,
    pub augment_sigma: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            sgd: SgdConfig::default(),
            loss: LossWeights::default(),
            method: Method::ImDcl,
            scheme: WeightScheme::ReverseOrder,
            lambda_n_mode: LambdaNMode::Variable,
            dcl_mode: DclMode::Full,
            top_k: 5,
            encoder_frozen: false,
            augment: false,
            augment_sigma: 0.05,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.scheme.validate()?;
        let bad = |what: String| Err(Error::Config(what));
        for (name, v) in [
            ("lr", self.sgd.lr),
            ("momentum", self.sgd.momentum),
            ("weight_decay", self.sgd.weight_decay),
            ("augment_sigma", self.augment_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.sgd.momentum >= 1.0 {
            return bad(format!("momentum must be below 1, got {}", self.sgd.momentum));
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        match self.dcl_mode {
            DclMode::TopK { k, sigma } if k == 0 || !(sigma > 0.0 && sigma.is_finite()) => {
                return bad(format!("top-k mode needs k >= 1 and sigma > 0, got k={k} sigma={sigma}"))
            }
            DclMode::HardSplit { .. } => {
                return bad("dcl_mode must be full or topk; the hard split belongs to IM_DCL_Unweighted".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Contrastive set construction for the configured method.
    pub fn effective_dcl_mode(&self) -> DclMode {
        match self.method {
            Method::ImDclUnweighted => DclMode::HardSplit { k: self.top_k },
            _ => self.dcl_mode,
        }
    }
}

/// A complete run: the synthetic domains, the source model, adaptation and
/// the episode protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub episodes: usize,
    pub jobs: usize,
    pub domain: DomainConfig,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            way: 5,
            shot: 1,
            queries: 15,
            episodes: 100,
            jobs: 1,
            domain: DomainConfig::default(),
            pretrain: PretrainConfig::default(),
            adapt: AdaptConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.pretrain.validate()?;
        self.adapt.validate()?;
        if self.way < 2 || self.shot == 0 || self.queries == 0 {
            return Err(Error::Config(format!(
                "episodes need way >= 2, shot >= 1, queries >= 1 (got {}/{}/{})",
                self.way, self.shot, self.queries
            )));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.way > self.domain.target_classes {
            return Err(Error::Config(format!(
                "{}-way episodes need at least {} target classes",
                self.way, self.way
            )));
        }
        Ok(())
    }
}
