use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{adapt_episode, EpochLog};
use super::evaluate::evaluate;
use super::pretrain::{pretrain_source, Pretrained};
use super::{ExperimentConfig, LambdaNMode, Method};
use crate::config::config_hash;
use crate::data::{make_domain_pair, sample_episode, Dataset, DomainPair};
use crate::error::{Error, Result};
use crate::model::SourceModel;
use crate::rng::derive_seed;

/// Synthetic domains plus the model trained on the source side.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub pair: DomainPair,
    pub pretrained: Pretrained,
}

/// Builds the domain pair and pretrains the source model.
pub fn prepare(config: &ExperimentConfig) -> Result<Benchmark> {
    config.validate()?;
    let pair = make_domain_pair(&config.domain, derive_seed(config.seed, "domain", 0))?;
    let pretrained = pretrain_source(&pair.source_data, &config.pretrain, derive_seed(config.seed, "pretrain", 0))?;
    Ok(Benchmark { pair, pretrained })
}

/// Per-episode accuracies of one configuration and their summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    /// Method name, or the λ_N mode name in a λ_N study.
    pub tag: String,
    pub episodes: usize,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub accuracies: Vec<f64>,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub trajectories: Vec<Vec<EpochLog>>,
}

/// Mean and `1.96·s/√n` with the sample standard deviation `s`; the
/// half-width is 0 for a single value.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

fn run_one(model: &SourceModel, pool: &Dataset, config: &ExperimentConfig, e: usize) -> Result<(f64, Vec<EpochLog>)> {
    let episode = sample_episode(
        pool,
        config.way,
        config.shot,
        config.queries,
        derive_seed(config.seed, "episode", e as u64),
    )?;
    let mut adapt = config.adapt.clone();
    adapt.seed = derive_seed(config.seed, "adapt", e as u64);
    let out = adapt_episode(model, episode.task(), &adapt)
        .map_err(|err| match err {
            Error::NumericalAbort(msg) => Error::NumericalAbort(format!("episode {e}: {msg}")),
            other => other,
        })?;
    Ok((evaluate(&out.model, &episode)?, out.trajectory))
}

/// Runs `config.episodes` episodes drawn from the target `pool`.
///
/// Episode `e` uses seeds derived from `(config.seed, e)` only, so two
/// configurations that differ in method or loss settings see the same
/// episodes and the same classifier initializations. With `jobs > 1`
/// episodes run on a thread pool; results are collected in episode order.
pub fn run_experiment(model: &SourceModel, pool: &Dataset, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let results: Vec<(f64, Vec<EpochLog>)> = if config.jobs > 1 {
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        threads.install(|| {
            (0..config.episodes)
                .into_par_iter()
                .map(|e| run_one(model, pool, config, e))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..config.episodes)
            .map(|e| run_one(model, pool, config, e))
            .collect::<Result<Vec<_>>>()?
    };
    let (accuracies, trajectories): (Vec<f64>, Vec<Vec<EpochLog>>) = results.into_iter().unzip();
    let (mean, ci95) = summarize(&accuracies);
    Ok(RunReport {
        tag: config.adapt.method.name().to_string(),
        episodes: config.episodes,
        mean,
        ci95,
        accuracies,
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(config),
        config: config.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        trajectories,
    })
}

/// Episode-paired difference `b − a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub a: String,
    pub b: String,
    pub mean: f64,
    pub ci95: f64,
}

/// Rows of several configurations over the same episodes, with every
/// pairwise difference.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<RunReport>,
    pub deltas: Vec<PairedDelta>,
}

impl ComparisonTable {
    fn from_rows(rows: Vec<RunReport>) -> Self {
        let mut deltas = Vec::new();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let diff: Vec<f64> = rows[j]
                    .accuracies
                    .iter()
                    .zip(&rows[i].accuracies)
                    .map(|(b, a)| b - a)
                    .collect();
                let (mean, ci95) = summarize(&diff);
                deltas.push(PairedDelta {
                    a: rows[i].tag.clone(),
                    b: rows[j].tag.clone(),
                    mean,
                    ci95,
                });
            }
        }
        Self { rows, deltas }
    }

    pub fn row(&self, tag: &str) -> Option<&RunReport> {
        self.rows.iter().find(|r| r.tag == tag)
    }

    pub fn delta(&self, a: &str, b: &str) -> Option<&PairedDelta> {
        self.deltas.iter().find(|d| d.a == a && d.b == b)
    }
}

/// One row per method on paired episodes.
pub fn run_ablation(model: &SourceModel, pool: &Dataset, config: &ExperimentConfig, methods: &[Method]) -> Result<ComparisonTable> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one method".into()));
    }
    let rows = methods
        .iter()
        .map(|&m| {
            let mut c = config.clone();
            c.adapt.method = m;
            run_experiment(model, pool, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable::from_rows(rows))
}

/// The full method under each λ_N mode, on paired episodes.
pub fn lambda_study(model: &SourceModel, pool: &Dataset, config: &ExperimentConfig) -> Result<ComparisonTable> {
    let rows = LambdaNMode::ALL
        .iter()
        .map(|&mode| {
            let mut c = config.clone();
            c.adapt.method = Method::ImDcl;
            c.adapt.lambda_n_mode = mode;
            let mut r = run_experiment(model, pool, &c)?;
            r.tag = mode.name().to_string();
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainConfig;
    use crate::pipeline::PretrainConfig;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            episodes: 3,
            queries: 5,
            domain: DomainConfig {
                source_classes: 6,
                target_classes: 6,
                source_samples_per_class: 30,
                target_samples_per_class: 10,
                ..DomainConfig::default()
            },
            pretrain: PretrainConfig {
                epochs: 5,
                ..PretrainConfig::default()
            },
            ..ExperimentConfig::default()
        };
        c.adapt.epochs = 5;
        c
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(summarize(&[0.4]), (0.4, 0.0));
        let (m, ci) = summarize(&[0.2, 0.4, 0.6]);
        assert!((m - 0.4).abs() < 1e-15);
        assert!((ci - 1.96 * 0.2 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_episode_has_zero_interval() {
        let mut c = small();
        c.episodes = 1;
        let b = prepare(&c).unwrap();
        let r = run_experiment(&b.pretrained.model, &b.pair.target_pool, &c).unwrap();
        assert_eq!(r.ci95, 0.0);
        assert_eq!(r.accuracies.len(), 1);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let c = small();
        let b = prepare(&c).unwrap();
        let r1 = run_experiment(&b.pretrained.model, &b.pair.target_pool, &c).unwrap();
        let r2 = run_experiment(&b.pretrained.model, &b.pair.target_pool, &c).unwrap();
        assert_eq!(r1.accuracies, r2.accuracies);
        assert_eq!(r1.trajectories, r2.trajectories);
        let mut par = c.clone();
        par.jobs = 3;
        let r3 = run_experiment(&b.pretrained.model, &b.pair.target_pool, &par).unwrap();
        assert_eq!(r1.accuracies, r3.accuracies);
    }

    #[test]
    fn ablation_rows_are_paired() {
        let c = small();
        let b = prepare(&c).unwrap();
        let model = &b.pretrained.model;
        let pool = &b.pair.target_pool;
        let t = run_ablation(model, pool, &c, &Method::ALL).unwrap();
        assert_eq!(t.rows.len(), 5);
        assert_eq!(t.deltas.len(), 10);
        let single = run_ablation(model, pool, &c, &[Method::FineTune]).unwrap();
        let mut ft = c.clone();
        ft.adapt.method = Method::FineTune;
        let direct = run_experiment(model, pool, &ft).unwrap();
        assert_eq!(single.rows[0].accuracies, direct.accuracies);
        assert_eq!(single.rows[0].accuracies, t.row("FineTune").unwrap().accuracies);
        let d = t.delta("FineTune", "IM").unwrap();
        let im = t.row("IM").unwrap();
        assert!((d.mean - (im.mean - direct.mean)).abs() < 1e-12);
    }

    #[test]
    fn lambda_study_tags() {
        let c = small();
        let b = prepare(&c).unwrap();
        let t = lambda_study(&b.pretrained.model, &b.pair.target_pool, &c).unwrap();
        let tags: Vec<&str> = t.rows.iter().map(|r| r.tag.as_str()).collect();
        assert_eq!(tags, ["FixedMin", "FixedMax", "Variable"]);
    }
}
