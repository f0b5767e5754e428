//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # near regime
//! [run]
//! seed = 7
//! episodes = 200
//!
//! [adapt]
//! method = IM_DCL
//! lambda_n_mode = Variable
//! ```
//!
//! Every key has exactly one home section. Keys may also appear before the
//! first header. Blank lines and lines starting with `#` or `;` are ignored.
//! Overrides use the same `key=value` form, optionally written
//! `section.key=value`. [`to_text`] renders a complete file that parses back
//! to the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dcl::{DclMode, WeightScheme, LOGISTIC_INIT_K, LOGISTIC_INIT_X0};
use crate::error::{Error, Result};
use crate::pipeline::{ExperimentConfig, LambdaNMode, Method};

const SECTIONS: [(&str, &[&str]); 4] = [
    ("run", &["seed", "way", "shot", "queries", "episodes", "jobs"]),
    (
        "domain",
        &[
            "input_dim",
            "source_classes",
            "target_classes",
            "source_samples_per_class",
            "target_samples_per_class",
            "class_cov_scale",
            "mean_scale",
            "shift_severity",
        ],
    ),
    (
        "pretrain",
        &[
            "hidden",
            "feature_dim",
            "pretrain_epochs",
            "batch_size",
            "pretrain_lr",
            "pretrain_momentum",
            "pretrain_weight_decay",
        ],
    ),
    (
        "adapt",
        &[
            "method",
            "epochs",
            "lr",
            "momentum",
            "weight_decay",
            "lambda_div",
            "lambda_im",
            "lambda_dcl",
            "scheme",
            "logistic_k",
            "logistic_x0",
            "lambda_n_mode",
            "dcl_mode",
            "top_k",
            "support_boost",
            "encoder_frozen",
            "augment",
            "augment_sigma",
        ],
    ),
];

fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS
        .iter()
        .find(|(_, keys)| keys.contains(&key))
        .map(|(s, _)| *s)
}

fn scheme_name(s: &WeightScheme) -> &'static str {
    match s {
        WeightScheme::ReverseOrder => "reverse_order",
        WeightScheme::Opposite => "opposite",
        WeightScheme::NonlinearLogistic { .. } => "logistic",
    }
}

/// Every key with its value rendered as text.
fn to_pairs(c: &ExperimentConfig) -> BTreeMap<&'static str, String> {
    let a = &c.adapt;
    let (k, x0) = match a.scheme {
        WeightScheme::NonlinearLogistic { k, x0 } => (k, x0),
        _ => (LOGISTIC_INIT_K, LOGISTIC_INIT_X0),
    };
    let (dcl_mode, top_k, boost) = match a.dcl_mode {
        DclMode::TopK { k, sigma } => ("topk", k, sigma),
        DclMode::Full | DclMode::HardSplit { .. } => ("full", a.top_k, 2.0),
    };
    let hidden = c
        .pretrain
        .hidden
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let f = |v: f64| format!("{v:?}");
    BTreeMap::from([
        ("seed", c.seed.to_string()),
        ("way", c.way.to_string()),
        ("shot", c.shot.to_string()),
        ("queries", c.queries.to_string()),
        ("episodes", c.episodes.to_string()),
        ("jobs", c.jobs.to_string()),
        ("input_dim", c.domain.input_dim.to_string()),
        ("source_classes", c.domain.source_classes.to_string()),
        ("target_classes", c.domain.target_classes.to_string()),
        ("source_samples_per_class", c.domain.source_samples_per_class.to_string()),
        ("target_samples_per_class", c.domain.target_samples_per_class.to_string()),
        ("class_cov_scale", f(c.domain.class_cov_scale)),
        ("mean_scale", f(c.domain.mean_scale)),
        ("shift_severity", f(c.domain.shift_severity)),
        ("hidden", hidden),
        ("feature_dim", c.pretrain.feature_dim.to_string()),
        ("pretrain_epochs", c.pretrain.epochs.to_string()),
        ("batch_size", c.pretrain.batch_size.to_string()),
        ("pretrain_lr", f(c.pretrain.lr)),
        ("pretrain_momentum", f(c.pretrain.momentum)),
        ("pretrain_weight_decay", f(c.pretrain.weight_decay)),
        ("method", a.method.name().to_string()),
        ("epochs", a.epochs.to_string()),
        ("lr", f(a.sgd.lr)),
        ("momentum", f(a.sgd.momentum)),
        ("weight_decay", f(a.sgd.weight_decay)),
        ("lambda_div", f(a.loss.lambda_div)),
        ("lambda_im", f(a.loss.lambda_im)),
        ("lambda_dcl", f(a.loss.lambda_dcl)),
        ("scheme", scheme_name(&a.scheme).to_string()),
        ("logistic_k", f(k)),
        ("logistic_x0", f(x0)),
        ("lambda_n_mode", a.lambda_n_mode.name().to_string()),
        ("dcl_mode", dcl_mode.to_string()),
        ("top_k", top_k.to_string()),
        ("support_boost", f(boost)),
        ("encoder_frozen", a.encoder_frozen.to_string()),
        ("augment", a.augment.to_string()),
        ("augment_sigma", f(a.augment_sigma)),
    ])
}

fn invalid(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for key `{key}`: expected {expected}"))
}

fn from_pairs(p: &BTreeMap<&'static str, String>) -> Result<ExperimentConfig> {
    let get = |k: &str| p.get(k).map(String::as_str).unwrap_or_default();
    let uint = |k: &str| -> Result<usize> {
        get(k).parse().map_err(|_| invalid(k, get(k), "a non-negative integer"))
    };
    let real = |k: &str| -> Result<f64> {
        get(k)
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| invalid(k, get(k), "a finite number"))
    };
    let flag = |k: &str| -> Result<bool> {
        match get(k).to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            _ => Err(invalid(k, get(k), "true or false")),
        }
    };

    let mut c = ExperimentConfig {
        seed: get("seed").parse().map_err(|_| invalid("seed", get("seed"), "a 64-bit unsigned integer"))?,
        way: uint("way")?,
        shot: uint("shot")?,
        queries: uint("queries")?,
        episodes: uint("episodes")?,
        jobs: uint("jobs")?,
        ..ExperimentConfig::default()
    };
    let d = &mut c.domain;
    d.input_dim = uint("input_dim")?;
    d.source_classes = uint("source_classes")?;
    d.target_classes = uint("target_classes")?;
    d.source_samples_per_class = uint("source_samples_per_class")?;
    d.target_samples_per_class = uint("target_samples_per_class")?;
    d.class_cov_scale = real("class_cov_scale")?;
    d.mean_scale = real("mean_scale")?;
    d.shift_severity = real("shift_severity")?;

    let pt = &mut c.pretrain;
    let hidden = get("hidden").trim();
    pt.hidden = if hidden.is_empty() {
        Vec::new()
    } else {
        hidden
            .split(',')
            .map(|h| h.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| invalid("hidden", hidden, "comma-separated layer widths"))?
    };
    pt.feature_dim = uint("feature_dim")?;
    pt.epochs = uint("pretrain_epochs")?;
    pt.batch_size = uint("batch_size")?;
    pt.lr = real("pretrain_lr")?;
    pt.momentum = real("pretrain_momentum")?;
    pt.weight_decay = real("pretrain_weight_decay")?;

    let a = &mut c.adapt;
    a.method = Method::parse(get("method")).map_err(|_| {
        invalid("method", get("method"), "FineTune, SIM, IM, IM_DCL_Unweighted or IM_DCL")
    })?;
    a.epochs = uint("epochs")?;
    a.sgd.lr = real("lr")?;
    a.sgd.momentum = real("momentum")?;
    a.sgd.weight_decay = real("weight_decay")?;
    a.loss.lambda_div = real("lambda_div")?;
    a.loss.lambda_im = real("lambda_im")?;
    a.loss.lambda_dcl = real("lambda_dcl")?;
    a.scheme = match get("scheme").to_ascii_lowercase().as_str() {
        "reverse_order" | "reverseorder" => WeightScheme::ReverseOrder,
        "opposite" => WeightScheme::Opposite,
        "logistic" | "nonlinearlogistic" => WeightScheme::NonlinearLogistic {
            k: real("logistic_k")?,
            x0: real("logistic_x0")?,
        },
        _ => return Err(invalid("scheme", get("scheme"), "reverse_order, opposite or logistic")),
    };
    a.lambda_n_mode = LambdaNMode::parse(get("lambda_n_mode"))
        .map_err(|_| invalid("lambda_n_mode", get("lambda_n_mode"), "Variable, FixedMin or FixedMax"))?;
    a.top_k = uint("top_k")?;
    a.dcl_mode = match get("dcl_mode").to_ascii_lowercase().as_str() {
        "full" => DclMode::Full,
        "topk" | "top_k" => DclMode::TopK {
            k: a.top_k,
            sigma: real("support_boost")?,
        },
        _ => return Err(invalid("dcl_mode", get("dcl_mode"), "full or topk")),
    };
    // validated even when unused so typos surface
    real("support_boost")?;
    real("logistic_k")?;
    real("logistic_x0")?;
    a.encoder_frozen = flag("encoder_frozen")?;
    a.augment = flag("augment")?;
    a.augment_sigma = real("augment_sigma")?;
    c.validate()?;
    Ok(c)
}

/// Resolves `key` or `section.key` to its canonical name.
fn resolve_key(raw: &str) -> Result<&'static str> {
    let (section, key) = match raw.split_once('.') {
        Some((s, k)) => (Some(s.trim()), k.trim()),
        None => (None, raw.trim()),
    };
    let home = section_of(key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    if let Some(s) = section {
        if s != home {
            return Err(Error::Config(format!("key `{key}` belongs to [{home}], not [{s}]")));
        }
    }
    let canonical = SECTIONS
        .iter()
        .flat_map(|(_, keys)| keys.iter())
        .find(|k| **k == key)
        .expect("known key");
    Ok(canonical)
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

/// Parses configuration text over the defaults, then applies `overrides`
/// (each `key=value`) in order.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut pairs = to_pairs(&ExperimentConfig::default());
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?
                .trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Config(format!("line {line_no}: unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = split_assignment(line)
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
        let full = match &section {
            Some(s) => format!("{s}.{key}"),
            None => key.to_string(),
        };
        let canonical = resolve_key(&full).map_err(|e| Error::Config(format!("line {line_no}: {}", strip(e))))?;
        pairs.insert(canonical, value.to_string());
    }
    for o in overrides {
        let (key, value) = split_assignment(o)
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let canonical = resolve_key(key).map_err(|e| Error::Config(format!("override: {}", strip(e))))?;
        pairs.insert(canonical, value.to_string());
    }
    from_pairs(&pairs)
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, overrides)
}

/// The complete configuration as parseable text, one section per block.
pub fn to_text(config: &ExperimentConfig) -> String {
    let pairs = to_pairs(config);
    let mut out = String::new();
    for (i, (section, keys)) in SECTIONS.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{section}]");
        for k in keys.iter() {
            let _ = writeln!(out, "{k} = {}", pairs[k]);
        }
    }
    out
}

/// SHA-256 of [`to_text`], hex encoded.
pub fn config_hash(config: &ExperimentConfig) -> String {
    Sha256::digest(to_text(config).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
