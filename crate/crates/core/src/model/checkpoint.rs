//! JSON model checkpoints.
//!
//! Layout (version 1):
//!
//! ```json
//! {
//!   "format": "imdcl-checkpoint",
//!   "version": 1,
//!   "dims": { "input_dim": 16, "hidden": [64, 64], "feature_dim": 32, "num_classes": 20 },
//!   "encoder_frozen": false,
//!   "encoder": [ { "weight": { "rows": 16, "cols": 64, "data": [...] },
//!                  "bias":   { "rows": 1,  "cols": 64, "data": [...] } }, ... ],
//!   "classifier": { "weight": {...}, "bias": {...} }
//! }
//! ```
//!
//! Matrices are row-major. Floats are written with shortest round-trip
//! formatting, so a save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Linear, ModelDims, SourceModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "imdcl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    dims: ModelDims,
    encoder_frozen: bool,
    encoder: Vec<Linear>,
    classifier: Linear,
}

pub fn save_checkpoint(model: &SourceModel, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dims: model.dims(),
        encoder_frozen: model.encoder_frozen,
        encoder: model.encoder.clone(),
        classifier: model.classifier.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SourceModel> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    let model = SourceModel::from_parts(file.encoder, file.classifier, file.encoder_frozen)?;
    if model.dims() != file.dims {
        return Err(Error::dim(
            "checkpoint",
            format!("header {:?} disagrees with layers {:?}", file.dims, model.dims()),
        ));
    }
    Ok(model)
}
