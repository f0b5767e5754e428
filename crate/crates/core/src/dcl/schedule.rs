use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epoch-dependent weight of the repulsive term, `(1 + 10·h/H)^−5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LambdaNSchedule {
    total_epochs: usize,
}

impl LambdaNSchedule {
    pub fn new(total_epochs: usize) -> Result<Self> {
        if total_epochs == 0 {
            return Err(Error::InvalidArgument(
                "lambda_N schedule needs at least one epoch".into(),
            ));
        }
        Ok(Self { total_epochs })
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn value(&self, epoch: usize) -> Result<f64> {
        if epoch > self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} beyond schedule length {}",
                self.total_epochs
            )));
        }
        Ok((1.0 + 10.0 * epoch as f64 / self.total_epochs as f64).powi(-5))
    }

    /// Value at `h = 0`.
    pub fn max(&self) -> f64 {
        1.0
    }

    /// Value at `h = H`.
    pub fn min(&self) -> f64 {
        11f64.powi(-5)
    }
}
