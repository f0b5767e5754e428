//! Distance-aware contrastive learning.
//!
//! Every target sample serves as an anchor. All other samples in the memory
//! bank form both its positive and its negative set; they differ only in the
//! soft weights attached to each member. Positive weights follow the cosine
//! similarity of the frozen features to the anchor's feature, shifted to
//! `[0, 1]` and divided by their mean. Negative weights invert the positive
//! ones by one of three [`WeightScheme`]s.
//!
//! The objective ([`dcl_loss`]) is the bilinear bound
//!
//! ```text
//! −(1/m) Σ_t Σ_{i≠t} w⁺_ti · p_t·p_i  +  (λ_N/m) Σ_t Σ_{i≠t} w⁻_ti · p_t·p_i
//! ```
//!
//! where `p_t` carries gradients and `p_i` comes from the bank. The exact
//! likelihood ratio it bounds is available as [`dcl_exact_nll`] for
//! validation.

mod bank;
mod exact;
mod loss;
mod schedule;
mod weights;

pub use bank::{MemoryBank, Origin};
pub use exact::dcl_exact_nll;
pub use loss::{dcl_loss, LogisticVars};
pub use schedule::LambdaNSchedule;
pub use weights::{
    anchor_weights, build_weights, cosine_sim, negative_weights, positive_weights, AnchorWeights,
    ContrastiveWeights, DclMode, WeightScheme, LOGISTIC_INIT_K, LOGISTIC_INIT_X0,
};
