//! Dense linear algebra, reverse-mode differentiation and gradient checking.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use graph::{sigmoid, Graph, Var, LOG_CLAMP};
pub use matrix::Matrix;
