pub mod checks;
pub mod config;
pub mod data;
pub mod dcl;
pub mod error;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
