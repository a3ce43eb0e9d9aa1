//! Difficulty-aware preference optimization for reading-order detection.

pub mod autodiff;
pub mod bins;
pub mod corpus;
pub mod error;
pub mod fpo;
pub mod layout;
pub mod metrics;
pub mod model;
pub mod report;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
