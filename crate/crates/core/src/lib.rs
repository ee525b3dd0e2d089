//! Latent class choice models and posterior-inference tooling: estimation,
//! posterior membership, class profiling, fractional multinomial logit,
//! exploratory factor analysis and a synthetic data generator.

pub mod compare;
pub mod dataset;
pub mod efa;
pub mod error;
pub mod fmnl;
pub mod kernels;
pub mod lccm;
pub mod linalg;
pub mod optim;
pub mod posterior;
pub mod report;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
