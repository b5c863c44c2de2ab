//! Session-based job recommendation: pLSA topic features, K-Means grouping,
//! hypergraph wavelet filtering and an RNN fusion head.

pub mod binfmt;
pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod hypergraph;
pub mod model;
pub mod par;
pub mod personalize;
pub mod pipeline;
pub mod recsys;
pub mod sparse;
pub mod spectral;
pub mod sweep;
pub mod synthgen;
pub mod topics;
pub mod wavenet;

pub use config::RunConfig;
pub use data::Dataset;
pub use error::{Error, Result};
