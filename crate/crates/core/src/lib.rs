//! Continuous latent dynamics over EEG spectral graphs: feature extraction,
//! correlation graphs, sequence encoders, a gated neural ODE, graph
//! forecasting and downstream classification.

pub mod autodiff;
pub mod encoders;
pub mod error;
pub mod forecaster;
pub mod graph;
pub mod init;
pub mod ode;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
