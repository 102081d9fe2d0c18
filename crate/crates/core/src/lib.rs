//! Frame-sequence classification with a cellular-automata impulse filter,
//! the CPWT texture descriptor, grey wolf feature selection and a small CNN.
//!
//! Modules follow the pipeline order: [`frameio`] → [`preprocess`] →
//! [`cpwt`] → [`gwo`] → [`cnn`] → [`metrics`], orchestrated by [`pipeline`].

pub mod cnn;
pub mod cpwt;
pub mod error;
pub mod exec;
pub mod frame;
pub mod frameio;
pub mod gwo;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use exec::Execution;
pub use frame::Frame;
