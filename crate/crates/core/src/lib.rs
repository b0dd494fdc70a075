pub mod app;
pub mod config;
pub mod error;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
