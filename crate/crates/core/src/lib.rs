pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod train;

pub use candle_core as candle;
pub use error::{Error, Result};
pub use exec::ExecMode;

/// Image in `(channels, height, width)` layout.
pub type Image = ndarray::Array3<f64>;
