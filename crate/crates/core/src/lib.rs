pub mod analysis;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod labels;
pub mod levels;
pub mod logs;
pub mod model;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
