//! Minimal tensor network toolkit: kernels, parameters, Adam, and a
//! layer tape for reverse-mode gradients.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;

pub use layers::{Layer, LayerSpec, Mode};
pub use ops::{Padding, PoolMode};
pub use params::{Adam, GradBuffer, ParamStore, Parameter};
