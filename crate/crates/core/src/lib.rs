//! Deeply supervised salient object detection with short connections.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`ops`], [`graph`], [`params`]: a small NCHW tensor engine
//!   with reverse-mode differentiation, SGD and checkpoints, generic over
//!   [`Scalar`] (`f32` in production, `f64` for gradient checks).
//! * [`net`]: VGG-style backbone, six side-output heads, short connections
//!   between side outputs, the deeply supervised loss and training loop.
//! * [`crf`]: fully connected CRF refinement by mean-field inference.
//! * [`metrics`]: precision/recall curves, Fβ, max-F and MAE.
//! * [`data`]: PGM/PPM codec, samples, synthetic scenes and manifests.

pub mod crf;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;

/// Production precision.
pub type Real = f32;
pub type Tensor = tensor::Tensor<Real>;
pub type Graph = graph::Graph<Real>;
pub type ParamStore = params::ParamStore<Real>;
pub type Network = net::Network<Real>;
pub type SideActivations = net::SideActivations<Real>;

/// Double-precision instantiations for finite-difference checks.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Network64 = net::Network<f64>;
