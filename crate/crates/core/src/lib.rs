//! Group activity recognition with concretized knowledge maps.
//!
//! The library turns per-scene action annotations into two frozen statistics
//! — a class-class co-occurrence map and a class-position distribution map —
//! and injects them as additive biases into the attention weights of a small
//! transformer stack. A seeded synthetic scene generator, a training loop
//! and an ablation harness make the whole pipeline reproducible on one core.
//!
//! The numeric core is generic over the scalar type ([`scalar::Scalar`],
//! `f32` or `f64`); the aliases at the crate root fix `f64`, which is what
//! the harness and CLI use.

pub mod cli;
pub mod knowledge;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub(crate) mod ser;

pub use scalar::Scalar;

/// Double-precision tensor used by the training harness.
pub type Tensor = tensor::Tensor<f64>;
/// Double-precision parameter set.
pub type ParamSet = tensor::ParamSet<f64>;
/// Double-precision class-class co-occurrence map.
pub type CcMap = knowledge::CcMap<f64>;
/// Double-precision class-position distribution map.
pub type CpMap = knowledge::CpMap<f64>;
/// Double-precision model state.
pub type ModelState = model::ModelState<f64>;
/// Double-precision scene sample.
pub type SceneSample = model::SceneSample<f64>;
/// Double-precision predictions.
pub type Predictions = model::Predictions<f64>;
