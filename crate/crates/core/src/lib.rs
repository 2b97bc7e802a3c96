//! Subspace optimisation with pluggable eviction policies.
//!
//! The engine minimises `f` over a sequence of low-dimensional affine
//! subspaces spanned by stored steps, the current gradient and (optionally)
//! the two ORTH directions. When the step memory is full, an
//! [`EvictionPolicy`](policy::EvictionPolicy) picks the stored step to drop.
//! Policies range from FIFO through the rule-based smallest-|α| rule to a
//! small MLP trained with REINFORCE.
//!
//! All numerics are generic over [`Scalar`] (f32 or f64); the `*64` aliases
//! below fix the scalar to f64, which is what the benchmarks use.

pub mod engine;
pub mod inner;
pub mod linalg;
pub mod objectives;
pub mod oracle;
pub mod policy;
mod scalar;
pub mod train;

pub use scalar::Scalar;

pub type Vector64 = linalg::Vector<f64>;
pub type Vector32 = linalg::Vector<f32>;
pub type BfgsConfig64 = inner::BfgsConfig<f64>;
pub type EngineConfig64 = engine::EngineConfig<f64>;
pub type RunTrace64 = engine::RunTrace<f64>;
pub type MetaPolicy64 = policy::MetaPolicy<f64>;
pub type TrainConfig64 = train::TrainConfig<f64>;
