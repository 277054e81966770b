//! Source localization for graph diffusion with a variational generative
//! prior over source sets and a learned forward model.

pub mod bundle;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod forward;
pub mod graph;
pub mod inference;
pub mod numerics;
pub mod par;
pub mod seed;
pub mod vae;

pub use error::{Error, Result};
pub use graph::Graph;
