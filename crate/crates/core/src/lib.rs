//! Scaled spatial guidance for next-scale generation.
//!
//! The crate covers the full desk-scale loop: a multi-scale residual
//! quantizer ([`codec`]), frequency-domain prior construction ([`dse`]) on top
//! of orthonormal DCTs ([`spectral`]), the guided logit update and its
//! surrogate objective ([`guidance`]), a seeded generation pipeline driven by
//! a corrupted teacher oracle ([`pipeline`]) and spectral / latency
//! diagnostics ([`analysis`]).
//!
//! Data-parallel loops go through [`Exec`]; build without the default
//! `parallel` feature for a purely sequential library.

pub mod analysis;
pub mod codec;
pub mod dse;
pub mod error;
pub mod exec;
pub mod grids;
pub mod guidance;
mod linalg;
pub mod pipeline;
pub mod spectral;

pub use error::{Error, Result};
pub use exec::Exec;
pub use grids::{Grid2D, Grid3D, TokenMap};
