//! Hierarchical co-embedding of font style features and impression tag sets
//! in the Lorentz model of hyperbolic space.
//!
//! Fonts and tag sets are encoded as tangent vectors at the origin and
//! mapped onto the hyperboloid. Training combines a bidirectional
//! distance-based contrastive objective with entailment-cone penalties, so
//! that broad descriptions sit near the origin and specific ones farther out.

pub mod analysis;
pub mod autodiff;
pub mod cones;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod manifold;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
