//! Simulation toolkit for perceptual-hashing-based client-side image
//! scanning (CSIS) and its physical-surveillance risk.
//!
//! The crate models the full attack pipeline against a hash-matching
//! content scanner: profiling a target scene, selecting an optimal set of
//! poison hashes with k-modes clustering, crafting delivery images whose
//! hashes collide with the poisons, injecting them into the hash database,
//! and measuring surveillance rate, false-positive rate, and detection
//! trade-offs across thresholds and budgets.
//!
//! Start with [`hash`] for the hash functions, [`matcher`] for the scanner
//! core, [`poison`] for poison-set selection, [`attack`] for collision
//! crafting, and [`eval`] for the metric sweeps. The `book/` directory of
//! the repository walks through each concept with runnable examples.

pub mod attack;
pub mod eval;
pub mod hash;
pub mod img;
pub mod matcher;
pub mod pipeline;
pub mod poison;
pub mod scene;
pub mod seeds;

pub use hash::{DistanceMetric, HashFunctionSpec, PerceptualHash};
pub use img::LumaImage;

#[cfg(doctest)]
mod book_doctests;
