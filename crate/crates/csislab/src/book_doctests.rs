//! Runs every code snippet in the book as a doctest, keeping the guide in
//! sync with the library. Each chapter becomes one module so failures
//! point at their chapter.

#[doc = include_str!("../../../book/src/hashing.md")]
mod hashing {}

#[doc = include_str!("../../../book/src/matching.md")]
mod matching {}

#[doc = include_str!("../../../book/src/poisoning.md")]
mod poisoning {}

#[doc = include_str!("../../../book/src/collisions.md")]
mod collisions {}

#[doc = include_str!("../../../book/src/scenes.md")]
mod scenes {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}
