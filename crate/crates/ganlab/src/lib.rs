//! ganlab: a laboratory for experimenting with GAN generator losses.
//!
//! The crate provides a small reverse-mode autodiff engine, MLP networks with
//! Adam, the classic GAN discriminator objectives (cross-entropy,
//! least-squares, Wasserstein with gradient penalty) together with a family of
//! generator losses that match discriminator outputs or labels pointwise or in
//! expectation, an exact-enumeration module that checks which of those losses
//! are divergences on discrete distributions, and a deterministic trainer and
//! experiment grid for 2D swiss-roll benchmarks scored by a two-directional
//! nearest-neighbour metric.

pub mod autodiff;
pub mod error;

pub use error::{AutodiffError, ConfigError, GanlabError, NetsError};
