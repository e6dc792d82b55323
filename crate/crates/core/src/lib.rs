//! Repulsive particle ensembles for small neural networks.
//!
//! A [`particles::ParticleSet`] holds several networks (full copies, or heads
//! on a shared base). [`engine::train`] moves them toward high posterior
//! density while a kernel pushes them apart, either in parameter space or in
//! the space of their predictions. The trained set feeds the uncertainty
//! decomposition in [`uncertainty`] and the scoring rules in [`metrics`].

// `!(x > 0.0)` guards deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod data;
pub mod engine;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod particles;
pub mod repulsion;
pub mod tasks;
pub mod uncertainty;

pub use error::{Error, Result};
