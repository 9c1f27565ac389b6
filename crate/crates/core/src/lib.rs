//! Speaker-disentangled metric learning at desk scale.
//!
//! The crate bundles the pieces needed to train and evaluate source
//! verification embeddings with speaker disentanglement:
//!
//! - [`hyperbolic`]: Poincaré-ball geometry with analytic derivatives.
//! - [`chebyshev`]: polynomial margin approximation with bounded gradients.
//! - [`losses`]: AAM-Softmax, ChebyAAM, ChebySD-AAM, HAM-Softmax and
//!   RiemannSD-AAM, forward values and exact gradients.
//! - [`gradcheck`]: finite-difference verification of those gradients.
//! - [`synthdata`]: a synthetic corpus with a controllable source/speaker
//!   entanglement dial and a frozen speaker-embedding oracle.
//! - [`trainer`]: deterministic Adam training of a small encoder.
//! - [`protocol`]: balanced verification trial lists (P-I..P-IV) built on
//!   pseudo-speaker clusters.
//! - [`evalkit`]: cosine scoring, EER/AUC, bootstrap intervals and the
//!   cross-task table.
//! - [`pipeline`]: the end-to-end commands behind the `sdml` binary.

pub mod chebyshev;
pub mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod hyperbolic;
pub mod losses;
pub mod protocol;
pub mod synthdata;
pub mod util;

pub use error::{Error, Result};
