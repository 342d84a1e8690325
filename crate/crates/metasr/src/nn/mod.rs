//! Minimal differentiable-computation substrate.
//!
//! Everything the network modules need: [`Tensor`] storage, a tape-based
//! [`Graph`] with conv/dense/batch-norm/activation ops and reverse-mode
//! [`Graph::backward`], Kaiming initialization, [`Adam`], and the `MSRG`
//! checkpoint format behind [`ParameterStore`].
//!
//! Compute is `f32` by default; every op is also instantiated for `f64`,
//! which the verification suites use for finite-difference checks.

mod adam;
pub mod checkpoint;
mod conv;
mod element;
mod error;
mod graph;
mod init;
mod store;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use element::Element;
pub use error::{CheckpointError, NnError};
pub use graph::{Bound, CustomOp, Graph, TensorId, BN_EPS, BN_MOMENTUM};
pub use init::Initializer;
pub use store::ParameterStore;
pub use tensor::Tensor;
