//! AFM-Net: a dual-branch (ResNet + selective-scan Mamba) scene classifier with dense
//! dual-attention multi-scale fusion and a mixture-of-experts head, built on a small
//! reverse-mode tensor engine.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tensor};
