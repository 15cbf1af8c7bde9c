//! Forward and backward numeric kernels. Pure functions over [`Tensor`](super::Tensor) values;
//! the graph in [`crate::autodiff`] decides which of them to call.

pub mod broadcast;
pub mod conv;
pub mod interp;
pub mod norm;
pub mod pool;
pub mod scan;
pub mod shape;
pub mod softmax;
