//! Parameters, forward sessions and the basic layers every branch is built from.

mod layers;
pub(crate) mod params;
mod session;

pub use layers::{BatchNorm2d, Conv2d, LayerNorm, Linear, BN_EPS, BN_MOMENTUM};
pub use params::{ParamBuilder, ParamEntry, ParamId, ParamKind, ParamStore};
pub use session::{Mode, Session};
