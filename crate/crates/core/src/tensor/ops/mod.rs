pub(crate) mod conv;
pub(crate) mod linalg;
pub(crate) mod norm;
pub(crate) mod pointwise;
pub(crate) mod resize;

pub use conv::{ConvSpec, Padding};
pub use norm::{BN_EPS, BN_MOMENTUM};
pub use pointwise::{Activation, ELU_ALPHA};
