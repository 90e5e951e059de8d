//! Exit problems for small-noise diffusions near a hyperbolic saddle in the plane.

// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod flow;
pub mod limit_laws;
pub mod linalg;
pub mod mixture;
pub mod normal_form;
pub mod parallel;
pub mod poly;
pub mod quad;
pub mod resonance;
pub mod sde;
pub mod stats;
pub mod system;
pub mod system_file;

pub use error::{Error, Result};
