//! Asynchronous distributed bilevel optimization (ADBO) with cutting-plane
//! relaxation of the lower-level problem, its synchronous counterpart
//! (SDBO), a centralized variant (CPBO), and a deterministic event-driven
//! simulator of the parameter-server system they run on.

// Negated comparisons are how NaN parameters get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cpbo;
pub mod cutplane;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod lower_level;
pub mod problems;
pub mod saddle;

pub use error::{Error, Result};
