//! Model-based learning for linear contextual MDPs on finite instances.
//!
//! Every instance is small enough that optimal values, occupancy measures and
//! total-variation errors are computed exactly by dynamic programming, which
//! lets the learning loops be checked against their guarantees directly.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Dense index loops mirror the matrix/tensor formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod agents;
pub mod bonuses;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod planner;
pub mod tabular;

pub use error::{CmdpError, Result};
