//! Event-driven-type design and blinded variance monitoring for
//! recurrent-event trials analysed with the marginal rates model.

// `!(x > 0.0)` is used on purpose throughout: unlike `x <= 0.0` it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod counting;
pub mod design;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod monitor;
pub mod normal;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
