#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bitstream;
pub mod claw;
pub mod codec;
pub mod estimator;
pub mod gauge;
pub mod metric;
pub mod variation;
pub mod witness;
