// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod disturbance;
pub mod environment;
pub mod harness;
pub mod mimo_signal;
pub mod par;
pub mod policies;
pub mod pomcp;
