//! Budget-constrained bidding in repeated contextual first-price auctions
//! with one-sided feedback.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod sim;
