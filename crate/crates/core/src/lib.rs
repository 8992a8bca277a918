#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod cli;
pub mod mbsde;
pub mod monotone_ops;
pub mod scenario;
pub mod verification;
