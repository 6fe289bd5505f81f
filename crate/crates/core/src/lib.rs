// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod ci;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod reduce;
pub mod regress;
pub mod types;
