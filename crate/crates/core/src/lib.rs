// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod topology;
pub mod utility;
