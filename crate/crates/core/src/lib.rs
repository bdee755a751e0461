// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod compiler;
pub mod fabric;
pub mod isa;
pub mod oracle;
pub mod pipeline;
pub mod report;

pub type Tensor32 = oracle::Tensor<f32>;
pub type Tensor64 = oracle::Tensor<f64>;
