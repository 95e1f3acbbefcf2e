#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod kv;
pub mod volumes;
pub mod models;
pub mod training;
pub mod index;
pub mod evalmetrics;
pub mod cli;
