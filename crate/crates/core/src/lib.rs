//! Simulation of a molecular communication link with a feedback-driven
//! transmission protocol between a transmitter and a receiver cell.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codec;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod rx_node;
pub mod seed;
pub mod tx_node;

pub use error::{Error, Result};
