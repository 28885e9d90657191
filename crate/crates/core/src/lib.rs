//! Federated fine-tuning of LoRA-adapted models across simulated
//! heterogeneous devices.
//!
//! The server estimates each device's per-layer compute time and per-rank
//! upload time, plans an adapter depth per device so that fast devices
//! train deeper suffixes and slow ones shallower, aggregates the returned
//! adapters layer by layer, and accounts simulated wall-clock time and
//! traffic for every round.

pub mod aggregator;
pub mod baselines;
pub mod capacity;
pub mod error;
pub mod harness;
pub mod lora;
pub mod numerics;
pub mod planner;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
