//! Layer-to-device planning and pipelined-ring simulation for LLM inference
//! on heterogeneous home clusters.
//!
//! The planner ([`halda`]) assigns contiguous layer windows and GPU layer
//! counts to each device so that the analytical per-token latency
//! ([`latency_model`]) is minimal. The simulator ([`sim`]) replays any plan
//! against a page-cache model to expose prefetch overlap and fault stalls.

#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod halda;
pub mod ilp;
pub mod latency_model;
pub mod profiles;
pub mod sim;
