//! Offline RL laboratory for device-control agents.
//!
//! The pipeline fine-tunes a featurizer to predict whether an action visibly changes the
//! screen, freezes it, trains Q and V heads by TD learning on the frozen features, and
//! extracts a policy by imitating the best of N candidate actions under the learned Q.

pub mod cli;
pub mod config;
pub mod critic;
mod error;
pub mod evalbench;
pub mod minidevice;
pub mod pipeline;
pub mod policy;
pub mod reprlearn;
pub mod tensorcore;
pub mod trajstore;
pub mod util;

pub use error::{Error, FormatErrorKind, Result};
