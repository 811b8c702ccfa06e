//! File formats, configuration, experiment harness and CLI support for
//! the `osc-core` training lab.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod harness;
pub mod idx;
pub mod record;
pub mod toy;

pub use error::{LabError, Result};
