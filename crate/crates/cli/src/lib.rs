//! Operator-facing pieces of the `cwtnet` binary: run configuration,
//! checkpoints, the training driver and evaluation reports.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod evaluate;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{DataSource, RunConfig};
pub use run::{run_train, TrainOptions, Trainer};

use cwtnet_core::Error;

/// Process exit status for an error: 2 usage, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::Data { .. } | Error::Io { .. } | Error::Shape { .. } | Error::ShapeMismatch { .. } => 3,
        Error::Numeric(_) => 4,
    }
}
