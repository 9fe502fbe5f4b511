//! File formats, configuration and the pipeline commands of the `hetloss`
//! tool. The numerical work lives in `hetloss-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod verify;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
