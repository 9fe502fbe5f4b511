//! On-disk formats of every pipeline artifact.

pub mod checkpoint;
pub mod dataset;
pub mod manifest;
pub mod tables;
pub mod truth;

use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
