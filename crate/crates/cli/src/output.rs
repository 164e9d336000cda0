//! Output files. Every CSV gets a `<file>.json` sidecar describing how it
//! was produced.

use std::fs;
use std::path::{Path, PathBuf};

use antibunch::io;
use serde::Serialize;

use crate::error::{CliError, ErrorKind};

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::new(ErrorKind::Io, format!("{}: {e}", dir.display())))
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    csv.with_file_name(name)
}

pub fn write_csv<T: Serialize>(path: &Path, csv: &str, sidecar: &T) -> Result<(), CliError> {
    io::write_text(path, csv)?;
    io::write_json(&sidecar_path(path), sidecar)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    Ok(io::write_json(path, value)?)
}

/// Shortest decimal form after rounding to `digits` places.
pub fn rounded(x: f64, digits: i32) -> String {
    let scale = 10f64.powi(digits);
    let r = (x * scale).round() / scale;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}
