//! Output files and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Collects output files written to one directory.
pub struct Writer {
    dir: PathBuf,
    format: Format,
    files: Vec<OutputFile>,
}

impl Writer {
    pub fn new(dir: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    /// Writes `rows` as `<stem>.csv` (units comment line, then header) or as
    /// `<stem>.json`, following the selected format.
    pub fn table<T: Serialize>(&mut self, stem: &str, units: &str, rows: &[T]) -> Result<(), CliError> {
        match self.format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
                for r in rows {
                    w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
                }
                let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
                let mut bytes = format!("# units: {units}\n").into_bytes();
                if rows.is_empty() {
                    bytes.extend_from_slice(b"\n");
                }
                bytes.extend_from_slice(&body);
                self.raw(&format!("{stem}.csv"), &bytes)
            }
            Format::Json => {
                #[derive(Serialize)]
                struct Doc<'a, T> {
                    units: &'a str,
                    rows: &'a [T],
                }
                self.json(stem, &Doc { units, rows })
            }
        }
    }

    pub fn json<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.raw(&format!("{stem}.json"), text.as_bytes())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub cli_version: String,
    pub library_version: String,
    pub catalog: String,
    /// Hash of the parsed arguments (output directory excluded), the catalog
    /// text and any configuration file.
    pub inputs_sha256: String,
    pub status: String,
    pub exit_code: i32,
    pub outputs: Vec<OutputFile>,
    /// Wall-clock time per stage, ms.
    pub timings_ms: BTreeMap<String, f64>,
}
