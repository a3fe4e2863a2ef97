//! JSON run reports. Every report carries the verbatim invocation and
//! digests of the input files, so a run can be reproduced exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    /// Full argv of the run.
    pub invocation: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub config: serde_json::Value,
    pub results: serde_json::Value,
    /// Overall pass/fail of whatever the command checks; commands that
    /// check nothing report `true`.
    pub pass: bool,
    pub wall_time_secs: f64,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            invocation: std::env::args().collect(),
            inputs: Vec::new(),
            config: serde_json::Value::Null,
            results: serde_json::Value::Null,
            pass: true,
            wall_time_secs: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path, rows: usize, cols: usize) -> std::io::Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            rows,
            cols,
        });
        Ok(())
    }

    /// Serialize to `out` when given, stdout otherwise.
    pub fn emit(&self, out: Option<&PathBuf>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        match out {
            Some(path) => {
                fs::write(path, text)?;
                eprintln!("report written to {}", path.display());
            }
            None => println!("{text}"),
        }
        Ok(())
    }
}
