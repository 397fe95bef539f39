//! Run reports and atomic output files.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SCHEMA_VERSION};

/// One JSON document per run. Objects are emitted with sorted keys and no
/// wall-clock fields, so equal inputs give equal bytes.
#[derive(Debug)]
pub struct RunReport {
    command: &'static str,
    config_hash: String,
    config: Value,
    seed: Option<u64>,
    results: Value,
    warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &'static str, config: &RunConfig, source: &[u8]) -> Self {
        Self {
            command,
            config_hash: content_hash(source),
            config: to_value(config),
            seed: None,
            results: Value::Null,
            warnings: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn results(&mut self, results: Value) {
        self.results = results;
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn to_json(&self) -> String {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config_hash": self.config_hash,
            "config": self.config,
            "seed": self.seed,
            "results": self.results,
            "warnings": self.warnings,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("JSON values always serialize");
        s.push('\n');
        s
    }
}

/// `sha256("blob <len>\0" ++ bytes)`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Serialize through `Value` so struct fields come out in sorted order.
pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// A suite section: pass flag, optional constants, measurements.
pub fn section(pass: bool, constants: Option<Value>, measurements: Value) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("pass".into(), Value::Bool(pass));
    if let Some(c) = constants {
        m.insert("constants".into(), c);
    }
    m.insert("measurements".into(), measurements);
    Value::Object(m)
}

pub fn error_section(message: &str) -> Value {
    json!({ "pass": false, "error": message })
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
