//! Canonical JSON, text tables and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Format, OutputConfig};
use crate::error::{CliError, Result};
use crate::render::render_report;
use crate::report::Report;

/// Name of the marker file holding the config hash of a results directory.
pub const HASH_FILE: &str = "config.sha256";

/// Pretty JSON with object keys sorted, newline terminated.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json::Map is a BTreeMap, so going through Value sorts the keys
    let v = serde_json::to_value(value).expect("report types serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

/// Creates `out.dir` if needed and claims it for `hash`. A directory that
/// already belongs to another config is refused unless `out.force`.
pub fn prepare_dir(out: &OutputConfig, hash: &str) -> Result<()> {
    fs::create_dir_all(&out.dir).map_err(|e| CliError::io(&out.dir, e))?;
    let marker = out.dir.join(HASH_FILE);
    match fs::read_to_string(&marker) {
        Ok(found) => {
            let found = found.trim().to_string();
            if found != hash && !out.force {
                return Err(CliError::ConfigMismatch {
                    path: out.dir.clone(),
                    found,
                    expected: hash.to_string(),
                });
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(CliError::io(marker, e)),
    }
    write_atomic(&marker, format!("{hash}\n").as_bytes())
}

/// Writes `<stem>.json` and/or `<stem>.txt`; returns the written paths.
pub fn emit_artifact<T: Serialize>(
    out: &OutputConfig,
    hash: &str,
    stem: &str,
    value: &T,
    text: Option<String>,
) -> Result<Vec<PathBuf>> {
    prepare_dir(out, hash)?;
    let mut written = Vec::new();
    for f in &out.formats {
        match f {
            Format::Json => {
                let p = out.dir.join(format!("{stem}.json"));
                write_atomic(&p, canonical_json(value).as_bytes())?;
                written.push(p);
            }
            Format::Text => {
                if let Some(t) = &text {
                    let p = out.dir.join(format!("{stem}.txt"));
                    write_atomic(&p, t.as_bytes())?;
                    written.push(p);
                }
            }
        }
    }
    Ok(written)
}

pub fn emit(report: &Report, out: &OutputConfig) -> Result<Vec<PathBuf>> {
    emit_artifact(out, &report.provenance.config_hash, "report", report, Some(render_report(report)))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}
