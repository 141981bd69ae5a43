//! Line-delimited JSON manifests indexing motion files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::write_text;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub source_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub person_count: u8,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub base: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord =
                serde_json::from_str(line).map_err(|e| CliError::data(path, format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base, records })
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Records as JSON lines, in the given order.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> CliResult<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Data(e.to_string()))?);
        text.push('\n');
    }
    write_text(path, &text)
}

/// `target` expressed relative to `base` when it lies inside it.
pub fn relative_to(target: &Path, base: &Path) -> String {
    target.strip_prefix(base).unwrap_or(target).to_string_lossy().into_owned()
}
