//! Provenance headers for output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Identifies the configuration and seed that produced an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
}

impl Provenance {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain struct serializes")
    }
}

/// Create `path` and hand a buffered writer to `body`.
pub fn write_file<P, F>(path: P, body: F) -> Result<()>
where
    P: AsRef<Path>,
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    if let Some(dir) = path.as_ref().parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Write `value` as pretty JSON with the provenance merged in under
/// `"provenance"`.
pub fn write_json<P: AsRef<Path>>(
    path: P,
    provenance: &Provenance,
    value: &serde_json::Value,
) -> Result<()> {
    let mut v = value.clone();
    if let Some(obj) = v.as_object_mut() {
        obj.insert("provenance".into(), provenance.to_json());
    }
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &v)?;
        writeln!(w)
    })
}

/// Write a CSV whose first line is `# {provenance json}`.
pub fn write_csv<P: AsRef<Path>>(
    path: P,
    provenance: &Provenance,
    header: &str,
    rows: &[String],
) -> Result<()> {
    write_file(path, |w| {
        writeln!(w, "# {}", provenance.to_json())?;
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })
}
