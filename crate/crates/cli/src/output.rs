//! CSV and manifest writing. Floats use 17 significant digits so every value
//! parses back to the same bits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn file_writer(path: &Path) -> std::io::Result<csv::Writer<File>> {
    Ok(writer(File::create(path)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub spec: String,
    pub seed: u64,
    pub out_dir: String,
    pub jobs: usize,
    pub version: String,
    pub timing: bool,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("manifest.json"), text + "\n")
    }
}
