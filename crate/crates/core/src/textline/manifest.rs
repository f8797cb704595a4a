use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One `image_path TAB transcript` line of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    /// Path as written in the manifest.
    pub image: String,
    /// `image` resolved against the manifest's directory.
    pub resolved: PathBuf,
    pub transcript: String,
}

impl ManifestRecord {
    /// Identifier used in per-line output: the image file stem.
    pub fn line_id(&self) -> String {
        Path::new(&self.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.clone())
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let (image, transcript) = line.split_once('\t').ok_or_else(|| {
            Error::invalid(format!("manifest line {}: missing TAB separator", lineno + 1))
        })?;
        records.push(ManifestRecord {
            image: image.to_string(),
            resolved: base.join(image),
            transcript: transcript.to_string(),
        });
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

pub fn format_manifest<'a>(records: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (image, transcript) in records {
        out.push_str(image);
        out.push('\t');
        out.push_str(transcript);
        out.push('\n');
    }
    out
}
