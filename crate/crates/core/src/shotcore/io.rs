//! Sequence files: a JSON manifest next to a raw little-endian `f32` blob
//! (`<stem>.json` + `<stem>.bin`, row-major `n x d`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MovieSequence, TrailerSequence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceRole {
    Movie,
    Trailer,
    Condition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub id: String,
    pub n: usize,
    pub d: usize,
    pub role: SequenceRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_indices: Option<Vec<i64>>,
}

/// A manifest together with its row-major payload.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFile {
    pub manifest: SequenceManifest,
    pub data: Vec<f32>,
}

impl SequenceFile {
    pub fn from_rows(id: &str, role: SequenceRole, rows: &[&[f32]], source_indices: Option<Vec<i64>>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Format("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(SequenceFile {
            manifest: SequenceManifest { id: id.to_string(), n: rows.len(), d, role, source_indices },
            data,
        })
    }

    pub fn from_movie(movie: &MovieSequence) -> Self {
        let rows: Vec<&[f32]> = movie.shots().iter().map(|s| s.values()).collect();
        Self::from_rows(&movie.id, SequenceRole::Movie, &rows, None).expect("movie rows are uniform")
    }

    pub fn from_trailer(trailer: &TrailerSequence) -> Self {
        let rows: Vec<&[f32]> = trailer.shots().iter().map(|s| s.values()).collect();
        Self::from_rows(&trailer.id, SequenceRole::Trailer, &rows, trailer.source_indices().map(|s| s.to_vec()))
            .expect("trailer rows are uniform")
    }

    pub fn rows(&self) -> Vec<Vec<f32>> {
        let d = self.manifest.d.max(1);
        self.data.chunks(d).map(|c| c.to_vec()).collect()
    }

    pub fn to_movie(&self) -> Result<MovieSequence> {
        self.expect_role(SequenceRole::Movie)?;
        MovieSequence::from_rows(self.manifest.id.clone(), self.rows())
    }

    pub fn to_trailer(&self) -> Result<TrailerSequence> {
        self.expect_role(SequenceRole::Trailer)?;
        TrailerSequence::from_rows(self.manifest.id.clone(), self.rows(), self.manifest.source_indices.clone())
    }

    fn expect_role(&self, role: SequenceRole) -> Result<()> {
        if self.manifest.role != role {
            return Err(Error::Format(format!(
                "{} has role {:?}, expected {:?}",
                self.manifest.id, self.manifest.role, role
            )));
        }
        Ok(())
    }
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>` (manifest) and the sidecar blob next to it.
pub fn write_sequence(path: &Path, file: &SequenceFile) -> Result<()> {
    let m = &file.manifest;
    if file.data.len() != m.n * m.d {
        return Err(Error::Format(format!("{}: payload holds {} values, manifest says {}x{}", m.id, file.data.len(), m.n, m.d)));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut json = serde_json::to_string_pretty(m)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(file.data.len() * 4);
    for v in &file.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let blob = blob_path(path);
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))
}

pub fn read_sequence(path: &Path) -> Result<SequenceFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: SequenceManifest = serde_json::from_str(&text)?;
    let blob = blob_path(path);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != manifest.n * manifest.d * 4 {
        return Err(Error::Format(format!(
            "{}: blob has {} bytes, expected {}",
            blob.display(),
            bytes.len(),
            manifest.n * manifest.d * 4
        )));
    }
    if let Some(src) = &manifest.source_indices {
        if src.len() != manifest.n {
            return Err(Error::Format(format!("{}: source_indices length {} != n {}", manifest.id, src.len(), manifest.n)));
        }
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(SequenceFile { manifest, data })
}
