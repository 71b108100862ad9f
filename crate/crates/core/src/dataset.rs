//! On-disk corpus of movie/trailer pairs plus the split manifest.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! splits.json                      {"train": [...], "val": [...], "test": [...]}
//! pairs/<pair>.movie.json|.bin
//! pairs/<pair>.trailer.json|.bin
//! pairs/<pair>.condition.json|.bin  (optional)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condition::ConditionSequence;
use crate::error::{Error, Result};
use crate::shotcore::{read_sequence, write_sequence, MovieSequence, SequenceFile, TrailerSequence};

/// One training or evaluation pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub movie: MovieSequence,
    pub trailer: TrailerSequence,
    pub condition: Option<ConditionSequence>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn get(&self, split: &str) -> Result<&[String]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("serializable");
        hex::encode(Sha256::digest(&json))
    }
}

pub const SPLITS_FILE: &str = "splits.json";

fn pair_path(dir: &Path, id: &str, part: &str) -> PathBuf {
    dir.join("pairs").join(format!("{id}.{part}.json"))
}

pub fn write_example(dir: &Path, ex: &Example) -> Result<()> {
    write_sequence(&pair_path(dir, &ex.id, "movie"), &SequenceFile::from_movie(&ex.movie))?;
    write_sequence(&pair_path(dir, &ex.id, "trailer"), &SequenceFile::from_trailer(&ex.trailer))?;
    if let Some(c) = &ex.condition {
        write_sequence(&pair_path(dir, &ex.id, "condition"), &c.to_file())?;
    }
    Ok(())
}

pub fn read_example(dir: &Path, id: &str) -> Result<Example> {
    let movie = read_sequence(&pair_path(dir, id, "movie"))?.to_movie()?;
    let trailer = read_sequence(&pair_path(dir, id, "trailer"))?.to_trailer()?;
    let cpath = pair_path(dir, id, "condition");
    let condition = if cpath.exists() { Some(ConditionSequence::from_file(&read_sequence(&cpath)?)?) } else { None };
    if movie.dim() != trailer.dim() {
        return Err(Error::Format(format!("{id}: movie and trailer widths differ")));
    }
    Ok(Example { id: id.to_string(), movie, trailer, condition })
}

pub fn write_splits(dir: &Path, splits: &SplitManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SPLITS_FILE);
    let mut json = serde_json::to_string_pretty(splits)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_splits(dir: &Path) -> Result<SplitManifest> {
    let path = dir.join(SPLITS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every pair of one split, in manifest order.
pub fn load_split(dir: &Path, split: &str) -> Result<(SplitManifest, Vec<Example>)> {
    let splits = read_splits(dir)?;
    let examples = splits.get(split)?.iter().map(|id| read_example(dir, id)).collect::<Result<Vec<_>>>()?;
    Ok((splits, examples))
}

/// 95th percentile (nearest rank) of trailer lengths.
pub fn trailer_length_p95(examples: &[Example]) -> usize {
    let mut lens: Vec<usize> = examples.iter().map(|e| e.trailer.len()).collect();
    if lens.is_empty() {
        return 1;
    }
    lens.sort_unstable();
    let rank = ((0.95 * lens.len() as f64).ceil() as usize).clamp(1, lens.len());
    lens[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p95_nearest_rank() {
        let mk = |m: usize| {
            let rows = vec![vec![1.0f32, 0.0]; m];
            Example {
                id: format!("p{m}"),
                movie: MovieSequence::from_rows("m", rows.clone()).unwrap(),
                trailer: TrailerSequence::from_rows("t", rows, None).unwrap(),
                condition: None,
            }
        };
        let ex: Vec<Example> = (1..=20).map(mk).collect();
        assert_eq!(trailer_length_p95(&ex), 19);
        assert_eq!(trailer_length_p95(&ex[..1]), 1);
    }

    #[test]
    fn unknown_split_is_argument_error() {
        assert!(matches!(SplitManifest::default().get("dev"), Err(Error::Argument(_))));
    }
}
