use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{DataError, ShiftSpec};

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance record for the data a run consumed: file checksums, the shift
/// applied, and the seed that picked the shifted subset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub files: Vec<(String, String, u64)>,
    pub shift: Option<ShiftSpec>,
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn from_files(paths: &[&Path]) -> Result<Self, DataError> {
        let mut files = Vec::with_capacity(paths.len());
        for p in paths {
            let size = std::fs::metadata(p)
                .map_err(|source| DataError::Io {
                    path: p.display().to_string(),
                    source,
                })?
                .len();
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            files.push((name, sha256_file(p)?, size));
        }
        Ok(DatasetManifest {
            files,
            shift: None,
            seed: None,
        })
    }

    /// `key = value` lines, stable across runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, sum, size) in &self.files {
            let _ = writeln!(s, "file.{name}.sha256 = {sum}");
            let _ = writeln!(s, "file.{name}.bytes = {size}");
        }
        match &self.shift {
            Some(spec) => {
                let _ = writeln!(
                    s,
                    "shift = {}",
                    serde_json::to_string(spec).expect("shift spec serializes")
                );
            }
            None => s.push_str("shift = none\n"),
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        s
    }

    /// Reads the file entries back from [`to_text`](Self::to_text) output.
    /// Other keys are ignored.
    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut files: Vec<(String, String, u64)> = Vec::new();
        for line in text.lines() {
            let Some((key, value)) = line.split_once(" = ") else {
                continue;
            };
            let Some(rest) = key.strip_prefix("file.") else {
                continue;
            };
            let (name, field) = rest
                .rsplit_once('.')
                .ok_or_else(|| DataError::Invalid(format!("bad manifest key {key:?}")))?;
            let idx = match files.iter().position(|(n, _, _)| n == name) {
                Some(i) => i,
                None => {
                    files.push((name.to_string(), String::new(), 0));
                    files.len() - 1
                }
            };
            match field {
                "sha256" => files[idx].1 = value.trim().to_string(),
                "bytes" => {
                    files[idx].2 = value
                        .trim()
                        .parse()
                        .map_err(|_| DataError::Invalid(format!("bad byte count in {line:?}")))?
                }
                _ => {}
            }
        }
        Ok(DatasetManifest {
            files,
            shift: None,
            seed: None,
        })
    }

    /// Returns the names of files whose checksum differs from `expected`.
    pub fn mismatches(&self, expected: &DatasetManifest) -> Vec<String> {
        expected
            .files
            .iter()
            .filter(|(name, sum, _)| {
                !self
                    .files
                    .iter()
                    .any(|(n, s, _)| n == name && s == sum)
            })
            .map(|(name, _, _)| name.clone())
            .collect()
    }
}
