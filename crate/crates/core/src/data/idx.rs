//! The big-endian IDX container used by the MNIST distribution.

use std::path::{Path, PathBuf};

use super::{DataError, RawDataset};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    Images,
    Labels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            declared: at + 4,
            found: bytes.len(),
        })
}

pub fn load_idx(bytes: &[u8], kind: IdxKind) -> Result<IdxData, DataError> {
    let expected = match kind {
        IdxKind::Images => IMAGES_MAGIC,
        IdxKind::Labels => LABELS_MAGIC,
    };
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(DataError::BadMagic {
            expected,
            found: magic,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndims;
    let declared: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < declared {
        return Err(DataError::Truncated {
            declared,
            found: payload.len(),
        });
    }
    let payload = payload[..declared].to_vec();
    Ok(match kind {
        IdxKind::Images => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload,
        },
        IdxKind::Labels => IdxData::Labels(payload),
    })
}

/// Joins an image file and a label file into one dataset.
pub fn pair(images: IdxData, labels: IdxData) -> Result<RawDataset, DataError> {
    match (images, labels) {
        (
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            },
            IdxData::Labels(labels),
        ) => {
            if count != labels.len() {
                return Err(DataError::CountMismatch {
                    images: count,
                    labels: labels.len(),
                });
            }
            RawDataset::new(rows, cols, pixels, labels)
        }
        _ => Err(DataError::Invalid("pair expects (images, labels)".into())),
    }
}

pub fn read_idx_file(path: &Path, kind: IdxKind) -> Result<IdxData, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_idx(&bytes, kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Paths of the four standard (uncompressed) MNIST files under one directory.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: &Path) -> Self {
        MnistFiles {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
    }
}

pub fn load_mnist_split(dir: &Path, split: Split) -> Result<RawDataset, DataError> {
    let files = MnistFiles::in_dir(dir);
    let (img, lbl) = match split {
        Split::Train => (&files.train_images, &files.train_labels),
        Split::Test => (&files.test_images, &files.test_labels),
    };
    pair(read_idx_file(img, IdxKind::Images)?, read_idx_file(lbl, IdxKind::Labels)?)
}
