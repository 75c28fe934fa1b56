//! Labeled 8-bit image datasets, class-incremental splits and joint datasets.

mod idx;
mod manifest;
mod shift;

pub use idx::{load_idx, load_mnist_split, pair, read_idx_file, IdxData, IdxKind, MnistFiles, Split};
pub use manifest::{sha256_file, DatasetManifest};
pub use shift::{
    apply_fgsm, apply_occlusion, build_shifted_task, corner_block, fgsm_batch, Pixel, ShiftKind,
    ShiftSpec,
};

use ndarray::Array2;
use thiserror::Error;

use crate::nn::NnError;

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: declared {declared} bytes, found {found}")]
    Truncated { declared: usize, found: usize },
    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {0} outside [0, {NUM_CLASSES})")]
    BadLabel(u8),
    #[error("task order {0:?} is not a permutation of the dataset's classes")]
    BadOrder(Vec<u8>),
    #[error("pixel ({row}, {col}) outside a {rows}x{cols} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("shift ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("shifted task id {found} does not match target task {expected}")]
    TaskMismatch { expected: usize, found: usize },
    #[error("FGSM shift requires a reference model")]
    MissingReference,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Images with class labels, stored as one flat `n × rows × cols` pixel buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl RawDataset {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self, DataError> {
        let area = rows * cols;
        if area == 0 {
            return Err(DataError::Invalid(format!("empty image shape {rows}x{cols}")));
        }
        if pixels.len() != area * labels.len() {
            return Err(DataError::CountMismatch {
                images: pixels.len() / area,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(DataError::BadLabel(bad));
        }
        Ok(RawDataset {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        RawDataset {
            rows,
            cols,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let a = self.image_len();
        &self.pixels[i * a..(i + 1) * a]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [u8] {
        let a = self.image_len();
        &mut self.pixels[i * a..(i + 1) * a]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn push(&mut self, image: &[u8], label: u8) {
        assert_eq!(image.len(), self.image_len(), "image size mismatch");
        assert!((label as usize) < NUM_CLASSES, "label out of range");
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &RawDataset) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.pixels.extend_from_slice(&other.pixels);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        let mut out = RawDataset::empty(self.rows, self.cols);
        for &i in indices {
            out.push(self.image(i), self.label(i));
        }
        out
    }

    /// Normalized inputs for the given samples, one row each.
    pub fn to_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let a = self.image_len();
        let mut m = Array2::zeros((indices.len(), a));
        for (r, &i) in indices.iter().enumerate() {
            for (dst, &p) in m.row_mut(r).iter_mut().zip(self.image(i)) {
                *dst = p as f64 / 255.0;
            }
        }
        m
    }

    pub fn all_matrix(&self) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.to_matrix(&idx)
    }

    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; NUM_CLASSES];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..NUM_CLASSES as u8).filter(|&c| seen[c as usize]).collect()
    }
}

/// One class-incremental task. `task_id` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub classes: Vec<u8>,
    pub samples: RawDataset,
    /// Sorted indices of samples that carry a distribution shift.
    pub shifted: Vec<usize>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Pixels mapped to `[0, 1]` by division by 255.
pub fn normalize(image: &[u8]) -> Vec<f64> {
    image.iter().map(|&p| p as f64 / 255.0).collect()
}

/// Task `t` (1-based) holds exactly the samples of class `order[t - 1]`, in
/// their original order.
pub fn split_by_class(ds: &RawDataset, order: &[u8]) -> Result<Vec<TaskDataset>, DataError> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    let unique = sorted.windows(2).all(|w| w[0] != w[1]);
    if !unique || sorted != ds.classes() {
        return Err(DataError::BadOrder(order.to_vec()));
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in ds.labels().iter().enumerate() {
        buckets[l as usize].push(i);
    }
    Ok(order
        .iter()
        .enumerate()
        .map(|(t, &c)| TaskDataset {
            task_id: t + 1,
            classes: vec![c],
            samples: ds.subset(&buckets[c as usize]),
            shifted: Vec::new(),
        })
        .collect())
}

/// Union of all tasks with task `target` replaced by its shifted version.
pub fn build_joint_dataset(
    tasks: &[TaskDataset],
    target: usize,
    shifted_task: &TaskDataset,
) -> Result<RawDataset, DataError> {
    if shifted_task.task_id != target {
        return Err(DataError::TaskMismatch {
            expected: target,
            found: shifted_task.task_id,
        });
    }
    let first = tasks
        .first()
        .ok_or_else(|| DataError::Invalid("no tasks to join".into()))?;
    let mut out = RawDataset::empty(first.samples.rows(), first.samples.cols());
    for task in tasks {
        if task.task_id == target {
            out.extend(&shifted_task.samples);
        } else {
            out.extend(&task.samples);
        }
    }
    Ok(out)
}

/// Union of all tasks without any replacement.
pub fn concat_tasks(tasks: &[TaskDataset]) -> RawDataset {
    let mut out = RawDataset::empty(
        tasks.first().map_or(28, |t| t.samples.rows()),
        tasks.first().map_or(28, |t| t.samples.cols()),
    );
    for task in tasks {
        out.extend(&task.samples);
    }
    out
}
