//! Intra-class distribution shifts: fixed-position occlusion and FGSM.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, RawDataset, TaskDataset};
use crate::nn::{softmax_cross_entropy, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

/// A `side × side` square whose bottom-right pixel sits `margin` pixels in
/// from the image's bottom-right corner.
pub fn corner_block(side: usize, rows: usize, cols: usize, margin: usize) -> Vec<Pixel> {
    let last_row = rows - 1 - margin;
    let last_col = cols - 1 - margin;
    let mut out = Vec::with_capacity(side * side);
    for row in last_row + 1 - side..=last_row {
        for col in last_col + 1 - side..=last_col {
            out.push(Pixel { row, col });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    /// Pixels at `positions` are overwritten with `strength` (raw 8-bit units).
    Occlusion { positions: Vec<Pixel>, strength: u8 },
    /// One signed-gradient step of size `epsilon` in normalized units.
    Fgsm { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    /// Fraction of the target task's training samples that get shifted.
    pub ratio: f64,
    /// 1-based id of the task whose training data is shifted.
    pub target_task: usize,
}

impl ShiftSpec {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(DataError::BadRatio(self.ratio));
        }
        match &self.kind {
            ShiftKind::Occlusion { positions, .. } => {
                for p in positions {
                    check_bounds(*p, rows, cols)?;
                }
            }
            ShiftKind::Fgsm { epsilon } => {
                if !(*epsilon >= 0.0) {
                    return Err(DataError::Invalid(format!("FGSM epsilon {epsilon} < 0")));
                }
            }
        }
        Ok(())
    }

    /// `⌊ratio · n⌋`, tolerant of the representation error in decimal ratios.
    pub fn shifted_count(&self, n: usize) -> usize {
        (((self.ratio * n as f64) + 1e-9).floor() as usize).min(n)
    }
}

fn check_bounds(p: Pixel, rows: usize, cols: usize) -> Result<(), DataError> {
    if p.row >= rows || p.col >= cols {
        return Err(DataError::OutOfBounds {
            row: p.row,
            col: p.col,
            rows,
            cols,
        });
    }
    Ok(())
}

/// Sets the pixels at `positions` to `strength`; every other pixel is copied unchanged.
pub fn apply_occlusion(
    image: &[u8],
    rows: usize,
    cols: usize,
    positions: &[Pixel],
    strength: u8,
) -> Result<Vec<u8>, DataError> {
    if image.len() != rows * cols {
        return Err(DataError::Invalid(format!(
            "image has {} pixels, expected {rows}x{cols}",
            image.len()
        )));
    }
    let mut out = image.to_vec();
    for &p in positions {
        check_bounds(p, rows, cols)?;
        out[p.row * cols + p.col] = strength;
    }
    Ok(out)
}

/// Single-image FGSM: `clip(x + ε·sign(∇ₓ CE(f(x), y)), 0, 1)`, re-quantized to 8 bits.
pub fn apply_fgsm(mlp: &Mlp, image: &[u8], label: u8, epsilon: f64) -> Result<Vec<u8>, DataError> {
    let side = (image.len() as f64).sqrt() as usize;
    let (rows, cols) = if side * side == image.len() {
        (side, side)
    } else {
        (1, image.len())
    };
    let ds = RawDataset::new(rows, cols, image.to_vec(), vec![label])?;
    let out = fgsm_batch(mlp, &ds, &[0], epsilon)?;
    Ok(out.into_iter().next().unwrap())
}

/// FGSM for several samples of `ds` at once.
pub fn fgsm_batch(
    mlp: &Mlp,
    ds: &RawDataset,
    indices: &[usize],
    epsilon: f64,
) -> Result<Vec<Vec<u8>>, DataError> {
    if mlp.input_dim() != ds.image_len() {
        return Err(crate::nn::NnError::Shape {
            context: "fgsm input",
            expected: mlp.input_dim().to_string(),
            found: ds.image_len().to_string(),
        }
        .into());
    }
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    if epsilon == 0.0 {
        return Ok(indices.iter().map(|&i| ds.image(i).to_vec()).collect());
    }
    let x: Array2<f64> = ds.to_matrix(indices);
    let labels: Vec<usize> = indices.iter().map(|&i| ds.label(i) as usize).collect();
    let trace = mlp.forward(&x)?;
    let (_, d) = softmax_cross_entropy(trace.logits(), &labels)?;
    let grads = mlp.backward(&trace, &d, true)?;
    let gx = grads.input.expect("input gradient requested");
    let mut out = Vec::with_capacity(indices.len());
    for (r, row) in x.rows().into_iter().enumerate() {
        let img: Vec<u8> = row
            .iter()
            .zip(gx.row(r))
            .map(|(&v, &g)| {
                let step = if g > 0.0 {
                    epsilon
                } else if g < 0.0 {
                    -epsilon
                } else {
                    0.0
                };
                ((v + step).clamp(0.0, 1.0) * 255.0).round() as u8
            })
            .collect();
        out.push(img);
    }
    Ok(out)
}

/// Replaces exactly `⌊r·n⌋` uniformly chosen samples of `task` by shifted
/// versions. Labels and sample count are unchanged. FGSM shifts need a
/// `reference` model to take the input gradient from.
pub fn build_shifted_task<R: Rng + ?Sized>(
    task: &TaskDataset,
    spec: &ShiftSpec,
    rng: &mut R,
    reference: Option<&Mlp>,
) -> Result<TaskDataset, DataError> {
    let (rows, cols) = (task.samples.rows(), task.samples.cols());
    spec.validate(rows, cols)?;
    let n = task.len();
    let k = spec.shifted_count(n);
    let mut chosen = rand::seq::index::sample(rng, n, k).into_vec();
    chosen.sort_unstable();
    let mut out = task.clone();
    match &spec.kind {
        ShiftKind::Occlusion {
            positions,
            strength,
        } => {
            for &i in &chosen {
                let shifted = apply_occlusion(task.samples.image(i), rows, cols, positions, *strength)?;
                out.samples.image_mut(i).copy_from_slice(&shifted);
            }
        }
        ShiftKind::Fgsm { epsilon } => {
            let model = reference.ok_or(DataError::MissingReference)?;
            for chunk in chosen.chunks(256) {
                let shifted = fgsm_batch(model, &task.samples, chunk, *epsilon)?;
                for (&i, img) in chunk.iter().zip(shifted) {
                    out.samples.image_mut(i).copy_from_slice(&img);
                }
            }
        }
    }
    out.shifted = chosen;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_by_class;
    use crate::nn::Dense;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mnist_corner_block_coordinates() {
        let block = corner_block(2, 28, 28, 1);
        let coords: Vec<(usize, usize)> = block.iter().map(|p| (p.row, p.col)).collect();
        assert_eq!(coords, vec![(25, 25), (25, 26), (26, 25), (26, 26)]);
        assert_eq!(corner_block(1, 28, 28, 1), vec![Pixel { row: 26, col: 26 }]);
        assert_eq!(corner_block(4, 28, 28, 1)[0], Pixel { row: 23, col: 23 });
    }

    #[test]
    fn occludes_bottom_right_block() {
        let img = vec![0u8; 16];
        let block = corner_block(2, 4, 4, 0);
        let out = apply_occlusion(&img, 4, 4, &block, 64).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expected = if r >= 2 && c >= 2 { 64 } else { 0 };
                assert_eq!(out[r * 4 + c], expected);
            }
        }
    }

    #[test]
    fn occlusion_with_existing_values_is_identity() {
        let img: Vec<u8> = vec![7; 9];
        let out = apply_occlusion(&img, 3, 3, &corner_block(2, 3, 3, 0), 7).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn occlusion_rejects_out_of_bounds() {
        let err = apply_occlusion(&[0; 4], 2, 2, &[Pixel { row: 2, col: 0 }], 1).unwrap_err();
        assert!(matches!(err, DataError::OutOfBounds { .. }));
    }

    fn linear_model(w: Vec<f64>) -> Mlp {
        let n = w.len();
        let mut weight = ndarray::Array2::zeros((2, n));
        weight.row_mut(0).assign(&Array1::from(w));
        Mlp::from_layers(vec![Dense {
            weight,
            bias: array![0.0, 0.0],
        }])
        .unwrap()
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let mlp = linear_model(vec![1.0, -1.0, 0.5, 2.0]);
        let img = vec![10, 200, 0, 255];
        assert_eq!(apply_fgsm(&mlp, &img, 0, 0.0).unwrap(), img);
    }

    #[test]
    fn fgsm_linear_direction_is_gradient_sign() {
        // Two logits, z0 = w·x, z1 = 0, label 0: ∂CE/∂x = (p0 − 1)·w, so sign = −sign(w).
        let mlp = linear_model(vec![1.0, -1.0, 0.5, -2.0]);
        let img = vec![128; 4];
        let eps = 10.0 / 255.0;
        let out = apply_fgsm(&mlp, &img, 0, eps).unwrap();
        assert_eq!(out, vec![118, 138, 118, 138]);
    }

    #[test]
    fn fgsm_rejects_wrong_dimension() {
        let mlp = linear_model(vec![1.0; 3]);
        assert!(apply_fgsm(&mlp, &[0; 4], 0, 0.1).is_err());
    }

    fn task_of(n: usize) -> TaskDataset {
        let pixels: Vec<u8> = (0..n * 9).map(|i| (i % 200) as u8).collect();
        let ds = RawDataset::new(3, 3, pixels, vec![3; n]).unwrap();
        split_by_class(&ds, &[3]).unwrap().remove(0)
    }

    fn occlusion(ratio: f64) -> ShiftSpec {
        ShiftSpec {
            kind: ShiftKind::Occlusion {
                positions: corner_block(1, 3, 3, 0),
                strength: 255,
            },
            ratio,
            target_task: 1,
        }
    }

    #[test]
    fn ratio_zero_and_one() {
        let task = task_of(20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(build_shifted_task(&task, &occlusion(0.0), &mut rng, None).unwrap(), task);
        let all = build_shifted_task(&task, &occlusion(1.0), &mut rng, None).unwrap();
        assert_eq!(all.shifted, (0..20).collect::<Vec<_>>());
        assert!((0..20).all(|i| all.samples.image(i)[8] == 255));
    }

    #[test]
    fn ninety_percent_of_six_thousand() {
        let task = task_of(6000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = build_shifted_task(&task, &occlusion(0.9), &mut rng, None).unwrap();
        assert_eq!(out.shifted.len(), 5400);
        assert!(out.samples.labels().iter().all(|&l| l == 3));
    }

    #[test]
    fn fgsm_needs_reference() {
        let spec = ShiftSpec {
            kind: ShiftKind::Fgsm { epsilon: 0.1 },
            ratio: 0.5,
            target_task: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            build_shifted_task(&task_of(4), &spec, &mut rng, None),
            Err(DataError::MissingReference)
        ));
    }

    #[test]
    fn invalid_ratio_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(build_shifted_task(&task_of(4), &occlusion(1.5), &mut rng, None).is_err());
    }
}
