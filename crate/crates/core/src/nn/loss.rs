use ndarray::{Array1, Array2, ArrayView1};

use super::{shape_err, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxLossKind {
    /// Mean squared difference over every entry.
    LogitMse,
    /// KL(softmax(targets/T) ‖ softmax(logits/T)), averaged over rows.
    Distill,
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean cross-entropy over the batch, and `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>), NnError> {
    let all: Vec<usize> = (0..logits.ncols()).collect();
    masked_softmax_cross_entropy(logits, labels, &all)
}

/// Cross-entropy where the softmax runs over `active` columns only; the other
/// columns get zero gradient. Used for single-head class-incremental training.
pub fn masked_softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    active: &[usize],
) -> Result<(f64, Array2<f64>), NnError> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(shape_err("cross_entropy labels", n, labels.len()));
    }
    if let Some(&bad) = active.iter().find(|&&c| c >= k) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let mut grad = Array2::zeros((n, k));
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(NnError::LabelOutOfRange { label: y, classes: k });
        }
        if !active.contains(&y) {
            return Err(NnError::InactiveLabel { label: y });
        }
        let row = logits.row(i);
        let max = active.iter().map(|&c| row[c]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = active.iter().map(|&c| (row[c] - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        for &c in active {
            grad[[i, c]] = (row[c] - lse).exp() * scale;
        }
        grad[[i, y]] -= scale;
    }
    Ok((total * scale, grad))
}

pub fn aux_loss(
    kind: AuxLossKind,
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>), NnError> {
    let all: Vec<usize> = (0..logits.ncols()).collect();
    aux_loss_masked(kind, logits, targets, temperature, &all)
}

/// [`aux_loss`] restricted to `columns`; gradients outside them are zero.
pub fn aux_loss_masked(
    kind: AuxLossKind,
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    temperature: f64,
    columns: &[usize],
) -> Result<(f64, Array2<f64>), NnError> {
    if logits.dim() != targets.dim() {
        return Err(shape_err("aux_loss", logits.dim(), targets.dim()));
    }
    let (n, k) = logits.dim();
    if let Some(&bad) = columns.iter().find(|&&c| c >= k) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let mut grad = Array2::zeros((n, k));
    if n == 0 || columns.is_empty() {
        return Ok((0.0, grad));
    }
    match kind {
        AuxLossKind::LogitMse => {
            let count = (n * columns.len()) as f64;
            let mut total = 0.0;
            for i in 0..n {
                for &c in columns {
                    let d = logits[[i, c]] - targets[[i, c]];
                    total += d * d;
                    grad[[i, c]] = 2.0 * d / count;
                }
            }
            Ok((total / count, grad))
        }
        AuxLossKind::Distill => {
            if !(temperature > 0.0) {
                return Err(NnError::Temperature(temperature));
            }
            let mut total = 0.0;
            for i in 0..n {
                let student = log_softmax_subset(logits.row(i), columns, temperature);
                let teacher = log_softmax_subset(targets.row(i), columns, temperature);
                for (j, &c) in columns.iter().enumerate() {
                    let p = teacher[j].exp();
                    let q = student[j].exp();
                    if p > 0.0 {
                        total += p * (teacher[j] - student[j]);
                    }
                    grad[[i, c]] = (q - p) / (temperature * n as f64);
                }
            }
            Ok((total / n as f64, grad))
        }
    }
}

fn log_softmax_subset(row: ArrayView1<f64>, columns: &[usize], temperature: f64) -> Array1<f64> {
    let scaled: Array1<f64> = columns.iter().map(|&c| row[c] / temperature).collect();
    let max = scaled.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    scaled.mapv(|v| v - lse)
}

/// Binary cross-entropy on a single logit column against targets in `[0, 1]`.
pub fn bce_with_logits(
    logits: &Array2<f64>,
    targets: &[f64],
) -> Result<(f64, Array2<f64>), NnError> {
    let (n, k) = logits.dim();
    if k != 1 || targets.len() != n {
        return Err(shape_err("bce_with_logits", (targets.len(), 1), (n, k)));
    }
    let mut grad = Array2::zeros((n, 1));
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let z = logits[[i, 0]];
        // log(1 + e^z) − y·z, written to avoid overflow
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-z).exp());
        grad[[i, 0]] = (sig - y) / n as f64;
    }
    Ok((total / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_k() {
        let (loss, _) = softmax_cross_entropy(&Array2::zeros((3, 7)), &[0, 3, 6]).unwrap();
        assert_abs_diff_eq!(loss, 7f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn confident_correct_logit_gives_near_zero_loss() {
        let (loss, _) = softmax_cross_entropy(&array![[50.0, 0.0, 0.0]], &[0]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-20);
    }

    #[test]
    fn logits_123_label_2() {
        let expected = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let (loss, grad) = softmax_cross_entropy(&array![[1.0, 2.0, 3.0]], &[2]).unwrap();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.40761, epsilon = 1e-5);
        assert_abs_diff_eq!(grad.sum(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let err = softmax_cross_entropy(&Array2::zeros((1, 3)), &[3]).unwrap_err();
        assert_eq!(err, NnError::LabelOutOfRange { label: 3, classes: 3 });
    }

    #[test]
    fn masked_columns_get_no_gradient() {
        let logits = array![[1.0, 5.0, 2.0, -1.0]];
        let (loss, grad) = masked_softmax_cross_entropy(&logits, &[2], &[0, 2]).unwrap();
        let expected = -(2f64.exp() / (1f64.exp() + 2f64.exp())).ln();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
        assert_eq!(grad[[0, 1]], 0.0);
        assert_eq!(grad[[0, 3]], 0.0);
        assert!(masked_softmax_cross_entropy(&logits, &[1], &[0, 2]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&array![[1.0, 2.0, 3.0], [1000.0, -1000.0, 0.0]]);
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_inputs_have_zero_aux_loss() {
        let x = array![[0.3, -2.0, 1.0], [4.0, 0.0, 0.5]];
        for kind in [AuxLossKind::LogitMse, AuxLossKind::Distill] {
            let (loss, grad) = aux_loss(kind, &x, &x, 2.0).unwrap();
            assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
            assert!(grad.iter().all(|g| g.abs() < 1e-12));
        }
    }

    #[test]
    fn logit_mse_example() {
        let (loss, _) =
            aux_loss(AuxLossKind::LogitMse, &array![[0.0, 2.0]], &array![[1.0, 0.0]], 1.0).unwrap();
        assert_abs_diff_eq!(loss, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn aux_loss_errors() {
        let a = Array2::zeros((2, 3));
        let b = Array2::zeros((2, 4));
        assert!(aux_loss(AuxLossKind::LogitMse, &a, &b, 1.0).is_err());
        assert_eq!(
            aux_loss(AuxLossKind::Distill, &a, &a, 0.0).unwrap_err(),
            NnError::Temperature(0.0)
        );
    }

    #[test]
    fn distill_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits = Array2::from_shape_simple_fn((5, 4), || rng.random_range(-2.0..2.0));
        let targets = Array2::from_shape_simple_fn((5, 4), || rng.random_range(-2.0..2.0));
        let t = 2.0;
        let (_, grad) = aux_loss(AuxLossKind::Distill, &logits, &targets, t).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..4 {
                let mut up = logits.clone();
                up[[i, j]] += h;
                let mut down = logits.clone();
                down[[i, j]] -= h;
                let fd = (aux_loss(AuxLossKind::Distill, &up, &targets, t).unwrap().0
                    - aux_loss(AuxLossKind::Distill, &down, &targets, t).unwrap().0)
                    / (2.0 * h);
                assert_abs_diff_eq!(fd, grad[[i, j]], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let logits = array![[0.3], [-4.0], [12.0]];
        let targets = [1.0, 0.0, 0.0];
        let (_, grad) = bce_with_logits(&logits, &targets).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = logits.clone();
            up[[i, 0]] += h;
            let mut down = logits.clone();
            down[[i, 0]] -= h;
            let fd = (bce_with_logits(&up, &targets).unwrap().0
                - bce_with_logits(&down, &targets).unwrap().0)
                / (2.0 * h);
            assert_abs_diff_eq!(fd, grad[[i, 0]], epsilon = 1e-8);
        }
    }
}
