//! Orthogonal weight modification.
//!
//! Each layer keeps a projector `P` over its bias-augmented input space.
//! Gradient steps are right-multiplied by `P`, so the layer's response to
//! inputs already absorbed into `P` stays (approximately) fixed. After a task,
//! `P` is shrunk along that task's inputs by a recursive-least-squares update.

use ndarray::{Array1, Array2};

use super::StrategyError;
use crate::data::TaskDataset;
use crate::nn::{Mlp, NnError};

#[derive(Debug, Clone)]
pub struct OwmState {
    pub projectors: Vec<Array2<f64>>,
    /// Per-layer α before decay.
    pub alpha: Vec<f64>,
    /// α for task `t` (0-based) of `K` is `alpha · decay^(t/K)`.
    pub alpha_decay: f64,
}

impl OwmState {
    /// Identity projectors sized `fan_in + 1` per layer.
    pub fn new(mlp: &Mlp, alpha: &[f64], alpha_decay: f64) -> Result<Self, StrategyError> {
        let layers = mlp.layers().len();
        let alpha = match alpha.len() {
            1 => vec![alpha[0]; layers],
            n if n == layers => alpha.to_vec(),
            n => {
                return Err(StrategyError::Config(format!(
                    "owm_alpha has {n} entries for a {layers}-layer network"
                )))
            }
        };
        if alpha.iter().any(|&a| !(a > 0.0)) {
            return Err(StrategyError::Config("owm_alpha must be positive".into()));
        }
        Ok(OwmState {
            projectors: mlp
                .layers()
                .iter()
                .map(|l| Array2::eye(l.fan_in() + 1))
                .collect(),
            alpha,
            alpha_decay,
        })
    }

    pub fn alpha_at(&self, layer: usize, task_index: usize, num_tasks: usize) -> f64 {
        let frac = task_index as f64 / num_tasks.max(1) as f64;
        self.alpha[layer] * self.alpha_decay.powf(frac)
    }
}

/// `P ← P − (P x)(xᵀ P) / (α + xᵀ P x)`.
pub fn owm_update_projection(
    p: &mut Array2<f64>,
    x: &Array1<f64>,
    alpha: f64,
) -> Result<(), StrategyError> {
    if p.dim() != (x.len(), x.len()) {
        return Err(NnError::Shape {
            context: "owm_update_projection",
            expected: format!("{0}x{0}", x.len()),
            found: format!("{:?}", p.dim()),
        }
        .into());
    }
    if !(alpha > 0.0) {
        return Err(StrategyError::Config(format!("OWM alpha must be positive, got {alpha}")));
    }
    let px = p.dot(x);
    let xp = x.dot(&*p);
    let denom = alpha + x.dot(&px);
    let col = px.view().insert_axis(ndarray::Axis(1));
    let row = xp.view().insert_axis(ndarray::Axis(0));
    p.scaled_add(-1.0 / denom, &col.dot(&row));
    Ok(())
}

/// Bias-augmented per-layer inputs used to update the projectors: the mean
/// activation of each consecutive chunk of `chunk` samples, with a trailing 1.
pub fn projection_inputs(
    mlp: &Mlp,
    task: &TaskDataset,
    chunk: usize,
) -> Result<Vec<Vec<Array1<f64>>>, StrategyError> {
    let layers = mlp.layers().len();
    let mut out = vec![Vec::new(); layers];
    let idx: Vec<usize> = (0..task.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let x = task.samples.to_matrix(part);
        let trace = mlp.forward(&x)?;
        for (l, inputs) in out.iter_mut().enumerate() {
            let a = &trace.activations[l];
            let mut v = Array1::zeros(a.ncols() + 1);
            v.slice_mut(ndarray::s![..a.ncols()])
                .assign(&a.mean_axis(ndarray::Axis(0)).expect("non-empty chunk"));
            v[a.ncols()] = 1.0;
            inputs.push(v);
        }
    }
    Ok(out)
}

/// Absorbs a finished task into the projectors.
pub fn absorb_task(
    state: &mut OwmState,
    mlp: &Mlp,
    task: &TaskDataset,
    chunk: usize,
    task_index: usize,
    num_tasks: usize,
) -> Result<(), StrategyError> {
    let inputs = projection_inputs(mlp, task, chunk)?;
    for (l, xs) in inputs.iter().enumerate() {
        let alpha = state.alpha_at(l, task_index, num_tasks);
        for x in xs {
            owm_update_projection(&mut state.projectors[l], x, alpha)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn single_update_scales_px() {
        let mut p = Array2::<f64>::eye(3);
        p[[0, 1]] = 0.2;
        p[[1, 0]] = 0.2;
        let x = array![1.0, -2.0, 0.5];
        let alpha = 0.3;
        let px = p.dot(&x);
        let xpx = x.dot(&px);
        owm_update_projection(&mut p, &x, alpha).unwrap();
        let after = p.dot(&x);
        for (a, b) in after.iter().zip(px.iter()) {
            assert_abs_diff_eq!(*a, alpha / (alpha + xpx) * b, epsilon = 1e-12);
        }
        assert!(after.dot(&after) < px.dot(&px));
    }

    #[test]
    fn repeated_updates_shrink_px_harmonically() {
        let mut p = Array2::<f64>::eye(4);
        let x = array![0.5, 1.0, 0.0, 1.0];
        let (alpha, xx) = (0.5, x.dot(&x));
        for n in 1..=20 {
            owm_update_projection(&mut p, &x, alpha).unwrap();
            let expected = alpha / (alpha + n as f64 * xx);
            for (a, b) in p.dot(&x).iter().zip(x.iter()) {
                assert_abs_diff_eq!(*a, expected * b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let mut p = Array2::<f64>::eye(2);
        assert!(owm_update_projection(&mut p, &array![1.0, 2.0, 3.0], 1.0).is_err());
        assert!(owm_update_projection(&mut p, &array![1.0, 2.0], 0.0).is_err());
    }
}
