//! Task isolation: an independent one-vs-noise expert per single-class task.
//! Training a new expert never touches earlier ones.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{shuffled_batches, Hyperparams, StrategyError};
use crate::data::TaskDataset;
use crate::nn::{bce_with_logits, Mlp};

#[derive(Debug, Clone)]
pub struct Expert {
    pub task_id: usize,
    pub class: u8,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Default)]
pub struct ExpertEnsemble {
    pub experts: Vec<Expert>,
}

impl ExpertEnsemble {
    /// Fits a `d-H-1` scorer that separates the task's images (target 1)
    /// from pixel-shuffled copies of them (target 0).
    pub fn train_expert<R: Rng + ?Sized>(
        &mut self,
        task: &TaskDataset,
        hp: &Hyperparams,
        rng: &mut R,
    ) -> Result<(), StrategyError> {
        let [class] = task.classes[..] else {
            return Err(StrategyError::Config(format!(
                "isolation needs single-class tasks, task {} has {} classes",
                task.task_id,
                task.classes.len()
            )));
        };
        let d = task.samples.image_len();
        let mut mlp = Mlp::new(&[d, hp.expert_hidden, 1], rng)?;
        let mut perm: Vec<usize> = (0..d).collect();
        for _ in 0..hp.epochs {
            for batch in shuffled_batches(task.len(), hp.batch_size, rng) {
                let pos = task.samples.to_matrix(&batch);
                let mut neg = pos.clone();
                for mut row in neg.rows_mut() {
                    perm.shuffle(rng);
                    let src = row.to_vec();
                    for (dst, &p) in row.iter_mut().zip(&perm) {
                        *dst = src[p];
                    }
                }
                let x = ndarray::concatenate![Axis(0), pos, neg];
                let targets: Vec<f64> = (0..x.nrows())
                    .map(|i| if i < batch.len() { 1.0 } else { 0.0 })
                    .collect();
                let trace = mlp.forward(&x)?;
                let (_, dl) = bce_with_logits(trace.logits(), &targets)?;
                let grads = mlp.backward(&trace, &dl, false)?;
                mlp.sgd_step(&grads, hp.lr, None)?;
            }
        }
        self.experts.push(Expert {
            task_id: task.task_id,
            class,
            mlp,
        });
        Ok(())
    }

    /// Class of the expert with the largest logit.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Vec<u8>, StrategyError> {
        if self.experts.is_empty() {
            return Err(StrategyError::NotTrained);
        }
        let mut best = vec![(f64::NEG_INFINITY, self.experts[0].class); batch.nrows()];
        for e in &self.experts {
            let z = e.mlp.logits(batch)?;
            for (b, &v) in best.iter_mut().zip(z.column(0)) {
                if v > b.0 {
                    *b = (v, e.class);
                }
            }
        }
        Ok(best.into_iter().map(|(_, c)| c).collect())
    }
}
