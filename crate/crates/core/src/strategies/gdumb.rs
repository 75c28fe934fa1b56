//! GDumb: a class-balanced greedy buffer and a network refit from scratch on
//! the buffer whenever a prediction is requested.

use ndarray::Array2;
use rand::Rng;

use super::{masked_argmax, shuffled_batches, BufferPolicy, Exemplar, ExemplarBuffer, Hyperparams, StrategyError};
use crate::data::TaskDataset;
use crate::nn::{masked_softmax_cross_entropy, Mlp};
use crate::rng::{stream, STREAM_TRAIN};

#[derive(Debug, Clone)]
pub struct GDumbState {
    pub buffer: ExemplarBuffer,
    offered: usize,
    /// Network fitted to the buffer at the recorded version.
    fitted: Option<(u64, Mlp)>,
}

impl GDumbState {
    pub fn new(capacity: usize) -> Self {
        GDumbState {
            buffer: ExemplarBuffer::new(capacity, BufferPolicy::Balanced),
            offered: 0,
            fitted: None,
        }
    }

    /// Streams the task through the balanced buffer; no gradient steps.
    pub fn observe<R: Rng + ?Sized>(&mut self, task: &TaskDataset, rng: &mut R) {
        for i in 0..task.len() {
            let item = Exemplar {
                image: task.samples.image(i).to_vec(),
                label: task.samples.label(i),
                logits: None,
                stream_index: self.offered,
                task_id: task.task_id,
            };
            self.buffer.update(item, self.offered, rng);
            self.offered += 1;
        }
    }

    fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.buffer.seen_classes().iter().map(|&c| c as usize).collect();
        c.sort_unstable();
        c
    }

    /// Trains a fresh network on the buffer contents. The seed depends only
    /// on the run seed and the buffer version, so refits are reproducible.
    pub fn fit(&self, hp: &Hyperparams, seed: u64) -> Result<Mlp, StrategyError> {
        if self.buffer.is_empty() {
            return Err(StrategyError::NotTrained);
        }
        let input = self.buffer.entries()[0].image.len();
        let mut dims = vec![input];
        dims.extend(&hp.hidden);
        dims.push(crate::data::NUM_CLASSES);
        let fit_seed = seed ^ self.buffer.version().wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = stream(fit_seed, STREAM_TRAIN);
        let mut mlp = Mlp::new(&dims, &mut rng)?;
        let classes = self.classes();
        let labels: Vec<usize> = self.buffer.entries().iter().map(|e| e.label as usize).collect();
        for _ in 0..hp.gdumb_epochs {
            for batch in shuffled_batches(self.buffer.len(), hp.batch_size, &mut rng) {
                let x = self.buffer.images_matrix(&batch);
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let trace = mlp.forward(&x)?;
                let (_, d) = masked_softmax_cross_entropy(trace.logits(), &y, &classes)?;
                let grads = mlp.backward(&trace, &d, false)?;
                mlp.sgd_step(&grads, hp.lr, None)?;
            }
        }
        Ok(mlp)
    }

    pub fn predict(
        &mut self,
        batch: &Array2<f64>,
        hp: &Hyperparams,
        seed: u64,
    ) -> Result<Vec<u8>, StrategyError> {
        let version = self.buffer.version();
        if self.fitted.as_ref().map(|(v, _)| *v) != Some(version) {
            self.fitted = Some((version, self.fit(hp, seed)?));
        }
        let mlp = &self.fitted.as_ref().expect("fitted above").1;
        Ok(masked_argmax(&mlp.logits(batch)?, &self.classes()))
    }
}
