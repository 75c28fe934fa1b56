//! Rehearsal strategies: ER, DER++ and iCaRL.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;

use super::{
    herding_select, images_to_matrix, shuffled_batches, BufferPolicy, Exemplar, ExemplarBuffer,
    Hyperparams, StrategyError,
};
use crate::data::TaskDataset;
use crate::nn::{aux_loss_masked, masked_softmax_cross_entropy, AuxLossKind, Mlp};

/// Reservoir buffer shared by ER and DER++.
#[derive(Debug, Clone)]
pub struct ReplayState {
    pub buffer: ExemplarBuffer,
    /// Stream items offered to the buffer so far.
    pub offered: usize,
}

impl ReplayState {
    pub fn new(capacity: usize) -> Self {
        ReplayState {
            buffer: ExemplarBuffer::new(capacity, BufferPolicy::Reservoir),
            offered: 0,
        }
    }

    fn offer<R: Rng + ?Sized>(
        &mut self,
        task: &TaskDataset,
        batch: &[usize],
        logits: Option<&Array2<f64>>,
        rng: &mut R,
    ) {
        for (r, &i) in batch.iter().enumerate() {
            let item = Exemplar {
                image: task.samples.image(i).to_vec(),
                label: task.samples.label(i),
                logits: logits.map(|l| l.row(r).to_vec()),
                stream_index: self.offered,
                task_id: task.task_id,
            };
            self.buffer.update(item, self.offered, rng);
            self.offered += 1;
        }
    }

    fn draw<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        if self.buffer.is_empty() {
            Vec::new()
        } else {
            self.buffer.sample_indices(k, rng)
        }
    }

    /// Each step trains on the new minibatch stacked with an equally sized
    /// uniform draw from the buffer; the new samples are then offered to the
    /// reservoir.
    pub fn train_er<R: Rng + ?Sized>(
        &mut self,
        mlp: &mut Mlp,
        task: &TaskDataset,
        hp: &Hyperparams,
        seen: &[usize],
        rng: &mut R,
    ) -> Result<(), StrategyError> {
        for _ in 0..hp.epochs {
            for batch in shuffled_batches(task.len(), hp.batch_size, rng) {
                let replay = self.draw(batch.len(), rng);
                let mut x = task.samples.to_matrix(&batch);
                let mut labels: Vec<usize> =
                    batch.iter().map(|&i| task.samples.label(i) as usize).collect();
                if !replay.is_empty() {
                    x = concatenate![Axis(0), x, self.buffer.images_matrix(&replay)];
                    labels.extend(replay.iter().map(|&j| self.buffer.entries()[j].label as usize));
                }
                let trace = mlp.forward(&x)?;
                let (_, d) = masked_softmax_cross_entropy(trace.logits(), &labels, seen)?;
                let grads = mlp.backward(&trace, &d, false)?;
                mlp.sgd_step(&grads, hp.lr, None)?;
                self.offer(task, &batch, None, rng);
            }
        }
        Ok(())
    }

    /// ER's cross-entropy on new data, plus `der_alpha`·logit MSE against
    /// stored logits and `der_beta`·cross-entropy on stored labels, each on
    /// its own buffer draw. New samples enter the reservoir with the logits
    /// the network produced for them in this step's forward pass.
    pub fn train_derpp<R: Rng + ?Sized>(
        &mut self,
        mlp: &mut Mlp,
        task: &TaskDataset,
        hp: &Hyperparams,
        seen: &[usize],
        rng: &mut R,
    ) -> Result<(), StrategyError> {
        let all: Vec<usize> = (0..mlp.output_dim()).collect();
        for _ in 0..hp.epochs {
            for batch in shuffled_batches(task.len(), hp.batch_size, rng) {
                let n_new = batch.len();
                let draw_a = self.draw(n_new, rng);
                let draw_b = self.draw(n_new, rng);
                let mut x = task.samples.to_matrix(&batch);
                if !draw_a.is_empty() {
                    x = concatenate![
                        Axis(0),
                        x,
                        self.buffer.images_matrix(&draw_a),
                        self.buffer.images_matrix(&draw_b)
                    ];
                }
                let trace = mlp.forward(&x)?;
                let logits = trace.logits();
                let mut d = Array2::zeros(logits.dim());

                let new_labels: Vec<usize> =
                    batch.iter().map(|&i| task.samples.label(i) as usize).collect();
                let (_, d_new) = masked_softmax_cross_entropy(
                    &logits.slice(s![..n_new, ..]).to_owned(),
                    &new_labels,
                    seen,
                )?;
                d.slice_mut(s![..n_new, ..]).assign(&d_new);

                let a_end = n_new + draw_a.len();
                if !draw_a.is_empty() {
                    let targets = Array2::from_shape_vec(
                        (draw_a.len(), logits.ncols()),
                        draw_a
                            .iter()
                            .flat_map(|&j| {
                                self.buffer.entries()[j]
                                    .logits
                                    .clone()
                                    .expect("DER++ entries carry logits")
                            })
                            .collect(),
                    )
                    .expect("stored logits have the head width");
                    let (_, d_a) = aux_loss_masked(
                        AuxLossKind::LogitMse,
                        &logits.slice(s![n_new..a_end, ..]).to_owned(),
                        &targets,
                        1.0,
                        &all,
                    )?;
                    d.slice_mut(s![n_new..a_end, ..]).scaled_add(hp.der_alpha, &d_a);
                }
                if !draw_b.is_empty() {
                    let labels: Vec<usize> = draw_b
                        .iter()
                        .map(|&j| self.buffer.entries()[j].label as usize)
                        .collect();
                    let (_, d_b) = masked_softmax_cross_entropy(
                        &logits.slice(s![a_end.., ..]).to_owned(),
                        &labels,
                        seen,
                    )?;
                    d.slice_mut(s![a_end.., ..]).scaled_add(hp.der_beta, &d_b);
                }
                let new_logits = logits.slice(s![..n_new, ..]).to_owned();
                let grads = mlp.backward(&trace, &d, false)?;
                mlp.sgd_step(&grads, hp.lr, None)?;
                self.offer(task, &batch, Some(&new_logits), rng);
            }
        }
        Ok(())
    }
}

/// Herding exemplar sets and the cached nearest-mean-of-exemplars prototypes.
#[derive(Debug, Clone)]
pub struct IcarlState {
    pub buffer: ExemplarBuffer,
    /// `(class, L2-normalized mean feature)` for every class in the buffer.
    pub class_means: Vec<(u8, Array1<f64>)>,
}

impl IcarlState {
    pub fn new(capacity: usize) -> Self {
        IcarlState {
            buffer: ExemplarBuffer::new(capacity, BufferPolicy::Herding),
            class_means: Vec::new(),
        }
    }

    /// Cross-entropy on the new data plus distillation of the pre-task
    /// network's old-class logits on new and replayed samples. Afterwards the
    /// exemplar sets are re-balanced by herding and prototypes recomputed.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        mlp: &mut Mlp,
        task: &TaskDataset,
        hp: &Hyperparams,
        old_seen: &[usize],
        seen: &[usize],
        rng: &mut R,
    ) -> Result<(), StrategyError> {
        let teacher = mlp.clone();
        for _ in 0..hp.epochs {
            for batch in shuffled_batches(task.len(), hp.batch_size, rng) {
                let n_new = batch.len();
                let replay = if self.buffer.is_empty() {
                    Vec::new()
                } else {
                    self.buffer.sample_indices(n_new, rng)
                };
                let mut x = task.samples.to_matrix(&batch);
                if !replay.is_empty() {
                    x = concatenate![Axis(0), x, self.buffer.images_matrix(&replay)];
                }
                let trace = mlp.forward(&x)?;
                let logits = trace.logits();
                let labels: Vec<usize> =
                    batch.iter().map(|&i| task.samples.label(i) as usize).collect();
                let (_, d_new) = masked_softmax_cross_entropy(
                    &logits.slice(s![..n_new, ..]).to_owned(),
                    &labels,
                    seen,
                )?;
                let mut d = Array2::zeros(logits.dim());
                d.slice_mut(s![..n_new, ..]).assign(&d_new);
                if !old_seen.is_empty() {
                    let targets = teacher.logits(&x)?;
                    let (_, d_kd) = aux_loss_masked(
                        AuxLossKind::Distill,
                        logits,
                        &targets,
                        hp.distill_temperature,
                        old_seen,
                    )?;
                    d += &d_kd;
                }
                let grads = mlp.backward(&trace, &d, false)?;
                mlp.sgd_step(&grads, hp.lr, None)?;
            }
        }
        self.rebuild_exemplars(mlp, task, seen.len())?;
        self.refresh_means(mlp)
    }

    fn rebuild_exemplars(
        &mut self,
        mlp: &Mlp,
        task: &TaskDataset,
        classes: usize,
    ) -> Result<(), StrategyError> {
        let per_class = self.buffer.capacity() / classes.max(1);
        self.buffer.truncate_per_class(per_class);
        for &class in &task.classes {
            let members: Vec<usize> = (0..task.len())
                .filter(|&i| task.samples.label(i) == class)
                .collect();
            let feats = l2_normalize_rows(mlp.features(&task.samples.to_matrix(&members))?);
            let picks = herding_select(&feats, per_class);
            self.buffer.extend_selected(picks.into_iter().map(|p| {
                let i = members[p];
                Exemplar {
                    image: task.samples.image(i).to_vec(),
                    label: class,
                    logits: None,
                    stream_index: i,
                    task_id: task.task_id,
                }
            }));
        }
        Ok(())
    }

    /// Recomputes every class prototype with the current network.
    pub fn refresh_means(&mut self, mlp: &Mlp) -> Result<(), StrategyError> {
        let mut classes: Vec<u8> = self.buffer.entries().iter().map(|e| e.label).collect();
        classes.sort_unstable();
        classes.dedup();
        self.class_means.clear();
        for class in classes {
            let x = images_to_matrix(
                self.buffer
                    .entries()
                    .iter()
                    .filter(|e| e.label == class)
                    .map(|e| e.image.as_slice())
                    .collect::<Vec<_>>()
                    .into_iter(),
            );
            let feats = l2_normalize_rows(mlp.features(&x)?);
            let mean = feats.mean_axis(Axis(0)).expect("class has exemplars");
            self.class_means.push((class, l2_normalize(mean)));
        }
        Ok(())
    }

    pub fn predict(&self, mlp: &Mlp, batch: &Array2<f64>) -> Result<Vec<u8>, StrategyError> {
        if self.class_means.is_empty() {
            return Err(StrategyError::NotTrained);
        }
        let feats = l2_normalize_rows(mlp.features(batch)?);
        Ok(nearest_mean(&feats, &self.class_means))
    }
}

/// Class of the nearest prototype (Euclidean) for each row.
pub fn nearest_mean(features: &Array2<f64>, means: &[(u8, Array1<f64>)]) -> Vec<u8> {
    features
        .rows()
        .into_iter()
        .map(|f| {
            let mut best = (f64::INFINITY, means[0].0);
            for (class, mu) in means {
                let d: f64 = f.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, *class);
                }
            }
            best.1
        })
        .collect()
}

fn l2_normalize(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

pub(crate) fn l2_normalize_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    m
}
