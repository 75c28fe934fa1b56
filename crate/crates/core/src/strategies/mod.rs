//! Continual-learning strategies behind one interface, [`Learner`].
//!
//! Single-head strategies predict over the classes seen so far. ER, DER++ and
//! iCaRL also mask unseen classes in the training softmax. OWM trains against
//! the full head.

mod buffer;
mod gdumb;
mod isolation;
mod owm;
mod replay;

pub use buffer::{herding_select, BufferPolicy, Exemplar, ExemplarBuffer};
pub use gdumb::GDumbState;
pub use isolation::{Expert, ExpertEnsemble};
pub use owm::{absorb_task, owm_update_projection, projection_inputs, OwmState};
pub use replay::{IcarlState, ReplayState};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, RawDataset, TaskDataset, NUM_CLASSES};
use crate::nn::{masked_softmax_cross_entropy, Mlp, NnError};
use crate::rng::{stream, STREAM_INIT};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("strategy {kind:?} cannot use {state} state")]
    StateMismatch { kind: StrategyKind, state: &'static str },
    #[error("task {0} has no samples")]
    EmptyTask(usize),
    #[error("class {0} was already trained")]
    ClassAlreadyTrained(u8),
    #[error("no task has been trained yet")]
    NotTrained,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Owm,
    Er,
    #[serde(rename = "derpp")]
    DerPlusPlus,
    Gdumb,
    Icarl,
    Isolation,
    Joint,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Owm => "owm",
            StrategyKind::Er => "er",
            StrategyKind::DerPlusPlus => "derpp",
            StrategyKind::Gdumb => "gdumb",
            StrategyKind::Icarl => "icarl",
            StrategyKind::Isolation => "isolation",
            StrategyKind::Joint => "joint",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            StrategyKind::Owm,
            StrategyKind::Er,
            StrategyKind::DerPlusPlus,
            StrategyKind::Gdumb,
            StrategyKind::Icarl,
            StrategyKind::Isolation,
            StrategyKind::Joint,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }

    /// Hidden widths of the default backbone.
    pub fn default_hidden(self) -> Vec<usize> {
        match self {
            StrategyKind::Owm | StrategyKind::Joint => vec![800],
            _ => vec![400, 400],
        }
    }
}

/// Training schedule plus every strategy-specific knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub der_alpha: f64,
    pub der_beta: f64,
    pub owm_alpha: Vec<f64>,
    pub owm_alpha_decay: f64,
    pub distill_temperature: f64,
    pub expert_hidden: usize,
    pub gdumb_epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            epochs: 5,
            batch_size: 64,
            lr: 0.1,
            hidden: vec![800],
            buffer_capacity: 2000,
            der_alpha: 0.5,
            der_beta: 0.5,
            owm_alpha: vec![1e-3],
            owm_alpha_decay: 1e-3,
            distill_temperature: 2.0,
            expert_hidden: 100,
            gdumb_epochs: 20,
        }
    }
}

impl Hyperparams {
    pub fn for_kind(kind: StrategyKind) -> Self {
        let base = Hyperparams {
            hidden: kind.default_hidden(),
            ..Hyperparams::default()
        };
        match kind {
            StrategyKind::Owm => Hyperparams {
                epochs: 1,
                lr: 0.5,
                owm_alpha: vec![1e-2, 1e-1],
                owm_alpha_decay: 1.0,
                ..base
            },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<(), StrategyError> {
        let bad = |m: &str| Err(StrategyError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0) {
            return bad("lr must be non-negative");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive");
        }
        if !(self.distill_temperature > 0.0) {
            return bad("distill_temperature must be positive");
        }
        if self.hidden.contains(&0) || self.expert_hidden == 0 {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum StrategyState {
    Owm(OwmState),
    Er(ReplayState),
    DerPlusPlus(ReplayState),
    Gdumb(GDumbState),
    Icarl(IcarlState),
    Isolation(ExpertEnsemble),
    Joint,
}

impl StrategyState {
    fn name(&self) -> &'static str {
        match self {
            StrategyState::Owm(_) => "owm",
            StrategyState::Er(_) => "er",
            StrategyState::DerPlusPlus(_) => "derpp",
            StrategyState::Gdumb(_) => "gdumb",
            StrategyState::Icarl(_) => "icarl",
            StrategyState::Isolation(_) => "isolation",
            StrategyState::Joint => "joint",
        }
    }

    pub fn initial(kind: StrategyKind, mlp: &Mlp, hp: &Hyperparams) -> Result<Self, StrategyError> {
        Ok(match kind {
            StrategyKind::Owm => {
                StrategyState::Owm(OwmState::new(mlp, &hp.owm_alpha, hp.owm_alpha_decay)?)
            }
            StrategyKind::Er => StrategyState::Er(ReplayState::new(hp.buffer_capacity)),
            StrategyKind::DerPlusPlus => {
                StrategyState::DerPlusPlus(ReplayState::new(hp.buffer_capacity))
            }
            StrategyKind::Gdumb => StrategyState::Gdumb(GDumbState::new(hp.buffer_capacity)),
            StrategyKind::Icarl => StrategyState::Icarl(IcarlState::new(hp.buffer_capacity)),
            StrategyKind::Isolation => StrategyState::Isolation(ExpertEnsemble::default()),
            StrategyKind::Joint => StrategyState::Joint,
        })
    }
}

/// Where a learner is in its task sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Progress {
    /// Classes trained so far, in order.
    pub seen: Vec<usize>,
    pub tasks_trained: usize,
    pub num_tasks: usize,
}

/// Anything that maps a batch of normalized images to class predictions.
pub trait Predictor {
    fn predict_batch(&mut self, batch: &Array2<f64>) -> Result<Vec<u8>, StrategyError>;
}

impl<F> Predictor for F
where
    F: FnMut(&Array2<f64>) -> Result<Vec<u8>, StrategyError>,
{
    fn predict_batch(&mut self, batch: &Array2<f64>) -> Result<Vec<u8>, StrategyError> {
        self(batch)
    }
}

/// One strategy instance: network, persistent strategy state and progress.
#[derive(Debug, Clone)]
pub struct Learner {
    kind: StrategyKind,
    hp: Hyperparams,
    mlp: Mlp,
    state: StrategyState,
    progress: Progress,
    seed: u64,
}

impl Learner {
    pub fn new(
        kind: StrategyKind,
        hp: Hyperparams,
        input_dim: usize,
        num_tasks: usize,
        seed: u64,
    ) -> Result<Self, StrategyError> {
        hp.validate()?;
        let mut dims = vec![input_dim];
        dims.extend(&hp.hidden);
        dims.push(NUM_CLASSES);
        let mlp = Mlp::new(&dims, &mut stream(seed, STREAM_INIT))?;
        let state = StrategyState::initial(kind, &mlp, &hp)?;
        Ok(Learner {
            kind,
            hp,
            mlp,
            state,
            progress: Progress {
                num_tasks,
                ..Progress::default()
            },
            seed,
        })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn state(&self) -> &StrategyState {
        &self.state
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn train_task<R: Rng + ?Sized>(
        &mut self,
        task: &TaskDataset,
        rng: &mut R,
    ) -> Result<(), StrategyError> {
        train_task(
            self.kind,
            &mut self.state,
            &mut self.mlp,
            &mut self.progress,
            task,
            &self.hp,
            rng,
        )
    }

    /// Trains on a whole dataset at once (joint baseline).
    pub fn train_joint<R: Rng + ?Sized>(
        &mut self,
        ds: &RawDataset,
        rng: &mut R,
    ) -> Result<(), StrategyError> {
        if self.kind != StrategyKind::Joint {
            return Err(StrategyError::StateMismatch {
                kind: self.kind,
                state: self.state.name(),
            });
        }
        train_joint(&mut self.mlp, ds, &self.hp, rng)?;
        self.progress.seen = (0..NUM_CLASSES).collect();
        self.progress.tasks_trained = self.progress.num_tasks.max(1);
        Ok(())
    }

    pub fn predict(&mut self, image: &[u8]) -> Result<u8, StrategyError> {
        let x = Array2::from_shape_vec((1, image.len()), crate::data::normalize(image))
            .expect("row vector");
        Ok(self.predict_batch(&x)?[0])
    }
}

impl Predictor for Learner {
    fn predict_batch(&mut self, batch: &Array2<f64>) -> Result<Vec<u8>, StrategyError> {
        if self.progress.seen.is_empty() {
            return Err(StrategyError::NotTrained);
        }
        match &mut self.state {
            StrategyState::Icarl(state) => state.predict(&self.mlp, batch),
            StrategyState::Gdumb(state) => state.predict(batch, &self.hp, self.seed),
            StrategyState::Isolation(ensemble) => ensemble.predict(batch),
            _ => {
                let logits = self.mlp.logits(batch)?;
                Ok(masked_argmax(&logits, &self.progress.seen))
            }
        }
    }
}

/// Argmax per row over `active` columns.
pub fn masked_argmax(logits: &Array2<f64>, active: &[usize]) -> Vec<u8> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = active[0];
            for &c in &active[1..] {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Fits one task with the given strategy. The learner's class set grows by
/// the task's classes.
pub fn train_task<R: Rng + ?Sized>(
    kind: StrategyKind,
    state: &mut StrategyState,
    mlp: &mut Mlp,
    progress: &mut Progress,
    task: &TaskDataset,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<(), StrategyError> {
    let mismatch = || StrategyError::StateMismatch {
        kind,
        state: state.name(),
    };
    let matches = matches!(
        (kind, &*state),
        (StrategyKind::Owm, StrategyState::Owm(_))
            | (StrategyKind::Er, StrategyState::Er(_))
            | (StrategyKind::DerPlusPlus, StrategyState::DerPlusPlus(_))
            | (StrategyKind::Gdumb, StrategyState::Gdumb(_))
            | (StrategyKind::Icarl, StrategyState::Icarl(_))
            | (StrategyKind::Isolation, StrategyState::Isolation(_))
    );
    if !matches {
        return Err(mismatch());
    }
    if task.is_empty() {
        return Err(StrategyError::EmptyTask(task.task_id));
    }
    for &c in &task.classes {
        if progress.seen.contains(&(c as usize)) {
            return Err(StrategyError::ClassAlreadyTrained(c));
        }
    }
    let old_seen = progress.seen.clone();
    progress.seen.extend(task.classes.iter().map(|&c| c as usize));
    let task_index = progress.tasks_trained;
    match state {
        StrategyState::Owm(owm) => {
            let head: Vec<usize> = (0..mlp.output_dim()).collect();
            for _ in 0..hp.epochs {
                for batch in shuffled_batches(task.len(), hp.batch_size, rng) {
                    let x = task.samples.to_matrix(&batch);
                    let labels: Vec<usize> =
                        batch.iter().map(|&i| task.samples.label(i) as usize).collect();
                    let trace = mlp.forward(&x)?;
                    let (_, d) = masked_softmax_cross_entropy(trace.logits(), &labels, &head)?;
                    let grads = mlp.backward_projected(&trace, &d, &owm.projectors)?;
                    mlp.sgd_step(&grads, hp.lr, None)?;
                }
            }
            absorb_task(owm, mlp, task, hp.batch_size, task_index, progress.num_tasks)?;
        }
        StrategyState::Er(replay) => replay.train_er(mlp, task, hp, &progress.seen, rng)?,
        StrategyState::DerPlusPlus(replay) => replay.train_derpp(mlp, task, hp, &progress.seen, rng)?,
        StrategyState::Gdumb(g) => g.observe(task, rng),
        StrategyState::Icarl(icarl) => icarl.train(mlp, task, hp, &old_seen, &progress.seen, rng)?,
        StrategyState::Isolation(ensemble) => ensemble.train_expert(task, hp, rng)?,
        StrategyState::Joint => unreachable!("rejected above"),
    }
    progress.tasks_trained += 1;
    Ok(())
}

/// Plain minibatch SGD on every class at once.
pub fn train_joint<R: Rng + ?Sized>(
    mlp: &mut Mlp,
    ds: &RawDataset,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<(), StrategyError> {
    if ds.is_empty() {
        return Err(StrategyError::EmptyTask(0));
    }
    let all: Vec<usize> = (0..mlp.output_dim()).collect();
    for _ in 0..hp.epochs {
        for batch in shuffled_batches(ds.len(), hp.batch_size, rng) {
            let x = ds.to_matrix(&batch);
            let labels: Vec<usize> = batch.iter().map(|&i| ds.label(i) as usize).collect();
            let trace = mlp.forward(&x)?;
            let (_, d) = masked_softmax_cross_entropy(trace.logits(), &labels, &all)?;
            let grads = mlp.backward(&trace, &d, false)?;
            mlp.sgd_step(&grads, hp.lr, None)?;
        }
    }
    Ok(())
}

pub(crate) fn shuffled_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Normalized images stacked row-wise.
pub(crate) fn images_to_matrix<'a>(images: impl ExactSizeIterator<Item = &'a [u8]>) -> Array2<f64> {
    let rows = images.len();
    let mut data = Vec::new();
    let mut width = 0;
    for img in images {
        width = img.len();
        data.extend(img.iter().map(|&p| p as f64 / 255.0));
    }
    Array2::from_shape_vec((rows, width), data).expect("uniform image width")
}
