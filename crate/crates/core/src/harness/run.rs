use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::{ExperimentConfig, HarnessError, SummaryStats};
use crate::data::{
    build_joint_dataset, build_shifted_task, concat_tasks, load_mnist_split, split_by_class,
    DatasetManifest, MnistFiles, RawDataset, ShiftKind, ShiftSpec, Split, TaskDataset,
};
use crate::nn::Mlp;
use crate::rng::{stream, STREAM_INIT, STREAM_REFERENCE, STREAM_SHIFT, STREAM_TRAIN};
use crate::strategies::{masked_argmax, train_joint, Hyperparams, Learner, Predictor, StrategyKind};

/// Train and test splits already cut into class-incremental tasks.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Vec<TaskDataset>,
    pub test: Vec<TaskDataset>,
    pub manifest: DatasetManifest,
}

impl Benchmark {
    /// Loads the four uncompressed MNIST IDX files from `dir`.
    pub fn load(dir: &Path, order: &[u8]) -> Result<Self, HarnessError> {
        let files = MnistFiles::in_dir(dir);
        let manifest = DatasetManifest::from_files(&files.all())?;
        let train = load_mnist_split(dir, Split::Train)?;
        let test = load_mnist_split(dir, Split::Test)?;
        let mut bench = Self::from_datasets(&train, &test, order)?;
        bench.manifest = manifest;
        Ok(bench)
    }

    pub fn from_datasets(
        train: &RawDataset,
        test: &RawDataset,
        order: &[u8],
    ) -> Result<Self, HarnessError> {
        Ok(Benchmark {
            train: split_by_class(train, order)?,
            test: split_by_class(test, order)?,
            manifest: DatasetManifest::default(),
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.train.len()
    }

    pub fn input_dim(&self) -> usize {
        self.train.first().map_or(0, |t| t.samples.image_len())
    }

    fn image_shape(&self) -> (usize, usize) {
        self.train
            .first()
            .map_or((0, 0), |t| (t.samples.rows(), t.samples.cols()))
    }

    fn check_matches(&self, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        if cfg.num_tasks() != self.num_tasks() {
            return Err(HarnessError::config(
                "data.order",
                format!(
                    "config has {} tasks, benchmark has {}",
                    cfg.num_tasks(),
                    self.num_tasks()
                ),
            ));
        }
        Ok(())
    }

    /// The configured shift spec with image bounds checked.
    pub fn shift_spec(&self, cfg: &ExperimentConfig) -> Result<Option<ShiftSpec>, HarnessError> {
        let (rows, cols) = self.image_shape();
        cfg.shift.as_ref().map(|s| s.to_spec(rows, cols)).transpose()
    }

    /// The shifted replacement for the target task, or `None` for a control run.
    pub fn shifted_task(
        &self,
        cfg: &ExperimentConfig,
        seed: u64,
    ) -> Result<Option<TaskDataset>, HarnessError> {
        let Some(spec) = self.shift_spec(cfg)? else {
            return Ok(None);
        };
        let reference = match spec.kind {
            ShiftKind::Fgsm { .. } => Some(self.reference_model(cfg, seed)?),
            ShiftKind::Occlusion { .. } => None,
        };
        let mut rng = stream(seed, STREAM_SHIFT);
        let task = &self.train[spec.target_task - 1];
        Ok(Some(build_shifted_task(task, &spec, &mut rng, reference.as_ref())?))
    }

    /// One clean joint epoch with the configured backbone; source of FGSM gradients.
    fn reference_model(&self, cfg: &ExperimentConfig, seed: u64) -> Result<Mlp, HarnessError> {
        let hp = Hyperparams {
            epochs: 1,
            ..cfg.hyperparams()?
        };
        let mut rng = stream(seed, STREAM_REFERENCE);
        let mut mlp = Mlp::new(&backbone(self.input_dim(), &hp), &mut rng)?;
        train_joint(&mut mlp, &concat_tasks(&self.train), &hp, &mut rng)?;
        Ok(mlp)
    }
}

fn backbone(input: usize, hp: &Hyperparams) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(&hp.hidden);
    dims.push(crate::data::NUM_CLASSES);
    dims
}

/// Accuracy matrix of one continual run. `accuracy[t][j]` is the accuracy on
/// task `j + 1` after training task `t + 1`, for `j <= t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub accuracy: Vec<Vec<f64>>,
    pub test_sizes: Vec<usize>,
    pub wall_secs: f64,
}

impl RunResult {
    /// `A[t][j]` with 1-based `t` and `j`.
    pub fn at(&self, t: usize, j: usize) -> f64 {
        self.accuracy[t - 1][j - 1]
    }

    pub fn num_tasks(&self) -> usize {
        self.accuracy.len()
    }
}

/// Percentage of correct predictions on each task's full test set.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &mut P,
    tests: &[TaskDataset],
) -> Result<Vec<f64>, HarnessError> {
    const CHUNK: usize = 2000;
    tests
        .iter()
        .map(|task| {
            if task.is_empty() {
                return Err(HarnessError::EmptyTestSet(task.task_id));
            }
            let idx: Vec<usize> = (0..task.len()).collect();
            let mut correct = 0usize;
            for part in idx.chunks(CHUNK) {
                let pred = predictor.predict_batch(&task.samples.to_matrix(part))?;
                correct += part
                    .iter()
                    .zip(pred)
                    .filter(|(&i, p)| task.samples.label(i) == *p)
                    .count();
            }
            Ok(100.0 * correct as f64 / task.len() as f64)
        })
        .collect()
}

/// Trains tasks `1..=K` in order, substituting the shifted target task when a
/// shift is configured, and tests every seen task on clean data after each.
pub fn run_continual(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    let started = Instant::now();
    cfg.validate()?;
    bench.check_matches(cfg)?;
    let kind = cfg.kind()?;
    if kind == StrategyKind::Joint {
        return Err(HarnessError::config(
            "strategy.kind",
            "joint has no task sequence; use the joint baseline",
        ));
    }
    let hp = cfg.hyperparams()?;
    let shifted = bench.shifted_task(cfg, seed)?;
    let mut learner = Learner::new(kind, hp, bench.input_dim(), bench.num_tasks(), seed)?;
    let mut rng = stream(seed, STREAM_TRAIN);
    let mut accuracy = Vec::with_capacity(bench.num_tasks());
    for (t, clean) in bench.train.iter().enumerate() {
        let task = match &shifted {
            Some(s) if s.task_id == clean.task_id => s,
            _ => clean,
        };
        learner.train_task(task, &mut rng)?;
        accuracy.push(evaluate(&mut learner, &bench.test[..=t])?);
    }
    Ok(RunResult {
        seed,
        accuracy,
        test_sizes: bench.test.iter().map(TaskDataset::len).collect(),
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

/// Runs every configured seed in parallel. Results come back in seed order.
pub fn run_replicates(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
) -> Result<(Vec<RunResult>, SummaryStats), HarnessError> {
    let runs = cfg
        .eval
        .seeds
        .par_iter()
        .map(|&seed| {
            run_continual(cfg, bench, seed).map_err(|e| HarnessError::Seed {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stats = SummaryStats::from_runs(&runs)?;
    Ok((runs, stats))
}

/// Target-task test accuracy of a single network trained on all tasks at
/// once, without and with the shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointResult {
    pub seed: u64,
    pub clean: f64,
    pub shifted: f64,
}

pub fn run_joint_baseline(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    seed: u64,
) -> Result<JointResult, HarnessError> {
    cfg.validate()?;
    bench.check_matches(cfg)?;
    let hp = cfg.hyperparams()?;
    let shifted = bench
        .shifted_task(cfg, seed)?
        .ok_or_else(|| HarnessError::config("shift", "joint baseline needs a shift section"))?;
    let target = shifted.task_id;
    let clean_union = concat_tasks(&bench.train);
    let shifted_union = build_joint_dataset(&bench.train, target, &shifted)?;
    let dims = backbone(bench.input_dim(), &hp);
    let all: Vec<usize> = (0..crate::data::NUM_CLASSES).collect();
    let test = &bench.test[target - 1];
    let fit = |data: &RawDataset| -> Result<f64, HarnessError> {
        let mut mlp = Mlp::new(&dims, &mut stream(seed, STREAM_INIT))?;
        train_joint(&mut mlp, data, &hp, &mut stream(seed, STREAM_TRAIN))?;
        let mut predict = |x: &ndarray::Array2<f64>| Ok(masked_argmax(&mlp.logits(x)?, &all));
        Ok(evaluate(&mut predict, std::slice::from_ref(test))?[0])
    };
    Ok(JointResult {
        seed,
        clean: fit(&clean_union)?,
        shifted: fit(&shifted_union)?,
    })
}
