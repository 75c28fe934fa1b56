//! Clean-versus-shifted probe and 2-D overlap scores.
//!
//! A small two-output network is trained to tell clean samples of the target
//! class from their shifted copies. Every digit's test set is then mapped to
//! the probe's 2-D logits, a Gaussian is fitted to the clean target cloud, and
//! each digit is scored by its mean log-density under that fit.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::data::{build_shifted_task, RawDataset, ShiftSpec, TaskDataset};
use crate::harness::{Benchmark, HarnessError};
use crate::nn::{softmax_cross_entropy, Mlp};
use crate::rng::{stream, STREAM_PROBE, STREAM_SHIFT};
use crate::strategies::Hyperparams;

/// Added to the diagonal of every fitted covariance.
pub const COV_REGULARIZER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 100,
            epochs: 10,
            batch_size: 64,
            lr: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub mlp: Mlp,
    /// Training-set accuracy in percent.
    pub train_accuracy: f64,
}

/// Trains a `d-H-2` classifier: output 0 for `clean`, 1 for `shifted`.
pub fn train_probe(
    clean: &RawDataset,
    shifted: &RawDataset,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Probe, HarnessError> {
    if clean.is_empty() || shifted.is_empty() {
        return Err(HarnessError::config("probe", "clean and shifted sets must be non-empty"));
    }
    let mut x = clean.clone();
    x.extend(shifted);
    let labels: Vec<usize> = (0..x.len()).map(|i| usize::from(i >= clean.len())).collect();
    let mut rng = stream(seed, STREAM_PROBE);
    let mut mlp = Mlp::new(&[x.image_len(), cfg.hidden, 2], &mut rng)?;
    let hp = Hyperparams {
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        ..Hyperparams::default()
    };
    for _ in 0..cfg.epochs {
        for batch in crate::strategies::shuffled_batches(x.len(), hp.batch_size, &mut rng) {
            let trace = mlp.forward(&x.to_matrix(&batch))?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (_, d) = softmax_cross_entropy(trace.logits(), &y)?;
            let grads = mlp.backward(&trace, &d, false)?;
            mlp.sgd_step(&grads, hp.lr, None)?;
        }
    }
    let logits = mlp.logits(&x.all_matrix())?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(row, &y)| usize::from(row[1] > row[0]) == y)
        .count();
    Ok(Probe {
        mlp,
        train_accuracy: 100.0 * correct as f64 / x.len() as f64,
    })
}

/// Mean and covariance of a 2-D point cloud with a log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// The unregularized covariance was (numerically) singular.
    pub near_singular: bool,
}

impl Gaussian2 {
    /// Maximum-likelihood fit plus [`COV_REGULARIZER`] on the diagonal.
    pub fn fit(points: &Array2<f64>) -> Self {
        let n = points.nrows() as f64;
        let mean = points.mean_axis(Axis(0)).expect("non-empty cloud");
        let mut c = [[0.0; 2]; 2];
        for row in points.rows() {
            let d = [row[0] - mean[0], row[1] - mean[1]];
            for a in 0..2 {
                for b in 0..2 {
                    c[a][b] += d[a] * d[b] / n;
                }
            }
        }
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let scale = (c[0][0] + c[1][1]).max(f64::MIN_POSITIVE);
        let near_singular = det <= 1e-12 * scale * scale;
        c[0][0] += COV_REGULARIZER;
        c[1][1] += COV_REGULARIZER;
        Gaussian2 {
            mean: [mean[0], mean[1]],
            cov: c,
            near_singular,
        }
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let c = self.cov;
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let quad = (c[1][1] * d[0] * d[0] - 2.0 * c[0][1] * d[0] * d[1] + c[0][0] * d[1] * d[1]) / det;
        -0.5 * quad - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln()
    }

    pub fn mean_log_density(&self, points: &Array2<f64>) -> f64 {
        let total: f64 = points
            .rows()
            .into_iter()
            .map(|r| self.log_density([r[0], r[1]]))
            .sum();
        total / points.nrows() as f64
    }
}

#[derive(Debug, Clone)]
pub struct DigitCloud {
    pub digit: u8,
    pub points: Array2<f64>,
    pub score: f64,
}

impl DigitCloud {
    pub fn centroid(&self) -> Array1<f64> {
        self.points.mean_axis(Axis(0)).expect("non-empty cloud")
    }
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub reference_digit: u8,
    pub reference: Gaussian2,
    /// Reference cloud first, then the others in input order.
    pub clouds: Vec<DigitCloud>,
    /// Digits of `clouds` by score, highest first (ties keep input order).
    pub ranking: Vec<u8>,
}

impl ProbeResult {
    /// 1-based rank of `digit`.
    pub fn rank_of(&self, digit: u8) -> Option<usize> {
        self.ranking.iter().position(|&d| d == digit).map(|p| p + 1)
    }
}

/// Scores every cloud (reference included) under the Gaussian fitted to the
/// reference cloud.
pub fn score_clouds(reference: (u8, Array2<f64>), others: Vec<(u8, Array2<f64>)>) -> (Gaussian2, Vec<DigitCloud>, Vec<u8>) {
    let fit = Gaussian2::fit(&reference.1);
    let clouds: Vec<DigitCloud> = std::iter::once(reference)
        .chain(others)
        .map(|(digit, points)| DigitCloud {
            digit,
            score: fit.mean_log_density(&points),
            points,
        })
        .collect();
    let mut order: Vec<usize> = (0..clouds.len()).collect();
    order.sort_by(|&a, &b| clouds[b].score.total_cmp(&clouds[a].score));
    let ranking = order.iter().map(|&i| clouds[i].digit).collect();
    (fit, clouds, ranking)
}

/// Maps the reference and every other set through the probe and scores them.
pub fn probe_overlap(
    probe: &Probe,
    reference: &TaskDataset,
    others: &[TaskDataset],
) -> Result<ProbeResult, HarnessError> {
    let cloud = |t: &TaskDataset| -> Result<(u8, Array2<f64>), HarnessError> {
        if t.is_empty() {
            return Err(HarnessError::EmptyTestSet(t.task_id));
        }
        Ok((t.classes[0], probe.mlp.logits(&t.samples.all_matrix())?))
    };
    let reference_cloud = cloud(reference)?;
    let reference_digit = reference_cloud.0;
    let other_clouds = others.iter().map(cloud).collect::<Result<Vec<_>, _>>()?;
    let (fit, clouds, ranking) = score_clouds(reference_cloud, other_clouds);
    Ok(ProbeResult {
        train_accuracy: probe.train_accuracy,
        reference_digit,
        reference: fit,
        clouds,
        ranking,
    })
}

/// The full mechanism probe on a benchmark: the target task's training set
/// against a copy with every sample shifted, then test-set clouds for all
/// tasks.
pub fn run_probe(
    bench: &Benchmark,
    spec: &ShiftSpec,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult, HarnessError> {
    let s = spec.target_task;
    if s == 0 || s > bench.num_tasks() {
        return Err(HarnessError::config("shift.target_task", format!("{s} is out of range")));
    }
    let full = ShiftSpec {
        ratio: 1.0,
        ..spec.clone()
    };
    let clean = &bench.train[s - 1];
    let shifted = build_shifted_task(clean, &full, &mut stream(seed, STREAM_SHIFT), None)?;
    let probe = train_probe(&clean.samples, &shifted.samples, cfg, seed)?;
    let others: Vec<TaskDataset> = bench
        .test
        .iter()
        .filter(|t| t.task_id != s)
        .cloned()
        .collect();
    probe_overlap(&probe, &bench.test[s - 1], &others)
}

/// `digit,x,y` for every mapped sample.
pub fn write_cloud_csv(path: &Path, result: &ProbeResult) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::Results {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["digit", "x", "y"]).map_err(err)?;
    for c in &result.clouds {
        for p in c.points.rows() {
            w.write_record([c.digit.to_string(), format!("{:.6}", p[0]), format!("{:.6}", p[1])])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// `digit,score,rank,centroid_x,centroid_y`, ordered by rank.
pub fn write_overlap_csv(path: &Path, result: &ProbeResult) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::Results {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["digit", "score", "rank", "centroid_x", "centroid_y"])
        .map_err(err)?;
    for (rank, digit) in result.ranking.iter().enumerate() {
        let c = result
            .clouds
            .iter()
            .find(|c| c.digit == *digit)
            .expect("ranked digit has a cloud");
        let m = c.centroid();
        w.write_record([
            digit.to_string(),
            format!("{:.6}", c.score),
            (rank + 1).to_string(),
            format!("{:.6}", m[0]),
            format!("{:.6}", m[1]),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
