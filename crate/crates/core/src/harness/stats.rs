use super::{HarnessError, RunResult};

/// Mean and sample standard deviation of one matrix cell over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample (n − 1) standard deviation; 0 for a single run.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std, n }
    }
}

/// Per-cell statistics of the lower-triangular accuracy matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub cells: Vec<Vec<MeanStd>>,
    pub seeds: Vec<u64>,
}

impl SummaryStats {
    pub fn from_runs(runs: &[RunResult]) -> Result<Self, HarnessError> {
        let first = runs
            .first()
            .ok_or_else(|| HarnessError::Shape("no runs to summarize".into()))?;
        let shape: Vec<usize> = first.accuracy.iter().map(Vec::len).collect();
        for r in runs {
            let s: Vec<usize> = r.accuracy.iter().map(Vec::len).collect();
            if s != shape {
                return Err(HarnessError::Shape(format!(
                    "seed {} has row lengths {s:?}, expected {shape:?}",
                    r.seed
                )));
            }
        }
        let cells = shape
            .iter()
            .enumerate()
            .map(|(t, &len)| {
                (0..len)
                    .map(|j| {
                        let v: Vec<f64> = runs.iter().map(|r| r.accuracy[t][j]).collect();
                        MeanStd::from_values(&v)
                    })
                    .collect()
            })
            .collect();
        Ok(SummaryStats {
            cells,
            seeds: runs.iter().map(|r| r.seed).collect(),
        })
    }

    /// Cell for 1-based `t` and `j`.
    pub fn at(&self, t: usize, j: usize) -> MeanStd {
        self.cells[t - 1][j - 1]
    }

    pub fn num_tasks(&self) -> usize {
        self.cells.len()
    }
}

/// Control-versus-shift readouts for target task `s` (1-based) in a
/// `k`-task sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub target: usize,
    pub num_tasks: usize,
    pub control_at_s: MeanStd,
    pub shift_at_s: MeanStd,
    pub control_at_k: MeanStd,
    pub shift_at_k: MeanStd,
    /// Mean over non-target tasks of `control − shift` at `t = K`.
    pub targeting: f64,
    /// Mean over non-target tasks of `|control − shift|` at `t = K`.
    pub targeting_abs: f64,
    /// `(t, control, shift)` on the target task for `t = S..=K`.
    pub in_process: Vec<(usize, MeanStd, MeanStd)>,
}

impl Metrics {
    /// Control minus shift on the target task at `t = K`.
    pub fn final_gap(&self) -> f64 {
        self.control_at_k.mean - self.shift_at_k.mean
    }
}

pub fn compute_metrics(
    control: &SummaryStats,
    shift: &SummaryStats,
    s: usize,
    k: usize,
) -> Result<Metrics, HarnessError> {
    if control.num_tasks() != shift.num_tasks() {
        return Err(HarnessError::Shape(format!(
            "control has {} tasks, shift has {}",
            control.num_tasks(),
            shift.num_tasks()
        )));
    }
    if s == 0 || s > k || k > control.num_tasks() {
        return Err(HarnessError::Shape(format!(
            "need 1 <= S <= K <= {}, got S={s}, K={k}",
            control.num_tasks()
        )));
    }
    let others: Vec<f64> = (1..=k)
        .filter(|&j| j != s)
        .map(|j| control.at(k, j).mean - shift.at(k, j).mean)
        .collect();
    let denom = others.len().max(1) as f64;
    Ok(Metrics {
        target: s,
        num_tasks: k,
        control_at_s: control.at(s, s),
        shift_at_s: shift.at(s, s),
        control_at_k: control.at(k, s),
        shift_at_k: shift.at(k, s),
        targeting: others.iter().sum::<f64>() / denom,
        targeting_abs: others.iter().map(|d| d.abs()).sum::<f64>() / denom,
        in_process: (s..=k)
            .map(|t| (t, control.at(t, s), shift.at(t, s)))
            .collect(),
    })
}
