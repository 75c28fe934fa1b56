//! CSV results, run manifests and the control-versus-shift report.

use std::fmt::Write as _;
use std::path::Path;

use super::{compute_metrics, ExperimentConfig, HarnessError, MeanStd, RunResult, SummaryStats};

/// `mean±std` with two decimals.
pub fn format_mean_std(m: MeanStd) -> String {
    format!("{:.2}±{:.2}", m.mean, m.std)
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Results {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// One row per matrix cell: `t,task,accuracy` with 1-based indices.
pub fn write_run_csv(path: &Path, run: &RunResult) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["t", "task", "accuracy"])
        .map_err(|e| csv_err(path, e))?;
    for (t, row) in run.accuracy.iter().enumerate() {
        for (j, acc) in row.iter().enumerate() {
            w.write_record([(t + 1).to_string(), (j + 1).to_string(), format!("{acc:.4}")])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a file written by [`write_run_csv`]. Seed, sizes and timing are not
/// stored in the CSV and come back as `seed` / empty / 0.
pub fn read_run_csv(path: &Path, seed: u64) -> Result<RunResult, HarnessError> {
    let bad = |message: String| HarnessError::Results {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut accuracy: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", rec.len())));
        }
        let parse = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| bad(format!("{e}: {:?}", &rec[i])));
        let (t, j, acc) = (parse(0)? as usize, parse(1)? as usize, parse(2)?);
        if t == 0 || j == 0 || j > t {
            return Err(bad(format!("cell ({t}, {j}) is outside the lower triangle")));
        }
        if accuracy.len() < t {
            accuracy.resize(t, Vec::new());
        }
        if accuracy[t - 1].len() != j - 1 {
            return Err(bad(format!("cell ({t}, {j}) out of order")));
        }
        accuracy[t - 1].push(acc);
    }
    for (t, row) in accuracy.iter().enumerate() {
        if row.len() != t + 1 {
            return Err(bad(format!("row t={} has {} cells", t + 1, row.len())));
        }
    }
    Ok(RunResult {
        seed,
        accuracy,
        test_sizes: Vec::new(),
        wall_secs: 0.0,
    })
}

/// `t,task,mean,std,n` per matrix cell.
pub fn write_summary_csv(path: &Path, stats: &SummaryStats) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["t", "task", "mean", "std", "n"])
        .map_err(|e| csv_err(path, e))?;
    for (t, row) in stats.cells.iter().enumerate() {
        for (j, m) in row.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                (j + 1).to_string(),
                format!("{:.4}", m.mean),
                format!("{:.4}", m.std),
                m.n.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Everything needed to reproduce a run directory.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub mode: String,
    pub data: crate::data::DatasetManifest,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "oodf_version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "config_sha256 = {}", self.config.hash());
        if let Ok(kind) = self.config.kind() {
            let _ = writeln!(s, "strategy = {}", kind.name());
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "seeds = {}", seeds.join(","));
        let _ = writeln!(s, "num_tasks = {}", self.config.num_tasks());
        if let Some(shift) = &self.config.shift {
            // Tasks are 1-based; the 0-based position of the same task in the
            // training sequence is recorded alongside.
            let _ = writeln!(s, "target_task_1based = {}", shift.target_task);
            let _ = writeln!(s, "target_time_0based = {}", shift.target_task - 1);
            let _ = writeln!(s, "final_time_0based = {}", self.config.num_tasks() - 1);
            for (key, control, shifted) in self.config.control().diff(&self.config) {
                let _ = writeln!(s, "diff_vs_control.{key} = {control} -> {shifted}");
            }
        }
        s.push_str(&self.data.to_text());
        s
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), HarnessError> {
    std::fs::write(path, manifest.to_text()).map_err(|e| HarnessError::io(path, e))
}

/// Table of target-task accuracy at `t = S` and `t = K` for both groups,
/// followed by the targeting metric and the in-process curve.
pub fn render_report(
    control: &SummaryStats,
    shift: &SummaryStats,
    s: usize,
    k: usize,
) -> Result<String, HarnessError> {
    let m = compute_metrics(control, shift, s, k)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Test accuracy (%) of task S={s} at t=S and t=K (control n={}, shift n={})",
        control.seeds.len(),
        shift.seeds.len()
    );
    let _ = writeln!(out, "{:<10} {:>14} {:>14}", "", "control", "shift");
    let _ = writeln!(
        out,
        "{:<10} {:>14} {:>14}",
        format!("t=S ({s})"),
        format_mean_std(m.control_at_s),
        format_mean_std(m.shift_at_s)
    );
    let _ = writeln!(
        out,
        "{:<10} {:>14} {:>14}",
        format!("t=K ({k})"),
        format_mean_std(m.control_at_k),
        format_mean_std(m.shift_at_k)
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "final gap (control - shift): {:.2}", m.final_gap());
    let _ = writeln!(
        out,
        "non-target tasks at t=K: mean diff {:.2}, mean |diff| {:.2}",
        m.targeting, m.targeting_abs
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "task {s} after each task:");
    let _ = writeln!(out, "{:<4} {:>14} {:>14}", "t", "control", "shift");
    for (t, c, sh) in &m.in_process {
        let _ = writeln!(out, "{t:<4} {:>14} {:>14}", format_mean_std(*c), format_mean_std(*sh));
    }
    Ok(out)
}
