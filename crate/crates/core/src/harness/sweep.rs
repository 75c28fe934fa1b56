use std::path::Path;

use rayon::prelude::*;

use super::{run_continual, Benchmark, ExperimentConfig, HarnessError, ShiftMethod};

/// One shift factor value to sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    /// Occlusion strength in raw 8-bit units.
    Strength(u8),
    Ratio(f64),
    /// Number of occluded pixels (a perfect square).
    Pixels(usize),
}

impl Factor {
    pub fn name(&self) -> &'static str {
        match self {
            Factor::Strength(_) => "strength",
            Factor::Ratio(_) => "ratio",
            Factor::Pixels(_) => "pixels",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Factor::Strength(v) => v as f64,
            Factor::Ratio(v) => v,
            Factor::Pixels(v) => v as f64,
        }
    }

    /// Parses `name=v1,v2,...`.
    pub fn parse_grid(text: &str) -> Result<Vec<Factor>, HarnessError> {
        let (name, values) = text
            .split_once('=')
            .ok_or_else(|| HarnessError::config("grid", format!("expected name=v1,v2,... in {text:?}")))?;
        let bad = |v: &str| HarnessError::config(format!("grid.{name}"), format!("bad value {v:?}"));
        values
            .split(',')
            .map(str::trim)
            .map(|v| match name.trim() {
                "strength" => v.parse().map(Factor::Strength).map_err(|_| bad(v)),
                "ratio" => v.parse().map(Factor::Ratio).map_err(|_| bad(v)),
                "pixels" => v.parse().map(Factor::Pixels).map_err(|_| bad(v)),
                other => Err(HarnessError::config(
                    "grid",
                    format!("unknown factor {other:?} (strength, ratio, pixels)"),
                )),
            })
            .collect()
    }

    /// `cfg` with this factor written into its shift section.
    pub fn apply(&self, cfg: &ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
        let mut out = cfg.clone();
        let shift = out
            .shift
            .as_mut()
            .ok_or_else(|| HarnessError::config("shift", "a sweep needs a shift section"))?;
        match *self {
            Factor::Ratio(r) => shift.ratio = r,
            Factor::Strength(e) => {
                require_occlusion(shift.kind)?;
                shift.strength = Some(e);
            }
            Factor::Pixels(n) => {
                require_occlusion(shift.kind)?;
                shift.pixels = Some(n);
                shift.positions = None;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

fn require_occlusion(kind: ShiftMethod) -> Result<(), HarnessError> {
    if kind != ShiftMethod::Occlusion {
        return Err(HarnessError::config("shift.kind", "strength and pixel sweeps need occlusion"));
    }
    Ok(())
}

/// Target-task readouts of one (grid point, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub factor: Factor,
    pub seed: u64,
    pub at_s: f64,
    pub at_k: f64,
}

/// Runs every configured seed at every grid point. Rows are ordered by grid
/// point, then seed.
pub fn sweep(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    grid: &[Factor],
) -> Result<Vec<SweepRow>, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::config("grid", "must not be empty"));
    }
    let configs = grid
        .iter()
        .map(|f| f.apply(cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|p| cfg.eval.seeds.iter().map(move |&s| (p, s)))
        .collect();
    jobs.par_iter()
        .map(|&(p, seed)| {
            let point = &configs[p];
            let s = point.shift.as_ref().expect("applied above").target_task;
            let run = run_continual(point, bench, seed).map_err(|e| HarnessError::Seed {
                seed,
                source: Box::new(e),
            })?;
            Ok(SweepRow {
                factor: grid[p],
                seed,
                at_s: run.at(s, s),
                at_k: run.at(run.num_tasks(), s),
            })
        })
        .collect()
}

/// `factor,value,seed,acc_t_s,acc_t_k`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::Results {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["factor", "value", "seed", "acc_t_s", "acc_t_k"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.factor.name().to_string(),
            r.factor.value().to_string(),
            r.seed.to_string(),
            format!("{:.4}", r.at_s),
            format!("{:.4}", r.at_k),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ShiftSection;
    use crate::strategies::StrategyKind;

    #[test]
    fn grid_parsing() {
        assert_eq!(
            Factor::parse_grid("pixels=1,4, 9").unwrap(),
            vec![Factor::Pixels(1), Factor::Pixels(4), Factor::Pixels(9)]
        );
        assert!(Factor::parse_grid("pixels").is_err());
        assert!(Factor::parse_grid("size=1").is_err());
        assert!(Factor::parse_grid("ratio=x").is_err());
    }

    #[test]
    fn apply_needs_shift() {
        let cfg = ExperimentConfig::new(StrategyKind::Owm);
        assert!(Factor::Ratio(0.5).apply(&cfg).is_err());
        let mut cfg = cfg;
        cfg.shift = Some(ShiftSection::occlusion(4, 32, 0.9, 4));
        let out = Factor::Pixels(16).apply(&cfg).unwrap();
        assert_eq!(out.shift.unwrap().pixels, Some(16));
    }
}
