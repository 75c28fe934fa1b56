//! `oodf`: runs the out-of-distribution forgetting benchmark from TOML configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use oodf_core::analysis::{run_probe, write_cloud_csv, write_overlap_csv, ProbeConfig};
use oodf_core::data::{load_mnist_split, DatasetManifest, MnistFiles, Split};
use oodf_core::harness::{
    read_run_csv, render_report, run_joint_baseline, run_replicates, sweep, write_manifest,
    write_run_csv, write_summary_csv, write_sweep_csv, Benchmark, ExperimentConfig, Factor,
    RunManifest, SummaryStats, DATA_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "oodf", version, about = "Out-of-distribution forgetting benchmark on Split-MNIST")]
struct Cli {
    /// Worker threads for parallel seeds and sweep points (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the MNIST IDX files and print their checksums.
    Ingest {
        /// Dataset directory (default: $OODF_DATA_DIR).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the checksums to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one experiment for every seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Which group to run; defaults to shift when the config has a shift section.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Run every seed at every point of a shift-factor grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid as `factor=v1,v2,...` with factor one of strength, ratio, pixels.
        #[arg(long)]
        grid: String,
    },
    /// Train the clean-versus-shifted probe and rank digit overlap.
    Probe {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize control and shift run directories as mean±std tables.
    Report {
        #[arg(long)]
        control: PathBuf,
        #[arg(long)]
        shift: PathBuf,
        /// Target task (1-based); read from the shift manifest when omitted.
        #[arg(long)]
        target: Option<usize>,
    },
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Seeds overriding the config's list (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory (default: `eval.out` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
    /// Dataset directory overriding the config and $OODF_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checksum file from `ingest --out`; the run aborts on any mismatch.
    #[arg(long)]
    checksums: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Control,
    Shift,
    Joint,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Control => "control",
            Mode::Shift => "shift",
            Mode::Joint => "joint",
        }
    }
}

/// Config with command-line overrides applied, its benchmark and output dir.
struct Prepared {
    cfg: ExperimentConfig,
    bench: Benchmark,
    out: PathBuf,
}

impl Common {
    fn prepare(&self) -> Result<Prepared> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if !self.seeds.is_empty() {
            cfg.eval.seeds = self.seeds.clone();
        }
        if let Some(dir) = &self.data {
            cfg.data.dir = Some(dir.clone());
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.eval.out.clone())
            .context("no output directory: pass --out or set eval.out")?;
        prepare_out_dir(&out, self.force)?;
        let dir = cfg.data_dir()?;
        let bench = Benchmark::load(&dir, &cfg.data.order)
            .with_context(|| format!("loading dataset from {}", dir.display()))?;
        if let Some(path) = &self.checksums {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let expected = DatasetManifest::from_text(&text)?;
            let bad = bench.manifest.mismatches(&expected);
            if !bad.is_empty() {
                bail!("dataset checksum mismatch: {}", bad.join(", "));
            }
        }
        Ok(Prepared { cfg, bench, out })
    }
}

fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !force {
            bail!("output directory {} exists; pass --force to overwrite", out.display());
        }
        fs::remove_dir_all(out).with_context(|| format!("clearing {}", out.display()))?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}

fn write_common(p: &Prepared, mode: &str) -> Result<()> {
    fs::write(p.out.join("config.toml"), p.cfg.to_toml())?;
    write_manifest(
        &p.out.join("manifest.txt"),
        &RunManifest {
            config: p.cfg.clone(),
            seeds: p.cfg.eval.seeds.clone(),
            mode: mode.to_string(),
            data: p.bench.manifest.clone(),
        },
    )?;
    Ok(())
}

fn cmd_ingest(data: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let dir = data
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .with_context(|| format!("no dataset directory: pass --data or set ${DATA_DIR_ENV}"))?;
    let train = load_mnist_split(&dir, Split::Train)?;
    let test = load_mnist_split(&dir, Split::Test)?;
    let manifest = DatasetManifest::from_files(&MnistFiles::in_dir(&dir).all())?;
    let text = manifest.to_text();
    print!("{text}");
    println!("train = {} images of {}x{}", train.len(), train.rows(), train.cols());
    println!("test = {} images of {}x{}", test.len(), test.rows(), test.cols());
    if let Some(path) = out {
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_run(common: &Common, mode: Option<Mode>) -> Result<()> {
    let mut p = common.prepare()?;
    let mode = mode.unwrap_or(if p.cfg.shift.is_some() { Mode::Shift } else { Mode::Control });
    match mode {
        Mode::Control => p.cfg = p.cfg.control(),
        Mode::Shift | Mode::Joint if p.cfg.shift.is_none() => {
            bail!("mode {} needs a [shift] section in {}", mode.name(), common.config.display())
        }
        _ => {}
    }
    write_common(&p, mode.name())?;
    if mode == Mode::Joint {
        let mut w = csv::Writer::from_path(p.out.join("joint.csv"))?;
        w.write_record(["seed", "clean", "shifted"])?;
        for &seed in &p.cfg.eval.seeds {
            let r = run_joint_baseline(&p.cfg, &p.bench, seed)?;
            w.write_record([seed.to_string(), format!("{:.4}", r.clean), format!("{:.4}", r.shifted)])?;
            println!("seed {seed}: clean {:.2}  shifted {:.2}", r.clean, r.shifted);
        }
        w.flush()?;
        return Ok(());
    }
    let (runs, stats) = run_replicates(&p.cfg, &p.bench)?;
    for run in &runs {
        write_run_csv(&p.out.join(format!("seed_{}.csv", run.seed)), run)?;
    }
    write_summary_csv(&p.out.join("summary.csv"), &stats)?;
    let k = stats.num_tasks();
    let last: Vec<String> = (1..=k)
        .map(|j| format!("{:.1}", stats.at(k, j).mean))
        .collect();
    println!("{} runs written to {}", runs.len(), p.out.display());
    println!("final accuracies: {}", last.join(" "));
    Ok(())
}

fn cmd_sweep(common: &Common, grid: &str) -> Result<()> {
    let p = common.prepare()?;
    let grid = Factor::parse_grid(grid)?;
    write_common(&p, "sweep")?;
    let rows = sweep(&p.cfg, &p.bench, &grid)?;
    write_sweep_csv(&p.out.join("sweep.csv"), &rows)?;
    for f in &grid {
        let at_k: Vec<f64> = rows.iter().filter(|r| r.factor == *f).map(|r| r.at_k).collect();
        let mean = at_k.iter().sum::<f64>() / at_k.len() as f64;
        println!("{}={}: final target accuracy {mean:.2}", f.name(), f.value());
    }
    Ok(())
}

fn cmd_probe(common: &Common) -> Result<()> {
    let p = common.prepare()?;
    let spec = p
        .bench
        .shift_spec(&p.cfg)?
        .context("probe needs a [shift] section")?;
    write_common(&p, "probe")?;
    let manifest = p.out.join("manifest.txt");
    let mut text = fs::read_to_string(&manifest)?;
    text.push_str("probe_space = logits\n");
    fs::write(&manifest, text)?;
    for &seed in &p.cfg.eval.seeds {
        let result = run_probe(&p.bench, &spec, &ProbeConfig::default(), seed)?;
        write_cloud_csv(&p.out.join(format!("clouds_seed_{seed}.csv")), &result)?;
        write_overlap_csv(&p.out.join(format!("overlap_seed_{seed}.csv")), &result)?;
        let ranking: Vec<String> = result.ranking.iter().map(u8::to_string).collect();
        println!(
            "seed {seed}: probe accuracy {:.2}, ranking {}",
            result.train_accuracy,
            ranking.join(" ")
        );
    }
    Ok(())
}

/// Seed CSVs of a run directory, ordered by seed.
fn load_runs(dir: &Path) -> Result<SummaryStats> {
    let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse().ok());
        if let Some(seed) = seed {
            seeds.push((seed, path));
        }
    }
    if seeds.is_empty() {
        bail!("no seed_*.csv files in {}", dir.display());
    }
    seeds.sort();
    let runs = seeds
        .iter()
        .map(|(seed, path)| read_run_csv(path, *seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SummaryStats::from_runs(&runs)?)
}

fn manifest_target(dir: &Path) -> Result<usize> {
    let path = dir.join("manifest.txt");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .find_map(|l| l.strip_prefix("target_task_1based = "))
        .context("shift manifest has no target task; pass --target")?
        .trim()
        .parse()
        .context("bad target task in shift manifest")
}

fn cmd_report(control: &Path, shift: &Path, target: Option<usize>) -> Result<()> {
    let c = load_runs(control)?;
    let s = load_runs(shift)?;
    let target = match target {
        Some(t) => t,
        None => manifest_target(shift)?,
    };
    print!("{}", render_report(&c, &s, target, c.num_tasks())?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Ingest { data, out } => cmd_ingest(data.clone(), out.clone()),
        Command::Run { common, mode } => cmd_run(common, *mode),
        Command::Sweep { common, grid } => cmd_sweep(common, grid),
        Command::Probe { common } => cmd_probe(common),
        Command::Report {
            control,
            shift,
            target,
        } => cmd_report(control, shift, *target),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
