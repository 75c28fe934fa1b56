use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SIDE: usize = 6;

fn oodf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodf"))
        .args(args)
        .env_remove("OODF_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn idx_images(count: usize, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for d in [count, SIDE, SIDE] {
        b.extend((d as u32).to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// Ten classes, each a distinct bright pixel pattern with per-sample jitter.
fn write_split(dir: &Path, prefix: &str, per_class: usize) {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 10 {
        let c = i % 10;
        for p in 0..SIDE * SIDE {
            let on = (p * 7 + c * 3) % 10 < 3;
            let jitter = ((i * 31 + p * 17) % 23) as u8;
            pixels.push(if on { 200 + jitter } else { jitter });
        }
        labels.push(c as u8);
    }
    let (img, lbl) = match prefix {
        "train" => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        _ => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    fs::write(dir.join(img), idx_images(labels.len(), &pixels)).unwrap();
    fs::write(dir.join(lbl), idx_labels(&labels)).unwrap();
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(kind: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let data = root.join("data");
        fs::create_dir(&data).unwrap();
        write_split(&data, "train", 12);
        write_split(&data, "test", 4);
        let config = format!(
            r#"[data]
dir = "{}"

[strategy]
kind = "{kind}"
hidden = [12]
buffer_capacity = 40

[train]
epochs = 2
batch_size = 16

[eval]
seeds = [0, 1]

[shift]
kind = "occlusion"
pixels = 4
strength = 255
ratio = 0.9
target_task = 4
"#,
            data.display()
        );
        fs::write(root.join("exp.toml"), config).unwrap();
        Fixture { _tmp: tmp, root }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn control_shift_and_report() {
    let f = Fixture::new("er");
    let cfg = f.path("exp.toml");
    for mode in ["control", "shift"] {
        let out = oodf(&["run", "--config", &cfg, "--mode", mode, "--out", &f.path(mode)]);
        assert!(out.status.success(), "{}", stderr(&out));
        for file in ["config.toml", "manifest.txt", "seed_0.csv", "seed_1.csv", "summary.csv"] {
            assert!(f.root.join(mode).join(file).exists(), "{mode}/{file}");
        }
    }
    let manifest = fs::read_to_string(f.root.join("shift/manifest.txt")).unwrap();
    assert!(manifest.contains("target_task_1based = 4"));
    assert!(manifest.contains("diff_vs_control.shift"));
    assert!(manifest.contains("file.train-images-idx3-ubyte.sha256"));

    let report = || oodf(&["report", "--control", &f.path("control"), "--shift", &f.path("shift")]);
    let (a, b) = (report(), report());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert!(!stdout(&a).is_empty());
}

#[test]
fn existing_output_needs_force() {
    let f = Fixture::new("owm");
    let cfg = f.path("exp.toml");
    let out = f.path("out");
    let first = oodf(&["run", "--config", &cfg, "--seed", "3", "--out", &out]);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(f.root.join("out/seed_3.csv").exists());
    let again = oodf(&["run", "--config", &cfg, "--seed", "3", "--out", &out]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("--force"));
    let forced = oodf(&["run", "--config", &cfg, "--seed", "3", "--out", &out, "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn malformed_config_names_the_key() {
    let f = Fixture::new("er");
    let text = fs::read_to_string(f.root.join("exp.toml")).unwrap();
    fs::write(f.root.join("bad.toml"), text.replace("epochs = 2", "epocs = 2")).unwrap();
    let out = oodf(&["run", "--config", &f.path("bad.toml"), "--out", &f.path("o")]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("epocs"), "{}", stderr(&out));

    fs::write(f.root.join("bad2.toml"), text.replace("target_task = 4", "target_task = 11")).unwrap();
    let out = oodf(&["run", "--config", &f.path("bad2.toml"), "--out", &f.path("o2")]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("target_task"), "{}", stderr(&out));
}

#[test]
fn missing_data_is_reported() {
    let f = Fixture::new("er");
    let out = oodf(&[
        "run",
        "--config",
        &f.path("exp.toml"),
        "--data",
        &f.path("nowhere"),
        "--out",
        &f.path("o"),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}

#[test]
fn ingest_checksums_gate_runs() {
    let f = Fixture::new("er");
    let sums = f.path("sums.txt");
    let out = oodf(&["ingest", "--data", &f.path("data"), "--out", &sums]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("train = 120 images of 6x6"));

    let run = |name: &str, sums: &str| {
        oodf(&["run", "--config", &f.path("exp.toml"), "--seed", "0", "--checksums", sums, "--out", &f.path(name)])
    };
    let ok = run("a", &sums);
    assert!(ok.status.success(), "{}", stderr(&ok));

    let tampered = fs::read_to_string(&sums).unwrap().replacen("sha256 = ", "sha256 = 00", 1);
    fs::write(f.root.join("bad_sums.txt"), tampered).unwrap();
    let bad = run("b", &f.path("bad_sums.txt"));
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("checksum mismatch"), "{}", stderr(&bad));
}

#[test]
fn sweep_and_probe_write_their_tables() {
    let f = Fixture::new("er");
    let cfg = f.path("exp.toml");
    let out = oodf(&["sweep", "--config", &cfg, "--grid", "ratio=0.1,0.9", "--out", &f.path("sweep")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(f.root.join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.starts_with("factor,value,seed,acc_t_s,acc_t_k"));

    let bad = oodf(&["sweep", "--config", &cfg, "--grid", "pixels=3", "--out", &f.path("s2")]);
    assert!(!bad.status.success());

    let out = oodf(&["probe", "--config", &cfg, "--seed", "0", "--out", &f.path("probe")]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(f.root.join("probe/clouds_seed_0.csv").exists());
    let manifest = fs::read_to_string(f.root.join("probe/manifest.txt")).unwrap();
    assert!(manifest.contains("probe_space = logits"));
    let overlap = fs::read_to_string(f.root.join("probe/overlap_seed_0.csv")).unwrap();
    assert_eq!(overlap.lines().count(), 1 + 10);
}

#[test]
fn joint_mode_writes_both_fits() {
    let f = Fixture::new("joint");
    let out = oodf(&["run", "--config", &f.path("exp.toml"), "--mode", "joint", "--out", &f.path("j")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(f.root.join("j/joint.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("seed,clean,shifted"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn unknown_subcommand_fails() {
    let out = oodf(&["frobnicate"]);
    assert!(!out.status.success());
}
