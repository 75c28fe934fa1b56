//! Shared fixtures and property checks for the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use oodf_core::data::{
    apply_occlusion, build_shifted_task, corner_block, load_idx, pair, split_by_class, IdxKind,
    RawDataset, ShiftKind, ShiftSpec, TaskDataset,
};
use oodf_core::nn::{numeric_grad_oracle, softmax_cross_entropy, Mlp};
use oodf_core::strategies::{owm_update_projection, BufferPolicy, Exemplar, ExemplarBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Images of `classes` well-separated noisy prototypes, `per_class` each.
pub fn synthetic_dataset(classes: u8, per_class: usize, side: usize, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = side * side;
    let protos: Vec<Vec<u8>> = (0..classes)
        .map(|c| {
            let mut proto_rng = ChaCha8Rng::seed_from_u64(1000 + c as u64);
            (0..n)
                .map(|_| if proto_rng.random_bool(0.3) { 220 } else { 10 })
                .collect()
        })
        .collect();
    let mut ds = RawDataset::empty(side, side);
    for i in 0..per_class * classes as usize {
        let c = (i % classes as usize) as u8;
        let img: Vec<u8> = protos[c as usize]
            .iter()
            .map(|&p| (p as i32 + rng.random_range(-20..=20)).clamp(0, 255) as u8)
            .collect();
        ds.push(&img, c);
    }
    ds
}

pub fn synthetic_tasks(classes: u8, per_class: usize, side: usize, seed: u64) -> Vec<TaskDataset> {
    let order: Vec<u8> = (0..classes).collect();
    split_by_class(&synthetic_dataset(classes, per_class, side, seed), &order).unwrap()
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` of the
/// cross-entropy gradient of a random network with random biases.
pub fn gradcheck_relative_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(2..=6)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=7));
    }
    let classes = *dims.last().unwrap();
    let mut mlp = Mlp::new(&dims, &mut rng).unwrap();
    // Nonzero biases keep pre-activations off the ReLU kink when a whole
    // hidden layer is dead for some sample.
    for layer in mlp.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let batch = rng.random_range(1..=5);
    let x = Array2::from_shape_fn((batch, dims[0]), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let trace = mlp.forward(&x).unwrap();
    let (_, d) = softmax_cross_entropy(trace.logits(), &labels).unwrap();
    let analytic = mlp.backward(&trace, &d, false).unwrap();
    let numeric = numeric_grad_oracle(
        |m| softmax_cross_entropy(&m.logits(&x).unwrap(), &labels).unwrap().0,
        &mlp,
        1e-6,
    );
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let mut acc = |a: f64, n: f64| {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    };
    for l in 0..analytic.weights.len() {
        for (&a, &n) in analytic.weights[l].iter().zip(numeric.weights[l].iter()) {
            acc(a, n);
        }
        for (&a, &n) in analytic.biases[l].iter().zip(numeric.biases[l].iter()) {
            acc(a, n);
        }
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale < 1e-12 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Largest deviation from `P'x = α/(α + xᵀPx)·Px` over one update, and
/// whether `‖Px‖` strictly shrank over `repeats` further updates with `x`.
pub fn owm_identity_check(dim: usize, repeats: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array2::<f64>::eye(dim);
    for _ in 0..3 {
        let v = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
        owm_update_projection(&mut p, &v, rng.random_range(0.1..2.0)).unwrap();
    }
    let x = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
    let alpha = rng.random_range(1e-3..1.0);
    let px = p.dot(&x);
    let scale = alpha / (alpha + x.dot(&px));
    owm_update_projection(&mut p, &x, alpha).unwrap();
    let err = (&p.dot(&x) - &(&px * scale))
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut last = p.dot(&x).dot(&p.dot(&x)).sqrt();
    let mut monotone = true;
    for _ in 0..repeats {
        owm_update_projection(&mut p, &x, alpha).unwrap();
        let now = p.dot(&x).dot(&p.dot(&x)).sqrt();
        if !(now < last || now == 0.0) {
            monotone = false;
        }
        last = now;
    }
    (err, monotone)
}

pub fn exemplar(label: u8, idx: usize) -> Exemplar {
    Exemplar {
        image: vec![0],
        label,
        logits: None,
        stream_index: idx,
        task_id: 1,
    }
}

/// Empirical probability that each of `n` stream items is held by a
/// reservoir of capacity `b`, over `trials` independent streams.
pub fn reservoir_retention(n: usize, b: usize, trials: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![0usize; n];
    for _ in 0..trials {
        let mut buf = ExemplarBuffer::new(b, BufferPolicy::Reservoir);
        for i in 0..n {
            buf.update(exemplar(0, i), i, &mut rng);
        }
        for e in buf.entries() {
            kept[e.stream_index] += 1;
        }
    }
    kept.iter().map(|&k| k as f64 / trials as f64).collect()
}

/// Max minus min class count of a balanced buffer after a class-incremental
/// stream of `blocks` (class, length) pairs.
pub fn balanced_spread(capacity: usize, blocks: &[(u8, usize)], seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ExemplarBuffer::new(capacity, BufferPolicy::Balanced);
    let mut i = 0;
    for &(class, len) in blocks {
        for _ in 0..len {
            buf.update(exemplar(class, i), i, &mut rng);
            i += 1;
        }
    }
    assert!(buf.len() <= capacity);
    let counts = buf.class_counts();
    let seen: Vec<usize> = buf.seen_classes().iter().map(|&c| counts[c as usize]).collect();
    seen.iter().max().unwrap() - seen.iter().min().unwrap()
}

/// Checks an occlusion shift of a random task: pixels outside the block are
/// bit-identical, exactly `⌊r·n⌋` samples change, labels are untouched.
pub fn occlusion_locality(n: usize, ratio: f64, side: usize, strength: u8, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = RawDataset::empty(8, 8);
    for _ in 0..n {
        let img: Vec<u8> = (0..64).map(|_| rng.random()).collect();
        ds.push(&img, 3);
    }
    let task = TaskDataset {
        task_id: 1,
        classes: vec![3],
        samples: ds,
        shifted: Vec::new(),
    };
    let positions = corner_block(side, 8, 8, 1);
    let spec = ShiftSpec {
        kind: ShiftKind::Occlusion {
            positions: positions.clone(),
            strength,
        },
        ratio,
        target_task: 1,
    };
    let out = build_shifted_task(&task, &spec, &mut rng, None).map_err(|e| e.to_string())?;
    let expected = (ratio * n as f64 + 1e-9).floor() as usize;
    if out.shifted.len() != expected {
        return Err(format!("{} shifted, expected {expected}", out.shifted.len()));
    }
    if out.samples.labels() != task.samples.labels() {
        return Err("labels changed".into());
    }
    let block: Vec<usize> = positions.iter().map(|p| p.row * 8 + p.col).collect();
    for i in 0..n {
        let (a, b) = (task.samples.image(i), out.samples.image(i));
        for k in 0..64 {
            if !block.contains(&k) && a[k] != b[k] {
                return Err(format!("sample {i} pixel {k} changed outside the block"));
            }
        }
        let in_shifted = out.shifted.binary_search(&i).is_ok();
        let expect = if in_shifted {
            apply_occlusion(a, 8, 8, &positions, strength).unwrap()
        } else {
            a.to_vec()
        };
        if b != expect.as_slice() {
            return Err(format!("sample {i} has the wrong content"));
        }
    }
    Ok(())
}

pub fn idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for d in [count, rows, cols] {
        b.extend((d as u32).to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// Round-trips a random IDX pair and checks rejection of a bad magic number
/// and of a truncated payload.
pub fn idx_round_trip(count: usize, rows: usize, cols: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels: Vec<u8> = (0..count * rows * cols).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..count).map(|_| rng.random_range(0..10)).collect();
    let img_bytes = idx_images(count, rows, cols, &pixels);
    let lbl_bytes = idx_labels(&labels);
    let ds = pair(
        load_idx(&img_bytes, IdxKind::Images).map_err(|e| e.to_string())?,
        load_idx(&lbl_bytes, IdxKind::Labels).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    if ds.pixels() != pixels.as_slice() || ds.labels() != labels.as_slice() || (ds.rows(), ds.cols()) != (rows, cols) {
        return Err("round trip changed the data".into());
    }
    let mut bad = img_bytes.clone();
    bad[3] = 0x07;
    if load_idx(&bad, IdxKind::Images).is_ok() {
        return Err("bad magic accepted".into());
    }
    if load_idx(&lbl_bytes, IdxKind::Images).is_ok() {
        return Err("label file accepted as images".into());
    }
    if !pixels.is_empty() && load_idx(&img_bytes[..img_bytes.len() - 1], IdxKind::Images).is_ok() {
        return Err("truncated payload accepted".into());
    }
    if load_idx(&img_bytes[..6], IdxKind::Images).is_ok() {
        return Err("truncated header accepted".into());
    }
    Ok(())
}
