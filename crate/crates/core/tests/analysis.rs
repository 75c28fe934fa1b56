mod common;

use ndarray::Array2;
use oodf_core::analysis::{run_probe, score_clouds, train_probe, ProbeConfig};
use oodf_core::data::{corner_block, ShiftKind, ShiftSpec};
use oodf_core::harness::Benchmark;
use proptest::prelude::*;

fn quick() -> ProbeConfig {
    ProbeConfig {
        hidden: 16,
        epochs: 30,
        batch_size: 16,
        lr: 0.1,
    }
}

fn occlusion(pixels_side: usize, side: usize, strength: u8, target: usize) -> ShiftSpec {
    ShiftSpec {
        kind: ShiftKind::Occlusion {
            positions: corner_block(pixels_side, side, side, 1),
            strength,
        },
        ratio: 1.0,
        target_task: target,
    }
}

#[test]
fn probe_separates_heavily_occluded_copies() {
    let order: Vec<u8> = (0..4).collect();
    let bench = Benchmark::from_datasets(
        &common::synthetic_dataset(4, 60, 8, 1),
        &common::synthetic_dataset(4, 20, 8, 2),
        &order,
    )
    .unwrap();
    let result = run_probe(&bench, &occlusion(3, 8, 255, 2), &quick(), 0).unwrap();
    assert!(result.train_accuracy >= 99.0, "{}", result.train_accuracy);
    assert_eq!(result.reference_digit, 1);
    assert_eq!(result.clouds.len(), 4);
    assert_eq!(result.ranking.len(), 4);
    assert!(result.rank_of(1).is_some());
}

#[test]
fn probe_cannot_separate_identical_sets() {
    let ds = common::synthetic_dataset(1, 80, 6, 3);
    let probe = train_probe(&ds, &ds, &quick(), 0).unwrap();
    assert!((probe.train_accuracy - 50.0).abs() <= 5.0, "{}", probe.train_accuracy);
}

fn cloud(center: [f64; 2], n: usize, spread: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |(i, k)| {
        let t = i as f64 * 0.7 + k as f64 * 1.3;
        center[k] + spread * (t.sin() + 0.5 * (2.1 * t).cos())
    })
}

proptest! {
    #[test]
    fn ranking_survives_rigid_motion(
        angle in 0.0f64..std::f64::consts::TAU,
        dx in -50.0f64..50.0,
        dy in -50.0f64..50.0,
    ) {
        let reference = cloud([0.0, 0.0], 40, 1.0);
        let others = vec![
            (5u8, cloud([0.5, 0.2], 30, 1.0)),
            (7u8, cloud([6.0, -4.0], 30, 1.0)),
            (8u8, cloud([2.0, 1.0], 30, 1.5)),
        ];
        let (c, s) = (angle.cos(), angle.sin());
        let moved = |p: &Array2<f64>| {
            Array2::from_shape_fn(p.dim(), |(i, k)| {
                let (x, y) = (p[[i, 0]], p[[i, 1]]);
                if k == 0 { c * x - s * y + dx } else { s * x + c * y + dy }
            })
        };
        let (_, base_clouds, base_rank) = score_clouds((3, reference.clone()), others.clone());
        let (_, moved_clouds, moved_rank) = score_clouds(
            (3, moved(&reference)),
            others.iter().map(|(d, p)| (*d, moved(p))).collect(),
        );
        prop_assert_eq!(base_rank, moved_rank);
        for (a, b) in base_clouds.iter().zip(&moved_clouds) {
            prop_assert!((a.score - b.score).abs() <= 1e-6 * a.score.abs().max(1.0));
        }
    }
}

#[test]
fn distant_cloud_ranks_last() {
    let (_, _, ranking) = score_clouds(
        (3, cloud([0.0, 0.0], 40, 1.0)),
        vec![(7, cloud([30.0, 30.0], 20, 1.0)), (5, cloud([0.3, 0.0], 20, 1.0))],
    );
    assert_eq!(ranking.last(), Some(&7));
}

#[test]
fn probe_rejects_empty_input() {
    let ds = common::synthetic_dataset(1, 5, 6, 3);
    let empty = oodf_core::data::RawDataset::empty(6, 6);
    assert!(train_probe(&ds, &empty, &quick(), 0).is_err());
}
