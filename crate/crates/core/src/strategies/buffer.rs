//! Bounded exemplar memory with reservoir, class-balanced and herding policies.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    /// Uniform reservoir sampling over the whole stream.
    Reservoir,
    /// Greedy class balancing: an under-represented class evicts from the largest one.
    Balanced,
    /// Exemplars chosen per class by [`herding_select`] at the end of each task.
    Herding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub image: Vec<u8>,
    pub label: u8,
    /// Network logits recorded at insertion time (DER++ only).
    pub logits: Option<Vec<f64>>,
    pub stream_index: usize,
    pub task_id: usize,
}

#[derive(Debug, Clone)]
pub struct ExemplarBuffer {
    capacity: usize,
    policy: BufferPolicy,
    entries: Vec<Exemplar>,
    seen_classes: Vec<u8>,
    version: u64,
}

impl ExemplarBuffer {
    pub fn new(capacity: usize, policy: BufferPolicy) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ExemplarBuffer {
            capacity,
            policy,
            entries: Vec::with_capacity(capacity),
            seen_classes: Vec::new(),
            version: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> BufferPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Exemplar] {
        &self.entries
    }

    /// Bumped on every change to the stored entries.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn class_counts(&self) -> [usize; crate::data::NUM_CLASSES] {
        let mut counts = [0; crate::data::NUM_CLASSES];
        for e in &self.entries {
            counts[e.label as usize] += 1;
        }
        counts
    }

    pub fn seen_classes(&self) -> &[u8] {
        &self.seen_classes
    }

    /// Offers one stream item. `stream_index` counts items offered so far
    /// (0-based) and drives the reservoir acceptance probability.
    pub fn update<R: Rng + ?Sized>(&mut self, item: Exemplar, stream_index: usize, rng: &mut R) {
        if !self.seen_classes.contains(&item.label) {
            self.seen_classes.push(item.label);
        }
        if self.entries.len() < self.capacity {
            self.entries.push(item);
            self.version += 1;
            return;
        }
        match self.policy {
            BufferPolicy::Reservoir => {
                let j = rng.random_range(0..=stream_index);
                if j < self.capacity {
                    self.entries[j] = item;
                    self.version += 1;
                }
            }
            BufferPolicy::Balanced => {
                let counts = self.class_counts();
                let quota = self.capacity / self.seen_classes.len();
                if counts[item.label as usize] >= quota {
                    return;
                }
                let largest = (0..counts.len())
                    .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
                    .expect("non-empty");
                let members: Vec<usize> = (0..self.entries.len())
                    .filter(|&i| self.entries[i].label as usize == largest)
                    .collect();
                let victim = members[rng.random_range(0..members.len())];
                self.entries[victim] = item;
                self.version += 1;
            }
            // Herding buffers are rebuilt per class after each task.
            BufferPolicy::Herding => {}
        }
    }

    /// Keeps at most `per_class` entries of every class, preserving order.
    pub fn truncate_per_class(&mut self, per_class: usize) {
        let mut counts = [0usize; crate::data::NUM_CLASSES];
        let before = self.entries.len();
        self.entries.retain(|e| {
            counts[e.label as usize] += 1;
            counts[e.label as usize] <= per_class
        });
        if self.entries.len() != before {
            self.version += 1;
        }
    }

    /// Appends pre-selected exemplars (herding), never exceeding capacity.
    pub fn extend_selected(&mut self, items: impl IntoIterator<Item = Exemplar>) {
        for item in items {
            if self.entries.len() >= self.capacity {
                break;
            }
            if !self.seen_classes.contains(&item.label) {
                self.seen_classes.push(item.label);
            }
            self.entries.push(item);
            self.version += 1;
        }
    }

    /// Up to `k` distinct entry indices drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        let k = k.min(self.entries.len());
        rand::seq::index::sample(rng, self.entries.len(), k).into_vec()
    }

    pub fn images_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let width = self.entries.first().map_or(0, |e| e.image.len());
        let mut m = Array2::zeros((indices.len(), width));
        for (r, &i) in indices.iter().enumerate() {
            for (dst, &p) in m.row_mut(r).iter_mut().zip(&self.entries[i].image) {
                *dst = p as f64 / 255.0;
            }
        }
        m
    }
}

/// iCaRL herding: greedily picks `m` rows so that the running mean of the
/// picked rows stays closest to the mean of all rows. Returns row indices in
/// selection order, without repetition.
pub fn herding_select(features: &Array2<f64>, m: usize) -> Vec<usize> {
    let n = features.nrows();
    let m = m.min(n);
    if m == 0 {
        return Vec::new();
    }
    let mu = features.mean_axis(Axis(0)).expect("non-empty");
    let mut picked = Vec::with_capacity(m);
    let mut used = vec![false; n];
    let mut running: Array1<f64> = Array1::zeros(features.ncols());
    for k in 1..=m {
        let mut best = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for i in 0..n {
            if used[i] {
                continue;
            }
            let dist: f64 = mu
                .iter()
                .zip(running.iter().zip(features.row(i)))
                .map(|(&u, (&s, &f))| {
                    let d = u - (s + f) / k as f64;
                    d * d
                })
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = i;
            }
        }
        used[best] = true;
        running += &features.row(best);
        picked.push(best);
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(label: u8, idx: usize) -> Exemplar {
        Exemplar {
            image: vec![idx as u8],
            label,
            logits: None,
            stream_index: idx,
            task_id: 1,
        }
    }

    #[test]
    fn short_streams_are_kept_whole() {
        for policy in [BufferPolicy::Reservoir, BufferPolicy::Balanced, BufferPolicy::Herding] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut buf = ExemplarBuffer::new(5, policy);
            for i in 0..5 {
                buf.update(item((i % 3) as u8, i), i, &mut rng);
            }
            assert_eq!(buf.len(), 5, "{policy:?}");
        }
    }

    #[test]
    fn balanced_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ExemplarBuffer::new(4, BufferPolicy::Balanced);
        for i in 0..10 {
            buf.update(item(0, i), i, &mut rng);
        }
        for i in 10..20 {
            buf.update(item(1, i), i, &mut rng);
        }
        let counts = buf.class_counts();
        assert_eq!((counts[0], counts[1]), (2, 2));
    }

    #[test]
    fn herding_collinear_points_picks_point_nearest_mean() {
        // Mean of {0, 1, 5} is 2; brute force over single picks gives index 1.
        let f = array![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]];
        let mu = [2.0f64, 2.0];
        let brute = (0..3)
            .min_by(|&a, &b| {
                let da: f64 = (0..2).map(|j| (f[[a, j]] - mu[j]).powi(2)).sum();
                let db: f64 = (0..2).map(|j| (f[[b, j]] - mu[j]).powi(2)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!(herding_select(&f, 1)[0], brute);
        assert_eq!(brute, 1);
        let order = herding_select(&f, 3);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn truncate_keeps_priority_prefix() {
        let mut buf = ExemplarBuffer::new(10, BufferPolicy::Herding);
        buf.extend_selected((0..4).map(|i| item(0, i)).chain((4..8).map(|i| item(1, i))));
        buf.truncate_per_class(2);
        let kept: Vec<usize> = buf.entries().iter().map(|e| e.stream_index).collect();
        assert_eq!(kept, vec![0, 1, 4, 5]);
    }
}
