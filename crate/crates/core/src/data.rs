//! Labelled-subset selection and the supervision-rate minibatch sampler.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, purpose,
//! index)`, so a batch is a pure function of the seed and the step number and
//! a resumed run replays exactly the batches an unbroken run would have seen.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tensor::Tensor;

/// Images (`N×P`, intensities in `[0, 1]`) with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let Some((n, _)) = images.shape().matrix() else {
            return Err(Error::contract(format!(
                "images must be a matrix, got {}",
                images.shape()
            )));
        };
        if n != labels.len() {
            return Err(Error::contract(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::domain(
                "dataset",
                format!("label {bad} outside [0, {num_classes})"),
            ));
        }
        if let Some(&v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain("dataset", format!("intensity {v} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.images.dims()[1]
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Ok(Dataset {
            images: self.images.select_rows(&idx)?,
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        })
    }
}

/// Stream identifiers for [`stream`].
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const EPOCH_ORDER: u64 = 3;
    pub const LABELED_DRAW: u64 = 4;
    pub const NOISE: u64 = 5;
}

/// Deterministic generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Partition of the training indices into a class-balanced labelled pool
/// and the unlabelled remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitState {
    /// `labeled_by_class[c]` holds the chosen indices of class `c`.
    pub labeled_by_class: Vec<Vec<usize>>,
    pub unlabeled: Vec<usize>,
    pub seed: u64,
}

impl SplitState {
    /// All labelled indices, class by class.
    pub fn labeled(&self) -> Vec<usize> {
        self.labeled_by_class.iter().flatten().copied().collect()
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled_by_class.iter().map(Vec::len).sum()
    }
}

/// Draws `per_class` indices of every class without replacement.
pub fn select_labeled_subset(data: &Dataset, per_class: usize, seed: u64) -> Result<SplitState> {
    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); data.num_classes];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = stream(seed, purpose::SPLIT, 0);
    let mut in_labeled = alloc::vec![false; data.len()];
    let mut labeled_by_class = Vec::with_capacity(data.num_classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::Capacity {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        let (chosen, _) = members.partial_shuffle(&mut rng, per_class);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        for &i in &chosen {
            in_labeled[i] = true;
        }
        labeled_by_class.push(chosen);
    }
    let unlabeled = (0..data.len()).filter(|&i| !in_labeled[i]).collect();
    Ok(SplitState {
        labeled_by_class,
        unlabeled,
        seed,
    })
}

/// Fraction `rate` of each minibatch of `batch_size` rows comes from the
/// labelled pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisionSchedule {
    pub rate: f64,
    pub batch_size: usize,
}

impl SupervisionSchedule {
    pub fn new(rate: f64, batch_size: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::contract(format!("supervision rate {rate} outside [0, 1]")));
        }
        if batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        Ok(SupervisionSchedule { rate, batch_size })
    }

    /// `round(rate · batch_size)`.
    pub fn labeled_rows(&self) -> usize {
        libm::round(self.rate * self.batch_size as f64) as usize
    }

    pub fn unlabeled_rows(&self) -> usize {
        self.batch_size - self.labeled_rows()
    }
}

/// Assembles one minibatch: `round(r·B)` labelled rows drawn with replacement
/// from the pool, then the given unlabelled rows, in shuffled order.
pub fn sample_minibatch<R: Rng + ?Sized>(
    data: &Dataset,
    split: &SplitState,
    sched: &SupervisionSchedule,
    unlabeled_rows: &[usize],
    rng: &mut R,
) -> Result<Batch> {
    let n_lab = sched.labeled_rows();
    let pool = split.labeled();
    if n_lab > 0 && pool.is_empty() {
        return Err(Error::contract(
            "supervision rate is positive but the labelled pool is empty",
        ));
    }
    let mut rows: Vec<(usize, bool)> = Vec::with_capacity(n_lab + unlabeled_rows.len());
    for _ in 0..n_lab {
        rows.push((pool[rng.random_range(0..pool.len())], true));
    }
    rows.extend(unlabeled_rows.iter().map(|&i| (i, false)));
    rows.shuffle(rng);

    let idx: Vec<usize> = rows.iter().map(|&(i, _)| i).collect();
    let labels = rows
        .iter()
        .map(|&(i, lab)| lab.then(|| data.labels[i]))
        .collect();
    Ok(Batch {
        x: data.images.select_rows(&idx)?,
        labels,
    })
}

/// Epoch-structured sampler. Each epoch visits a fresh permutation of the
/// unlabelled pool, consuming `B − round(r·B)` of it per step, so no
/// unlabelled index repeats within an epoch; the last steps of an epoch get
/// fewer unlabelled rows if the pool runs out.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    split: SplitState,
    schedule: SupervisionSchedule,
    steps_per_epoch: u64,
    seed: u64,
    cached_epoch: Option<(u64, Vec<usize>)>,
}

impl MinibatchSampler {
    /// `steps_per_epoch` is `⌈N / B⌉` for `N` training examples, or
    /// `⌈U / B⌉` for `U` unlabelled examples when no row is labelled.
    pub fn new(
        split: SplitState,
        schedule: SupervisionSchedule,
        num_examples: usize,
        seed: u64,
    ) -> Result<Self> {
        if schedule.labeled_rows() > 0 && split.num_labeled() == 0 {
            return Err(Error::contract(
                "supervision rate is positive but the labelled pool is empty",
            ));
        }
        if schedule.unlabeled_rows() > 0 && split.unlabeled.is_empty() {
            return Err(Error::contract(
                "unlabelled rows requested but the unlabelled pool is empty",
            ));
        }
        // with no labelled rows a step past the end of the unlabelled pool
        // would be empty, so the epoch ends with the pool
        let covered = if schedule.labeled_rows() == 0 {
            split.unlabeled.len()
        } else {
            num_examples
        };
        let steps_per_epoch = covered.div_ceil(schedule.batch_size).max(1) as u64;
        Ok(MinibatchSampler {
            split,
            schedule,
            steps_per_epoch,
            seed,
            cached_epoch: None,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn split(&self) -> &SplitState {
        &self.split
    }

    pub fn schedule(&self) -> &SupervisionSchedule {
        &self.schedule
    }

    fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        let stale = !matches!(&self.cached_epoch, Some((e, _)) if *e == epoch);
        if stale {
            let mut order = self.split.unlabeled.clone();
            order.shuffle(&mut stream(self.seed, purpose::EPOCH_ORDER, epoch));
            self.cached_epoch = Some((epoch, order));
        }
        &self.cached_epoch.as_ref().expect("filled above").1
    }

    /// Batch for global step `step` (0-based).
    pub fn batch(&mut self, data: &Dataset, step: u64) -> Result<Batch> {
        let epoch = step / self.steps_per_epoch;
        let within = (step % self.steps_per_epoch) as usize;
        let per_step = self.schedule.unlabeled_rows();
        let order = self.epoch_order(epoch);
        let start = (within * per_step).min(order.len());
        let end = (start + per_step).min(order.len());
        let unlabeled: Vec<usize> = order[start..end].to_vec();
        if unlabeled.is_empty() && self.schedule.labeled_rows() == 0 {
            return Err(Error::contract(format!(
                "step {step} has no rows: unlabelled pool exhausted"
            )));
        }
        let mut rng = stream(self.seed, purpose::LABELED_DRAW, step);
        sample_minibatch(data, &self.split, &self.schedule, &unlabeled, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `per_class * classes + extra` rows, labels cycling through classes.
    fn toy(n: usize, classes: usize) -> Dataset {
        let images = Tensor::new([n, 2], (0..2 * n).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(images, labels, classes).unwrap()
    }

    #[test]
    fn balanced_subset() {
        let d = toy(600, 10);
        let s = select_labeled_subset(&d, 10, 3).unwrap();
        assert_eq!(s.num_labeled(), 100);
        assert_eq!(s.unlabeled.len(), 500);
        for (c, idx) in s.labeled_by_class.iter().enumerate() {
            assert_eq!(idx.len(), 10);
            assert!(idx.iter().all(|&i| d.labels[i] == c));
        }
        let lab = s.labeled();
        assert!(s.unlabeled.iter().all(|i| !lab.contains(i)));
        assert_eq!(select_labeled_subset(&d, 10, 3).unwrap(), s);
        assert_ne!(select_labeled_subset(&d, 10, 4).unwrap(), s);
    }

    #[test]
    fn zero_per_class_is_valid() {
        let d = toy(50, 10);
        let s = select_labeled_subset(&d, 0, 1).unwrap();
        assert_eq!(s.num_labeled(), 0);
        assert_eq!(s.unlabeled.len(), 50);
    }

    #[test]
    fn capacity_error() {
        let d = toy(50, 10);
        assert!(matches!(
            select_labeled_subset(&d, 6, 1),
            Err(Error::Capacity { requested: 6, available: 5, .. })
        ));
    }

    #[test]
    fn rounding_contract() {
        assert_eq!(SupervisionSchedule::new(0.05, 80).unwrap().labeled_rows(), 4);
        assert_eq!(SupervisionSchedule::new(0.01, 80).unwrap().labeled_rows(), 1);
        assert_eq!(SupervisionSchedule::new(0.1, 80).unwrap().labeled_rows(), 8);
        assert_eq!(SupervisionSchedule::new(0.0, 80).unwrap().labeled_rows(), 0);
        assert_eq!(SupervisionSchedule::new(1.0, 80).unwrap().labeled_rows(), 80);
        assert!(SupervisionSchedule::new(1.5, 80).is_err());
        assert!(SupervisionSchedule::new(0.5, 0).is_err());
    }

    #[test]
    fn rate_zero_batches_are_unlabeled() {
        let d = toy(600, 10);
        let s = select_labeled_subset(&d, 10, 0).unwrap();
        let mut sampler =
            MinibatchSampler::new(s, SupervisionSchedule::new(0.0, 80).unwrap(), 600, 0).unwrap();
        let b = sampler.batch(&d, 0).unwrap();
        assert_eq!(b.labels.len(), 80);
        assert!(b.labeled_mask().iter().all(|m| !m));
    }

    #[test]
    fn unlabelled_only_epoch_ends_with_the_pool() {
        // 600 rows, 100 held out as labels, so 500 remain: six full steps
        // and a short seventh, never an empty one
        let d = toy(600, 10);
        let s = select_labeled_subset(&d, 10, 0).unwrap();
        let mut sampler =
            MinibatchSampler::new(s, SupervisionSchedule::new(0.0, 80).unwrap(), 600, 0).unwrap();
        assert_eq!(sampler.steps_per_epoch(), 7);
        let sizes: Vec<usize> = (0..14).map(|t| sampler.batch(&d, t).unwrap().labels.len()).collect();
        assert_eq!(sizes, [80, 80, 80, 80, 80, 80, 20, 80, 80, 80, 80, 80, 80, 20]);
    }

    #[test]
    fn full_supervision_draws_with_replacement() {
        let d = toy(600, 10);
        let s = select_labeled_subset(&d, 10, 0).unwrap();
        let pool = s.labeled();
        let mut sampler =
            MinibatchSampler::new(s, SupervisionSchedule::new(1.0, 80).unwrap(), 600, 9).unwrap();
        let mut seen = alloc::collections::BTreeMap::new();
        for step in 0..5 {
            let b = sampler.batch(&d, step).unwrap();
            assert_eq!(b.num_labeled(), 80);
            for (i, y) in b.labels.iter().enumerate() {
                let y = y.unwrap();
                // labels are the true class of the drawn row
                let row = b.x.row(i);
                assert!(pool.iter().any(|&p| d.images.row(p) == row && d.labels[p] == y));
                *seen.entry((y, row.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>())).or_insert(0) += 1;
            }
        }
        // 400 draws from a pool of 100 must repeat
        assert!(seen.values().any(|&c| c > 1));
    }

    #[test]
    fn empty_pool_with_positive_rate_is_rejected() {
        let d = toy(50, 10);
        let s = select_labeled_subset(&d, 0, 0).unwrap();
        let sched = SupervisionSchedule::new(0.1, 20).unwrap();
        assert!(MinibatchSampler::new(s.clone(), sched, 50, 0).is_err());
        let mut rng = stream(0, 0, 0);
        assert!(sample_minibatch(&d, &s, &sched, &[0, 1], &mut rng).is_err());
    }

    #[test]
    fn batches_are_pure_in_seed_and_step() {
        let d = toy(600, 10);
        let s = select_labeled_subset(&d, 10, 0).unwrap();
        let sched = SupervisionSchedule::new(0.1, 80).unwrap();
        let mut a = MinibatchSampler::new(s.clone(), sched, 600, 5).unwrap();
        let mut b = MinibatchSampler::new(s, sched, 600, 5).unwrap();
        let late = a.batch(&d, 11).unwrap();
        for step in 0..11 {
            b.batch(&d, step).unwrap();
        }
        assert_eq!(b.batch(&d, 11).unwrap(), late);
    }

    #[test]
    fn dataset_validation() {
        let img = Tensor::new([2, 1], alloc::vec![0.0, 1.5]).unwrap();
        assert!(Dataset::new(img, alloc::vec![0, 1], 2).is_err());
        let img = Tensor::new([2, 1], alloc::vec![0.0, 1.0]).unwrap();
        assert!(Dataset::new(img.clone(), alloc::vec![0], 2).is_err());
        assert!(Dataset::new(img, alloc::vec![0, 2], 2).is_err());
    }
}
