//! Datasets, non-IID client partitioning and trigger poisoning.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::DataError;
use crate::seed::{derive_seed, rng_from};

/// Maximum number of whole-partition redraws when a client ends up empty.
pub const MAX_PARTITION_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self, DataError> {
        if num_classes == 0 {
            return Err(DataError::InvalidParameter("num_classes must be positive".into()));
        }
        let dim = samples.first().map_or(0, |s| s.features.len());
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(DataError::InvalidParameter(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(DataError::InvalidParameter(format!(
                    "sample {i} has label {} but only {num_classes} classes",
                    s.label
                )));
            }
        }
        Ok(Self { samples, num_classes, dim })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }

    pub fn class_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in indices {
            h[self.samples[i].label] += 1;
        }
        h
    }

    /// Splits each class into its first `per_class` samples and the rest.
    pub fn split_per_class(&self, per_class: usize) -> (Dataset, Dataset) {
        let mut seen = vec![0usize; self.num_classes];
        let (mut head, mut tail) = (Vec::new(), Vec::new());
        for s in &self.samples {
            if seen[s.label] < per_class {
                head.push(s.clone());
            } else {
                tail.push(s.clone());
            }
            seen[s.label] += 1;
        }
        (
            Dataset { samples: head, num_classes: self.num_classes, dim: self.dim },
            Dataset { samples: tail, num_classes: self.num_classes, dim: self.dim },
        )
    }
}

/// Class-conditional Gaussian clouds clipped to `[0, 1]`.
///
/// Class means are drawn uniformly from `[0.1, 0.7]` per feature, which keeps a
/// saturated trigger patch (value 1.0) out of every class's typical range.
/// Samples are ordered class by class.
pub fn generate_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_classes == 0 || dim == 0 || per_class == 0 {
        return Err(DataError::InvalidParameter("class count, dimension and per-class count must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::InvalidParameter(format!("spread {spread} must be >= 0")));
    }
    let mut rng = rng_from(seed);
    let means: Vec<Vec<f64>> =
        (0..num_classes).map(|_| (0..dim).map(|_| rng.random_range(0.1..0.7)).collect()).collect();
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (m + spread * z).clamp(0.0, 1.0)
                })
                .collect();
            samples.push(Sample { features, label });
        }
    }
    Dataset::new(samples, num_classes)
}

/// Per-client sample indices into a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub client_indices: Vec<Vec<usize>>,
    pub alpha: f64,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }
}

/// Label-skewed split: every class is spread over clients by its own
/// Dirichlet(`alpha`) proportion vector.
///
/// A draw that leaves some client empty is discarded and the whole partition
/// is redrawn from a sub-seed, up to [`MAX_PARTITION_ATTEMPTS`] times.
pub fn dirichlet_partition(ds: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan, DataError> {
    if n_clients < 2 {
        return Err(DataError::InvalidParameter("need at least 2 clients".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DataError::InvalidParameter(format!("alpha {alpha} must be > 0")));
    }
    if ds.len() < n_clients {
        return Err(DataError::Infeasible { samples: ds.len(), clients: n_clients });
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| DataError::InvalidParameter(format!("gamma({alpha}): {e}")))?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, s) in ds.samples().iter().enumerate() {
        by_class[s.label].push(i);
    }

    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = rng_from(derive_seed(seed, &[attempt]));
        let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let proportions = loop {
                let draw: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draw.iter().sum();
                if total > 0.0 && total.is_finite() {
                    break draw.into_iter().map(|g| g / total).collect::<Vec<_>>();
                }
            };
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let n = shuffled.len();
            let mut cumulative = 0.0;
            let mut start = 0usize;
            for (client, p) in proportions.iter().enumerate() {
                cumulative += p;
                let end = if client + 1 == n_clients {
                    n
                } else {
                    (libm::round(cumulative * n as f64) as usize).clamp(start, n)
                };
                clients[client].extend_from_slice(&shuffled[start..end]);
                start = end;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            for c in &mut clients {
                c.sort_unstable();
            }
            return Ok(PartitionPlan { client_indices: clients, alpha });
        }
    }
    Err(DataError::PartitionExhausted(MAX_PARTITION_ATTEMPTS as usize))
}

/// A fixed input patch plus the label it should force.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TriggerSpec {
    pub patch_coords: Vec<usize>,
    pub patch_value: f64,
    pub target_label: usize,
    /// Number of disjoint pieces the patch is split into for distributed attacks.
    pub fragments: usize,
}

impl TriggerSpec {
    /// `size x size` square in the lower-right corner of a row-major `side x side` grid.
    pub fn lower_right_square(
        side: usize,
        size: usize,
        patch_value: f64,
        target_label: usize,
        fragments: usize,
    ) -> Self {
        let size = size.min(side);
        let mut coords = Vec::with_capacity(size * size);
        for row in (side - size)..side {
            for col in (side - size)..side {
                coords.push(row * side + col);
            }
        }
        Self { patch_coords: coords, patch_value, target_label, fragments }
    }

    pub fn validate(&self, dim: usize, num_classes: usize) -> Result<(), DataError> {
        if self.patch_coords.is_empty() {
            return Err(DataError::InvalidTrigger("empty patch".into()));
        }
        for (i, &c) in self.patch_coords.iter().enumerate() {
            if c >= dim {
                return Err(DataError::InvalidTrigger(format!("coordinate {c} outside {dim} features")));
            }
            if self.patch_coords[..i].contains(&c) {
                return Err(DataError::InvalidTrigger(format!("duplicate coordinate {c}")));
            }
        }
        if self.target_label >= num_classes {
            return Err(DataError::InvalidTrigger(format!(
                "target {} outside {num_classes} classes",
                self.target_label
            )));
        }
        if self.fragments == 0 || self.fragments > self.patch_coords.len() {
            return Err(DataError::InvalidTrigger(format!(
                "fragments must be in 1..={}, got {}",
                self.patch_coords.len(),
                self.fragments
            )));
        }
        Ok(())
    }

    /// Coordinates of one fragment under round-robin assignment.
    pub fn fragment_coords(&self, fragment: usize) -> Result<Vec<usize>, DataError> {
        if fragment >= self.fragments {
            return Err(DataError::FragmentOutOfRange { index: fragment, fragments: self.fragments });
        }
        Ok(self
            .patch_coords
            .iter()
            .enumerate()
            .filter(|(k, _)| k % self.fragments == fragment)
            .map(|(_, &c)| c)
            .collect())
    }
}

/// Returns a copy of `sample` with the patch (or one fragment of it) stamped
/// in and the label set to the target.
pub fn apply_trigger(sample: &Sample, spec: &TriggerSpec, fragment: Option<usize>) -> Result<Sample, DataError> {
    let coords = match fragment {
        Some(f) => spec.fragment_coords(f)?,
        None => spec.patch_coords.clone(),
    };
    let mut out = sample.clone();
    for c in coords {
        let slot = out
            .features
            .get_mut(c)
            .ok_or_else(|| DataError::InvalidTrigger(format!("coordinate {c} outside sample")))?;
        *slot = spec.patch_value;
    }
    out.label = spec.target_label;
    Ok(out)
}

/// `floor(fraction * n)`, robust to representation error such as `0.29 * 100`.
pub fn floor_fraction(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let nearest = libm::round(raw);
    let v = if (raw - nearest).abs() < 1e-9 { nearest } else { libm::floor(raw) };
    (v.max(0.0) as usize).min(n)
}

/// Replaces exactly `floor(pdr * n)` samples, picked by a seeded shuffle, with
/// their triggered versions. Order and the remaining samples are preserved.
pub fn poison_partition(
    samples: &[Sample],
    pdr: f64,
    spec: &TriggerSpec,
    fragment: Option<usize>,
    seed: u64,
) -> Result<Vec<Sample>, DataError> {
    if !(0.0..=1.0).contains(&pdr) {
        return Err(DataError::InvalidParameter(format!("pdr {pdr} outside [0, 1]")));
    }
    let k = floor_fraction(pdr, samples.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng_from(seed));
    let mut out = samples.to_vec();
    for &i in &order[..k] {
        out[i] = apply_trigger(&samples[i], spec, fragment)?;
    }
    Ok(out)
}

/// Every sample whose true label differs from the target, with the full
/// trigger applied. Used for attack success rate.
pub fn triggered_test_set(test: &[Sample], spec: &TriggerSpec) -> Result<Vec<Sample>, DataError> {
    test.iter().filter(|s| s.label != spec.target_label).map(|s| apply_trigger(s, spec, None)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec9(fragments: usize) -> TriggerSpec {
        TriggerSpec::lower_right_square(8, 3, 1.0, 1, fragments)
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(4, 64, 100, 0.1, 7).unwrap();
        let b = generate_synthetic(4, 64, 100, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 400);
        assert!(a.samples().iter().flat_map(|s| &s.features).all(|&v| (0.0..=1.0).contains(&v)));
        let c = generate_synthetic(4, 64, 100, 0.1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_spread_collapses_classes() {
        let d = generate_synthetic(3, 16, 10, 0.0, 1).unwrap();
        for class in 0..3 {
            let members: Vec<_> = d.samples().iter().filter(|s| s.label == class).collect();
            assert!(members.windows(2).all(|w| w[0].features == w[1].features));
        }
    }

    #[test]
    fn lower_right_square_coords() {
        let s = spec9(1);
        assert_eq!(s.patch_coords, vec![45, 46, 47, 53, 54, 55, 61, 62, 63]);
        s.validate(64, 4).unwrap();
        assert!(s.validate(50, 4).is_err());
        assert!(s.validate(64, 1).is_err());
        assert!(spec9(10).validate(64, 4).is_err());
    }

    #[test]
    fn full_trigger_sets_patch_and_label() {
        let sample = Sample { features: vec![0.25; 64], label: 3 };
        let out = apply_trigger(&sample, &spec9(1), None).unwrap();
        assert_eq!(out.label, 1);
        for c in &spec9(1).patch_coords {
            assert_eq!(out.features[*c], 1.0);
        }
        assert_eq!(out.features.iter().filter(|&&v| v == 1.0).count(), 9);
        assert_eq!(sample.features, vec![0.25; 64]);
    }

    #[test]
    fn fragment_round_robin() {
        let s = spec9(4);
        // positions {0, 4, 8} of the patch list
        assert_eq!(s.fragment_coords(0).unwrap(), vec![45, 54, 63]);
        let sample = Sample { features: vec![0.0; 64], label: 0 };
        let out = apply_trigger(&sample, &s, Some(0)).unwrap();
        assert_eq!(out.features.iter().filter(|&&v| v == 1.0).count(), 3);
        assert!(matches!(apply_trigger(&sample, &s, Some(4)), Err(DataError::FragmentOutOfRange { .. })));
    }

    #[test]
    fn target_labelled_sample_keeps_label() {
        let sample = Sample { features: vec![0.0; 64], label: 1 };
        let out = apply_trigger(&sample, &spec9(1), None).unwrap();
        assert_eq!(out.label, 1);
        assert_eq!(out.features[63], 1.0);
    }

    fn hundred() -> Vec<Sample> {
        (0..100).map(|i| Sample { features: vec![0.0; 64], label: i % 4 }).collect()
    }

    #[test]
    fn poison_counts() {
        let clean = hundred();
        let changed = |out: &[Sample]| out.iter().zip(&clean).filter(|(a, b)| a != b).count();
        let out = poison_partition(&clean, 0.3, &spec9(1), None, 3).unwrap();
        assert_eq!(changed(&out), 30);
        assert_eq!(poison_partition(&clean, 0.0, &spec9(1), None, 3).unwrap(), clean);
        let all = poison_partition(&clean, 1.0, &spec9(1), None, 3).unwrap();
        assert!(all.iter().all(|s| s.label == 1 && s.features[45] == 1.0));
        assert!(poison_partition(&clean, 1.5, &spec9(1), None, 3).is_err());
    }

    #[test]
    fn floor_fraction_tolerates_representation_error() {
        assert_eq!(floor_fraction(0.29, 100), 29);
        assert_eq!(floor_fraction(0.3, 100), 30);
        assert_eq!(floor_fraction(0.35, 20), 7);
        assert_eq!(floor_fraction(0.999, 10), 9);
        assert_eq!(floor_fraction(1.0, 7), 7);
    }

    #[test]
    fn partition_rejects_infeasible() {
        let d = generate_synthetic(2, 4, 2, 0.1, 1).unwrap();
        assert!(matches!(dirichlet_partition(&d, 5, 0.5, 1), Err(DataError::Infeasible { .. })));
        assert!(dirichlet_partition(&d, 1, 0.5, 1).is_err());
        assert!(dirichlet_partition(&d, 2, 0.0, 1).is_err());
    }

    #[test]
    fn triggered_test_set_excludes_target() {
        let test = hundred();
        let t = triggered_test_set(&test, &spec9(1)).unwrap();
        assert_eq!(t.len(), 75);
        assert!(t.iter().all(|s| s.label == 1 && s.features[45] == 1.0));
    }
}
