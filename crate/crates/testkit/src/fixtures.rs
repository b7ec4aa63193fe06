//! Seeded random inputs shared by the oracle comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A distance matrix plus the clustering parameters to run it with.
#[derive(Debug, Clone)]
pub struct PlantedCase {
    pub distances: Vec<Vec<f64>>,
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

/// Points drawn around one to four planted centres (plus a few uniform
/// outliers), in 2 to 6 dimensions, under Euclidean or cosine distance.
pub fn planted_case(rng: &mut impl Rng) -> PlantedCase {
    let n = rng.random_range(5..=30);
    let dim = rng.random_range(2..=6);
    let blobs = rng.random_range(1..=4);
    let centres: Vec<Vec<f64>> =
        (0..blobs).map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
    let spreads: Vec<f64> = (0..blobs).map(|_| rng.random_range(0.05..2.0)).collect();
    let outliers = rng.random_range(0..=n / 5);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if i < outliers {
                (0..dim).map(|_| rng.random_range(-15.0..15.0)).collect()
            } else {
                let b = rng.random_range(0..blobs);
                centres[b].iter().map(|c| c + spreads[b] * rng.random_range(-1.0..1.0)).collect()
            }
        })
        .collect();
    let cosine = rng.random_bool(0.5);
    let distances = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else if cosine {
                        1.0 - crate::numeric::cosine(&points[i], &points[j])
                    } else {
                        points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                    }
                })
                .collect()
        })
        .collect();
    PlantedCase { distances, min_cluster_size: rng.random_range(2..=n / 2 + 1), min_samples: rng.random_range(1..=5) }
}

pub fn planted_cases(count: usize, seed: u64) -> Vec<PlantedCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| planted_case(&mut rng)).collect()
}

/// `(client id, score)` lists of length 0..=24 with scores in `[0, 1]`;
/// about one in ten sets repeats a single value, one in ten plants outliers.
pub fn score_sets(count: usize, seed: u64) -> Vec<Vec<(usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(0..=24);
            let mode = rng.random_range(0..10);
            let constant = rng.random_range(0.0..1.0);
            (0..n)
                .map(|i| {
                    let s = match mode {
                        0 => constant,
                        1 if i % 5 == 0 => rng.random_range(0.9..1.0),
                        1 => rng.random_range(0.0..0.2),
                        _ => rng.random_range(0.0..1.0),
                    };
                    (i * 3 + 1, s)
                })
                .collect()
        })
        .collect()
}

/// Random sequences of values in `[0, 1]`, lengths 1..=100.
pub fn sequences(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(1..=100);
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
        })
        .collect()
}
