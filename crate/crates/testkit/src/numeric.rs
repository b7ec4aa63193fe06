//! Numerical references: finite differences and direct formula evaluation.

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|b_i|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean over unordered pairs of `1 - cos`.
pub fn mean_pairwise_cosine_distance(vectors: &[Vec<f64>]) -> f64 {
    let n = vectors.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            total += 1.0 - cosine(&vectors[i], &vectors[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Alignment of each client's deviation from the weighted mean model with
/// the weighted mean update. Inputs are already restricted to the scored layers.
pub fn alignment_scores(models: &[Vec<f64>], global: &[f64], counts: &[usize]) -> Vec<f64> {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let dim = global.len();
    let mean_model: Vec<f64> =
        (0..dim).map(|k| models.iter().zip(counts).map(|(m, &c)| m[k] * c as f64).sum::<f64>() / total).collect();
    let mean_update: Vec<f64> = (0..dim).map(|k| mean_model[k] - global[k]).collect();
    models
        .iter()
        .map(|m| {
            let dev: Vec<f64> = m.iter().zip(&mean_model).map(|(a, b)| a - b).collect();
            cosine(&dev, &mean_update)
        })
        .collect()
}

/// `sum(lambda_i * theta_i) / sum(lambda_i)`.
pub fn weighted_mean(models: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    (0..models[0].len()).map(|k| models.iter().zip(weights).map(|(m, w)| m[k] * w).sum::<f64>() / total).collect()
}
