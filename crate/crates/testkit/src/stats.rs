//! Order-statistic screens evaluated the long way round.

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Inclusive-method quantile: the sorted values sit at positions
/// `0, 1/(n-1), ..., 1` and `p` is located by scanning the segments.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let v = sorted(values);
    let n = v.len();
    assert!(n > 0, "quantile of empty data");
    if n == 1 {
        return v[0];
    }
    let step = 1.0 / (n - 1) as f64;
    for i in 0..n - 1 {
        let left = i as f64 * step;
        let right = (i + 1) as f64 * step;
        if p <= right || i == n - 2 {
            let t = ((p - left) / step).clamp(0.0, 1.0);
            return if t == 0.0 {
                v[i]
            } else if t == 1.0 {
                v[i + 1]
            } else {
                v[i] + t * (v[i + 1] - v[i])
            };
        }
    }
    unreachable!()
}

/// Textbook median: middle element, or the average of the two middle ones.
pub fn median(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len();
    assert!(n > 0, "median of empty data");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Ids whose score lies strictly above `q3 + k (q3 - q1)`; nothing for fewer than four scores.
pub fn iqr_outliers(scores: &[(usize, f64)], k: f64) -> Vec<usize> {
    if scores.len() < 4 {
        return Vec::new();
    }
    let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let q1 = quantile(&values, 0.25);
    let q3 = quantile(&values, 0.75);
    let fence = q3 + k * (q3 - q1);
    let mut out: Vec<usize> = scores.iter().filter(|s| s.1 > fence).map(|s| s.0).collect();
    out.sort_unstable();
    out
}

/// `(rescued, confirmed)` with cutoff `min(zeta, median)`; both empty when there are no scores.
pub fn rescue(scores: &[(usize, f64)], zeta: f64) -> (Vec<usize>, Vec<usize>) {
    if scores.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let eps = if zeta < median(&values) { zeta } else { median(&values) };
    let mut rescued = Vec::new();
    let mut confirmed = Vec::new();
    for &(id, s) in scores {
        if s <= eps {
            rescued.push(id);
        } else {
            confirmed.push(id);
        }
    }
    rescued.sort_unstable();
    confirmed.sort_unstable();
    (rescued, confirmed)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&x| {
            let below = values.iter().filter(|&&y| y < x).count() as f64;
            let equal = values.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Spearman's rho: the Pearson correlation of the ranks. NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}
