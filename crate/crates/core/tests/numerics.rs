use std::sync::Arc;

use fedsurrogate_core::attacks::CosineDisguise;
use fedsurrogate_core::data::Sample;
use fedsurrogate_core::defense::{
    aggregate, alignment_scores, build_surrogate, coarse_cluster, fedavg_aggregate, layer_divergence,
    select_critical_layers, select_donor, AggregationRole, AggregationWeights, ClusterConfig, LcaConfig,
};
use fedsurrogate_core::model::{Mlp, TrainingHook};
use fedsurrogate_core::params::{cosine_distance, euclidean_distance};
use fedsurrogate_core::seed::rng_from;
use fedsurrogate_core::{LayerSchema, ParameterVector};
use fedsurrogate_testkit::numeric;
use rand::Rng;

fn random_vector(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_batch(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample { features: (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(), label: i % classes })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn backward_matches_central_differences() {
    let shapes: [&[usize]; 5] = [&[4, 3, 2], &[6, 5, 3], &[5, 8, 4, 3], &[3, 2, 2, 2], &[8, 6, 4]];
    for (i, dims) in shapes.iter().enumerate() {
        let mut rng = rng_from(100 + i as u64);
        let mlp = Mlp::new(dims).unwrap();
        // Random biases keep every pre-activation away from the ReLU kink.
        let init = mlp.init(i as u64);
        let jitter = random_vector(&mut rng, init.len(), 0.5);
        let params = ParameterVector::new(
            init.values().iter().zip(&jitter).map(|(a, b)| a + b).collect(),
            init.schema().clone(),
        )
        .unwrap();
        let batch = random_batch(&mut rng, 5, dims[0], *dims.last().unwrap());
        let inputs: Vec<&[f64]> = batch.iter().map(|s| s.features.as_slice()).collect();
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let cache = mlp.forward(&params, &inputs).unwrap();
        let analytic = mlp.backward(&params, &cache, &labels).unwrap();
        let schema = params.schema().clone();
        let loss = |x: &[f64]| mlp.loss(&ParameterVector::new(x.to_vec(), schema.clone()).unwrap(), &batch).unwrap();
        let fd = numeric::central_difference(&loss, params.values(), 1e-6);
        let err = relative_error(analytic.values(), &fd);
        assert!(err < 1e-5, "instance {i}: relative error {err}");
    }
}

#[test]
fn disguise_gradient_matches_central_differences() {
    let schema = Arc::new(LayerSchema::new([("fc1", 6), ("fc2", 4), ("fc3", 3)]).unwrap());
    for i in 0..5u64 {
        let mut rng = rng_from(200 + i);
        let global = ParameterVector::new(random_vector(&mut rng, 13, 1.0), schema.clone()).unwrap();
        let reference = ParameterVector::new(random_vector(&mut rng, 13, 1.0), schema.clone()).unwrap();
        let lambda = rng.random_range(0.1..2.0);
        let hook = CosineDisguise::new(&global, &reference, lambda);
        let x = random_vector(&mut rng, 13, 1.0);
        let mut grad = vec![0.0; 13];
        hook.add_gradient(&x, &mut grad);
        let fd = numeric::central_difference(&|p: &[f64]| hook.loss(p), &x, 1e-6);
        let err = relative_error(&grad, &fd);
        assert!(err < 1e-5, "instance {i}: relative error {err}");
    }
}

fn schema3() -> Arc<LayerSchema> {
    Arc::new(LayerSchema::new([("fc1", 5), ("fc2", 4), ("fc3", 3)]).unwrap())
}

fn pv(values: Vec<f64>, schema: &Arc<LayerSchema>) -> ParameterVector {
    ParameterVector::new(values, schema.clone()).unwrap()
}

#[test]
fn layer_divergence_matches_oracle() {
    let schema = schema3();
    let mut rng = rng_from(7);
    let deltas: Vec<ParameterVector> = (0..7).map(|_| pv(random_vector(&mut rng, 12, 1.0), &schema)).collect();
    let ours = layer_divergence(&deltas).unwrap();
    for (layer, (name, value)) in schema.layers().iter().zip(&ours) {
        let slices: Vec<Vec<f64>> = deltas.iter().map(|d| d.layer(&layer.name).unwrap().to_vec()).collect();
        assert_eq!(name, &layer.name);
        assert!((value - numeric::mean_pairwise_cosine_distance(&slices)).abs() < 1e-12);
    }
    let one = Arc::new(LayerSchema::new([("fc1", 2)]).unwrap());
    let three = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]].map(|v| pv(v, &one));
    assert!((layer_divergence(&three).unwrap()[0].1 - 0.528595).abs() < 1e-6);
}

#[test]
fn critical_layers_invariant_to_common_scaling() {
    let schema = schema3();
    let lca = LcaConfig { top_k: 2, ..LcaConfig::default() };
    for seed in 0..20 {
        let mut rng = rng_from(seed);
        let deltas: Vec<ParameterVector> = (0..6).map(|_| pv(random_vector(&mut rng, 12, 1.0), &schema)).collect();
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<ParameterVector> =
            deltas.iter().map(|d| pv(d.values().iter().map(|v| v * c).collect(), &schema)).collect();
        let a = select_critical_layers(&layer_divergence(&deltas).unwrap(), &lca).unwrap();
        let b = select_critical_layers(&layer_divergence(&scaled).unwrap(), &lca).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn clustering_invariant_to_per_client_scaling() {
    let schema = schema3();
    let critical = vec!["fc2".to_string(), "fc3".to_string()];
    for seed in 0..20 {
        let mut rng = rng_from(1000 + seed);
        let direction = random_vector(&mut rng, 12, 1.0);
        let deltas: Vec<ParameterVector> = (0..12)
            .map(|i| {
                let noise = if i < 3 { 2.0 } else { 0.3 };
                pv(direction.iter().map(|d| d + rng.random_range(-noise..noise)).collect(), &schema)
            })
            .collect();
        let scaled: Vec<ParameterVector> = deltas
            .iter()
            .map(|d| {
                let c = rng.random_range(0.1..10.0);
                pv(d.values().iter().map(|v| v * c).collect(), &schema)
            })
            .collect();
        let a = coarse_cluster(&deltas, &critical, &ClusterConfig::default()).unwrap();
        let b = coarse_cluster(&scaled, &critical, &ClusterConfig::default()).unwrap();
        assert_eq!(a.trusted, b.trusted, "seed {seed}");
    }
}

#[test]
fn surrogate_slices_come_from_the_right_parent() {
    let schema = schema3();
    let mut rng = rng_from(3);
    let flagged = pv(random_vector(&mut rng, 12, 1.0), &schema);
    let donor = pv(random_vector(&mut rng, 12, 1.0), &schema);
    let out = build_surrogate(&flagged, &donor, &["fc2".to_string()]).unwrap();
    assert_eq!(out.layer("fc2").unwrap(), donor.layer("fc2").unwrap());
    assert_eq!(out.layer("fc1").unwrap(), flagged.layer("fc1").unwrap());
    assert_eq!(out.layer("fc3").unwrap(), flagged.layer("fc3").unwrap());
    let rebuilt: Vec<f64> = ["fc1", "fc2", "fc3"].iter().flat_map(|n| out.layer(n).unwrap().to_vec()).collect();
    assert_eq!(rebuilt, out.values());
    let all: Vec<String> = schema.names().map(String::from).collect();
    assert_eq!(build_surrogate(&flagged, &donor, &all).unwrap(), donor);
    assert_eq!(build_surrogate(&flagged, &donor, &[]).unwrap(), flagged);
}

#[test]
fn aggregation_hand_example() {
    let schema = Arc::new(LayerSchema::new([("fc1", 2)]).unwrap());
    let a = pv(vec![1.0, 1.0], &schema);
    let b = pv(vec![3.0, 3.0], &schema);
    let s = pv(vec![10.0, 10.0], &schema);
    let out = aggregate(
        &[(&a, AggregationRole::Trusted), (&b, AggregationRole::Trusted), (&s, AggregationRole::Surrogate)],
        &AggregationWeights::default(),
    )
    .unwrap();
    for v in out.values() {
        assert!((v - 3.04348).abs() < 1e-5);
        assert!((v - 7.0 / 2.3).abs() < 1e-9);
    }
    let reference = numeric::weighted_mean(&[vec![1.0, 1.0], vec![3.0, 3.0], vec![10.0, 10.0]], &[1.0, 1.0, 0.3]);
    for (x, y) in out.values().iter().zip(&reference) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn all_trusted_is_plain_mean() {
    let schema = schema3();
    let mut rng = rng_from(5);
    let models: Vec<ParameterVector> = (0..5).map(|_| pv(random_vector(&mut rng, 12, 3.0), &schema)).collect();
    let roles: Vec<_> = models.iter().map(|m| (m, AggregationRole::Trusted)).collect();
    let out = aggregate(&roles, &AggregationWeights::default()).unwrap();
    let raw: Vec<Vec<f64>> = models.iter().map(|m| m.values().to_vec()).collect();
    let mean = numeric::weighted_mean(&raw, &[1.0; 5]);
    for (x, y) in out.values().iter().zip(&mean) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn fedavg_examples() {
    let schema = Arc::new(LayerSchema::new([("fc1", 2)]).unwrap());
    let zero = pv(vec![0.0, 0.0], &schema);
    let four = pv(vec![4.0, 4.0], &schema);
    assert_eq!(fedavg_aggregate(&[&zero, &four], &[1, 3]).unwrap().values(), &[3.0, 3.0]);
    assert_eq!(fedavg_aggregate(&[&zero, &four], &[2, 2]).unwrap().values(), &[2.0, 2.0]);
    assert_eq!(fedavg_aggregate(&[&four], &[9]).unwrap(), four);
}

#[test]
fn alignment_scores_match_oracle() {
    let schema = schema3();
    let layers = vec!["fc2".to_string(), "fc3".to_string()];
    for seed in 0..20 {
        let mut rng = rng_from(300 + seed);
        let global = pv(random_vector(&mut rng, 12, 1.0), &schema);
        let models: Vec<ParameterVector> = (0..6).map(|_| pv(random_vector(&mut rng, 12, 1.0), &schema)).collect();
        let counts: Vec<usize> = (0..6).map(|_| rng.random_range(1..50)).collect();
        let refs: Vec<&ParameterVector> = models.iter().collect();
        let ours = alignment_scores(&refs, &global, &counts, &layers).unwrap();
        let restricted: Vec<Vec<f64>> = models.iter().map(|m| m.restrict(&layers).unwrap()).collect();
        let oracle = numeric::alignment_scores(&restricted, &global.restrict(&layers).unwrap(), &counts);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn alignment_three_client_toy() {
    let schema = Arc::new(LayerSchema::new([("fc1", 1), ("fc2", 2)]).unwrap());
    let layers = vec!["fc2".to_string()];
    let global = pv(vec![0.0, 0.0, 0.0], &schema);
    let models = [pv(vec![9.0, 1.0, 0.0], &schema), pv(vec![9.0, 0.0, 1.0], &schema), pv(vec![9.0, 1.0, 1.0], &schema)];
    let refs: Vec<&ParameterVector> = models.iter().collect();
    let s = alignment_scores(&refs, &global, &[1, 1, 2], &layers).unwrap();
    // w* = g* = (0.75, 0.75); deviations (0.25,-0.75), (-0.75,0.25), (0.25,0.25).
    let c = 0.25 * 0.75 - 0.75 * 0.75;
    let expected = [c / (0.625f64.sqrt() * 1.125f64.sqrt()), c / (0.625f64.sqrt() * 1.125f64.sqrt()), 1.0];
    for (a, b) in s.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12, "{s:?}");
    }
    let same = [pv(vec![0.0, 1.0, 1.0], &schema), pv(vec![0.0, 1.0, 1.0], &schema)];
    let refs: Vec<&ParameterVector> = same.iter().collect();
    assert_eq!(alignment_scores(&refs, &global, &[1, 1], &layers).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn donor_metrics_can_disagree() {
    // Trusted 1 points the same way as the flagged vector but is ten times longer.
    let flagged = [1.0, 0.1];
    let trusted = [[10.0, 1.0], [0.8, 0.5]];
    let cos = select_donor(0, &[1, 2], |_, t| cosine_distance(&flagged, &trusted[t - 1])).unwrap();
    let euc = select_donor(0, &[1, 2], |_, t| euclidean_distance(&flagged, &trusted[t - 1])).unwrap();
    assert_eq!((cos, euc), (1, 2));
    let tie = select_donor(0, &[5, 2], |_, _| 0.3).unwrap();
    assert_eq!(tie, 2);
}
