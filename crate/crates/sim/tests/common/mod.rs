#![allow(dead_code)]

use fedsurrogate_sim::ExperimentConfig;

/// A configuration small enough to run in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (key, value) in [
        ("n_clients", "8"),
        ("rounds", "3"),
        ("hidden", "[16,8]"),
        ("dataset.train_per_class", "60"),
        ("dataset.test_per_class", "20"),
        ("seed", "7"),
    ] {
        cfg.set(key, value).unwrap();
    }
    cfg
}
