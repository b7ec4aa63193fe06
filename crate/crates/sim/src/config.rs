//! Experiment configuration: TOML loading, dotted-path overrides, validation
//! and a stable content hash.

use std::path::PathBuf;

use fedsurrogate_core::attacks::{AttackConfig, AttackKind};
use fedsurrogate_core::data::TriggerSpec;
use fedsurrogate_core::defense::{
    AggregationWeights, ClusterConfig, DonorMetric, FedSurrogateConfig, FilterConfig, LcaConfig, PipelineVariant,
};
use fedsurrogate_core::model::layer_name;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    FedSurrogate,
    FedAvg,
}

impl DefenseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DefenseKind::FedSurrogate => "fedsurrogate",
            DefenseKind::FedAvg => "fedavg",
        }
    }
}

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian class clouds on a `side x side` grid.
    Synthetic { classes: usize, side: usize, train_per_class: usize, test_per_class: usize, spread: f64 },
    /// IDX image/label files (MNIST layout).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: usize,
        /// Keep only the first `limit` training and test samples, if set.
        limit: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic { classes: 4, side: 8, train_per_class: 1000, test_per_class: 100, spread: 0.1 }
    }
}

/// Attack knobs that are not shared with benign training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub target_label: usize,
    pub patch_size: usize,
    pub patch_value: f64,
    /// Upper bound on trigger fragments for distributed attacks; the
    /// effective count is also capped by the number of adversaries.
    pub fragments: usize,
    pub neurotoxin_ratio: f64,
    pub csa_lambda: f64,
    pub cla_top_k: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kind: AttackKind::Cba,
            target_label: 1,
            patch_size: 3,
            patch_value: 1.0,
            fragments: 4,
            neurotoxin_ratio: 0.75,
            csa_lambda: 1.0,
            cla_top_k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    pub mcr: f64,
    pub pdr: f64,
    pub alpha: f64,
    pub rounds: usize,
    pub benign_epochs: usize,
    pub malicious_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
    pub attack: AttackSection,
    pub defense: DefenseKind,
    pub variant: PipelineVariant,
    pub lca: LcaConfig,
    pub filter: FilterConfig,
    pub cluster: ClusterConfig,
    pub weights: AggregationWeights,
    pub donor_metric: DonorMetric,
    pub dataset: DatasetSpec,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_clients: 20,
            mcr: 0.2,
            pdr: 0.3,
            alpha: 0.5,
            rounds: 30,
            benign_epochs: 2,
            malicious_epochs: 5,
            lr: 0.05,
            batch: 32,
            hidden: vec![64, 32],
            attack: AttackSection::default(),
            defense: DefenseKind::FedSurrogate,
            variant: PipelineVariant::Full,
            lca: LcaConfig::default(),
            filter: FilterConfig::new(vec![layer_name(1), layer_name(2)]),
            cluster: ClusterConfig::default(),
            weights: AggregationWeights::default(),
            donor_metric: DonorMetric::Cosine,
            dataset: DatasetSpec::default(),
            seed: 0,
        }
    }
}

/// Short names accepted by [`ExperimentConfig::set`] besides full dotted paths.
const ALIASES: &[(&str, &str)] = &[
    ("zeta", "filter.zeta"),
    ("iqr_multiplier", "filter.iqr_multiplier"),
    ("top_k", "lca.top_k"),
    ("attack_kind", "attack.kind"),
    ("spread", "dataset.spread"),
    ("min_samples", "cluster.min_samples"),
    ("orientation", "filter.orientation"),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Sets one field from its textual value. `name` is a dotted path such
    /// as `filter.zeta` or one of the short aliases (`zeta`, `top_k`, ...).
    /// The value is parsed according to the field's current type.
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), SimError> {
        let path = ALIASES.iter().find(|(alias, _)| *alias == name).map_or(name, |(_, full)| full);
        let mut tree = serde_json::to_value(&*self).map_err(|e| SimError::Config(e.to_string()))?;
        let mut slot = &mut tree;
        for part in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| SimError::UnknownParameter(name.to_string()))?;
        }
        *slot = parse_like(slot, value)
            .ok_or_else(|| SimError::InvalidValue { name: name.to_string(), value: value.to_string() })?;
        *self = serde_json::from_value(tree)
            .map_err(|e| SimError::InvalidValue { name: name.to_string(), value: format!("{value} ({e})") })?;
        Ok(())
    }

    /// Number of adversarial clients, `floor(mcr * n)`; zero without an attack.
    pub fn n_malicious(&self) -> usize {
        if self.attack.kind == AttackKind::None {
            return 0;
        }
        fedsurrogate_core::data::floor_fraction(self.mcr.clamp(0.0, 1.0), self.n_clients)
    }

    /// Honest-majority warning: set when adversaries make up half or more.
    pub fn honest_majority_warning(&self) -> Option<String> {
        let m = fedsurrogate_core::data::floor_fraction(self.mcr.clamp(0.0, 1.0), self.n_clients);
        (2 * m >= self.n_clients)
            .then(|| format!("{m} of {} clients are malicious; the defense assumes an honest majority", self.n_clients))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.n_clients < 2 {
            return bad(format!("n_clients must be >= 2, got {}", self.n_clients));
        }
        if !(0.0..=1.0).contains(&self.mcr) {
            return bad(format!("mcr {} outside [0, 1]", self.mcr));
        }
        if !(0.0..=1.0).contains(&self.pdr) {
            return bad(format!("pdr {} outside [0, 1]", self.pdr));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.rounds == 0 || self.benign_epochs == 0 || self.malicious_epochs == 0 || self.batch == 0 {
            return bad("rounds, epochs and batch must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive".into());
        }
        match &self.dataset {
            DatasetSpec::Synthetic { classes, side, train_per_class, test_per_class, spread } => {
                if *classes < 2 || *side == 0 || *train_per_class == 0 || *test_per_class == 0 {
                    return bad("synthetic dataset sizes must be positive (>= 2 classes)".into());
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return bad(format!("spread must be >= 0, got {spread}"));
                }
            }
            DatasetSpec::Idx { classes, limit, .. } => {
                if *classes < 2 || *limit == Some(0) {
                    return bad("idx dataset needs >= 2 classes and a positive limit".into());
                }
            }
        }
        if self.attack.fragments == 0 || self.attack.patch_size == 0 {
            return bad("trigger fragments and patch size must be positive".into());
        }
        let layers = self.hidden.len() + 1;
        self.attack_config(self.grid_side(0).max(self.attack.patch_size), 1).validate(layers)?;
        if self.defense == DefenseKind::FedSurrogate {
            let cfg = self.defense_config();
            cfg.validate()?;
            for name in &cfg.filter.rescue_layers {
                let known = (0..layers).any(|k| layer_name(k) == *name);
                if !known {
                    return bad(format!("rescue layer {name} is not a layer of the model"));
                }
            }
        }
        Ok(())
    }

    /// Grid side used to place the trigger; IDX images are taken as square.
    pub fn grid_side(&self, dim: usize) -> usize {
        match &self.dataset {
            DatasetSpec::Synthetic { side, .. } => *side,
            DatasetSpec::Idx { .. } => (dim as f64).sqrt().round() as usize,
        }
    }

    /// Trigger with the effective fragment count for `n_malicious` adversaries.
    pub fn trigger(&self, side: usize, n_malicious: usize) -> TriggerSpec {
        let fragments = self.attack.fragments.min(n_malicious.max(1));
        TriggerSpec::lower_right_square(
            side,
            self.attack.patch_size,
            self.attack.patch_value,
            self.attack.target_label,
            fragments,
        )
    }

    pub fn attack_config(&self, side: usize, n_malicious: usize) -> AttackConfig {
        AttackConfig {
            kind: self.attack.kind,
            trigger: self.trigger(side, n_malicious),
            malicious_epochs: self.malicious_epochs,
            neurotoxin_ratio: self.attack.neurotoxin_ratio,
            csa_lambda: self.attack.csa_lambda,
            cla_top_k: self.attack.cla_top_k,
        }
    }

    pub fn defense_config(&self) -> FedSurrogateConfig {
        FedSurrogateConfig {
            lca: self.lca,
            filter: self.filter.clone(),
            cluster: self.cluster,
            weights: self.weights,
            donor_metric: self.donor_metric,
            variant: self.variant,
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config is always serialisable");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `text` into a JSON value of the same kind as `current`.
fn parse_like(current: &Value, text: &str) -> Option<Value> {
    match current {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => {
            text.parse::<u64>().ok().map(Value::from).or_else(|| text.parse::<f64>().ok().and_then(float_value))
        }
        Value::Number(_) => text.parse::<f64>().ok().and_then(float_value),
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Null => text.parse::<u64>().ok().map(Value::from).or_else(|| Some(Value::String(text.to_string()))),
        Value::Array(items) => {
            let template = items.first().cloned().unwrap_or(Value::from(0u64));
            let inner = text.trim();
            let inner = inner.strip_prefix('[').and_then(|t| t.strip_suffix(']')).unwrap_or(inner);
            inner
                .split(',')
                .map(|t| parse_like(&template, t.trim().trim_matches('"')))
                .collect::<Option<Vec<_>>>()
                .map(Value::Array)
        }
        Value::Object(_) => None,
    }
}

fn float_value(v: f64) -> Option<Value> {
    serde_json::Number::from_f64(v).map(Value::Number)
}
