//! Malicious client behaviours.
//!
//! All attacks train on a locally poisoned copy of the client's data. They
//! differ in which trigger the data carries (full patch or one fragment) and
//! in what happens to the update during or after training:
//!
//! * `Cba`: plain training on the poisoned data, more epochs than benign clients.
//! * `Dba`: as `Cba`, but each adversary stamps only its own fragment.
//! * `Neurotoxin`: the accumulated update is projected after every step onto
//!   the coordinates the previous global update barely moved.
//! * `Csa`: a benign reference update is trained first; the backdoor update
//!   is then pulled towards it layer by layer with a cosine penalty.
//! * `Cla`: the `k` backdoored layers most similar to the reference are kept,
//!   all other layers are taken from the benign reference.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{poison_partition, Sample, TriggerSpec};
use crate::error::AttackError;
use crate::model::{Mlp, TrainConfig, TrainingHook};
use crate::params::{cosine_similarity, dot, l2_norm, ParameterVector, EPS_ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AttackKind {
    None,
    Cba,
    Dba,
    Neurotoxin,
    Csa,
    Cla,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Cba => "cba",
            AttackKind::Dba => "dba",
            AttackKind::Neurotoxin => "neurotoxin",
            AttackKind::Csa => "csa",
            AttackKind::Cla => "cla",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "none" => AttackKind::None,
            "cba" => AttackKind::Cba,
            "dba" => AttackKind::Dba,
            "neurotoxin" => AttackKind::Neurotoxin,
            "csa" => AttackKind::Csa,
            "cla" => AttackKind::Cla,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub trigger: TriggerSpec,
    pub malicious_epochs: usize,
    /// Fraction of coordinates Neurotoxin may write to.
    pub neurotoxin_ratio: f64,
    pub csa_lambda: f64,
    pub cla_top_k: usize,
}

impl AttackConfig {
    pub fn validate(&self, layer_count: usize) -> Result<(), AttackError> {
        if self.malicious_epochs == 0 {
            return Err(AttackError::InvalidConfig("malicious epochs must be positive".into()));
        }
        if !(self.neurotoxin_ratio > 0.0 && self.neurotoxin_ratio < 1.0) {
            return Err(AttackError::InvalidConfig(format!(
                "neurotoxin ratio {} outside (0, 1)",
                self.neurotoxin_ratio
            )));
        }
        if !(self.csa_lambda >= 0.0 && self.csa_lambda.is_finite()) {
            return Err(AttackError::InvalidConfig("csa lambda must be >= 0".into()));
        }
        if self.cla_top_k > layer_count {
            return Err(AttackError::TooManyLayers { k: self.cla_top_k, layers: layer_count });
        }
        Ok(())
    }

    /// Fragment an adversary stamps: its index modulo the fragment count for
    /// distributed attacks, the full trigger otherwise.
    pub fn fragment_for(&self, adversary_index: usize) -> Option<usize> {
        match self.kind {
            AttackKind::Dba => Some(adversary_index % self.trigger.fragments),
            _ => None,
        }
    }
}

/// Poisons a malicious client's clean data for the configured attack.
pub fn prepare_local_data(
    clean: &[Sample],
    attack: &AttackConfig,
    pdr: f64,
    adversary_index: usize,
    seed: u64,
) -> Result<Vec<Sample>, AttackError> {
    Ok(poison_partition(clean, pdr, &attack.trigger, attack.fragment_for(adversary_index), seed)?)
}

/// Centralised backdoor: ordinary training on the poisoned mix.
pub fn cba_train(
    model: &Mlp,
    mixed: &[Sample],
    global: &ParameterVector,
    cfg: &TrainConfig,
) -> Result<ParameterVector, AttackError> {
    Ok(model.local_train(global, mixed, cfg, None)?)
}

/// Distributed backdoor: poisons `clean` with this adversary's fragment, then trains.
#[allow(clippy::too_many_arguments)]
pub fn dba_train(
    model: &Mlp,
    clean: &[Sample],
    global: &ParameterVector,
    cfg: &TrainConfig,
    trigger: &TriggerSpec,
    pdr: f64,
    adversary_index: usize,
    poison_seed: u64,
) -> Result<ParameterVector, AttackError> {
    let fragment = adversary_index % trigger.fragments;
    let mixed = poison_partition(clean, pdr, trigger, Some(fragment), poison_seed)?;
    cba_train(model, &mixed, global, cfg)
}

/// True on the `floor(ratio * P)` coordinates with the smallest reference
/// magnitude (ties: lower index). Without a reference every coordinate is allowed.
pub fn neurotoxin_mask(reference: Option<&[f64]>, ratio: f64, len: usize) -> Vec<bool> {
    let Some(reference) = reference else {
        return vec![true; len];
    };
    let keep = crate::data::floor_fraction(ratio.clamp(0.0, 1.0), reference.len());
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.sort_by(|&a, &b| reference[a].abs().total_cmp(&reference[b].abs()).then(a.cmp(&b)));
    let mut mask = vec![false; reference.len()];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    mask
}

/// Zeroes `delta` outside the mask.
pub fn project_onto_mask(delta: &[f64], mask: &[bool]) -> Vec<f64> {
    delta.iter().zip(mask).map(|(&d, &m)| if m { d } else { 0.0 }).collect()
}

struct MaskProjection<'a> {
    global: &'a [f64],
    mask: &'a [bool],
}

impl TrainingHook for MaskProjection<'_> {
    fn project(&self, params: &mut [f64]) {
        for ((p, &g), &m) in params.iter_mut().zip(self.global).zip(self.mask) {
            if !m {
                *p = g;
            }
        }
    }
}

/// Poisoned training whose accumulated update is kept on `mask` after every step.
pub fn neurotoxin_train(
    model: &Mlp,
    mixed: &[Sample],
    global: &ParameterVector,
    cfg: &TrainConfig,
    mask: &[bool],
) -> Result<ParameterVector, AttackError> {
    if mask.len() != global.len() {
        return Err(AttackError::InvalidConfig(format!(
            "mask has {} entries for {} parameters",
            mask.len(),
            global.len()
        )));
    }
    let hook = MaskProjection { global: global.values(), mask };
    Ok(model.local_train(global, mixed, cfg, Some(&hook))?)
}

/// `lambda * sum_layers (1 - cos(params - global, reference_delta))` and its gradient.
pub struct CosineDisguise<'a> {
    global: &'a [f64],
    reference_delta: &'a [f64],
    layers: Vec<(usize, usize)>,
    lambda: f64,
}

impl<'a> CosineDisguise<'a> {
    pub fn new(global: &'a ParameterVector, reference_delta: &'a ParameterVector, lambda: f64) -> Self {
        let layers = global.schema().layers().iter().map(|l| (l.offset, l.len)).collect();
        Self { global: global.values(), reference_delta: reference_delta.values(), layers, lambda }
    }

    /// Penalty value at `params`; zero-norm layers contribute 1.
    pub fn loss(&self, params: &[f64]) -> f64 {
        let mut total = 0.0;
        for &(off, len) in &self.layers {
            let delta: Vec<f64> = (off..off + len).map(|i| params[i] - self.global[i]).collect();
            let r = &self.reference_delta[off..off + len];
            total += 1.0 - cosine_similarity(&delta, r).unwrap_or(0.0);
        }
        self.lambda * total
    }
}

impl TrainingHook for CosineDisguise<'_> {
    fn add_gradient(&self, params: &[f64], grad: &mut [f64]) {
        if self.lambda == 0.0 {
            return;
        }
        for &(off, len) in &self.layers {
            let x: Vec<f64> = (off..off + len).map(|i| params[i] - self.global[i]).collect();
            let r = &self.reference_delta[off..off + len];
            let (nx, nr) = (l2_norm(&x), l2_norm(r));
            if nx < EPS_ZERO || nr < EPS_ZERO {
                continue;
            }
            let xr = dot(&x, r);
            let inv = 1.0 / (nx * nr);
            let proj = xr / (nx * nx * nx * nr);
            for k in 0..len {
                grad[off + k] -= self.lambda * (r[k] * inv - x[k] * proj);
            }
        }
    }
}

/// Reference (benign) and disguised backdoored models produced by a
/// cosine-similarity attack.
#[derive(Debug, Clone, PartialEq)]
pub struct DisguisedModels {
    pub reference: ParameterVector,
    pub backdoored: ParameterVector,
}

/// Trains a benign reference on `clean`, then a backdoor on `mixed` with the
/// layer-wise cosine penalty towards the reference update.
pub fn csa_train(
    model: &Mlp,
    clean: &[Sample],
    mixed: &[Sample],
    global: &ParameterVector,
    reference_cfg: &TrainConfig,
    backdoor_cfg: &TrainConfig,
    lambda: f64,
) -> Result<DisguisedModels, AttackError> {
    let reference = model.local_train(global, clean, reference_cfg, None)?;
    let reference_delta = reference.sub(global)?;
    let hook = CosineDisguise::new(global, &reference_delta, lambda);
    let backdoored = model.local_train(global, mixed, backdoor_cfg, Some(&hook))?;
    Ok(DisguisedModels { reference, backdoored })
}

/// Per-layer cosine between the backdoored and benign updates, schema order.
pub fn layer_cosines(
    benign: &ParameterVector,
    backdoored: &ParameterVector,
    global: &ParameterVector,
) -> Result<Vec<f64>, AttackError> {
    let db = benign.sub(global)?;
    let dm = backdoored.sub(global)?;
    Ok(global
        .schema()
        .layers()
        .iter()
        .map(|l| {
            let a = &dm.values()[l.offset..l.offset + l.len];
            let b = &db.values()[l.offset..l.offset + l.len];
            cosine_similarity(a, b).unwrap_or(0.0)
        })
        .collect())
}

/// Keeps the backdoored parameters on the `k` layers whose update is most
/// similar to the benign one (ties: schema order) and benign parameters elsewhere.
pub fn cla_compose(
    benign: &ParameterVector,
    backdoored: &ParameterVector,
    global: &ParameterVector,
    k: usize,
) -> Result<ParameterVector, AttackError> {
    let layers = global.schema().layers();
    if k > layers.len() {
        return Err(AttackError::TooManyLayers { k, layers: layers.len() });
    }
    let cos = layer_cosines(benign, backdoored, global)?;
    let mut ranked: Vec<usize> = (0..layers.len()).collect();
    ranked.sort_by(|&a, &b| cos[b].total_cmp(&cos[a]).then(a.cmp(&b)));
    let mut out = benign.clone();
    for &i in &ranked[..k] {
        let l = &layers[i];
        out.values_mut()[l.offset..l.offset + l.len].copy_from_slice(&backdoored.values()[l.offset..l.offset + l.len]);
    }
    Ok(out)
}
