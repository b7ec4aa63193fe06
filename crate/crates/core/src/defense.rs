//! The FedSurrogate aggregation pipeline and the FedAvg control.
//!
//! One round runs three stages over the submitted client models:
//!
//! 1. **Layer criticality and coarse clustering.** Layers are ranked by the
//!    mean pairwise cosine distance of client updates; the top layers form
//!    the critical set `L*`. Updates restricted to `L*` are clustered with
//!    HDBSCAN and the majority cluster becomes the coarse trusted set.
//! 2. **Bidirectional alignment filter.** Each client's mid-deep weights are
//!    scored against the population's weighted mean update. Scores are kept
//!    as a running mean of per-round anomaly values (high = suspicious).
//!    Trusted clients above the IQR fence are demoted; suspects at or below an
//!    adaptive cutoff are rescued.
//! 3. **Surrogate replacement.** Each confirmed-malicious model has its
//!    critical layers swapped for those of the nearest trusted donor, and
//!    participates in aggregation with a reduced weight.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::clustering::{
    hdbscan_with, largest_cluster, HdbscanParams, DEFAULT_MIN_SAMPLES, DEFAULT_ROOT_PERSISTENCE_RATIO,
};
use crate::error::DefenseError;
use crate::params::{
    cosine_distance, cosine_similarity, euclidean_distance, pairwise_distance_matrix, DistanceMatrix, ParameterVector,
};
use crate::stats::{median, quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LcaMode {
    TopK,
    MadThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LcaConfig {
    pub top_k: usize,
    /// MAD multiplier, only used in [`LcaMode::MadThreshold`].
    pub sigma: f64,
    pub mode: LcaMode,
}

impl Default for LcaConfig {
    fn default() -> Self {
        Self { top_k: 5, sigma: 1.0, mode: LcaMode::TopK }
    }
}

/// How a round's min-max scaled alignment scores enter the score memory.
///
/// The memory is always read the same way: high values are demoted, low
/// values rescued. The orientation decides which end of the alignment
/// scale counts as "high".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScoreOrientation {
    /// Store `1 - minmax(s)`: the least aligned client scores 1.
    Misalignment,
    /// Store `minmax(s)` unchanged: the most aligned client scores 1.
    Alignment,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FilterConfig {
    pub zeta: f64,
    pub iqr_multiplier: f64,
    /// Fixed mid-deep layers used for alignment scoring.
    pub rescue_layers: Vec<String>,
    pub orientation: ScoreOrientation,
}

impl FilterConfig {
    pub fn new(rescue_layers: Vec<String>) -> Self {
        Self { zeta: 0.4, iqr_multiplier: 1.5, rescue_layers, orientation: ScoreOrientation::Alignment }
    }
}

impl Default for FilterConfig {
    /// Scores on the last two layers of a three-layer model.
    fn default() -> Self {
        Self::new(vec![crate::model::layer_name(1), crate::model::layer_name(2)])
    }
}

/// HDBSCAN knobs for the coarse clustering step. The minimum cluster size is
/// always the strict majority `floor(N/2) + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ClusterConfig {
    pub min_samples: usize,
    pub root_persistence_ratio: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { min_samples: DEFAULT_MIN_SAMPLES, root_persistence_ratio: DEFAULT_ROOT_PERSISTENCE_RATIO }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AggregationWeights {
    pub trusted: f64,
    pub rescued: f64,
    pub surrogate: f64,
}

impl Default for AggregationWeights {
    fn default() -> Self {
        Self { trusted: 1.0, rescued: 0.7, surrogate: 0.3 }
    }
}

impl AggregationWeights {
    pub fn validate(&self) -> Result<(), DefenseError> {
        if self.surrogate > 0.0 && self.surrogate <= self.rescued && self.rescued <= self.trusted {
            Ok(())
        } else {
            Err(DefenseError::InvalidConfig(format!(
                "weights must satisfy 0 < surrogate <= rescued <= trusted, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DonorMetric {
    Cosine,
    Euclidean,
}

/// Which stages run. `Full` is the defense proper; the others exist for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PipelineVariant {
    /// Clustering only; every suspect is excluded.
    Stage1Only,
    /// Clustering plus IQR demotion; suspects are excluded, none rescued.
    NoRescue,
    /// Full filtering, but confirmed-malicious clients are excluded.
    RescueExclude,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FedSurrogateConfig {
    pub lca: LcaConfig,
    pub filter: FilterConfig,
    pub cluster: ClusterConfig,
    pub weights: AggregationWeights,
    pub donor_metric: DonorMetric,
    pub variant: PipelineVariant,
}

impl FedSurrogateConfig {
    pub fn new(rescue_layers: Vec<String>) -> Self {
        Self {
            lca: LcaConfig::default(),
            filter: FilterConfig::new(rescue_layers),
            cluster: ClusterConfig::default(),
            weights: AggregationWeights::default(),
            donor_metric: DonorMetric::Cosine,
            variant: PipelineVariant::Full,
        }
    }

    pub fn validate(&self) -> Result<(), DefenseError> {
        if self.lca.top_k == 0 {
            return Err(DefenseError::InvalidConfig("top_k must be >= 1".into()));
        }
        if self.lca.mode == LcaMode::MadThreshold && (self.lca.sigma.is_nan() || self.lca.sigma <= 0.0) {
            return Err(DefenseError::InvalidConfig("sigma must be > 0".into()));
        }
        if !(self.filter.zeta > 0.0 && self.filter.zeta <= 1.0) {
            return Err(DefenseError::InvalidConfig(format!("zeta {} outside (0, 1]", self.filter.zeta)));
        }
        if self.filter.iqr_multiplier.is_nan() || self.filter.iqr_multiplier < 0.0 {
            return Err(DefenseError::InvalidConfig("iqr multiplier must be >= 0".into()));
        }
        if self.filter.rescue_layers.is_empty() {
            return Err(DefenseError::InvalidConfig("rescue layer set is empty".into()));
        }
        if self.cluster.root_persistence_ratio.is_nan() || self.cluster.root_persistence_ratio < 1.0 {
            return Err(DefenseError::InvalidConfig("root persistence ratio must be >= 1".into()));
        }
        self.weights.validate()
    }
}

/// A client model as the server sees it. No ground truth here.
#[derive(Debug, Clone, Copy)]
pub struct Submission<'a> {
    pub client_id: usize,
    pub model: &'a ParameterVector,
    pub sample_count: usize,
}

/// Per-client running anomaly scores.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreMemory {
    entries: BTreeMap<usize, (f64, u64)>,
}

impl ScoreMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn score(&self, client: usize) -> Option<f64> {
        self.entries.get(&client).map(|e| e.0)
    }

    pub fn count(&self, client: usize) -> u64 {
        self.entries.get(&client).map_or(0, |e| e.1)
    }

    /// Folds one observation into the client's running mean.
    pub fn observe(&mut self, client: usize, anomaly: f64) {
        let entry = self.entries.entry(client).or_insert((0.0, 0));
        entry.1 += 1;
        let m = entry.1 as f64;
        entry.0 = ((m - 1.0) / m) * entry.0 + (1.0 / m) * anomaly;
    }

    fn score_or_neutral(&self, client: usize) -> f64 {
        self.score(client).unwrap_or(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AggregationRole {
    Trusted,
    Rescued,
    Surrogate,
}

/// Everything one round of the pipeline decided. Sets hold client ids, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub critical_layers: Vec<String>,
    pub layer_divergence: Vec<(String, f64)>,
    pub distance_matrix: DistanceMatrix,
    /// Majority cluster from stage 1, before demotion.
    pub stage1_trusted: Vec<usize>,
    /// Coarse trusted set after demotion.
    pub coarse_trusted: Vec<usize>,
    /// Suspect set entering the rescue step (stage-1 suspects plus demoted).
    pub suspects: Vec<usize>,
    pub demoted: Vec<usize>,
    pub rescued: Vec<usize>,
    pub confirmed_malicious: Vec<usize>,
    pub trusted: Vec<usize>,
    pub donors: BTreeMap<usize, usize>,
    /// Flagged clients dropped from aggregation instead of replaced.
    pub excluded: Vec<usize>,
    pub raw_alignment: BTreeMap<usize, f64>,
    pub anomaly: BTreeMap<usize, f64>,
    pub degenerate_lca: bool,
    pub cluster_fallback: bool,
    pub global_after: ParameterVector,
}

impl RoundOutcome {
    pub fn degenerate(&self) -> bool {
        self.degenerate_lca || self.cluster_fallback
    }
}

/// Mean pairwise cosine distance of client updates, per layer, in schema order.
pub fn layer_divergence(deltas: &[ParameterVector]) -> Result<Vec<(String, f64)>, DefenseError> {
    let n = deltas.len();
    if n < 2 {
        return Err(DefenseError::TooFewClients { needed: 2, got: n });
    }
    let schema = deltas[0].schema().clone();
    for d in &deltas[1..] {
        d.check_schema(&deltas[0])?;
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut out = Vec::with_capacity(schema.len());
    for layer in schema.layers() {
        let slices: Vec<&[f64]> = deltas.iter().map(|d| &d.values()[layer.offset..layer.offset + layer.len]).collect();
        let mut sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += cosine_distance(slices[i], slices[j]);
            }
        }
        out.push((layer.name.clone(), sum / pairs));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSelection {
    pub layers: Vec<String>,
    /// Set when every divergence is zero and the selection fell back to schema order.
    pub degenerate: bool,
}

/// Critical layer set from per-layer divergences (schema order), normalised by their median.
pub fn select_critical_layers(divergences: &[(String, f64)], cfg: &LcaConfig) -> Result<LayerSelection, DefenseError> {
    if divergences.is_empty() {
        return Err(DefenseError::InvalidConfig("no layers to rank".into()));
    }
    let k = cfg.top_k.max(1).min(divergences.len());
    let values: Vec<f64> = divergences.iter().map(|d| d.1).collect();
    let med = median(&values);
    if med.is_nan() || med <= 0.0 {
        return Ok(LayerSelection { layers: divergences[..k].iter().map(|d| d.0.clone()).collect(), degenerate: true });
    }
    let normalised: Vec<f64> = values.iter().map(|v| v / med).collect();
    let mut ranked: Vec<usize> = (0..divergences.len()).collect();
    ranked.sort_by(|&a, &b| normalised[b].total_cmp(&normalised[a]).then(a.cmp(&b)));
    let chosen: Vec<usize> = match cfg.mode {
        LcaMode::TopK => ranked[..k].to_vec(),
        LcaMode::MadThreshold => {
            let deviations: Vec<f64> = normalised.iter().map(|v| (v - 1.0).abs()).collect();
            let mad = median(&deviations);
            let cut = 1.0 + cfg.sigma * mad;
            let picked: Vec<usize> = ranked.iter().copied().filter(|&i| normalised[i] > cut).collect();
            if picked.is_empty() {
                ranked[..1].to_vec()
            } else {
                picked
            }
        }
    };
    Ok(LayerSelection { layers: chosen.into_iter().map(|i| divergences[i].0.clone()).collect(), degenerate: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseClusters {
    /// Positions (not client ids) of the coarse trusted set.
    pub trusted: Vec<usize>,
    pub suspects: Vec<usize>,
    pub distance_matrix: DistanceMatrix,
    pub fallback: bool,
}

/// Stage-1 clustering on updates restricted to `critical`.
pub fn coarse_cluster(
    deltas: &[ParameterVector],
    critical: &[String],
    cfg: &ClusterConfig,
) -> Result<CoarseClusters, DefenseError> {
    if critical.is_empty() {
        return Err(DefenseError::InvalidConfig("critical layer set is empty".into()));
    }
    let features = deltas.iter().map(|d| d.restrict(critical)).collect::<Result<Vec<_>, _>>()?;
    let distance_matrix = pairwise_distance_matrix(&features)?;
    let (trusted, fallback) = majority_cluster(&distance_matrix, cfg);
    let suspects = (0..deltas.len()).filter(|i| !trusted.contains(i)).collect();
    Ok(CoarseClusters { trusted, suspects, distance_matrix, fallback })
}

/// Largest HDBSCAN cluster if it holds a strict majority; otherwise everyone, flagged.
pub fn majority_cluster(d: &DistanceMatrix, cfg: &ClusterConfig) -> (Vec<usize>, bool) {
    let n = d.n();
    let majority = n / 2 + 1;
    let params = HdbscanParams {
        min_cluster_size: majority,
        min_samples: cfg.min_samples.min(n),
        root_persistence_ratio: cfg.root_persistence_ratio,
    };
    let largest = largest_cluster(&hdbscan_with(d, &params));
    if largest.len() >= majority {
        (largest, false)
    } else {
        ((0..n).collect(), true)
    }
}

/// Raw alignment of each client's mid-deep weights with the population's
/// weighted mean update, in `[-1, 1]`; zero when either side vanishes.
pub fn alignment_scores(
    models: &[&ParameterVector],
    global: &ParameterVector,
    sample_counts: &[usize],
    rescue_layers: &[String],
) -> Result<Vec<f64>, DefenseError> {
    if models.len() != sample_counts.len() {
        return Err(DefenseError::InvalidConfig("one sample count per model required".into()));
    }
    let total: usize = sample_counts.iter().sum();
    if total == 0 {
        return Err(DefenseError::ZeroSamples);
    }
    let base = global.restrict(rescue_layers)?;
    let weights: Vec<Vec<f64>> = models
        .iter()
        .map(|m| {
            m.check_schema(global)?;
            m.restrict(rescue_layers)
        })
        .collect::<Result<_, _>>()?;
    let dim = base.len();
    let mut w_star = vec![0.0; dim];
    let mut g_star = vec![0.0; dim];
    for (w, &n) in weights.iter().zip(sample_counts) {
        let omega = n as f64 / total as f64;
        for k in 0..dim {
            w_star[k] += omega * w[k];
            g_star[k] += omega * (w[k] - base[k]);
        }
    }
    Ok(weights
        .iter()
        .map(|w| {
            let centred: Vec<f64> = w.iter().zip(&w_star).map(|(a, b)| a - b).collect();
            cosine_similarity(&centred, &g_star).unwrap_or(0.0)
        })
        .collect())
}

/// Min-max scales this round's raw scores, orients them and folds them
/// into the running means. Returns the per-round values that were folded in.
pub fn update_memory(
    mut memory: ScoreMemory,
    raw: &[(usize, f64)],
    orientation: ScoreOrientation,
) -> (ScoreMemory, BTreeMap<usize, f64>) {
    let values = scaled_scores(raw, orientation);
    for (&client, &a) in &values {
        memory.observe(client, a);
    }
    (memory, values)
}

/// Per-round min-max scaling in the given orientation; 0.5 for everyone
/// when all raw scores are equal.
pub fn scaled_scores(raw: &[(usize, f64)], orientation: ScoreOrientation) -> BTreeMap<usize, f64> {
    let lo = raw.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|&(client, s)| {
            let a = if hi > lo {
                let m = (s - lo) / (hi - lo);
                match orientation {
                    ScoreOrientation::Misalignment => 1.0 - m,
                    ScoreOrientation::Alignment => m,
                }
            } else {
                0.5
            };
            (client, a)
        })
        .collect()
}

/// [`scaled_scores`] in misalignment orientation.
pub fn anomaly_values(raw: &[(usize, f64)]) -> BTreeMap<usize, f64> {
    scaled_scores(raw, ScoreOrientation::Misalignment)
}

/// Minimum coarse trusted set size for quartiles to be meaningful.
pub const MIN_SCREEN_SIZE: usize = 4;

/// Trusted clients whose memory score exceeds `q3 + multiplier * (q3 - q1)`.
pub fn screen_trusted(memory: &ScoreMemory, trusted: &[usize], iqr_multiplier: f64) -> Vec<usize> {
    if trusted.len() < MIN_SCREEN_SIZE {
        return Vec::new();
    }
    let scores: Vec<f64> = trusted.iter().map(|&c| memory.score_or_neutral(c)).collect();
    let q1 = quantile(&scores, 0.25);
    let q3 = quantile(&scores, 0.75);
    let fence = q3 + iqr_multiplier * (q3 - q1);
    trusted.iter().zip(&scores).filter(|(_, &s)| s > fence).map(|(&c, _)| c).collect()
}

/// `eps = min(zeta, median(suspect scores))`.
pub fn rescue_cutoff(memory: &ScoreMemory, suspects: &[usize], zeta: f64) -> Option<f64> {
    if suspects.is_empty() {
        return None;
    }
    let scores: Vec<f64> = suspects.iter().map(|&c| memory.score_or_neutral(c)).collect();
    Some(zeta.min(median(&scores)))
}

/// Splits suspects into rescued (score at or below the cutoff) and confirmed malicious.
pub fn rescue_suspects(memory: &ScoreMemory, suspects: &[usize], zeta: f64) -> (Vec<usize>, Vec<usize>) {
    let Some(eps) = rescue_cutoff(memory, suspects, zeta) else {
        return (Vec::new(), Vec::new());
    };
    suspects.iter().copied().partition(|&c| memory.score_or_neutral(c) <= eps)
}

/// Nearest trusted position to `flagged` by `distance`; ties go to the lower position.
pub fn select_donor(
    flagged: usize,
    trusted: &[usize],
    distance: impl Fn(usize, usize) -> f64,
) -> Result<usize, DefenseError> {
    let mut best: Option<(usize, f64)> = None;
    let mut candidates = trusted.to_vec();
    candidates.sort_unstable();
    for t in candidates {
        let d = distance(flagged, t);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((t, d));
        }
    }
    best.map(|b| b.0).ok_or(DefenseError::NoDonor)
}

/// Flagged model with every layer in `critical` copied from the donor.
pub fn build_surrogate(
    flagged: &ParameterVector,
    donor: &ParameterVector,
    critical: &[String],
) -> Result<ParameterVector, DefenseError> {
    flagged.check_schema(donor)?;
    let mut out = flagged.clone();
    for name in critical {
        let src = donor.layer(name)?;
        out.layer_mut(name)?.copy_from_slice(src);
    }
    Ok(out)
}

/// Role-weighted mean of the participating models.
pub fn aggregate(
    models: &[(&ParameterVector, AggregationRole)],
    weights: &AggregationWeights,
) -> Result<ParameterVector, DefenseError> {
    let Some(first) = models.first() else {
        return Err(DefenseError::TooFewClients { needed: 1, got: 0 });
    };
    let mut acc = vec![0.0; first.0.len()];
    let mut total = 0.0;
    for (m, role) in models {
        m.check_schema(first.0)?;
        let lambda = match role {
            AggregationRole::Trusted => weights.trusted,
            AggregationRole::Rescued => weights.rescued,
            AggregationRole::Surrogate => weights.surrogate,
        };
        total += lambda;
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += lambda * v;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(ParameterVector::new(acc, first.0.schema().clone())?)
}

/// Sample-count weighted mean.
pub fn fedavg_aggregate(models: &[&ParameterVector], sample_counts: &[usize]) -> Result<ParameterVector, DefenseError> {
    let Some(first) = models.first() else {
        return Err(DefenseError::TooFewClients { needed: 1, got: 0 });
    };
    if models.len() != sample_counts.len() {
        return Err(DefenseError::InvalidConfig("one sample count per model required".into()));
    }
    let total: usize = sample_counts.iter().sum();
    if total == 0 {
        return Err(DefenseError::ZeroSamples);
    }
    let mut acc = vec![0.0; first.len()];
    for (m, &n) in models.iter().zip(sample_counts) {
        m.check_schema(first)?;
        let omega = n as f64 / total as f64;
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += omega * v;
        }
    }
    Ok(ParameterVector::new(acc, first.schema().clone())?)
}

/// Runs one full round of the pipeline. Returns the new global model, the
/// round's decisions and the updated score memory.
pub fn fedsurrogate_round(
    submissions: &[Submission<'_>],
    global: &ParameterVector,
    memory: ScoreMemory,
    cfg: &FedSurrogateConfig,
) -> Result<(ParameterVector, RoundOutcome, ScoreMemory), DefenseError> {
    let n = submissions.len();
    if n < 2 {
        return Err(DefenseError::TooFewClients { needed: 2, got: n });
    }
    cfg.validate()?;
    for name in &cfg.filter.rescue_layers {
        global.schema().find(name)?;
    }
    let ids: Vec<usize> = submissions.iter().map(|s| s.client_id).collect();
    let models: Vec<&ParameterVector> = submissions.iter().map(|s| s.model).collect();
    let counts: Vec<usize> = submissions.iter().map(|s| s.sample_count).collect();
    let deltas = models.iter().map(|m| m.sub(global)).collect::<Result<Vec<_>, _>>()?;

    // Stage 1
    let divergence = layer_divergence(&deltas)?;
    let selection = select_critical_layers(&divergence, &cfg.lca)?;
    let coarse = coarse_cluster(&deltas, &selection.layers, &cfg.cluster)?;
    let stage1_trusted: Vec<usize> = coarse.trusted.iter().map(|&p| ids[p]).collect();
    let mut coarse_trusted = stage1_trusted.clone();
    let mut suspects: Vec<usize> = coarse.suspects.iter().map(|&p| ids[p]).collect();

    // Stage 2
    let mut memory = memory;
    let mut raw_alignment = BTreeMap::new();
    let mut anomaly = BTreeMap::new();
    let mut demoted = Vec::new();
    let (rescued, confirmed) = if cfg.variant == PipelineVariant::Stage1Only {
        (Vec::new(), suspects.clone())
    } else {
        let raw = alignment_scores(&models, global, &counts, &cfg.filter.rescue_layers)?;
        let tagged: Vec<(usize, f64)> = ids.iter().copied().zip(raw).collect();
        raw_alignment = tagged.iter().copied().collect();
        let (updated, a) = update_memory(memory, &tagged, cfg.filter.orientation);
        memory = updated;
        anomaly = a;
        demoted = screen_trusted(&memory, &coarse_trusted, cfg.filter.iqr_multiplier);
        coarse_trusted.retain(|c| !demoted.contains(c));
        suspects.extend(demoted.iter().copied());
        suspects.sort_unstable();
        if cfg.variant == PipelineVariant::NoRescue {
            (Vec::new(), suspects.clone())
        } else {
            rescue_suspects(&memory, &suspects, cfg.filter.zeta)
        }
    };
    let mut trusted: Vec<usize> = coarse_trusted.iter().chain(&rescued).copied().collect();
    trusted.sort_unstable();

    // Stage 3
    let position: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(p, &c)| (c, p)).collect();
    let trusted_pos: Vec<usize> = trusted.iter().map(|c| position[c]).collect();
    let surrogate_stage = matches!(cfg.variant, PipelineVariant::Full) && !trusted_pos.is_empty();
    let mut donors = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut surrogates: Vec<(usize, ParameterVector)> = Vec::new();
    let euclid_features: Option<Vec<Vec<f64>>> =
        if surrogate_stage && cfg.donor_metric == DonorMetric::Euclidean && !confirmed.is_empty() {
            Some(deltas.iter().map(|d| d.restrict(&selection.layers)).collect::<Result<_, _>>()?)
        } else {
            None
        };
    for &f in &confirmed {
        if !surrogate_stage {
            excluded.push(f);
            continue;
        }
        let fp = position[&f];
        let donor_pos = match &euclid_features {
            Some(features) => select_donor(fp, &trusted_pos, |a, b| euclidean_distance(&features[a], &features[b]))?,
            None => select_donor(fp, &trusted_pos, |a, b| coarse.distance_matrix.get(a, b))?,
        };
        donors.insert(f, ids[donor_pos]);
        surrogates.push((f, build_surrogate(models[fp], models[donor_pos], &selection.layers)?));
    }

    let mut participants: Vec<(&ParameterVector, AggregationRole)> = Vec::with_capacity(n);
    for (p, &c) in ids.iter().enumerate() {
        if coarse_trusted.contains(&c) {
            participants.push((models[p], AggregationRole::Trusted));
        } else if rescued.contains(&c) {
            participants.push((models[p], AggregationRole::Rescued));
        }
    }
    for (_, s) in &surrogates {
        participants.push((s, AggregationRole::Surrogate));
    }
    let global_after = if participants.is_empty() { global.clone() } else { aggregate(&participants, &cfg.weights)? };

    let outcome = RoundOutcome {
        critical_layers: selection.layers,
        layer_divergence: divergence,
        distance_matrix: coarse.distance_matrix,
        stage1_trusted,
        coarse_trusted,
        suspects,
        demoted,
        rescued,
        confirmed_malicious: confirmed,
        trusted,
        donors,
        excluded,
        raw_alignment,
        anomaly,
        degenerate_lca: selection.degenerate,
        cluster_fallback: coarse.fallback,
        global_after: global_after.clone(),
    };
    Ok((global_after, outcome, memory))
}
