//! The federated training loop, sweeps and ablations.

use std::time::Instant;

use fedsurrogate_core::attacks::{
    cla_compose, csa_train, neurotoxin_mask, neurotoxin_train, prepare_local_data, AttackConfig, AttackKind,
};
use fedsurrogate_core::data::{dirichlet_partition, generate_synthetic, triggered_test_set, Dataset, Sample};
use fedsurrogate_core::defense::{
    fedavg_aggregate, fedsurrogate_round, PipelineVariant, RoundOutcome, ScoreMemory, Submission,
};
use fedsurrogate_core::metrics::{asr_on_triggered, mcc, rates, roles_prefix, tally_round, DetectionTally};
use fedsurrogate_core::model::{Mlp, TrainConfig};
use fedsurrogate_core::params::{ParameterVector, Role};
use fedsurrogate_core::seed::{derive_seed, stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, DefenseKind, ExperimentConfig};
use crate::error::SimError;
use crate::idx::load_idx;

/// One communication round as recorded in the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub mta: f64,
    pub asr: f64,
    pub n_flagged: usize,
    pub n_rescued: usize,
    pub degenerate: bool,
    pub critical_layers: Vec<String>,
    /// Clients rejected this round (replaced or excluded).
    pub flagged: Vec<usize>,
    pub rescued: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Free-form tag set by sweeps and ablations, e.g. `zeta=0.3`.
    pub label: Option<String>,
    /// The fully resolved configuration the run used.
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub malicious_clients: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    /// Pooled over all rounds; only for the FedSurrogate defense.
    pub detection: Option<DetectionTally>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub mcc: Option<f64>,
    pub warnings: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn final_mta(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.mta)
    }

    pub fn final_asr(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.asr)
    }
}

/// Everything fixed before the first round.
struct Setup {
    model: Mlp,
    test: Vec<Sample>,
    triggered: Vec<Sample>,
    target: usize,
    /// Clean local data per client.
    clean: Vec<Vec<Sample>>,
    /// What each client actually trains on (poisoned for adversaries).
    local: Vec<Vec<Sample>>,
    roles: Vec<(usize, Role)>,
    attack: AttackConfig,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), SimError> {
    match &cfg.dataset {
        DatasetSpec::Synthetic { classes, side, train_per_class, test_per_class, spread } => {
            let all = generate_synthetic(
                *classes,
                side * side,
                train_per_class + test_per_class,
                *spread,
                derive_seed(cfg.seed, &[stream::DATASET]),
            )?;
            Ok(all.split_per_class(*train_per_class))
        }
        DatasetSpec::Idx { train_images, train_labels, test_images, test_labels, classes, limit } => {
            let cut = |ds: Dataset| -> Result<Dataset, SimError> {
                match limit {
                    Some(l) if *l < ds.len() => {
                        let mut s = ds.into_samples();
                        s.truncate(*l);
                        Ok(Dataset::new(s, *classes)?)
                    }
                    _ => Ok(ds),
                }
            };
            let train = cut(load_idx(train_images, train_labels, *classes)?)?;
            let test = cut(load_idx(test_images, test_labels, *classes)?)?;
            Ok((train, test))
        }
    }
}

fn prepare(cfg: &ExperimentConfig) -> Result<Setup, SimError> {
    let (train, test) = load_dataset(cfg)?;
    if train.dim() != test.dim() {
        return Err(SimError::Config("train and test dimensions differ".into()));
    }
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.hidden);
    dims.push(train.num_classes());
    let model = Mlp::new(&dims)?;

    let n_mal = cfg.n_malicious();
    let attack = cfg.attack_config(cfg.grid_side(train.dim()), n_mal);
    attack.trigger.validate(train.dim(), train.num_classes())?;
    attack.validate(model.num_layers())?;

    let plan = dirichlet_partition(&train, cfg.n_clients, cfg.alpha, derive_seed(cfg.seed, &[stream::PARTITION]))?;
    let clean: Vec<Vec<Sample>> = plan.client_indices.iter().map(|idx| train.subset(idx)).collect();
    let local = clean
        .iter()
        .enumerate()
        .map(|(i, data)| {
            if i < n_mal {
                let seed = derive_seed(cfg.seed, &[stream::POISON, i as u64]);
                prepare_local_data(data, &attack, cfg.pdr, i, seed)
            } else {
                Ok(data.clone())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let triggered = triggered_test_set(test.samples(), &attack.trigger)?;
    Ok(Setup {
        model,
        test: test.into_samples(),
        triggered,
        target: attack.trigger.target_label,
        clean,
        local,
        roles: roles_prefix(cfg.n_clients, n_mal),
        attack,
    })
}

impl Setup {
    fn train_client(
        &self,
        cfg: &ExperimentConfig,
        client: usize,
        round: usize,
        global: &ParameterVector,
        previous_update: Option<&[f64]>,
    ) -> Result<ParameterVector, SimError> {
        let seed = derive_seed(cfg.seed, &[stream::TRAIN, round as u64, client as u64]);
        let benign = TrainConfig { epochs: cfg.benign_epochs, learning_rate: cfg.lr, batch_size: cfg.batch, seed };
        if self.roles[client].1 == Role::Benign {
            return Ok(self.model.local_train(global, &self.local[client], &benign, None)?);
        }
        let malicious = TrainConfig { epochs: self.attack.malicious_epochs, ..benign };
        let data = &self.local[client];
        Ok(match self.attack.kind {
            AttackKind::None => self.model.local_train(global, data, &benign, None)?,
            AttackKind::Cba | AttackKind::Dba => self.model.local_train(global, data, &malicious, None)?,
            AttackKind::Neurotoxin => {
                let mask = neurotoxin_mask(previous_update, self.attack.neurotoxin_ratio, global.len());
                neurotoxin_train(&self.model, data, global, &malicious, &mask)?
            }
            AttackKind::Csa | AttackKind::Cla => {
                let reference = TrainConfig {
                    seed: derive_seed(cfg.seed, &[stream::REFERENCE, round as u64, client as u64]),
                    ..benign
                };
                let lambda = if self.attack.kind == AttackKind::Csa { self.attack.csa_lambda } else { 0.0 };
                let out = csa_train(&self.model, &self.clean[client], data, global, &reference, &malicious, lambda)?;
                if self.attack.kind == AttackKind::Csa {
                    out.backdoored
                } else {
                    cla_compose(&out.reference, &out.backdoored, global, self.attack.cla_top_k)?
                }
            }
        })
    }
}

/// What an observer sees after each round's aggregation.
pub struct RoundView<'a> {
    pub round: usize,
    pub global_before: &'a ParameterVector,
    pub client_models: &'a [ParameterVector],
    /// `None` under FedAvg.
    pub outcome: Option<&'a RoundOutcome>,
    pub memory: &'a ScoreMemory,
}

/// Runs one experiment. `threads` sets the client-training parallelism
/// (0 = rayon's default); results do not depend on it.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<RunReport, SimError> {
    run_experiment_observed(cfg, threads, |_| {})
}

/// [`run_experiment`] with a callback invoked once per round.
pub fn run_experiment_observed(
    cfg: &ExperimentConfig,
    threads: usize,
    mut observe: impl FnMut(&RoundView<'_>),
) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let started = Instant::now();
    let setup = prepare(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SimError::ThreadPool(e.to_string()))?;
    let defense_cfg = cfg.defense_config();
    let counts: Vec<usize> = setup.local.iter().map(Vec::len).collect();

    let mut global = setup.model.init(derive_seed(cfg.seed, &[stream::MODEL_INIT]));
    let mut previous_update: Option<Vec<f64>> = None;
    let mut memory = ScoreMemory::new();
    let mut tally = DetectionTally::default();
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let models: Vec<ParameterVector> = pool.install(|| {
            (0..cfg.n_clients)
                .into_par_iter()
                .map(|c| setup.train_client(cfg, c, round, &global, previous_update.as_deref()))
                .collect::<Result<Vec<_>, _>>()
        })?;

        let (next, record) = match cfg.defense {
            DefenseKind::FedAvg => {
                let refs: Vec<&ParameterVector> = models.iter().collect();
                let next = fedavg_aggregate(&refs, &counts)?;
                observe(&RoundView {
                    round,
                    global_before: &global,
                    client_models: &models,
                    outcome: None,
                    memory: &memory,
                });
                let record = RoundRecord {
                    round,
                    mta: 0.0,
                    asr: 0.0,
                    n_flagged: 0,
                    n_rescued: 0,
                    degenerate: false,
                    critical_layers: Vec::new(),
                    flagged: Vec::new(),
                    rescued: Vec::new(),
                };
                (next, record)
            }
            DefenseKind::FedSurrogate => {
                let submissions: Vec<Submission<'_>> = models
                    .iter()
                    .enumerate()
                    .map(|(c, m)| Submission { client_id: c, model: m, sample_count: counts[c] })
                    .collect();
                let (next, outcome, mem) = fedsurrogate_round(&submissions, &global, memory, &defense_cfg)?;
                memory = mem;
                observe(&RoundView {
                    round,
                    global_before: &global,
                    client_models: &models,
                    outcome: Some(&outcome),
                    memory: &memory,
                });
                let flagged = outcome.confirmed_malicious.clone();
                tally = tally_round(tally, &flagged, &setup.roles);
                let record = RoundRecord {
                    round,
                    mta: 0.0,
                    asr: 0.0,
                    n_flagged: flagged.len(),
                    n_rescued: outcome.rescued.len(),
                    degenerate: outcome.degenerate(),
                    critical_layers: outcome.critical_layers.clone(),
                    flagged,
                    rescued: outcome.rescued,
                };
                (next, record)
            }
        };
        previous_update = Some(next.sub(&global)?.values().to_vec());
        global = next;
        let mta = setup.model.evaluate(&global, &setup.test)?;
        let asr = asr_on_triggered(&setup.model, &global, &setup.triggered, setup.target)?;
        rounds.push(RoundRecord { mta, asr, ..record });
    }

    let (detection, tpr, fpr, score) = if cfg.defense == DefenseKind::FedSurrogate {
        let r = rates(&tally).ok();
        (Some(tally), r.map(|r| r.0), r.map(|r| r.1), Some(mcc(&tally)))
    } else {
        (None, None, None, None)
    };
    Ok(RunReport {
        label: None,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        malicious_clients: (0..cfg.n_malicious()).collect(),
        rounds,
        detection,
        tpr,
        fpr,
        mcc: score,
        warnings: cfg.honest_majority_warning().into_iter().collect(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// One run per value of `parameter`, all from the same base config and seed.
pub fn sweep(
    base: &ExperimentConfig,
    parameter: &str,
    values: &[String],
    threads: usize,
) -> Result<Vec<RunReport>, SimError> {
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(parameter, v)?;
            Ok((format!("{parameter}={v}"), cfg))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    configs
        .into_iter()
        .map(|(label, cfg)| {
            let mut report = run_experiment(&cfg, threads)?;
            report.label = Some(label);
            Ok(report)
        })
        .collect()
}

pub const ABLATION_VARIANTS: [PipelineVariant; 4] =
    [PipelineVariant::Stage1Only, PipelineVariant::NoRescue, PipelineVariant::RescueExclude, PipelineVariant::Full];

pub fn variant_name(v: PipelineVariant) -> &'static str {
    match v {
        PipelineVariant::Stage1Only => "stage1_only",
        PipelineVariant::NoRescue => "no_rescue",
        PipelineVariant::RescueExclude => "rescue_exclude",
        PipelineVariant::Full => "full",
    }
}

/// Config for each ablation variant, in [`ABLATION_VARIANTS`] order.
pub fn ablation_configs(base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>, SimError> {
    if base.defense != DefenseKind::FedSurrogate {
        return Err(SimError::Config("ablation requires the fedsurrogate defense".into()));
    }
    Ok(ABLATION_VARIANTS.iter().map(|&v| ExperimentConfig { variant: v, ..base.clone() }).collect())
}

/// Runs the four pipeline variants with the same seed.
pub fn ablate(base: &ExperimentConfig, threads: usize) -> Result<Vec<RunReport>, SimError> {
    ablation_configs(base)?
        .into_iter()
        .map(|cfg| {
            let mut report = run_experiment(&cfg, threads)?;
            report.label = Some(format!("variant={}", variant_name(cfg.variant)));
            Ok(report)
        })
        .collect()
}
