//! Utility, backdoor and detection metrics.

use alloc::vec::Vec;

use crate::data::{triggered_test_set, Sample, TriggerSpec};
use crate::error::MetricError;
use crate::model::Mlp;
use crate::params::{ParameterVector, Role};

/// Fraction of non-target test samples that the model sends to the target
/// label once the full trigger is stamped in.
pub fn asr(model: &Mlp, params: &ParameterVector, test: &[Sample], trigger: &TriggerSpec) -> Result<f64, MetricError> {
    let triggered = triggered_test_set(test, trigger)
        .map_err(|_| MetricError::Undefined("trigger does not fit the test samples"))?;
    asr_on_triggered(model, params, &triggered, trigger.target_label)
}

/// Attack success on an already triggered set.
pub fn asr_on_triggered(
    model: &Mlp,
    params: &ParameterVector,
    triggered: &[Sample],
    target: usize,
) -> Result<f64, MetricError> {
    if triggered.is_empty() {
        return Err(MetricError::Undefined("no test samples outside the target class"));
    }
    let hits = model.predict(params, triggered)?.into_iter().filter(|&p| p == target).count();
    Ok(hits as f64 / triggered.len() as f64)
}

/// Confusion counts pooled over rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionTally {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: u64,
}

impl DetectionTally {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Adds one round: `flagged` are the client ids the defense rejected.
pub fn tally_round(mut tally: DetectionTally, flagged: &[usize], roles: &[(usize, Role)]) -> DetectionTally {
    for &(client, role) in roles {
        let hit = flagged.contains(&client);
        match (role, hit) {
            (Role::Malicious, true) => tally.tp += 1,
            (Role::Malicious, false) => tally.fn_ += 1,
            (Role::Benign, true) => tally.fp += 1,
            (Role::Benign, false) => tally.tn += 1,
        }
    }
    tally
}

pub fn tpr(t: &DetectionTally) -> Result<f64, MetricError> {
    let pos = t.tp + t.fn_;
    if pos == 0 {
        return Err(MetricError::Undefined("no malicious observations"));
    }
    Ok(t.tp as f64 / pos as f64)
}

pub fn fpr(t: &DetectionTally) -> Result<f64, MetricError> {
    let neg = t.fp + t.tn;
    if neg == 0 {
        return Err(MetricError::Undefined("no benign observations"));
    }
    Ok(t.fp as f64 / neg as f64)
}

/// `(TPR, FPR)`.
pub fn rates(t: &DetectionTally) -> Result<(f64, f64), MetricError> {
    Ok((tpr(t)?, fpr(t)?))
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(t: &DetectionTally) -> f64 {
    let (tp, fp, tn, fn_) = (t.tp as f64, t.fp as f64, t.tn as f64, t.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    ((tp * tn - fp * fn_) / libm::sqrt(denom)).clamp(-1.0, 1.0)
}

/// Ground-truth roles for clients `0..n` where the first `malicious` are adversarial.
pub fn roles_prefix(n: usize, malicious: usize) -> Vec<(usize, Role)> {
    (0..n).map(|i| (i, if i < malicious { Role::Malicious } else { Role::Benign })).collect()
}
