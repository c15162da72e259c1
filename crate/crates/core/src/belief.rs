//! Subjective-logic opinions and the task-level belief measures built on them.
//!
//! An evidential classifier emits a nonnegative evidence vector `e` per
//! sample. With `alpha = e + 1` and `S = sum(alpha)` the opinion has belief
//! masses `b = e / S` and vacuity `u = N / S`. Dissonance measures how evenly
//! belief is split between competing classes; incorrect belief is the mass
//! placed off the true class and is bounded below by half the dissonance.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("evidence entry {index} is negative or non-finite ({value})")]
    NegativeEvidence { index: usize, value: f64 },
    #[error("evidence vector needs at least two classes, got {0}")]
    EmptyVector(usize),
    #[error("label is not a one-hot vector of length {0}")]
    MalformedOneHot(usize),
    #[error("task has no query samples")]
    EmptyQuerySet,
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Multinomial opinion for a single prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Opinion {
    pub beliefs: Vec<f64>,
    pub vacuity: f64,
    pub alphas: Vec<f64>,
    pub strength: f64,
}

impl Opinion {
    pub fn num_classes(&self) -> usize {
        self.beliefs.len()
    }

    /// Expected class probabilities `alpha / S`.
    pub fn expected_probabilities(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| a / self.strength).collect()
    }

    pub fn dissonance(&self) -> f64 {
        dissonance(&self.beliefs)
    }

    /// Index of the largest `alpha`; ties go to the lowest index.
    pub fn predicted_class(&self) -> usize {
        argmax(&self.alphas)
    }
}

/// Index of the maximum entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn opinion_from_evidence(evidence: &[f64]) -> Result<Opinion, BeliefError> {
    if evidence.len() < 2 {
        return Err(BeliefError::EmptyVector(evidence.len()));
    }
    if let Some((index, &value)) = evidence
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
    {
        return Err(BeliefError::NegativeEvidence { index, value });
    }
    let alphas: Vec<f64> = evidence.iter().map(|e| e + 1.0).collect();
    let strength: f64 = alphas.iter().sum();
    Ok(Opinion {
        beliefs: evidence.iter().map(|e| e / strength).collect(),
        vacuity: evidence.len() as f64 / strength,
        alphas,
        strength,
    })
}

/// Relative mass balance between two belief masses.
pub fn balance(bj: f64, bn: f64) -> f64 {
    if bj * bn > 0.0 {
        1.0 - (bj - bn).abs() / (bj + bn)
    } else {
        0.0
    }
}

/// Dissonance of a belief vector. Terms whose competing mass is zero
/// contribute nothing.
pub fn dissonance(beliefs: &[f64]) -> f64 {
    let mut dis = 0.0;
    for (n, &bn) in beliefs.iter().enumerate() {
        if bn == 0.0 {
            continue;
        }
        let (mut weighted, mut denom) = (0.0, 0.0);
        for (j, &bj) in beliefs.iter().enumerate() {
            if j != n {
                weighted += bj * balance(bj, bn);
                denom += bj;
            }
        }
        if denom > 0.0 {
            dis += bn * weighted / denom;
        }
    }
    dis
}

/// Validates a one-hot label and returns its class index.
pub fn one_hot_index(y: &[f64]) -> Result<usize, BeliefError> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(BeliefError::MalformedOneHot(y.len()));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(BeliefError::MalformedOneHot(y.len()));
        }
    }
    hot.ok_or(BeliefError::MalformedOneHot(y.len()))
}

pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[class] = 1.0;
    y
}

/// Belief mass placed on classes other than the labelled one.
pub fn incorrect_belief(beliefs: &[f64], y: &[f64]) -> Result<f64, BeliefError> {
    if y.len() != beliefs.len() {
        return Err(BeliefError::MalformedOneHot(beliefs.len()));
    }
    let truth = one_hot_index(y)?;
    Ok(incorrect_belief_at(beliefs, truth))
}

pub(crate) fn incorrect_belief_at(beliefs: &[f64], truth: usize) -> f64 {
    beliefs
        .iter()
        .enumerate()
        .filter(|&(n, _)| n != truth)
        .map(|(_, b)| b)
        .sum()
}

/// Task-level beliefs over one query set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskBelief {
    pub vb: f64,
    pub cb: f64,
    /// Only available once the query labels are known.
    pub ib: Option<f64>,
    pub unc: Option<f64>,
}

impl TaskBelief {
    /// Sets `unc = lambda * vb + (1 - lambda) * cb` and returns it.
    pub fn with_uncertainty(mut self, lambda: f64) -> Result<Self, BeliefError> {
        self.unc = Some(task_uncertainty(&self, lambda)?);
        Ok(self)
    }
}

pub fn task_beliefs(opinions: &[Opinion], labels: Option<&[usize]>) -> Result<TaskBelief, BeliefError> {
    if opinions.is_empty() {
        return Err(BeliefError::EmptyQuerySet);
    }
    let n = opinions.len() as f64;
    let vb = opinions.iter().map(|o| o.vacuity).sum::<f64>() / n;
    let cb = opinions.iter().map(Opinion::dissonance).sum::<f64>() / n;
    let ib = match labels {
        None => None,
        Some(labels) => {
            if labels.len() != opinions.len() {
                return Err(BeliefError::EmptyQuerySet);
            }
            let mut total = 0.0;
            for (o, &y) in opinions.iter().zip(labels) {
                if y >= o.num_classes() {
                    return Err(BeliefError::LabelOutOfRange { label: y, classes: o.num_classes() });
                }
                total += incorrect_belief_at(&o.beliefs, y);
            }
            Some(total / n)
        }
    };
    Ok(TaskBelief { vb, cb, ib, unc: None })
}

pub fn task_uncertainty(tb: &TaskBelief, lambda: f64) -> Result<f64, BeliefError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(BeliefError::LambdaOutOfRange(lambda));
    }
    Ok(lambda * tb.vb + (1.0 - lambda) * tb.cb)
}

/// Epoch-indexed schedules for the vacuity/dissonance balance and the
/// incorrect-belief regularization weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub lambda_horizon: f64,
    pub eta_cap: f64,
    pub eta_ramp_divisor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lambda_start: 0.99,
            lambda_end: 0.5,
            lambda_horizon: 50.0,
            eta_cap: 8.0,
            eta_ramp_divisor: 10.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.lambda_end && self.lambda_end <= self.lambda_start && self.lambda_start <= 1.0) {
            return Err("lambda_start: need 0 <= lambda_end <= lambda_start <= 1".into());
        }
        if !(self.eta_cap >= 0.0) {
            return Err("eta_cap: must be >= 0".into());
        }
        if !(self.lambda_horizon > 0.0) {
            return Err("lambda_horizon: must be > 0".into());
        }
        if !(self.eta_ramp_divisor > 0.0) {
            return Err("eta_ramp_divisor: must be > 0".into());
        }
        Ok(())
    }
}

pub fn lambda_schedule(epoch: u64, cfg: &ScheduleConfig) -> f64 {
    let progress = (epoch as f64 / cfg.lambda_horizon).min(1.0);
    cfg.lambda_start - (cfg.lambda_start - cfg.lambda_end) * progress
}

pub fn eta_schedule(epoch: u64, cfg: &ScheduleConfig) -> f64 {
    cfg.eta_cap.min(cfg.eta_cap * epoch as f64 / cfg.eta_ramp_divisor)
}

/// Negative log marginal likelihood under the Dirichlet plus the
/// incorrect-belief penalty, for a single sample.
pub fn evidential_loss(evidence: &[f64], y: &[f64], eta: f64) -> Result<f64, BeliefError> {
    let opinion = opinion_from_evidence(evidence)?;
    if y.len() != evidence.len() {
        return Err(BeliefError::MalformedOneHot(evidence.len()));
    }
    let truth = one_hot_index(y)?;
    let nll = opinion.strength.ln() - opinion.alphas[truth].ln();
    Ok(nll + eta * incorrect_belief_at(&opinion.beliefs, truth))
}

/// Graph version of [`evidential_loss`], averaged over a batch.
///
/// `evidence` is a `[batch, N]` node and `targets` the matching one-hot
/// matrix. The result is a differentiable scalar.
pub fn evidential_loss_node(g: &mut Graph, evidence: Var, targets: &Tensor, eta: f64) -> Result<Var, BeliefError> {
    let shape = g.shape(evidence).to_vec();
    if shape.len() != 2 || targets.shape() != shape.as_slice() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "evidence {:?} vs targets {:?}",
            shape,
            targets.shape()
        ))
        .into());
    }
    for r in 0..shape[0] {
        one_hot_index(targets.row(r))?;
    }
    let y = g.constant(targets.clone());
    let alpha = g.add_scalar(evidence, 1.0)?;
    let strength = g.sum_axis(alpha, 1)?;
    let log_alpha = g.log(alpha)?;
    let log_strength = g.log(strength)?;
    let log_p = g.sub(log_alpha, log_strength)?;
    let picked = g.mul(y, log_p)?;
    let nll = g.sum(picked)?;
    let mut total = g.neg(nll)?;
    if eta != 0.0 {
        let off = g.constant(targets.map(|v| 1.0 - v));
        let beliefs = g.div(evidence, strength)?;
        let wrong = g.mul(beliefs, off)?;
        let ib = g.sum(wrong)?;
        let penalty = g.scalar_mul(ib, eta)?;
        total = g.add(total, penalty)?;
    }
    Ok(g.scalar_mul(total, 1.0 / shape[0] as f64)?)
}

/// Outcome of checking `ib >= cb / 2` for a single belief vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    /// Smallest `ib - cb / 2` over the label choices examined.
    pub min_slack: f64,
    pub holds: bool,
}

pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Checks the incorrect-belief lower bound for `beliefs`.
///
/// With `exhaustive` every possible true label is tried; otherwise only the
/// worst case `ib = sum(b) - max(b)` is used.
pub fn verify_bound(beliefs: &[f64], exhaustive: bool) -> BoundCheck {
    verify_bound_with(beliefs, exhaustive, dissonance)
}

/// [`verify_bound`] with a caller-supplied dissonance function.
pub fn verify_bound_with(beliefs: &[f64], exhaustive: bool, dis: impl Fn(&[f64]) -> f64) -> BoundCheck {
    let cb = dis(beliefs);
    let min_ib = if exhaustive {
        (0..beliefs.len())
            .map(|t| incorrect_belief_at(beliefs, t))
            .fold(f64::INFINITY, f64::min)
    } else {
        let total: f64 = beliefs.iter().sum();
        total - beliefs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let min_slack = min_ib - cb / 2.0;
    BoundCheck { min_slack, holds: min_slack >= -BOUND_TOLERANCE }
}

/// Random belief vector: a Dirichlet(1, ..., 1) draw over 2..=10 classes
/// scaled by a total mass drawn from (0, 1].
pub fn sample_belief_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let n = rng.random_range(2..=10);
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mass = 1.0 - rng.random::<f64>();
    draws.into_iter().map(|d| mass * d / total).collect()
}
