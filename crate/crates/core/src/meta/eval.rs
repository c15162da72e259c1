use serde::{Deserialize, Serialize};

use crate::belief::{eta_schedule, task_beliefs};
use crate::episode::{ood_transform, sample_task, Dataset, LabelBudget, OodKind, SamplerConfig};
use crate::model::evidence;
use crate::seed::{derive_seed, stream_rng};

use super::adapt::{inner_adapt, opinions, MetaParams};
use super::{CostCounters, InnerLoop, MetaConfig, MetaError};

/// Held-out evaluation protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub num_tasks: usize,
    pub sampler: SamplerConfig,
    pub inner_steps: usize,
    pub inner_rate: f64,
    pub eta: f64,
    pub thresholds: Vec<f64>,
    pub ood: Option<(OodKind, Vec<f64>)>,
    pub seed: u64,
}

impl EvalSettings {
    /// Standard single-query tasks and the inner loop of `cfg` at its final
    /// epoch.
    pub fn from_meta(cfg: &MetaConfig, num_tasks: usize, seed: u64) -> Self {
        EvalSettings {
            num_tasks,
            sampler: cfg.sampler(1),
            inner_steps: cfg.inner_steps,
            inner_rate: cfg.inner_rate,
            eta: eta_schedule(cfg.epochs.saturating_sub(1), &cfg.schedule),
            thresholds: vec![],
            ood: None,
            seed,
        }
    }
}

/// One query prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub vacuity: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub coverage: f64,
    /// `None` when no prediction passes the threshold.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub kind: OodKind,
    pub magnitude: f64,
    pub clean_vacuity: f64,
    pub ood_vacuity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Standard error of the per-task accuracies.
    pub stderr: f64,
    pub thresholds: Vec<ThresholdRow>,
    pub mean_vacuity: f64,
    pub mean_vb: f64,
    pub mean_cb: f64,
    pub mean_ib: f64,
    pub ood: Vec<OodRow>,
    pub samples: Vec<SampleRecord>,
}

/// Coverage and accuracy among predictions with vacuity below each
/// threshold. A threshold of 1.0 or more keeps every prediction.
pub fn summarize_samples(samples: &[SampleRecord], thresholds: &[f64]) -> Vec<ThresholdRow> {
    thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<&SampleRecord> = samples.iter().filter(|s| t >= 1.0 || s.vacuity < t).collect();
            let coverage = if samples.is_empty() { 0.0 } else { kept.len() as f64 / samples.len() as f64 };
            let accuracy =
                (!kept.is_empty()).then(|| kept.iter().filter(|s| s.correct).count() as f64 / kept.len() as f64);
            ThresholdRow { threshold: t, coverage, accuracy }
        })
        .collect()
}

/// Adapts to `num_tasks` freshly sampled tasks and measures query accuracy,
/// vacuity and, optionally, vacuity under a feature transform.
pub fn evaluate(theta: &MetaParams, ds: &Dataset, settings: &EvalSettings) -> Result<EvalReport, MetaError> {
    if settings.num_tasks == 0 {
        return Err(MetaError::Config("num_tasks: must be at least 1".into()));
    }
    let mut rng = stream_rng(settings.seed, "eval-tasks");
    let ood_seed = derive_seed(settings.seed, "ood");
    let inner = InnerLoop {
        steps: settings.inner_steps,
        rate: settings.inner_rate,
        eta: settings.eta,
        track_higher_order: false,
    };
    let mut counters = CostCounters::default();
    let mut budget = LabelBudget::unlimited();
    let magnitudes = settings.ood.as_ref().map_or(&[][..], |(_, m)| m.as_slice());
    let mut ood_sums = vec![0.0; magnitudes.len()];

    let mut samples = Vec::new();
    let mut task_acc = Vec::with_capacity(settings.num_tasks);
    let (mut vb, mut cb, mut ib) = (0.0, 0.0, 0.0);
    for _ in 0..settings.num_tasks {
        let mut task = sample_task(ds, &settings.sampler, &mut rng)?;
        let labels = task.reveal_labels(0, &mut budget)?.to_vec();
        let adapted = inner_adapt(theta, &task.support, task.n_way(), &inner, &mut counters)?.values();
        let x = &task.query_sets[0].x;
        let ops = opinions(&evidence(&adapted, x)?)?;
        let tb = task_beliefs(&ops, Some(&labels))?;
        vb += tb.vb;
        cb += tb.cb;
        ib += tb.ib.unwrap_or(0.0);

        let mut correct = 0;
        for (o, &y) in ops.iter().zip(&labels) {
            let ok = o.predicted_class() == y;
            correct += ok as usize;
            samples.push(SampleRecord { vacuity: o.vacuity, correct: ok });
        }
        task_acc.push(correct as f64 / labels.len() as f64);

        if let Some((kind, _)) = &settings.ood {
            for (sum, &m) in ood_sums.iter_mut().zip(magnitudes) {
                let shifted = ood_transform(x, *kind, m, ood_seed);
                let ops = opinions(&evidence(&adapted, &shifted)?)?;
                *sum += ops.iter().map(|o| o.vacuity).sum::<f64>() / ops.len() as f64;
            }
        }
    }

    let t = settings.num_tasks as f64;
    let accuracy = samples.iter().filter(|s| s.correct).count() as f64 / samples.len() as f64;
    let mean_task = task_acc.iter().sum::<f64>() / t;
    let stderr = if task_acc.len() > 1 {
        let var = task_acc.iter().map(|a| (a - mean_task).powi(2)).sum::<f64>() / (t - 1.0);
        (var / t).sqrt()
    } else {
        0.0
    };
    let mean_vacuity = samples.iter().map(|s| s.vacuity).sum::<f64>() / samples.len() as f64;
    let ood = match &settings.ood {
        None => vec![],
        Some((kind, _)) => magnitudes
            .iter()
            .zip(&ood_sums)
            .map(|(&magnitude, s)| OodRow { kind: *kind, magnitude, clean_vacuity: vb / t, ood_vacuity: s / t })
            .collect(),
    };
    Ok(EvalReport {
        accuracy,
        stderr,
        thresholds: summarize_samples(&samples, &settings.thresholds),
        mean_vacuity,
        mean_vb: vb / t,
        mean_cb: cb / t,
        mean_ib: ib / t,
        ood,
        samples,
    })
}
