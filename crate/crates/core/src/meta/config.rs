use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::belief::ScheduleConfig;
use crate::episode::SamplerConfig;

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// No task selection: every sampled task is labelled and trained on.
    #[serde(rename = "NTS")]
    Nts,
    /// Sample `J` standard tasks, keep the `I` most uncertain.
    #[serde(rename = "ST")]
    St,
    /// `I` multi-query tasks with `J` query sets in total; label one per task.
    #[serde(rename = "ML")]
    Ml,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Nts => "NTS",
            Mode::St => "ST",
            Mode::Ml => "ML",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NTS" => Ok(Mode::Nts),
            "ST" => Ok(Mode::St),
            "ML" => Ok(Mode::Ml),
            other => Err(format!("unknown mode `{other}` (expected NTS, ST or ML)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OuterOptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub inner_steps: usize,
    pub inner_rate: f64,
    pub outer_rate: f64,
    pub tasks_per_iteration: usize,
    /// Standard tasks sampled per iteration in ST mode; total query sets per
    /// iteration in ML mode.
    pub candidate_pool: usize,
    pub warmup_iterations: u64,
    pub epochs: u64,
    pub iterations_per_epoch: u64,
    pub mode: Mode,
    #[serde(default = "yes")]
    pub second_order: bool,
    #[serde(default)]
    pub learned_inner_rates: bool,
    #[serde(default)]
    pub outer_optimizer: OuterOptimizerKind,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// Maximum number of query sets whose labels may be revealed.
    #[serde(default)]
    pub label_budget: Option<u64>,
    /// Set from the run seed; not part of the config file.
    #[serde(skip)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl MetaConfig {
    pub fn total_iterations(&self) -> u64 {
        self.epochs * self.iterations_per_epoch
    }

    /// Query sets per multi-query task in ML mode.
    pub fn queries_per_task(&self) -> usize {
        match self.mode {
            Mode::Ml => self.candidate_pool / self.tasks_per_iteration.max(1),
            _ => 1,
        }
    }

    pub fn sampler(&self, queries_per_task: usize) -> SamplerConfig {
        SamplerConfig { n_way: self.n_way, k_shot: self.k_shot, q_query: self.q_query, queries_per_task }
    }

    /// Checks cross-field constraints. Errors name the offending field.
    pub fn validate(&self) -> Result<(), String> {
        if self.n_way < 2 {
            return Err("n_way: must be at least 2".into());
        }
        if self.k_shot == 0 {
            return Err("k_shot: must be positive".into());
        }
        if self.q_query == 0 {
            return Err("q_query: must be positive".into());
        }
        if self.inner_steps == 0 {
            return Err("inner_steps: must be at least 1".into());
        }
        if !(self.inner_rate >= 0.0 && self.inner_rate.is_finite()) {
            return Err("inner_rate: must be finite and >= 0".into());
        }
        if !(self.outer_rate > 0.0 && self.outer_rate.is_finite()) {
            return Err("outer_rate: must be finite and > 0".into());
        }
        if self.tasks_per_iteration == 0 {
            return Err("tasks_per_iteration: must be positive".into());
        }
        if self.epochs == 0 {
            return Err("epochs: must be positive".into());
        }
        if self.iterations_per_epoch == 0 {
            return Err("iterations_per_epoch: must be positive".into());
        }
        match self.mode {
            Mode::Nts => {}
            Mode::St => {
                if self.candidate_pool < self.tasks_per_iteration {
                    return Err("candidate_pool: must be >= tasks_per_iteration in ST mode".into());
                }
            }
            Mode::Ml => {
                if self.candidate_pool < self.tasks_per_iteration
                    || !self.candidate_pool.is_multiple_of(self.tasks_per_iteration)
                {
                    return Err(
                        "candidate_pool: must be a positive multiple of tasks_per_iteration in ML mode".into(),
                    );
                }
            }
        }
        if let Some(b) = self.label_budget {
            if b < self.tasks_per_iteration as u64 {
                return Err("label_budget: must allow at least one iteration".into());
            }
        }
        self.schedule.validate().map_err(|e| format!("schedule.{e}"))
    }
}

/// Inner-loop settings for one adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub steps: usize,
    pub rate: f64,
    pub eta: f64,
    /// Keep the adaptation differentiable to second order.
    pub track_higher_order: bool,
}
