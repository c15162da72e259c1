//! Meta-training: inner adaptation, the outer update, task selection and the
//! training and evaluation loops.

mod adapt;
mod config;
mod eval;
mod optim;
mod select;
mod train;

pub use adapt::{
    adapt_steps, inner_adapt, meta_gradient, opinions, outer_step, query_beliefs, set_loss, AdaptedTask, MetaParams,
    OuterStats, StepSize,
};
pub use config::{InnerLoop, MetaConfig, Mode, OuterOptimizerKind};
pub use eval::{evaluate, summarize_samples, EvalReport, EvalSettings, OodRow, SampleRecord, ThresholdRow};
pub use optim::OuterOptimizerState;
pub use select::{score_query_sets, score_task, select};
pub use train::{format_sig, train, train_from, CsvMetricSink, MetricRow, MetricSink, TrainOutcome, VecMetricSink, METRICS_HEADER};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::belief::BeliefError;
use crate::episode::EpisodeError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite loss at inner step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite meta-gradient")]
    NonFiniteGradient,
    #[error("outer step needs revealed query labels")]
    UnlabeledQuerySet,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: u64,
        #[source]
        source: Box<MetaError>,
    },
    #[error("metric sink: {0}")]
    Sink(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Work and label counters.
///
/// `forward_passes` counts inner-loop and selection forwards; the forward
/// that produces the outer query loss is part of the outer backward and is
/// not counted separately. `backward_passes` counts inner and outer
/// backwards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostCounters {
    pub forward_passes: u64,
    pub backward_passes: u64,
    pub inner_forwards: u64,
    pub inner_backwards: u64,
    pub selection_forwards: u64,
    pub outer_backwards: u64,
    pub labeled_query_sets: u64,
    pub labeled_support_sets: u64,
}

impl CostCounters {
    pub fn record_inner_steps(&mut self, steps: u64) {
        self.inner_forwards += steps;
        self.inner_backwards += steps;
        self.forward_passes += steps;
        self.backward_passes += steps;
    }

    pub fn record_selection_forward(&mut self) {
        self.selection_forwards += 1;
        self.forward_passes += 1;
    }

    pub fn record_outer_backward(&mut self) {
        self.outer_backwards += 1;
        self.backward_passes += 1;
    }

    /// Field-wise difference `self - earlier`.
    pub fn since(&self, earlier: &CostCounters) -> CostCounters {
        CostCounters {
            forward_passes: self.forward_passes - earlier.forward_passes,
            backward_passes: self.backward_passes - earlier.backward_passes,
            inner_forwards: self.inner_forwards - earlier.inner_forwards,
            inner_backwards: self.inner_backwards - earlier.inner_backwards,
            selection_forwards: self.selection_forwards - earlier.selection_forwards,
            outer_backwards: self.outer_backwards - earlier.outer_backwards,
            labeled_query_sets: self.labeled_query_sets - earlier.labeled_query_sets,
            labeled_support_sets: self.labeled_support_sets - earlier.labeled_support_sets,
        }
    }
}
