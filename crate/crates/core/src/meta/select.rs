use std::cmp::Ordering;

use crate::belief::TaskBelief;
use crate::episode::Task;
use crate::model::{evidence, ParamSet};

use super::adapt::{inner_adapt, query_beliefs, MetaParams};
use super::{CostCounters, InnerLoop, MetaError};

/// Beliefs of `adapted` on every unrevealed query set of `task`, paired with
/// the query-set index. Costs one forward per query set.
pub fn score_query_sets(
    adapted: &ParamSet,
    task: &Task,
    lambda: f64,
    counters: &mut CostCounters,
) -> Result<Vec<(usize, TaskBelief)>, MetaError> {
    let mut out = Vec::new();
    for (j, qs) in task.query_sets.iter().enumerate() {
        if qs.is_revealed() {
            continue;
        }
        let e = evidence(adapted, &qs.x)?;
        counters.record_selection_forward();
        out.push((j, query_beliefs(&e, None)?.with_uncertainty(lambda)?));
    }
    Ok(out)
}

/// Adapts to the support set without tracking, then scores the query sets.
pub fn score_task(
    theta: &MetaParams,
    task: &Task,
    lambda: f64,
    inner: &InnerLoop,
    counters: &mut CostCounters,
) -> Result<Vec<(usize, TaskBelief)>, MetaError> {
    if task.query_sets.is_empty() {
        return Err(MetaError::Shape("task has no query sets".into()));
    }
    let inner = InnerLoop { track_higher_order: false, ..*inner };
    let adapted = inner_adapt(theta, &task.support, task.n_way(), &inner, counters)?;
    score_query_sets(&adapted.values(), task, lambda, counters)
}

/// Indices of the `how_many` highest `unc` values, highest first, lowest
/// index first among ties. Scores without `unc` rank last.
pub fn select(scores: &[TaskBelief], how_many: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| scores[i].unc.filter(|u| !u.is_nan());
        match (key(a), key(b)) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        }
        .then(a.cmp(&b))
    });
    order.truncate(how_many);
    order
}
