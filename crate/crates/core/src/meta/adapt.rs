use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::belief::{evidential_loss_node, opinion_from_evidence, task_beliefs, Opinion, TaskBelief};
use crate::episode::{one_hot_matrix, LabeledSet, QuerySet};
use crate::model::{evidence_node, Architecture, ParamSet, ParamVars};

use super::optim::OuterOptimizerState;
use super::{CostCounters, InnerLoop, MetaError};

/// Global parameters: network weights plus, optionally, one learned inner
/// step size per layer and step (`inner_rates[layer]` has one entry per step).
#[derive(Debug, Clone, PartialEq)]
pub struct MetaParams {
    pub net: ParamSet,
    pub inner_rates: Option<Vec<Tensor>>,
}

impl MetaParams {
    pub fn new(net: ParamSet) -> Self {
        MetaParams { net, inner_rates: None }
    }

    /// Enables learned per-layer, per-step inner rates initialised to `rate`.
    pub fn with_learned_rates(net: ParamSet, steps: usize, rate: f64) -> Self {
        let rates = net.layers.iter().map(|_| Tensor::full(&[steps], rate)).collect();
        MetaParams { net, inner_rates: Some(rates) }
    }

    /// All trainable tensors: network first, then inner rates.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut t = self.net.tensors();
        if let Some(r) = &self.inner_rates {
            t.extend(r.iter().cloned());
        }
        t
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<(), MetaError> {
        let n_net = 2 * self.net.layers.len();
        let mut tensors = tensors;
        let rates = tensors.split_off(n_net.min(tensors.len()));
        self.net = self.net.with_tensors(tensors)?;
        if let Some(r) = &mut self.inner_rates {
            if rates.len() != r.len() {
                return Err(MetaError::Shape(format!("expected {} inner-rate tensors, got {}", r.len(), rates.len())));
            }
            *r = rates;
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut named = self.net.named_tensors();
        if let Some(r) = &self.inner_rates {
            for (l, t) in self.net.layers.iter().zip(r) {
                named.push((format!("{}.inner_rate", l.name), t.clone()));
            }
        }
        named
    }

    /// Rebuilds parameters from checkpoint entries, checking them against `arch`.
    pub fn from_named(arch: &Architecture, entries: &[(String, Tensor)]) -> Result<Self, MetaError> {
        let template = ParamSet::zeros(arch);
        let mut net = Vec::new();
        for (name, _) in template.named_tensors() {
            let t = entries
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| MetaError::Shape(format!("checkpoint is missing `{name}`")))?;
            net.push(t);
        }
        let net = template.with_tensors(net)?;
        let rates: Vec<Tensor> = net
            .layers
            .iter()
            .filter_map(|l| entries.iter().find(|(n, _)| *n == format!("{}.inner_rate", l.name)))
            .map(|(_, t)| t.clone())
            .collect();
        let inner_rates = match rates.len() {
            0 => None,
            n if n == net.layers.len() => Some(rates),
            n => return Err(MetaError::Shape(format!("checkpoint has {n} inner-rate tensors for {} layers", net.layers.len()))),
        };
        let extra = entries.len() - 2 * net.layers.len() - inner_rates.as_ref().map_or(0, Vec::len);
        if extra != 0 {
            return Err(MetaError::Shape(format!("checkpoint has {extra} unexpected tensors")));
        }
        Ok(MetaParams { net, inner_rates })
    }
}

/// How each inner step scales the gradient.
#[derive(Debug, Clone)]
pub enum StepSize {
    Fixed(f64),
    /// `rates[group[p]]` is a `[steps]` node; parameter `p` at step `m` moves by
    /// `|rates[group[p]][m]|` times its gradient.
    Learned { rates: Vec<Var>, group: Vec<usize> },
}

/// Runs `steps` gradient steps from `start`, recording them in `g`.
///
/// With `track_higher_order` the inner gradients stay differentiable, so a
/// later gradient with respect to `start` includes the second-order terms.
/// Without it the inner gradients are constants (first-order approximation).
pub fn adapt_steps<F>(
    g: &mut Graph,
    start: &[Var],
    steps: usize,
    step_size: &StepSize,
    track_higher_order: bool,
    mut loss_at: F,
) -> Result<Vec<Var>, MetaError>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, MetaError>,
{
    let mut current = start.to_vec();
    for m in 0..steps {
        let at_step = |e: MetaError| match e {
            MetaError::Autodiff(AutodiffError::NonFinite(_)) => MetaError::NonFiniteLoss { step: m + 1 },
            other => other,
        };
        let loss = loss_at(g, &current).map_err(at_step)?;
        let grads = g.grad(loss, &current, track_higher_order).map_err(|e| at_step(e.into()))?;
        let mut next = Vec::with_capacity(current.len());
        for (p, &theta) in current.iter().enumerate() {
            let grad = grads.get(theta).expect("gradient for every parameter");
            let delta = match step_size {
                StepSize::Fixed(rate) => g.scalar_mul(grad, *rate),
                StepSize::Learned { rates, group } => {
                    let r = g.index_select(rates[group[p]], &[m])?;
                    let r = g.abs(r)?;
                    g.mul(grad, r)
                }
            }
            .map_err(|e| at_step(e.into()))?;
            next.push(g.sub(theta, delta).map_err(|e| at_step(e.into()))?);
        }
        current = next;
    }
    Ok(current)
}

/// Mean evidential loss of `params` on `(x, labels)`, as a graph scalar.
pub fn set_loss(g: &mut Graph, params: &ParamVars, x: &Tensor, labels: &[usize], n_way: usize, eta: f64) -> Result<Var, MetaError> {
    let xv = g.constant(x.clone());
    let e = evidence_node(g, params, xv)?;
    let y = one_hot_matrix(labels, n_way);
    Ok(evidential_loss_node(g, e, &y, eta)?)
}

/// A task-specific adaptation living in its own graph.
#[derive(Debug)]
pub struct AdaptedTask {
    pub graph: Graph,
    /// Leaves for the global parameters, in [`MetaParams::tensors`] order.
    pub leaves: Vec<Var>,
    pub adapted: ParamVars,
    template: ParamSet,
    n_way: usize,
}

impl AdaptedTask {
    /// Values of the adapted parameters.
    pub fn values(&self) -> ParamSet {
        self.adapted.values(&self.graph, &self.template)
    }

    pub fn n_way(&self) -> usize {
        self.n_way
    }
}

/// Adapts a copy of `theta` to `support`; `theta` itself is never modified.
pub fn inner_adapt(
    theta: &MetaParams,
    support: &LabeledSet,
    n_way: usize,
    inner: &InnerLoop,
    counters: &mut CostCounters,
) -> Result<AdaptedTask, MetaError> {
    if support.is_empty() {
        return Err(MetaError::Shape("support set is empty".into()));
    }
    if !(inner.rate >= 0.0) {
        return Err(MetaError::Shape(format!("inner rate must be >= 0, got {}", inner.rate)));
    }
    let mut g = Graph::new();
    let net = ParamVars::bind(&mut g, &theta.net, true);
    let mut leaves = net.vars();
    let step_size = match &theta.inner_rates {
        None => StepSize::Fixed(inner.rate),
        Some(rates) => {
            let rate_vars: Vec<Var> = rates.iter().map(|r| g.param(r.clone())).collect();
            for r in rates {
                if r.numel() < inner.steps {
                    return Err(MetaError::Shape(format!(
                        "learned inner rates cover {} steps, adaptation runs {}",
                        r.numel(),
                        inner.steps
                    )));
                }
            }
            leaves.extend(&rate_vars);
            let group = (0..2 * theta.net.layers.len()).map(|p| p / 2).collect();
            StepSize::Learned { rates: rate_vars, group }
        }
    };
    let start = net.vars();
    let adapted = adapt_steps(&mut g, &start, inner.steps, &step_size, inner.track_higher_order, |g, vars| {
        set_loss(g, &ParamVars::from_vars(vars), &support.x, &support.labels, n_way, inner.eta)
    })?;
    counters.record_inner_steps(inner.steps as u64);
    Ok(AdaptedTask {
        graph: g,
        leaves,
        adapted: ParamVars::from_vars(&adapted),
        template: theta.net.clone(),
        n_way,
    })
}

/// Result of one outer update.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStats {
    /// Mean query loss over the batch.
    pub loss: f64,
    /// Beliefs on each trained query set, with incorrect belief.
    pub beliefs: Vec<TaskBelief>,
}

/// Differentiates the summed query losses through each adaptation back to
/// the global parameters and applies one optimizer step.
pub fn outer_step(
    theta: &mut MetaParams,
    batch: Vec<(AdaptedTask, &QuerySet)>,
    eta: f64,
    opt: &mut OuterOptimizerState,
    counters: &mut CostCounters,
) -> Result<OuterStats, MetaError> {
    if batch.iter().any(|(_, q)| q.labels().is_none()) {
        return Err(MetaError::UnlabeledQuerySet);
    }
    let mut total: Option<Vec<Tensor>> = None;
    let mut loss_sum = 0.0;
    let mut beliefs = Vec::with_capacity(batch.len());
    let batch_len = batch.len();
    for (mut task, query) in batch {
        let labels = query.labels().expect("checked above");
        let g = &mut task.graph;
        let xv = g.constant(query.x.clone());
        let e = evidence_node(g, &task.adapted, xv)?;
        let y = one_hot_matrix(labels, task.n_way);
        let loss = evidential_loss_node(g, e, &y, eta).map_err(|err| match err {
            crate::belief::BeliefError::Autodiff(AutodiffError::NonFinite(_)) => MetaError::NonFiniteGradient,
            other => other.into(),
        })?;
        loss_sum += g.value(loss).item().expect("scalar loss");
        beliefs.push(query_beliefs(g.value(e), Some(labels))?);

        let grads = g.grad(loss, &task.leaves, false).map_err(|err| match err {
            AutodiffError::NonFinite(_) => MetaError::NonFiniteGradient,
            other => other.into(),
        })?;
        let grads = grads.tensors(g);
        counters.record_outer_backward();
        total = Some(match total {
            None => grads,
            Some(acc) => acc.iter().zip(&grads).map(|(a, b)| a.zip_add(b)).collect(),
        });
    }
    let Some(grads) = total else {
        return Ok(OuterStats { loss: 0.0, beliefs });
    };
    if grads.iter().any(|t| !t.is_finite()) {
        return Err(MetaError::NonFiniteGradient);
    }
    let mut params = theta.tensors();
    opt.apply(&mut params, &grads)?;
    theta.set_tensors(params)?;
    Ok(OuterStats { loss: loss_sum / batch_len as f64, beliefs })
}

/// Opinions for each row of an evidence matrix.
pub fn opinions(evidence: &Tensor) -> Result<Vec<Opinion>, MetaError> {
    (0..evidence.shape()[0])
        .map(|r| opinion_from_evidence(evidence.row(r)).map_err(MetaError::from))
        .collect()
}

pub fn query_beliefs(evidence: &Tensor, labels: Option<&[usize]>) -> Result<TaskBelief, MetaError> {
    Ok(task_beliefs(&opinions(evidence)?, labels)?)
}

/// Meta-gradient of `outer_loss(adapt(theta))` for arbitrary scalar losses;
/// the model-free core of [`inner_adapt`] plus [`outer_step`].
pub fn meta_gradient<F, G>(
    theta: &[Tensor],
    steps: usize,
    rate: f64,
    second_order: bool,
    inner_loss: F,
    mut outer_loss: G,
) -> Result<Vec<Tensor>, MetaError>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var, MetaError>,
    G: FnMut(&mut Graph, &[Var]) -> Result<Var, MetaError>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = theta.iter().map(|t| g.param(t.clone())).collect();
    let adapted = adapt_steps(&mut g, &leaves, steps, &StepSize::Fixed(rate), second_order, inner_loss)?;
    let loss = outer_loss(&mut g, &adapted)?;
    Ok(g.grad(loss, &leaves, false)?.tensors(&g))
}
