use std::io::Write;

use crate::belief::{eta_schedule, lambda_schedule, TaskBelief};
use crate::episode::{sample_task, Dataset, LabelBudget, Task};
use crate::model::{init_params, Architecture};
use crate::seed::stream_rng;

use super::adapt::{inner_adapt, outer_step, AdaptedTask, MetaParams, OuterStats};
use super::select::{score_query_sets, select};
use super::{CostCounters, InnerLoop, MetaConfig, MetaError, Mode, OuterOptimizerState};

pub const METRICS_HEADER: &str =
    "iter,epoch,mode,lambda,eta,mean_vb,mean_cb,mean_ib,mean_unc_selected,train_loss,labeled_query_sets,fwd_count,bwd_count";

/// One meta-iteration's metrics. `counters` holds cumulative totals.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iter: u64,
    pub epoch: u64,
    pub mode: Mode,
    pub lambda: f64,
    pub eta: f64,
    pub mean_vb: f64,
    pub mean_cb: f64,
    pub mean_ib: f64,
    /// Mean `unc` of the query sets trained on this iteration.
    pub mean_unc_selected: f64,
    pub train_loss: f64,
    pub counters: CostCounters,
}

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.epoch,
            self.mode,
            format_sig(self.lambda),
            format_sig(self.eta),
            format_sig(self.mean_vb),
            format_sig(self.mean_cb),
            format_sig(self.mean_ib),
            format_sig(self.mean_unc_selected),
            format_sig(self.train_loss),
            self.counters.labeled_query_sets,
            self.counters.forward_passes,
            self.counters.backward_passes,
        )
    }
}

/// Formats `v` with 6 significant digits, `%g` style.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return "NA".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub trait MetricSink {
    fn record(&mut self, row: &MetricRow) -> Result<(), MetaError>;
}

#[derive(Debug, Default)]
pub struct VecMetricSink {
    pub rows: Vec<MetricRow>,
}

impl MetricSink for VecMetricSink {
    fn record(&mut self, row: &MetricRow) -> Result<(), MetaError> {
        self.rows.push(row.clone());
        Ok(())
    }
}

/// Writes the metric log as CSV, header first.
pub struct CsvMetricSink<W: Write> {
    out: W,
}

impl<W: Write> CsvMetricSink<W> {
    pub fn new(mut out: W) -> Result<Self, MetaError> {
        writeln!(out, "{METRICS_HEADER}").map_err(|e| MetaError::Sink(e.to_string()))?;
        Ok(CsvMetricSink { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricSink for CsvMetricSink<W> {
    fn record(&mut self, row: &MetricRow) -> Result<(), MetaError> {
        writeln!(self.out, "{}", row.to_csv_line())
            .and_then(|_| self.out.flush())
            .map_err(|e| MetaError::Sink(e.to_string()))
    }
}

impl<S: MetricSink + ?Sized> MetricSink for &mut S {
    fn record(&mut self, row: &MetricRow) -> Result<(), MetaError> {
        (**self).record(row)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MetaParams,
    pub counters: CostCounters,
    pub iterations_run: u64,
    /// Training stopped early because the label budget could not cover
    /// another iteration.
    pub stopped_on_budget: bool,
}

/// Runs meta-training on `ds` from parameters initialised with `cfg.seed`.
pub fn train(ds: &Dataset, arch: &Architecture, cfg: &MetaConfig, sink: &mut dyn MetricSink) -> Result<TrainOutcome, MetaError> {
    cfg.validate().map_err(MetaError::Config)?;
    arch.validate()?;
    if arch.input_dim != ds.dim() {
        return Err(MetaError::Shape(format!("architecture input_dim {} but dataset has {} features", arch.input_dim, ds.dim())));
    }
    if arch.num_classes != cfg.n_way {
        return Err(MetaError::Shape(format!("architecture num_classes {} but n_way is {}", arch.num_classes, cfg.n_way)));
    }
    cfg.sampler(cfg.queries_per_task()).check(ds)?;

    let net = init_params(arch, cfg.seed);
    let theta = if cfg.learned_inner_rates {
        MetaParams::with_learned_rates(net, cfg.inner_steps, cfg.inner_rate)
    } else {
        MetaParams::new(net)
    };
    train_from(ds, theta, cfg, sink)
}

/// Meta-training from given starting parameters.
pub fn train_from(ds: &Dataset, mut theta: MetaParams, cfg: &MetaConfig, sink: &mut dyn MetricSink) -> Result<TrainOutcome, MetaError> {
    let mut rng = stream_rng(cfg.seed, "tasks");
    let mut opt = OuterOptimizerState::new(cfg.outer_optimizer, cfg.outer_rate, &theta.tensors());
    let mut budget = cfg.label_budget.map_or_else(LabelBudget::unlimited, LabelBudget::limited);
    let mut counters = CostCounters::default();
    let per_iteration = cfg.tasks_per_iteration as u64;
    let mut iterations_run = 0;
    let mut stopped_on_budget = false;

    for iter in 0..cfg.total_iterations() {
        if budget.remaining().is_some_and(|r| r < per_iteration) {
            stopped_on_budget = true;
            break;
        }
        let epoch = iter / cfg.iterations_per_epoch;
        let lambda = lambda_schedule(epoch, &cfg.schedule);
        let eta = eta_schedule(epoch, &cfg.schedule);
        let inner = InnerLoop { steps: cfg.inner_steps, rate: cfg.inner_rate, eta, track_higher_order: cfg.second_order };
        let ctx = Iteration { ds, cfg, lambda, inner };

        let result = if iter < cfg.warmup_iterations || cfg.mode == Mode::Nts {
            ctx.run_standard(&mut theta, &mut rng, &mut opt, &mut budget, &mut counters)
        } else if cfg.mode == Mode::St {
            ctx.run_st(&mut theta, &mut rng, &mut opt, &mut budget, &mut counters)
        } else {
            ctx.run_ml(&mut theta, &mut rng, &mut opt, &mut budget, &mut counters)
        };
        let (stats, unc) = result.map_err(|e| MetaError::Training { iteration: iter, source: Box::new(e) })?;
        counters.labeled_query_sets = budget.spent;

        let n = stats.beliefs.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TaskBelief) -> f64| stats.beliefs.iter().map(f).sum::<f64>() / n;
        let row = MetricRow {
            iter,
            epoch,
            mode: cfg.mode,
            lambda,
            eta,
            mean_vb: mean(&|b| b.vb),
            mean_cb: mean(&|b| b.cb),
            mean_ib: mean(&|b| b.ib.unwrap_or(f64::NAN)),
            mean_unc_selected: unc,
            train_loss: stats.loss,
            counters,
        };
        sink.record(&row)?;
        iterations_run += 1;
    }
    Ok(TrainOutcome { params: theta, counters, iterations_run, stopped_on_budget })
}

struct Iteration<'a> {
    ds: &'a Dataset,
    cfg: &'a MetaConfig,
    lambda: f64,
    inner: InnerLoop,
}

type Step = Result<(OuterStats, f64), MetaError>;

impl Iteration<'_> {
    fn sample(&self, rng: &mut crate::seed::StreamRng, count: usize, queries: usize) -> Result<Vec<Task>, MetaError> {
        let sampler = self.cfg.sampler(queries);
        (0..count).map(|_| sample_task(self.ds, &sampler, rng).map_err(MetaError::from)).collect()
    }

    fn adapt(&self, theta: &MetaParams, task: &Task, counters: &mut CostCounters) -> Result<AdaptedTask, MetaError> {
        counters.labeled_support_sets += 1;
        inner_adapt(theta, &task.support, task.n_way(), &self.inner, counters)
    }

    /// Trains on `chosen[i] = (task, query index)`; `unc` is the mean
    /// uncertainty of the chosen query sets.
    fn update(
        &self,
        theta: &mut MetaParams,
        chosen: Vec<(AdaptedTask, &Task, usize)>,
        opt: &mut OuterOptimizerState,
        counters: &mut CostCounters,
    ) -> Result<OuterStats, MetaError> {
        let batch = chosen.into_iter().map(|(a, t, j)| (a, &t.query_sets[j])).collect();
        outer_step(theta, batch, self.inner.eta, opt, counters)
    }

    /// `I` standard tasks, each trained on its only query set.
    fn run_standard(
        &self,
        theta: &mut MetaParams,
        rng: &mut crate::seed::StreamRng,
        opt: &mut OuterOptimizerState,
        budget: &mut LabelBudget,
        counters: &mut CostCounters,
    ) -> Step {
        let mut tasks = self.sample(rng, self.cfg.tasks_per_iteration, 1)?;
        for t in &mut tasks {
            t.reveal_labels(0, budget)?;
        }
        let mut chosen = Vec::with_capacity(tasks.len());
        for t in &tasks {
            chosen.push((self.adapt(theta, t, counters)?, t, 0));
        }
        let stats = self.update(theta, chosen, opt, counters)?;
        let unc = self.mean_unc(&stats)?;
        Ok((stats, unc))
    }

    /// `J` standard tasks adapted and scored; the `I` most uncertain train.
    fn run_st(
        &self,
        theta: &mut MetaParams,
        rng: &mut crate::seed::StreamRng,
        opt: &mut OuterOptimizerState,
        budget: &mut LabelBudget,
        counters: &mut CostCounters,
    ) -> Step {
        let mut tasks = self.sample(rng, self.cfg.candidate_pool, 1)?;
        let mut adapted = Vec::with_capacity(tasks.len());
        let mut scores = Vec::with_capacity(tasks.len());
        for t in &tasks {
            let a = self.adapt(theta, t, counters)?;
            let (_, s) = score_query_sets(&a.values(), t, self.lambda, counters)?[0];
            adapted.push(Some(a));
            scores.push(s);
        }
        let picked = select(&scores, self.cfg.tasks_per_iteration);
        for &i in &picked {
            tasks[i].reveal_labels(0, budget)?;
        }
        let unc = picked.iter().map(|&i| scores[i].unc.unwrap_or(0.0)).sum::<f64>() / picked.len() as f64;
        let chosen = picked
            .iter()
            .map(|&i| (adapted[i].take().expect("selected once"), &tasks[i], 0))
            .collect();
        Ok((self.update(theta, chosen, opt, counters)?, unc))
    }

    /// `I` multi-query tasks; each reveals and trains on its most uncertain
    /// query set.
    fn run_ml(
        &self,
        theta: &mut MetaParams,
        rng: &mut crate::seed::StreamRng,
        opt: &mut OuterOptimizerState,
        budget: &mut LabelBudget,
        counters: &mut CostCounters,
    ) -> Step {
        let mut tasks = self.sample(rng, self.cfg.tasks_per_iteration, self.cfg.queries_per_task())?;
        let mut adapted = Vec::with_capacity(tasks.len());
        let mut picks = Vec::with_capacity(tasks.len());
        let mut unc_sum = 0.0;
        for t in &tasks {
            let a = self.adapt(theta, t, counters)?;
            let scored = score_query_sets(&a.values(), t, self.lambda, counters)?;
            let beliefs: Vec<TaskBelief> = scored.iter().map(|(_, b)| *b).collect();
            let best = select(&beliefs, 1)[0];
            unc_sum += beliefs[best].unc.unwrap_or(0.0);
            picks.push(scored[best].0);
            adapted.push(a);
        }
        for (t, &j) in tasks.iter_mut().zip(&picks) {
            t.reveal_labels(j, budget)?;
        }
        let unc = unc_sum / tasks.len() as f64;
        let chosen = adapted.into_iter().zip(&tasks).zip(&picks).map(|((a, t), &j)| (a, t, j)).collect();
        Ok((self.update(theta, chosen, opt, counters)?, unc))
    }

    fn mean_unc(&self, stats: &OuterStats) -> Result<f64, MetaError> {
        let mut total = 0.0;
        for b in &stats.beliefs {
            total += b.with_uncertainty(self.lambda)?.unc.unwrap_or(0.0);
        }
        Ok(total / stats.beliefs.len().max(1) as f64)
    }
}
