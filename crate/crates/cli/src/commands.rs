use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;
use units_ml::belief::{dissonance, sample_belief_vector, verify_bound, verify_bound_with};
use units_ml::meta::{evaluate, format_sig, train as run_training, CsvMetricSink, EvalReport, MetaParams};
use units_ml::model::{load_checkpoint, save_checkpoint};
use units_ml::seed::stream_rng;

use crate::config::{load_value, RunConfig};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

fn resolve(config: &Path, overrides: &[String], out: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut value = load_value(config, overrides)?;
    let root = value
        .as_object_mut()
        .ok_or_else(|| CliError::config("config: top level must be a JSON object"))?;
    if let Some(seed) = seed {
        root.insert("seed".into(), Value::from(seed));
    }
    if let Some(out) = out {
        root.insert("output_dir".into(), Value::String(out.to_string_lossy().into_owned()));
    }
    RunConfig::from_value(&value)
}

pub fn train(config: &Path, out: Option<PathBuf>, overrides: &[String], seed: Option<u64>) -> Result<u8, CliError> {
    let cfg = resolve(config, overrides, out, seed)?;
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| CliError::config("output_dir: required (set it in the config or pass --out)"))?;
    let ds = cfg.training_data()?;
    let arch = cfg.architecture(ds.dim());
    arch.validate().map_err(|e| CliError::config(format!("arch: {e}")))?;

    fs::create_dir_all(&dir)?;
    let resolved = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(dir.join(RESOLVED_CONFIG_FILE), resolved + "\n")?;

    let file = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    let mut sink = CsvMetricSink::new(file)?;
    let outcome = run_training(&ds, &arch, &cfg.meta, &mut sink)?;
    sink.into_inner().flush()?;
    save_checkpoint(&dir, &arch, &outcome.params.named_tensors())?;

    let c = outcome.counters;
    println!("iterations: {}", outcome.iterations_run);
    if outcome.stopped_on_budget {
        println!("stopped: label budget exhausted");
    }
    println!("labeled query sets: {}", c.labeled_query_sets);
    println!("labeled support sets: {}", c.labeled_support_sets);
    println!("forward passes: {} (selection {})", c.forward_passes, c.selection_forwards);
    println!("backward passes: {}", c.backward_passes);
    println!("output: {}", dir.display());
    Ok(0)
}

pub fn eval(
    checkpoint: &Path,
    config: &Path,
    out: Option<PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<u8, CliError> {
    let cfg = resolve(config, overrides, None, seed)?;
    let ckpt = load_checkpoint(checkpoint).map_err(|e| CliError::config(format!("checkpoint: {e}")))?;
    let ds = cfg.eval_data()?;
    let arch = cfg.architecture(ds.dim());
    if ckpt.architecture != arch {
        return Err(CliError::config(format!(
            "checkpoint architecture {:?} does not match the configured {:?}",
            ckpt.architecture, arch
        )));
    }
    let theta = MetaParams::from_named(&arch, &ckpt.entries).map_err(|e| CliError::config(format!("checkpoint: {e}")))?;
    let report = evaluate(&theta, &ds, &cfg.eval_settings())?;

    let dir = out.or(cfg.output_dir.clone()).unwrap_or_else(|| checkpoint.to_path_buf());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("eval.csv"), eval_csv(&report))?;
    if !report.ood.is_empty() {
        fs::write(dir.join("ood.csv"), ood_csv(&report))?;
    }
    println!("accuracy: {} +/- {}", format_sig(report.accuracy), format_sig(report.stderr));
    println!("mean vacuity: {}", format_sig(report.mean_vacuity));
    println!(
        "vb/cb/ib: {} {} {}",
        format_sig(report.mean_vb),
        format_sig(report.mean_cb),
        format_sig(report.mean_ib)
    );
    Ok(0)
}

fn opt_sig(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), format_sig)
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut s = String::from("threshold,coverage,accuracy\n");
    for row in &report.thresholds {
        s += &format!("{},{},{}\n", format_sig(row.threshold), format_sig(row.coverage), opt_sig(row.accuracy));
    }
    s += &format!("overall,1,{}\n", format_sig(report.accuracy));
    s
}

pub fn ood_csv(report: &EvalReport) -> String {
    let mut s = String::from("kind,magnitude,clean_vacuity,ood_vacuity\n");
    for row in &report.ood {
        s += &format!(
            "{},{},{},{}\n",
            row.kind,
            format_sig(row.magnitude),
            format_sig(row.clean_vacuity),
            format_sig(row.ood_vacuity)
        );
    }
    s
}

pub fn verify_theorem(samples: u64, seed: u64, corrupt: bool) -> Result<u8, CliError> {
    if samples == 0 {
        return Err(CliError::config("samples: must be at least 1"));
    }
    let check = |b: &[f64]| {
        if corrupt {
            verify_bound_with(b, true, |b| 2.0 * dissonance(b))
        } else {
            verify_bound(b, true)
        }
    };
    let mut rng = stream_rng(seed, "theorem");
    let mut violations = 0u64;
    let mut min_slack = f64::INFINITY;
    for _ in 0..samples {
        let b = sample_belief_vector(&mut rng);
        let c = check(&b);
        violations += u64::from(!c.holds);
        min_slack = min_slack.min(c.min_slack);
    }
    let fixture = check(&[0.4, 0.4]);
    violations += u64::from(!fixture.holds);

    println!("samples: {samples}");
    println!("violations: {violations}");
    println!("min slack: {min_slack:.12e}");
    println!("fixture (0.4, 0.4) slack: {:.12e}", fixture.min_slack);
    println!("tight: {}", if min_slack.min(fixture.min_slack) <= 1e-9 { "yes" } else { "no" });
    Ok(if violations == 0 { 0 } else { 1 })
}

struct RunMetrics {
    name: String,
    columns: Vec<String>,
    rows: BTreeMap<u64, Vec<String>>,
}

fn read_metrics(dir: &Path) -> Result<RunMetrics, CliError> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|_| CliError::config(format!("{}: no readable {METRICS_FILE}", dir.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.first() != Some(&"iter") {
        return Err(CliError::config(format!("{}: header must start with `iter`", path.display())));
    }
    let mut rows = BTreeMap::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let iter = fields[0].parse::<u64>().ok().filter(|_| fields.len() == header.len()).ok_or_else(|| {
            CliError::config(format!("{}: malformed row {}", path.display(), n + 2))
        })?;
        rows.insert(iter, fields[1..].iter().map(|s| s.to_string()).collect());
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunMetrics { name, columns: header[1..].iter().map(|s| s.to_string()).collect(), rows })
}

/// Outer join on `iter`; every other column appears once per run as
/// `<run>:<column>`, `NA` where a run has no row.
pub fn report(runs: &[PathBuf], out: &Path) -> Result<u8, CliError> {
    let mut metrics = runs.iter().map(|d| read_metrics(d)).collect::<Result<Vec<_>, _>>()?;
    let mut seen = HashSet::new();
    for (i, m) in metrics.iter_mut().enumerate() {
        if !seen.insert(m.name.clone()) {
            m.name = format!("{}#{i}", m.name);
            seen.insert(m.name.clone());
        }
    }
    let iters: std::collections::BTreeSet<u64> = metrics.iter().flat_map(|m| m.rows.keys().copied()).collect();

    let mut s = String::from("iter");
    for m in &metrics {
        for c in &m.columns {
            s += &format!(",{}:{c}", m.name);
        }
    }
    s.push('\n');
    for it in iters {
        s += &it.to_string();
        for m in &metrics {
            match m.rows.get(&it) {
                Some(vals) => vals.iter().for_each(|v| {
                    s.push(',');
                    s.push_str(v);
                }),
                None => m.columns.iter().for_each(|_| s.push_str(",NA")),
            }
        }
        s.push('\n');
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), s)?;
    println!("runs: {}", metrics.len());
    println!("output: {}", out.join("report.csv").display());
    Ok(0)
}
