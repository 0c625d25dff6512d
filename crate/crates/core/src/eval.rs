//! Batch evaluation over benchmark files.
//!
//! [`evaluate`] scores every item of one or more datasets and aggregates
//! the results into an [`EvalReport`]. Percentages in the report are kept
//! unrounded so the weighted average can be recomputed from the
//! per-dataset fields; [`EvalReport::render_table`] rounds for display.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BenchmarkItem, DatasetManifest, PredictionFile};
use crate::executor::{execute_cached, DatabaseHandle, ErrorClass, ExecCache, ExecStatus};
use crate::metrics::{classify_disagreement, ex_classic, ex_refined, DisagreementLabel, MetricVector};
use crate::rewards::{format_reward, score_completion, CompositeKind, RewardBreakdown, ScoreError, ScoreOptions};

/// Size-weighted mean of `(size, score)` pairs. `None` when the total size
/// is zero.
pub fn weighted_average(entries: &[(usize, f64)]) -> Option<f64> {
    let total: usize = entries.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return None;
    }
    let sum: f64 = entries.iter().map(|(n, s)| *n as f64 * s).sum();
    Some(sum / total as f64)
}

/// Rounds a non-negative score half-up to one decimal.
///
/// The nudge absorbs representation error such as `68.65` being stored as
/// `68.6499999...`.
pub fn round_half_up_1dp(value: f64) -> f64 {
    ((value * 10.0) + 0.5 + 1e-9).floor() / 10.0
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub kind: CompositeKind,
    pub score: ScoreOptions,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            kind: CompositeKind::Gate,
            score: ScoreOptions::default(),
            workers: 0,
        }
    }
}

/// One dataset together with its predictions.
#[derive(Debug, Clone)]
pub struct EvalInput {
    pub manifest: DatasetManifest,
    pub predictions: PredictionFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub db_id: String,
    pub executable: bool,
    pub ex_refined: u8,
    pub ex_classic: u8,
    pub cp: f64,
    pub cr: f64,
    pub tc: f64,
    pub qa: f64,
    pub fr: u8,
    pub composite: f64,
    pub error_class: Option<ErrorClass>,
}

impl ItemResult {
    fn from_breakdown(item: &BenchmarkItem, b: &RewardBreakdown) -> Self {
        ItemResult {
            item_id: item.item_id.clone(),
            db_id: item.db_id.clone(),
            executable: b.executable,
            ex_refined: b.r_ex,
            ex_classic: b.r_ex_classic,
            cp: b.r_cp,
            cr: b.r_cr,
            tc: b.r_tc,
            qa: b.r_qa,
            fr: b.r_fr,
            composite: b.composite,
            error_class: b.error_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldFailure {
    pub item_id: String,
    pub db_id: String,
    pub error: String,
}

/// Aggregates for one dataset. Means are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub size: usize,
    pub mean_ex_refined: f64,
    pub mean_ex_classic: f64,
    pub mean_cp: f64,
    pub mean_cr: f64,
    pub mean_tc: f64,
    pub mean_qa: f64,
    pub mean_fr: f64,
    pub mean_composite: f64,
    pub error_classes: BTreeMap<String, usize>,
    pub missing_predictions: Vec<String>,
    pub gold_failures: Vec<GoldFailure>,
    pub items: Vec<ItemResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub kind: CompositeKind,
    pub tolerance: f64,
    pub timeout_ms: u64,
    pub row_limit: usize,
    pub note: String,
    /// Seconds since the Unix epoch. The only field that varies between
    /// runs over the same inputs.
    pub generated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub datasets: Vec<DatasetReport>,
    /// Refined EX averaged over datasets with weights proportional to size.
    pub weighted_avg_ex_refined: f64,
    pub metadata: RunMetadata,
}

fn percent_mean(items: &[ItemResult], f: impl Fn(&ItemResult) -> f64) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    100.0 * items.iter().map(f).sum::<f64>() / items.len() as f64
}

fn build_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("sqlreward-eval-{i}"))
        .build()
        .expect("thread pool")
}

enum Scored {
    Done(ItemResult),
    Missing(ItemResult),
    GoldFailed(ItemResult, GoldFailure),
}

fn score_item(
    item: &BenchmarkItem,
    predictions: &PredictionFile,
    db_root: &Path,
    opts: &EvalOptions,
    cache: Option<&ExecCache>,
) -> Scored {
    let db = DatabaseHandle::resolve(db_root, &item.db_id);
    let Some(raw) = predictions.get(&item.item_id) else {
        let b = RewardBreakdown::non_executable(opts.kind, 0, ErrorClass::Missing, None);
        return Scored::Missing(ItemResult::from_breakdown(item, &b));
    };
    match score_completion(&item.gold_sql, raw, &db, opts.kind, cache, opts.score) {
        Ok(b) => Scored::Done(ItemResult::from_breakdown(item, &b)),
        Err(ScoreError::GoldExecution { db_id, status }) => {
            let b = RewardBreakdown::non_executable(
                opts.kind,
                format_reward(raw),
                ErrorClass::GoldExecutionError,
                None,
            );
            let failure = GoldFailure {
                item_id: item.item_id.clone(),
                db_id,
                error: status.to_string(),
            };
            Scored::GoldFailed(ItemResult::from_breakdown(item, &b), failure)
        }
    }
}

fn dataset_report(
    input: &EvalInput,
    db_root: &Path,
    opts: &EvalOptions,
    cache: Option<&ExecCache>,
) -> DatasetReport {
    let scored: Vec<Scored> = input
        .manifest
        .items
        .par_iter()
        .map(|item| score_item(item, &input.predictions, db_root, opts, cache))
        .collect();

    let mut items = Vec::with_capacity(scored.len());
    let mut missing_predictions = Vec::new();
    let mut gold_failures = Vec::new();
    for s in scored {
        match s {
            Scored::Done(r) => items.push(r),
            Scored::Missing(r) => {
                missing_predictions.push(r.item_id.clone());
                items.push(r);
            }
            Scored::GoldFailed(r, f) => {
                gold_failures.push(f);
                items.push(r);
            }
        }
    }
    let mut error_classes = BTreeMap::new();
    for class in items.iter().filter_map(|r| r.error_class) {
        *error_classes.entry(class.as_str().to_owned()).or_insert(0) += 1;
    }

    DatasetReport {
        name: input.manifest.name.clone(),
        size: items.len(),
        mean_ex_refined: percent_mean(&items, |r| f64::from(r.ex_refined)),
        mean_ex_classic: percent_mean(&items, |r| f64::from(r.ex_classic)),
        mean_cp: percent_mean(&items, |r| r.cp),
        mean_cr: percent_mean(&items, |r| r.cr),
        mean_tc: percent_mean(&items, |r| r.tc),
        mean_qa: percent_mean(&items, |r| r.qa),
        mean_fr: percent_mean(&items, |r| f64::from(r.fr)),
        mean_composite: percent_mean(&items, |r| r.composite),
        error_classes,
        missing_predictions,
        gold_failures,
        items,
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Scores every item of every input. Items run concurrently; aggregation is
/// sequential and in item order, so reports are reproducible.
pub fn evaluate(inputs: &[EvalInput], db_root: &Path, opts: &EvalOptions, cache: Option<&ExecCache>) -> EvalReport {
    let pool = build_pool(opts.workers);
    let datasets: Vec<DatasetReport> = pool.install(|| {
        inputs
            .iter()
            .map(|input| dataset_report(input, db_root, opts, cache))
            .collect()
    });
    let weighted = weighted_average(
        &datasets
            .iter()
            .map(|d| (d.size, d.mean_ex_refined))
            .collect::<Vec<_>>(),
    )
    .unwrap_or(0.0);
    EvalReport {
        datasets,
        weighted_avg_ex_refined: weighted,
        metadata: RunMetadata {
            kind: opts.kind,
            tolerance: opts.score.compare.tolerance,
            timeout_ms: opts.score.limits.timeout.as_millis() as u64,
            row_limit: opts.score.limits.row_limit,
            note: "results are deterministic for immutable databases; only generated_at varies".into(),
            generated_at: now_unix(),
        },
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", round_half_up_1dp(v))
}

fn render_rows(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "  {cell:>w$}");
            }
        }
        out.trim_end().to_owned()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

impl EvalReport {
    /// Aligned console table with percentages rounded to one decimal.
    pub fn render_table(&self) -> String {
        let header = ["dataset", "size", "EX", "EX(classic)", "CP", "CR", "TC", "QA", "FR", "reward"];
        let mut rows: Vec<Vec<String>> = self
            .datasets
            .iter()
            .map(|d| {
                vec![
                    d.name.clone(),
                    d.size.to_string(),
                    pct(d.mean_ex_refined),
                    pct(d.mean_ex_classic),
                    pct(d.mean_cp),
                    pct(d.mean_cr),
                    pct(d.mean_tc),
                    pct(d.mean_qa),
                    pct(d.mean_fr),
                    pct(d.mean_composite),
                ]
            })
            .collect();
        let total: usize = self.datasets.iter().map(|d| d.size).sum();
        rows.push(vec![
            "weighted avg".into(),
            total.to_string(),
            pct(self.weighted_avg_ex_refined),
        ]);
        let mut out = render_rows(&header, &rows);
        for d in &self.datasets {
            if !d.error_classes.is_empty() {
                let classes: Vec<String> = d.error_classes.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let _ = writeln!(out, "{}: errors {}", d.name, classes.join(", "));
            }
            if !d.missing_predictions.is_empty() {
                let _ = writeln!(
                    out,
                    "{}: {} items without predictions: {}",
                    d.name,
                    d.missing_predictions.len(),
                    d.missing_predictions.join(", ")
                );
            }
            for f in &d.gold_failures {
                let _ = writeln!(out, "{}: gold query of item {} failed on {}: {}", d.name, f.item_id, f.db_id, f.error);
            }
        }
        out
    }

    /// JSON with the run metadata removed; identical across runs over the
    /// same inputs.
    pub fn deterministic_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("metadata");
        }
        serde_json::to_string_pretty(&value).expect("report serializes")
    }
}

/// An item where classic and refined EX disagree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub item_id: String,
    pub db_id: String,
    pub ex_classic: u8,
    pub ex_refined: u8,
    pub label: DisagreementLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub dataset: String,
    pub compared: usize,
    pub skipped: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub items: Vec<Disagreement>,
}

impl DiscrepancyReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{}: {} items compared, {} disagreements\n",
            self.dataset,
            self.compared,
            self.items.len()
        );
        for (label, n) in &self.counts {
            let _ = writeln!(out, "  {label}: {n}");
        }
        if !self.items.is_empty() {
            let rows: Vec<Vec<String>> = self
                .items
                .iter()
                .map(|d| {
                    vec![
                        d.item_id.clone(),
                        d.db_id.clone(),
                        d.ex_classic.to_string(),
                        d.ex_refined.to_string(),
                        d.label.as_str().to_owned(),
                    ]
                })
                .collect();
            out.push_str(&render_rows(&["item", "db", "classic", "refined", "label"], &rows));
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "skipped (missing prediction or failed execution): {}", self.skipped.join(", "));
        }
        out
    }
}

fn compare_item(
    item: &BenchmarkItem,
    predictions: &PredictionFile,
    db_root: &Path,
    opts: &EvalOptions,
    cache: Option<&ExecCache>,
) -> Option<Option<Disagreement>> {
    let raw = predictions.get(&item.item_id)?;
    let sql = crate::rewards::extract_sql(raw)?;
    let db = DatabaseHandle::resolve(db_root, &item.db_id);
    let limits = opts.score.limits;
    let ExecStatus::Ok(gold) = execute_cached(cache, &db, &item.gold_sql, limits).status else {
        return None;
    };
    let ExecStatus::Ok(pred) = execute_cached(cache, &db, &sql, limits).status else {
        return None;
    };
    let compare = opts.score.compare;
    Some(classify_disagreement(&gold, &pred, compare).map(|label| Disagreement {
        item_id: item.item_id.clone(),
        db_id: item.db_id.clone(),
        ex_classic: ex_classic(&gold, &pred),
        ex_refined: ex_refined(&gold, &pred, compare),
        label,
    }))
}

/// Lists the items where classic and refined EX disagree, with the cause.
/// Items whose prediction is missing or does not execute are skipped.
pub fn compare_metrics(
    input: &EvalInput,
    db_root: &Path,
    opts: &EvalOptions,
    cache: Option<&ExecCache>,
) -> DiscrepancyReport {
    let pool = build_pool(opts.workers);
    let results: Vec<Option<Option<Disagreement>>> = pool.install(|| {
        input
            .manifest
            .items
            .par_iter()
            .map(|item| compare_item(item, &input.predictions, db_root, opts, cache))
            .collect()
    });
    let mut skipped = Vec::new();
    let mut items = Vec::new();
    let mut compared = 0;
    for (item, r) in input.manifest.items.iter().zip(results) {
        match r {
            None => skipped.push(item.item_id.clone()),
            Some(d) => {
                compared += 1;
                items.extend(d);
            }
        }
    }
    let mut counts = BTreeMap::new();
    for d in &items {
        *counts.entry(d.label.as_str().to_owned()).or_insert(0) += 1;
    }
    DiscrepancyReport {
        dataset: input.manifest.name.clone(),
        compared,
        skipped,
        counts,
        items,
    }
}

/// Where a report was written, for callers that print a summary.
#[derive(Debug, Clone)]
pub struct WrittenReport {
    pub path: PathBuf,
    pub bytes: usize,
}

pub fn write_report<T: Serialize>(value: &T, path: &Path) -> std::io::Result<WrittenReport> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)? + "\n";
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, &text)?;
    Ok(WrittenReport {
        path: path.to_owned(),
        bytes: text.len(),
    })
}

/// Metric vector of an item result, for callers that re-derive aggregates.
pub fn item_metrics(r: &ItemResult) -> MetricVector {
    MetricVector {
        ex_classic: r.ex_classic,
        ex_refined: r.ex_refined,
        cp: r.cp,
        cr: r.cr,
        tc: r.tc,
        qa: r.qa,
    }
}
