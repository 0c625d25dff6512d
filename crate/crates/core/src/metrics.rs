//! Table-comparison metrics.
//!
//! * [`ex_classic`] compares the *sets* of rows, with column order
//!   significant. It hides duplicate rows and penalizes column permutations.
//! * [`ex_refined`] keeps row multiplicity and ignores column order: both
//!   tables are brought to a normal form (cells sorted inside each row, then
//!   rows sorted) and compared position by position.
//! * [`cell_precision`], [`cell_recall`] and [`tuple_cardinality`] give
//!   partial credit. Precision and recall work on the sets of distinct cell
//!   values; cardinality is the min/max ratio of row counts.
//!
//! Empty inputs never divide by zero: when both sides are empty a metric is
//! 1, when exactly one side is empty it is 0.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::table::{normalize, Cell, ResultTable, Row};

/// Options for the final elementwise comparison of refined EX.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CompareOptions {
    /// Absolute tolerance for numeric cells. Never used for sorting.
    pub tolerance: f64,
}

impl CompareOptions {
    pub fn exact() -> Self {
        CompareOptions { tolerance: 0.0 }
    }

    pub fn with_tolerance(tolerance: f64) -> Self {
        CompareOptions {
            tolerance: tolerance.max(0.0),
        }
    }
}

fn bool_score(b: bool) -> u8 {
    u8::from(b)
}

/// Set-based execution accuracy.
pub fn ex_classic(gold: &ResultTable, pred: &ResultTable) -> u8 {
    let gold_rows: BTreeSet<&Row> = gold.rows.iter().collect();
    let pred_rows: BTreeSet<&Row> = pred.rows.iter().collect();
    bool_score(gold_rows == pred_rows)
}

/// Bag-semantics, column-order-invariant execution accuracy.
pub fn ex_refined(gold: &ResultTable, pred: &ResultTable, opts: CompareOptions) -> u8 {
    if gold.num_rows() != pred.num_rows() {
        return 0;
    }
    let gold = normalize(gold);
    let pred = normalize(pred);
    let equal = gold.rows.iter().zip(&pred.rows).all(|(g, p)| {
        g.arity() == p.arity()
            && g.0
                .iter()
                .zip(&p.0)
                .all(|(a, b)| a.approx_eq(b, opts.tolerance))
    });
    bool_score(equal)
}

fn distinct_cells(table: &ResultTable) -> BTreeSet<&Cell> {
    table.cells().collect()
}

fn ratio(numerator: usize, denominator: usize, other_empty: bool) -> f64 {
    match (denominator, other_empty) {
        (0, true) => 1.0,
        (0, false) => 0.0,
        (d, _) => numerator as f64 / d as f64,
    }
}

/// Fraction of distinct predicted cell values that also occur in the gold
/// table.
pub fn cell_precision(gold: &ResultTable, pred: &ResultTable) -> f64 {
    let g = distinct_cells(gold);
    let p = distinct_cells(pred);
    ratio(p.intersection(&g).count(), p.len(), g.is_empty())
}

/// Fraction of distinct gold cell values that also occur in the prediction.
pub fn cell_recall(gold: &ResultTable, pred: &ResultTable) -> f64 {
    let g = distinct_cells(gold);
    let p = distinct_cells(pred);
    ratio(g.intersection(&p).count(), g.len(), p.is_empty())
}

/// `min(|gold|, |pred|) / max(|gold|, |pred|)` over row counts.
pub fn tuple_cardinality(gold: &ResultTable, pred: &ResultTable) -> f64 {
    let (g, p) = (gold.num_rows(), pred.num_rows());
    ratio(g.min(p), g.max(p), true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub ex_classic: u8,
    pub ex_refined: u8,
    pub cp: f64,
    pub cr: f64,
    pub tc: f64,
    pub qa: f64,
}

impl MetricVector {
    /// All-zero vector used for non-executable predictions.
    pub fn zero() -> Self {
        MetricVector {
            ex_classic: 0,
            ex_refined: 0,
            cp: 0.0,
            cr: 0.0,
            tc: 0.0,
            qa: 0.0,
        }
    }
}

/// Mean of precision, recall and cardinality.
pub fn qatch_score(cp: f64, cr: f64, tc: f64) -> f64 {
    (cp + cr + tc) / 3.0
}

pub fn metric_vector(gold: &ResultTable, pred: &ResultTable, opts: CompareOptions) -> MetricVector {
    let cp = cell_precision(gold, pred);
    let cr = cell_recall(gold, pred);
    let tc = tuple_cardinality(gold, pred);
    MetricVector {
        ex_classic: ex_classic(gold, pred),
        ex_refined: ex_refined(gold, pred, opts),
        cp,
        cr,
        tc,
        qa: qatch_score(cp, cr, tc),
    }
}

/// Why classic and refined EX disagree on an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DisagreementLabel {
    /// Row sets match but multiplicities differ (classic 1, refined 0).
    MultiplicityLoss,
    /// The prediction is a column permutation of the gold table (classic 0,
    /// refined 1).
    ColumnSensitivity,
    /// Refined EX accepts a table that is not a column permutation, e.g. when
    /// intra-row sorting maps different rows onto the same normal form.
    Other,
}

impl DisagreementLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            DisagreementLabel::MultiplicityLoss => "MultiplicityLoss",
            DisagreementLabel::ColumnSensitivity => "ColumnSensitivity",
            DisagreementLabel::Other => "Other",
        }
    }
}

fn sorted_column(table: &ResultTable, col: usize) -> Vec<&Cell> {
    let mut values: Vec<&Cell> = table.rows.iter().map(|r| &r.0[col]).collect();
    values.sort();
    values
}

fn sorted_rows(rows: impl Iterator<Item = Vec<Cell>>) -> Vec<Vec<Cell>> {
    let mut rows: Vec<Vec<Cell>> = rows.collect();
    rows.sort();
    rows
}

/// True iff some single reordering of `pred`'s columns turns its row bag
/// into `gold`'s.
pub fn is_column_permutation(gold: &ResultTable, pred: &ResultTable) -> bool {
    let width = gold.num_columns();
    if width != pred.num_columns() || gold.num_rows() != pred.num_rows() {
        return false;
    }
    let gold_cols: Vec<_> = (0..width).map(|c| sorted_column(gold, c)).collect();
    let pred_cols: Vec<_> = (0..width).map(|c| sorted_column(pred, c)).collect();
    let candidates: Vec<Vec<usize>> = gold_cols
        .iter()
        .map(|g| (0..width).filter(|&p| &pred_cols[p] == g).collect())
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return false;
    }
    let gold_bag = sorted_rows(gold.rows.iter().map(|r| r.0.clone()));

    fn search(
        col: usize,
        assignment: &mut Vec<usize>,
        used: &mut [bool],
        candidates: &[Vec<usize>],
        pred: &ResultTable,
        gold_bag: &[Vec<Cell>],
    ) -> bool {
        if col == candidates.len() {
            let permuted = sorted_rows(
                pred.rows
                    .iter()
                    .map(|r| assignment.iter().map(|&p| r.0[p].clone()).collect()),
            );
            return permuted == gold_bag;
        }
        for &p in &candidates[col] {
            if used[p] {
                continue;
            }
            used[p] = true;
            assignment.push(p);
            if search(col + 1, assignment, used, candidates, pred, gold_bag) {
                return true;
            }
            assignment.pop();
            used[p] = false;
        }
        false
    }

    search(0, &mut Vec::with_capacity(width), &mut vec![false; width], &candidates, pred, &gold_bag)
}

/// Labels an item where classic and refined EX disagree; `None` when they
/// agree.
pub fn classify_disagreement(
    gold: &ResultTable,
    pred: &ResultTable,
    opts: CompareOptions,
) -> Option<DisagreementLabel> {
    let classic = ex_classic(gold, pred);
    let refined = ex_refined(gold, pred, opts);
    match (classic, refined) {
        (1, 0) => Some(DisagreementLabel::MultiplicityLoss),
        (0, 1) if is_column_permutation(gold, pred) => Some(DisagreementLabel::ColumnSensitivity),
        (0, 1) => Some(DisagreementLabel::Other),
        _ => None,
    }
}
