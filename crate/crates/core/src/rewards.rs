//! Reward signals for a single model completion.
//!
//! A completion is expected to look like
//!
//! ```text
//! <reasoning> ... </reasoning>
//! <answer> ... ```sql SELECT ... ``` </answer>
//! ```
//!
//! [`score_completion`] extracts the SQL, executes it next to the gold
//! query and folds the resulting [`MetricVector`] into one of the composite
//! rewards described by [`CompositeKind`].

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::executor::{execute_cached, DatabaseHandle, ErrorClass, ExecCache, ExecLimits, ExecStatus};
use crate::metrics::{metric_vector, CompareOptions, MetricVector};

/// Weight of the task metric in the weighted composites.
pub const TASK_WEIGHT: f64 = 0.95;
/// Weight of the format reward in the weighted composites.
pub const FORMAT_WEIGHT: f64 = 0.05;
/// Quality threshold and floor value of the gated reward.
pub const GATE_FLOOR: f64 = 0.1;

const TAGS: [&str; 4] = ["<reasoning>", "</reasoning>", "<answer>", "</answer>"];

static FORMAT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)\A\s*<reasoning>(.*?)</reasoning>\s*<answer>(.*?)</answer>\s*\z").unwrap()
});
static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<answer>(.*?)</answer>").unwrap());
static SQL_FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)```sql[ \t]*(.*?)```").unwrap());

/// 1 iff the text is exactly one reasoning block followed by one answer
/// block, with only whitespace around and between them.
pub fn format_reward(raw: &str) -> u8 {
    let Some(caps) = FORMAT.captures(raw) else {
        return 0;
    };
    let clean = |m: Option<regex::Match<'_>>| {
        let body = m.map_or("", |m| m.as_str());
        !TAGS.iter().any(|tag| body.contains(tag))
    };
    u8::from(clean(caps.get(1)) && clean(caps.get(2)))
}

/// A completion split into its parts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub raw: String,
    pub reasoning: Option<String>,
    pub answer: Option<String>,
    pub sql: Option<String>,
}

impl Completion {
    pub fn parse(raw: &str) -> Self {
        let reasoning = raw
            .find("<reasoning>")
            .and_then(|start| {
                let body = &raw[start + "<reasoning>".len()..];
                body.find("</reasoning>").map(|end| body[..end].trim().to_owned())
            });
        let answer = answer_span(raw).map(|a| a.trim().to_owned());
        let sql = answer.as_deref().and_then(sql_from_answer);
        Completion {
            raw: raw.to_owned(),
            reasoning,
            answer,
            sql,
        }
    }
}

/// Content of the last complete `<answer>...</answer>` block.
fn answer_span(raw: &str) -> Option<&str> {
    ANSWER
        .captures_iter(raw)
        .last()
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
}

fn sql_from_answer(answer: &str) -> Option<String> {
    let sql = match SQL_FENCE.captures_iter(answer).last() {
        Some(caps) => caps.get(1).map_or("", |m| m.as_str()),
        None => answer,
    };
    let sql = sql.trim();
    (!sql.is_empty()).then(|| sql.to_owned())
}

/// SQL inside the answer block: the last fenced `sql` block if there is one,
/// the whole trimmed answer otherwise.
pub fn extract_sql(raw: &str) -> Option<String> {
    answer_span(raw).and_then(sql_from_answer)
}

/// `0.95 * task + 0.05 * format`.
pub fn composite_weighted(r_task: f64, r_fr: u8) -> f64 {
    TASK_WEIGHT * r_task + FORMAT_WEIGHT * f64::from(r_fr)
}

/// Arbitrary weighted sum of `(weight, value)` terms, for experiments with
/// other mixes.
pub fn weighted_sum(terms: &[(f64, f64)]) -> f64 {
    terms.iter().map(|(w, v)| w * v).sum()
}

/// Gated reward: zero for non-executable SQL, a 0.1 floor for executable
/// but weak output that is well formatted, otherwise the QATCH score.
pub fn gated_reward(executable: bool, r_qa: f64, r_fr: u8) -> f64 {
    if !executable {
        0.0
    } else if r_qa > GATE_FLOOR {
        r_qa
    } else if r_fr == 1 {
        GATE_FLOOR
    } else {
        // Not covered by the floor rule: no floor without the format.
        r_qa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeKind {
    Ex,
    Qa,
    Exfm,
    Qafm,
    #[default]
    Gate,
}

impl CompositeKind {
    pub const ALL: [CompositeKind; 5] = [
        CompositeKind::Ex,
        CompositeKind::Qa,
        CompositeKind::Exfm,
        CompositeKind::Qafm,
        CompositeKind::Gate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CompositeKind::Ex => "ex",
            CompositeKind::Qa => "qa",
            CompositeKind::Exfm => "exfm",
            CompositeKind::Qafm => "qafm",
            CompositeKind::Gate => "gate",
        }
    }

    /// Folds atomic components into this composite.
    pub fn combine(&self, executable: bool, r_ex: u8, r_qa: f64, r_fr: u8) -> f64 {
        match self {
            CompositeKind::Ex => f64::from(r_ex),
            CompositeKind::Qa => r_qa,
            CompositeKind::Exfm => composite_weighted(f64::from(r_ex), r_fr),
            CompositeKind::Qafm => composite_weighted(r_qa, r_fr),
            CompositeKind::Gate => gated_reward(executable, r_qa, r_fr),
        }
    }
}

impl fmt::Display for CompositeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown reward kind `{0}` (expected ex, qa, exfm, qafm or gate)")]
pub struct UnknownKind(pub String);

impl FromStr for CompositeKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CompositeKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownKind(s.to_owned()))
    }
}

/// Every atomic component plus the requested composite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub executable: bool,
    pub r_ex: u8,
    /// Classic set-based EX, kept for reporting only.
    pub r_ex_classic: u8,
    pub r_cp: f64,
    pub r_cr: f64,
    pub r_tc: f64,
    pub r_qa: f64,
    pub r_fr: u8,
    pub composite: f64,
    pub composite_kind: CompositeKind,
    pub error_class: Option<ErrorClass>,
    /// The SQL that was executed, if any was extracted.
    pub sql: Option<String>,
}

impl RewardBreakdown {
    /// Breakdown for a prediction that produced no table.
    pub fn non_executable(kind: CompositeKind, r_fr: u8, error: ErrorClass, sql: Option<String>) -> Self {
        RewardBreakdown::from_parts(kind, false, MetricVector::zero(), r_fr, Some(error), sql)
    }

    pub fn from_parts(
        kind: CompositeKind,
        executable: bool,
        metrics: MetricVector,
        r_fr: u8,
        error_class: Option<ErrorClass>,
        sql: Option<String>,
    ) -> Self {
        let metrics = if executable { metrics } else { MetricVector::zero() };
        RewardBreakdown {
            executable,
            r_ex: metrics.ex_refined,
            r_ex_classic: metrics.ex_classic,
            r_cp: metrics.cp,
            r_cr: metrics.cr,
            r_tc: metrics.tc,
            r_qa: metrics.qa,
            r_fr,
            composite: kind.combine(executable, metrics.ex_refined, metrics.qa, r_fr),
            composite_kind: kind,
            error_class,
            sql,
        }
    }

    pub fn metrics(&self) -> MetricVector {
        MetricVector {
            ex_classic: self.r_ex_classic,
            ex_refined: self.r_ex,
            cp: self.r_cp,
            cr: self.r_cr,
            tc: self.r_tc,
            qa: self.r_qa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("gold query failed on `{db_id}`: {status}")]
    GoldExecution { db_id: String, status: ExecStatus },
}

/// Execution and comparison settings shared by a scoring run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreOptions {
    pub limits: ExecLimits,
    pub compare: CompareOptions,
}

/// Scores one completion against the gold query on `db`.
///
/// A missing database yields a `DbMissing` breakdown. A gold query that does
/// not execute is a dataset error and is returned as `Err`.
pub fn score_completion(
    gold_sql: &str,
    raw: &str,
    db: &DatabaseHandle,
    kind: CompositeKind,
    cache: Option<&ExecCache>,
    opts: ScoreOptions,
) -> Result<RewardBreakdown, ScoreError> {
    let r_fr = format_reward(raw);
    let sql = extract_sql(raw);
    if !db.exists() {
        return Ok(RewardBreakdown::non_executable(kind, r_fr, ErrorClass::DbMissing, sql));
    }

    let gold = execute_cached(cache, db, gold_sql, opts.limits);
    let gold_table = match gold.status {
        ExecStatus::Ok(t) => t,
        status => {
            return Err(ScoreError::GoldExecution {
                db_id: db.db_id.clone(),
                status,
            })
        }
    };

    let Some(pred_sql) = sql else {
        return Ok(RewardBreakdown::non_executable(kind, r_fr, ErrorClass::NoSql, None));
    };
    let pred = execute_cached(cache, db, &pred_sql, opts.limits);
    Ok(match pred.status {
        ExecStatus::Ok(pred_table) => {
            let metrics = metric_vector(&gold_table, &pred_table, opts.compare);
            RewardBreakdown::from_parts(kind, true, metrics, r_fr, None, Some(pred_sql))
        }
        status => {
            let class = status.error_class().expect("non-Ok status has a class");
            RewardBreakdown::non_executable(kind, r_fr, class, Some(pred_sql))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn format_examples() {
        assert_eq!(format_reward("<reasoning>x</reasoning><answer>y</answer>"), 1);
        assert_eq!(format_reward("<reasoning>x</reasoning><answer>y"), 0);
        assert_eq!(format_reward("<answer>y</answer><reasoning>x</reasoning>"), 0);
        assert_eq!(
            format_reward("\n<reasoning>\n  a\n</reasoning>\n\n<answer>\n  SELECT 1\n</answer>\n"),
            1
        );
    }

    #[test]
    fn format_rejects_extra_text_and_repeated_tags() {
        assert_eq!(format_reward("Sure! <reasoning>x</reasoning><answer>y</answer>"), 0);
        assert_eq!(format_reward("<reasoning>x</reasoning><answer>y</answer> done"), 0);
        assert_eq!(
            format_reward("<reasoning>x</reasoning><answer>y</answer><answer>z</answer>"),
            0
        );
        assert_eq!(
            format_reward("<reasoning>x<reasoning>x</reasoning></reasoning><answer>y</answer>"),
            0
        );
        assert_eq!(format_reward("<reasoning>x</reasoning><answer><answer>y</answer>"), 0);
        assert_eq!(format_reward("<answer>y</answer>"), 0);
        assert_eq!(format_reward(""), 0);
    }

    #[test]
    fn sql_extraction() {
        assert_eq!(extract_sql("<answer>```sql\nSELECT 1\n```</answer>").as_deref(), Some("SELECT 1"));
        assert_eq!(
            extract_sql("<answer>Steps… ```sql\nSELECT a FROM t\n```</answer>").as_deref(),
            Some("SELECT a FROM t")
        );
        assert_eq!(extract_sql("no tags at all"), None);
        assert_eq!(extract_sql("<answer>  SELECT 2 </answer>").as_deref(), Some("SELECT 2"));
        assert_eq!(
            extract_sql("<answer>```sql\nSELECT 1\n``` then ```SQL\nSELECT 2\n```</answer>").as_deref(),
            Some("SELECT 2")
        );
        assert_eq!(extract_sql("<answer>   </answer>"), None);
        assert_eq!(extract_sql("```sql\nSELECT 1\n```"), None);
    }

    #[test]
    fn completion_parts() {
        let c = Completion::parse("<reasoning> think </reasoning><answer>```sql\nSELECT 1\n```</answer>");
        assert_eq!(c.reasoning.as_deref(), Some("think"));
        assert_eq!(c.sql.as_deref(), Some("SELECT 1"));
        assert!(c.answer.is_some());
        assert_eq!(Completion::parse("plain").sql, None);
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(composite_weighted(1.0, 1), 1.0);
        assert!((composite_weighted(0.5, 1) - 0.525).abs() < 1e-12);
        assert_eq!(composite_weighted(0.0, 0), 0.0);
        assert!((weighted_sum(&[(0.95, 0.5), (0.05, 1.0)]) - 0.525).abs() < 1e-12);
    }

    #[test]
    fn gate_branches() {
        assert_eq!(gated_reward(false, 0.9, 1), 0.0);
        assert_eq!(gated_reward(true, 0.0, 1), 0.1);
        assert_eq!(gated_reward(true, 0.7, 0), 0.7);
        assert_eq!(gated_reward(true, 0.05, 0), 0.05);
        assert_eq!(gated_reward(true, 0.1, 1), 0.1);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("GATE".parse::<CompositeKind>().unwrap(), CompositeKind::Gate);
        assert_eq!("qafm".parse::<CompositeKind>().unwrap(), CompositeKind::Qafm);
        assert!("bleu".parse::<CompositeKind>().is_err());
    }

    #[test]
    fn non_executable_breakdowns() {
        for fr in [0u8, 1] {
            let gate = RewardBreakdown::non_executable(CompositeKind::Gate, fr, ErrorClass::SyntaxError, None);
            assert_eq!(gate.composite, 0.0);
            let qafm = RewardBreakdown::non_executable(CompositeKind::Qafm, fr, ErrorClass::Timeout, None);
            assert_eq!(qafm.composite, 0.05 * f64::from(fr));
            assert_eq!((qafm.r_ex, qafm.r_qa), (0, 0.0));
        }
    }

    proptest! {
        #[test]
        fn composite_properties(qa in 0.0f64..=1.0, ex in 0u8..=1, fr in 0u8..=1, exe in any::<bool>()) {
            let gate = gated_reward(exe, qa, fr);
            prop_assert!((0.0..=1.0).contains(&gate));
            if exe && fr == 1 {
                prop_assert!(gate >= GATE_FLOOR);
            }
            for kind in CompositeKind::ALL {
                let v = kind.combine(exe, ex, qa, fr);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn weighted_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(composite_weighted(lo, 0) <= composite_weighted(hi, 0));
            prop_assert!(composite_weighted(lo, 0) <= composite_weighted(lo, 1));
        }

        #[test]
        fn format_ignores_surrounding_whitespace(
            pre in "[ \t\n]{0,4}",
            post in "[ \t\n]{0,4}",
            body in "[a-z ]{0,8}",
        ) {
            let core = format!("<reasoning>{body}</reasoning>\n<answer>{body}</answer>");
            let padded = format!("{pre}{core}{post}");
            prop_assert_eq!(format_reward(&core), format_reward(&padded));
        }
    }
}
