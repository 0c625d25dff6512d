//! Brute-force reference for the desk benchmark.
//!
//! Deliberately naive: values are compared through a small enum with
//! numbers widened to f64, sets and bags are plain vectors searched
//! linearly, and execution goes straight through rusqlite.

use std::path::Path;

use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub enum V {
    Null,
    Num(f64),
    Text(String),
    Blob(Vec<u8>),
}

fn same(a: &V, b: &V) -> bool {
    match (a, b) {
        (V::Null, V::Null) => true,
        (V::Num(x), V::Num(y)) => x == y,
        (V::Text(x), V::Text(y)) => x == y,
        (V::Blob(x), V::Blob(y)) => x == y,
        _ => false,
    }
}

fn contains(list: &[V], v: &V) -> bool {
    list.iter().any(|x| same(x, v))
}

fn distinct(values: impl Iterator<Item = V>) -> Vec<V> {
    let mut out: Vec<V> = Vec::new();
    for v in values {
        if !contains(&out, &v) {
            out.push(v);
        }
    }
    out
}

fn same_row(a: &[V], b: &[V]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same(x, y))
}

/// Multiset equality of two rows' cells.
fn same_cells(a: &[V], b: &[V]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|x| {
        match (0..b.len()).find(|&j| !used[j] && same(x, &b[j])) {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

pub type Table = Vec<Vec<V>>;

pub fn run(db: &Path, sql: &str) -> Option<Table> {
    let conn = Connection::open_with_flags(db, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY).ok()?;
    let mut stmt = conn.prepare(sql).ok()?;
    if !stmt.readonly() || stmt.column_count() == 0 {
        return None;
    }
    let n = stmt.column_count();
    let mut rows = stmt.query([]).ok()?;
    let mut out = Vec::new();
    while let Some(row) = rows.next().ok()? {
        let mut cells = Vec::new();
        for i in 0..n {
            cells.push(match row.get_ref(i).ok()? {
                ValueRef::Null => V::Null,
                ValueRef::Integer(x) => V::Num(x as f64),
                ValueRef::Real(x) => V::Num(x),
                ValueRef::Text(t) => V::Text(String::from_utf8(t.to_vec()).unwrap()),
                ValueRef::Blob(b) => V::Blob(b.to_vec()),
            });
        }
        out.push(cells);
    }
    Some(out)
}

pub fn classic(g: &Table, p: &Table) -> u8 {
    let covers = |a: &Table, b: &Table| a.iter().all(|r| b.iter().any(|s| same_row(r, s)));
    u8::from(covers(g, p) && covers(p, g))
}

pub fn refined(g: &Table, p: &Table) -> u8 {
    if g.len() != p.len() {
        return 0;
    }
    let mut used = vec![false; p.len()];
    for r in g {
        match (0..p.len()).find(|&j| !used[j] && same_cells(r, &p[j])) {
            Some(j) => used[j] = true,
            None => return 0,
        }
    }
    1
}

fn cells(t: &Table) -> Vec<V> {
    distinct(t.iter().flatten().cloned())
}

pub fn cp(g: &Table, p: &Table) -> f64 {
    let (gc, pc) = (cells(g), cells(p));
    if pc.is_empty() {
        return if gc.is_empty() { 1.0 } else { 0.0 };
    }
    pc.iter().filter(|v| contains(&gc, v)).count() as f64 / pc.len() as f64
}

pub fn cr(g: &Table, p: &Table) -> f64 {
    cp(p, g)
}

pub fn tc(g: &Table, p: &Table) -> f64 {
    match (g.len(), p.len()) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        (a, b) => a.min(b) as f64 / a.max(b) as f64,
    }
}

/// Tag check written as plain string scanning.
pub fn format_ok(raw: &str) -> u8 {
    let s = raw.trim();
    let Some(rest) = s.strip_prefix("<reasoning>") else { return 0 };
    let Some(end) = rest.find("</reasoning>") else { return 0 };
    let reasoning = &rest[..end];
    let rest = rest[end + "</reasoning>".len()..].trim_start();
    let Some(rest) = rest.strip_prefix("<answer>") else { return 0 };
    let Some(answer) = rest.strip_suffix("</answer>") else { return 0 };
    let tags = ["<reasoning>", "</reasoning>", "<answer>", "</answer>"];
    u8::from(!tags.iter().any(|t| reasoning.contains(t) || answer.contains(t)))
}

pub fn sql_of(raw: &str) -> Option<String> {
    let start = raw.rfind("<answer>")? + "<answer>".len();
    let end = start + raw[start..].find("</answer>")?;
    let answer = &raw[start..end];
    let sql = match answer.rfind("```sql") {
        Some(i) => {
            let body = &answer[i + "```sql".len()..];
            &body[..body.find("```")?]
        }
        None => answer,
    };
    let sql = sql.trim();
    (!sql.is_empty()).then(|| sql.to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub id: String,
    pub executable: bool,
    pub ex: u8,
    pub ex_classic: u8,
    pub cp: f64,
    pub cr: f64,
    pub tc: f64,
    pub qa: f64,
    pub fr: u8,
    pub gate: f64,
}

pub fn expected(db: &Path, gold_sql: &str, raw: &str, id: &str) -> Expected {
    let gold = run(db, gold_sql).expect("gold query runs");
    let fr = format_ok(raw);
    let pred = sql_of(raw).and_then(|sql| run(db, &sql));
    let Some(pred) = pred else {
        return Expected {
            id: id.to_owned(),
            executable: false,
            ex: 0,
            ex_classic: 0,
            cp: 0.0,
            cr: 0.0,
            tc: 0.0,
            qa: 0.0,
            fr,
            gate: 0.0,
        };
    };
    let (p, r, t) = (cp(&gold, &pred), cr(&gold, &pred), tc(&gold, &pred));
    let qa = (p + r + t) / 3.0;
    let gate = if qa > 0.1 {
        qa
    } else if fr == 1 {
        0.1
    } else {
        qa
    };
    Expected {
        id: id.to_owned(),
        executable: true,
        ex: refined(&gold, &pred),
        ex_classic: classic(&gold, &pred),
        cp: p,
        cr: r,
        tc: t,
        qa,
        fr,
        gate,
    }
}
