//! Result tables and the canonical cell order.
//!
//! Every metric in this crate compares cells through [`canonical_compare`].
//! The order is total: `Null < numeric < Text < Blob`, where integers and
//! reals share one numeric class ordered by value (so `3 == 3.0`). NaN is
//! equal to itself and sorts below every other number.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A single value returned by the database engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Integer(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }

    /// Numeric value of an integer or real cell.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    /// Canonical equality, widened by an absolute tolerance for numeric pairs.
    ///
    /// With `tolerance == 0.0` this is exactly `canonical_compare(..) == Equal`.
    pub fn approx_eq(&self, other: &Cell, tolerance: f64) -> bool {
        if self == other {
            return true;
        }
        if tolerance > 0.0 {
            if let (Some(a), Some(b)) = (self.as_f64(), other.as_f64()) {
                return (a - b).abs() <= tolerance;
            }
        }
        false
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Integer(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("NULL"),
            Cell::Integer(i) => write!(f, "{i}"),
            Cell::Real(r) => write!(f, "{r}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Blob(b) => {
                f.write_str("x'")?;
                for byte in b {
                    write!(f, "{byte:02x}")?;
                }
                f.write_str("'")
            }
        }
    }
}

// 2^63 as f64, exactly representable.
const TWO_POW_63: f64 = 9_223_372_036_854_775_808.0;

/// Exact comparison of an integer against a real without going through a
/// lossy `i64 -> f64` cast.
fn cmp_int_real(i: i64, r: f64) -> Ordering {
    if r.is_nan() {
        return Ordering::Greater;
    }
    if r >= TWO_POW_63 {
        return Ordering::Less;
    }
    if r < -TWO_POW_63 {
        return Ordering::Greater;
    }
    let whole = r.trunc();
    // `whole` lies in [-2^63, 2^63) so the cast is exact.
    match i.cmp(&(whole as i64)) {
        Ordering::Equal => {
            let frac = r - whole;
            if frac > 0.0 {
                Ordering::Less
            } else if frac < 0.0 {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        }
        other => other,
    }
}

fn cmp_real(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        // -0.0 == 0.0 here, which is what we want
        (false, false) => a.partial_cmp(&b).expect("non-NaN floats are comparable"),
    }
}

/// Total order over cells.
pub fn canonical_compare(a: &Cell, b: &Cell) -> Ordering {
    use Cell::*;
    match (a, b) {
        (Null, Null) => Ordering::Equal,
        (Integer(x), Integer(y)) => x.cmp(y),
        (Real(x), Real(y)) => cmp_real(*x, *y),
        (Integer(x), Real(y)) => cmp_int_real(*x, *y),
        (Real(x), Integer(y)) => cmp_int_real(*y, *x).reverse(),
        (Text(x), Text(y)) => x.as_bytes().cmp(y.as_bytes()),
        (Blob(x), Blob(y)) => x.cmp(y),
        _ => a.rank().cmp(&b.rank()),
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        canonical_compare(self, other) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        canonical_compare(self, other)
    }
}

/// One tuple of a result table.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Row(pub Vec<Cell>);

impl Row {
    pub fn new(cells: Vec<Cell>) -> Self {
        Row(cells)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.0
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<Cell>> for Row {
    fn from(cells: Vec<Cell>) -> Self {
        Row(cells)
    }
}

/// Reorders the cells of a row ascending under [`canonical_compare`].
pub fn sort_intra_tuple(row: &Row) -> Row {
    let mut cells = row.0.clone();
    cells.sort();
    Row(cells)
}

/// An execution result: column names plus rows in engine order, duplicates
/// preserved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("row {row} has {found} cells but the table has {expected} columns")]
pub struct ArityError {
    pub row: usize,
    pub expected: usize,
    pub found: usize,
}

impl ResultTable {
    /// Builds a table, checking that every row matches the column count.
    pub fn new(columns: Vec<String>, rows: Vec<Row>) -> Result<Self, ArityError> {
        for (i, row) in rows.iter().enumerate() {
            if row.arity() != columns.len() {
                return Err(ArityError {
                    row: i,
                    expected: columns.len(),
                    found: row.arity(),
                });
            }
        }
        Ok(ResultTable { columns, rows })
    }

    /// Builds a table with generated column names `c0, c1, ...`.
    ///
    /// Panics if the rows do not share one arity; intended for tests and
    /// examples.
    pub fn from_rows<R: Into<Row>>(rows: Vec<R>) -> Self {
        let rows: Vec<Row> = rows.into_iter().map(Into::into).collect();
        let width = rows.first().map_or(0, Row::arity);
        let columns = (0..width).map(|i| format!("c{i}")).collect();
        ResultTable::new(columns, rows).expect("rows must share one arity")
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.rows.iter().flat_map(|r| r.0.iter())
    }
}

/// Sorts rows lexicographically by their cell sequences.
pub fn sort_tuples(table: &ResultTable) -> ResultTable {
    let mut rows = table.rows.clone();
    rows.sort();
    ResultTable {
        columns: table.columns.clone(),
        rows,
    }
}

/// `sort_tuples(sort_intra_tuple(..))`: the normal form refined EX compares.
pub fn normalize(table: &ResultTable) -> ResultTable {
    let mut rows: Vec<Row> = table.rows.iter().map(sort_intra_tuple).collect();
    rows.sort();
    ResultTable {
        columns: table.columns.clone(),
        rows,
    }
}
