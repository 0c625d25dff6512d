//! Read-only SQLite execution with deadlines, an error taxonomy and a
//! memoizing result cache.

use std::fmt;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::table::{Cell, ResultTable, Row};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_ROW_LIMIT: usize = 100_000;
pub const DEFAULT_CACHE_CAPACITY: usize = 100_000;

/// Number of VM instructions between deadline checks.
const PROGRESS_INTERVAL: i32 = 1_000;

/// A SQLite database file addressed by its benchmark id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatabaseHandle {
    pub db_id: String,
    pub path: PathBuf,
}

impl DatabaseHandle {
    pub fn new(db_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        DatabaseHandle {
            db_id: db_id.into(),
            path: path.into(),
        }
    }

    /// Resolves `<db_root>/<db_id>/<db_id>.sqlite`. The file is not checked.
    pub fn resolve(db_root: &Path, db_id: &str) -> Self {
        let path = db_root.join(db_id).join(format!("{db_id}.sqlite"));
        DatabaseHandle::new(db_id, path)
    }

    pub fn exists(&self) -> bool {
        self.path.is_file()
    }
}

/// Why a query did not produce a table. Also used as the error label in
/// reward breakdowns and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorClass {
    SyntaxError,
    RuntimeError,
    Timeout,
    WriteAttempt,
    DbMissing,
    /// The completion had no extractable SQL.
    NoSql,
    /// The gold query itself failed; the dataset entry is broken.
    GoldExecutionError,
    /// No prediction was supplied for the item.
    Missing,
}

impl ErrorClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorClass::SyntaxError => "SyntaxError",
            ErrorClass::RuntimeError => "RuntimeError",
            ErrorClass::Timeout => "Timeout",
            ErrorClass::WriteAttempt => "WriteAttempt",
            ErrorClass::DbMissing => "DbMissing",
            ErrorClass::NoSql => "NoSql",
            ErrorClass::GoldExecutionError => "GoldExecutionError",
            ErrorClass::Missing => "Missing",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecStatus {
    Ok(ResultTable),
    SyntaxError(String),
    RuntimeError(String),
    Timeout,
    WriteAttempt,
    DbMissing,
}

impl ExecStatus {
    pub fn table(&self) -> Option<&ResultTable> {
        match self {
            ExecStatus::Ok(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ExecStatus::Ok(_))
    }

    pub fn error_class(&self) -> Option<ErrorClass> {
        match self {
            ExecStatus::Ok(_) => None,
            ExecStatus::SyntaxError(_) => Some(ErrorClass::SyntaxError),
            ExecStatus::RuntimeError(_) => Some(ErrorClass::RuntimeError),
            ExecStatus::Timeout => Some(ErrorClass::Timeout),
            ExecStatus::WriteAttempt => Some(ErrorClass::WriteAttempt),
            ExecStatus::DbMissing => Some(ErrorClass::DbMissing),
        }
    }
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecStatus::Ok(t) => write!(f, "ok ({} rows)", t.num_rows()),
            ExecStatus::SyntaxError(m) => write!(f, "syntax error: {m}"),
            ExecStatus::RuntimeError(m) => write!(f, "runtime error: {m}"),
            ExecStatus::Timeout => f.write_str("timeout"),
            ExecStatus::WriteAttempt => f.write_str("write attempt"),
            ExecStatus::DbMissing => f.write_str("database missing"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub elapsed: Duration,
    pub from_cache: bool,
}

impl ExecOutcome {
    pub fn elapsed_ms(&self) -> f64 {
        self.elapsed.as_secs_f64() * 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub row_limit: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            timeout: DEFAULT_TIMEOUT,
            row_limit: DEFAULT_ROW_LIMIT,
        }
    }
}

impl ExecLimits {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_row_limit(mut self, row_limit: usize) -> Self {
        self.row_limit = row_limit;
        self
    }
}

fn is_parse_failure(message: &str) -> bool {
    let m = message.to_ascii_lowercase();
    m.contains("syntax error") || m.contains("incomplete input") || m.contains("unrecognized token")
}

fn classify_prepare_error(err: rusqlite::Error) -> ExecStatus {
    match err {
        rusqlite::Error::MultipleStatement => ExecStatus::WriteAttempt,
        rusqlite::Error::SqliteFailure(e, _) if e.code == rusqlite::ErrorCode::OperationInterrupted => {
            ExecStatus::Timeout
        }
        rusqlite::Error::SqlInputError { ref msg, .. } if is_parse_failure(msg) => {
            ExecStatus::SyntaxError(msg.clone())
        }
        rusqlite::Error::SqliteFailure(_, Some(ref msg)) if is_parse_failure(msg) => {
            ExecStatus::SyntaxError(msg.clone())
        }
        other => ExecStatus::RuntimeError(other.to_string()),
    }
}

fn classify_step_error(err: rusqlite::Error) -> ExecStatus {
    match err {
        rusqlite::Error::SqliteFailure(e, _) if e.code == rusqlite::ErrorCode::OperationInterrupted => {
            ExecStatus::Timeout
        }
        other => ExecStatus::RuntimeError(other.to_string()),
    }
}

fn to_cell(value: ValueRef<'_>) -> Cell {
    match value {
        ValueRef::Null => Cell::Null,
        ValueRef::Integer(i) => Cell::Integer(i),
        ValueRef::Real(r) => Cell::Real(r),
        ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
    }
}

fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
    )?;
    conn.pragma_update(None, "query_only", true)?;
    Ok(conn)
}

fn run(db: &DatabaseHandle, sql: &str, limits: ExecLimits) -> ExecStatus {
    let sql = sql.trim();
    if sql.is_empty() {
        return ExecStatus::SyntaxError("empty query".into());
    }
    if !db.exists() {
        return ExecStatus::DbMissing;
    }
    let conn = match open_read_only(&db.path) {
        Ok(c) => c,
        Err(e) => return ExecStatus::RuntimeError(format!("cannot open database: {e}")),
    };

    let deadline = Instant::now() + limits.timeout;
    conn.progress_handler(PROGRESS_INTERVAL, Some(move || Instant::now() >= deadline));

    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return classify_prepare_error(e),
    };
    // Only a single row-returning, read-only statement is allowed.
    if !stmt.readonly() || stmt.column_count() == 0 {
        return ExecStatus::WriteAttempt;
    }

    let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_owned).collect();
    let width = columns.len();
    let mut rows_out = Vec::new();
    let mut rows = match stmt.query([]) {
        Ok(r) => r,
        Err(e) => return classify_step_error(e),
    };
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                if rows_out.len() >= limits.row_limit {
                    return ExecStatus::RuntimeError(format!(
                        "result exceeds the row limit of {}",
                        limits.row_limit
                    ));
                }
                let mut cells = Vec::with_capacity(width);
                for i in 0..width {
                    match row.get_ref(i) {
                        Ok(v) => cells.push(to_cell(v)),
                        Err(e) => return classify_step_error(e),
                    }
                }
                rows_out.push(Row(cells));
            }
            Ok(None) => break,
            Err(e) => return classify_step_error(e),
        }
    }
    ExecStatus::Ok(ResultTable {
        columns,
        rows: rows_out,
    })
}

/// Executes one read-only query on a fresh connection.
pub fn execute(db: &DatabaseHandle, sql: &str, limits: ExecLimits) -> ExecOutcome {
    let start = Instant::now();
    let status = run(db, sql, limits);
    ExecOutcome {
        status,
        elapsed: start.elapsed(),
        from_cache: false,
    }
}

/// Cache key normalization: trim, then collapse whitespace runs to one space.
pub fn normalize_sql(sql: &str) -> String {
    sql.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

type CacheKey = (String, String);

/// Memoizes execution outcomes per `(db_id, normalized SQL)`.
///
/// Database files must not change while the cache is alive. Timeouts are
/// not stored since they depend on the deadline in force. Concurrent misses
/// on one key may both execute; the later insert wins.
pub struct ExecCache {
    entries: Mutex<lru::LruCache<CacheKey, (ExecStatus, Duration)>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl fmt::Debug for ExecCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExecCache").field("stats", &self.stats()).finish()
    }
}

impl Default for ExecCache {
    fn default() -> Self {
        ExecCache::with_capacity(DEFAULT_CACHE_CAPACITY)
    }
}

impl ExecCache {
    pub fn with_capacity(capacity: usize) -> Self {
        let capacity = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        ExecCache {
            entries: Mutex::new(lru::LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn shared(capacity: usize) -> Arc<Self> {
        Arc::new(ExecCache::with_capacity(capacity))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.entries.lock().len(),
        }
    }

    pub fn execute(&self, db: &DatabaseHandle, sql: &str, limits: ExecLimits) -> ExecOutcome {
        let key = (db.db_id.clone(), normalize_sql(sql));
        if let Some((status, elapsed)) = self.entries.lock().get(&key).cloned() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return ExecOutcome {
                status,
                elapsed,
                from_cache: true,
            };
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let outcome = execute(db, sql, limits);
        if !matches!(outcome.status, ExecStatus::Timeout | ExecStatus::DbMissing) {
            self.entries
                .lock()
                .put(key, (outcome.status.clone(), outcome.elapsed));
        }
        outcome
    }
}

/// Runs through `cache` when one is given, directly otherwise.
pub fn execute_cached(
    cache: Option<&ExecCache>,
    db: &DatabaseHandle,
    sql: &str,
    limits: ExecLimits,
) -> ExecOutcome {
    match cache {
        Some(c) => c.execute(db, sql, limits),
        None => execute(db, sql, limits),
    }
}
