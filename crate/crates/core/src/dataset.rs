//! Benchmark files, prediction files, schema rendering and the training
//! prompt.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::executor::{execute, DatabaseHandle, ExecLimits, ExecStatus};
use crate::table::{Cell, ResultTable};

const SYSTEM_TEMPLATE: &str = include_str!("templates/system.txt");
const USER_TEMPLATE: &str = include_str!("templates/user.txt");

/// Distinct example values shown per column.
pub const DEFAULT_EXAMPLES_PER_COLUMN: usize = 3;
/// Text example values are cut to this many characters.
pub const EXAMPLE_TEXT_MAX_CHARS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot parse description file {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("database `{0}` not found under the database root")]
    MissingDatabase(String),
    #[error("item `{0}` has an empty gold query")]
    EmptyGold(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("schema query failed on `{db_id}`: {status}")]
    Schema { db_id: String, status: ExecStatus },
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One question of a benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawItem")]
pub struct BenchmarkItem {
    #[serde(rename = "question_id")]
    pub item_id: String,
    pub question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    pub db_id: String,
    #[serde(rename = "SQL")]
    pub gold_sql: String,
}

// BIRD uses `question_id` and `SQL`; Spider has no id and uses `query`.
#[derive(Deserialize)]
struct RawItem {
    #[serde(default, alias = "question_id", alias = "item_id")]
    id: Option<Value>,
    question: String,
    #[serde(default)]
    evidence: Option<String>,
    db_id: String,
    #[serde(rename = "SQL", alias = "query")]
    sql: String,
}

impl From<RawItem> for BenchmarkItem {
    fn from(raw: RawItem) -> Self {
        BenchmarkItem {
            item_id: raw.id.as_ref().map(id_string).unwrap_or_default(),
            question: raw.question,
            evidence: raw.evidence,
            db_id: raw.db_id,
            gold_sql: raw.sql,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub items: Vec<BenchmarkItem>,
    pub size: usize,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, items: Vec<BenchmarkItem>) -> Self {
        let size = items.len();
        DatasetManifest {
            name: name.into(),
            items,
            size,
        }
    }

    /// Serializes the items in the benchmark JSON shape.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.items).expect("items serialize")
    }
}

/// Parses benchmark JSON text. Items without an id get their index.
pub fn parse_dataset(name: &str, text: &str, path: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut items: Vec<BenchmarkItem> = serde_json::from_str(text).map_err(|source| DatasetError::Parse {
        path: path.to_owned(),
        source,
    })?;
    let mut seen = HashSet::new();
    for (i, item) in items.iter_mut().enumerate() {
        if item.item_id.is_empty() {
            item.item_id = i.to_string();
        }
        if item.gold_sql.trim().is_empty() {
            return Err(DatasetError::EmptyGold(item.item_id.clone()));
        }
        if !seen.insert(item.item_id.clone()) {
            return Err(DatasetError::DuplicateId(item.item_id.clone()));
        }
    }
    Ok(DatasetManifest::new(name, items))
}

/// Loads a benchmark file and checks that every database exists under
/// `db_root`. The manifest is named after the file stem.
pub fn load_dataset(path: &Path, db_root: &Path) -> Result<DatasetManifest, DatasetError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_dataset_named(&name, path, db_root)
}

pub fn load_dataset_named(name: &str, path: &Path, db_root: &Path) -> Result<DatasetManifest, DatasetError> {
    let manifest = parse_dataset(name, &read(path)?, path)?;
    let mut checked = HashSet::new();
    for item in &manifest.items {
        if checked.insert(item.db_id.as_str()) && !DatabaseHandle::resolve(db_root, &item.db_id).exists() {
            return Err(DatasetError::MissingDatabase(item.db_id.clone()));
        }
    }
    Ok(manifest)
}

/// Raw completions keyed by item id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PredictionFile {
    pub entries: BTreeMap<String, String>,
}

impl PredictionFile {
    pub fn get(&self, item_id: &str) -> Option<&str> {
        self.entries.get(item_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Deserialize)]
struct RawPrediction {
    id: Value,
    output: String,
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<PredictionFile, DatasetError> {
    let raw: Vec<RawPrediction> = serde_json::from_str(text).map_err(|source| DatasetError::Parse {
        path: path.to_owned(),
        source,
    })?;
    let mut entries = BTreeMap::new();
    for p in raw {
        let id = id_string(&p.id);
        if entries.insert(id.clone(), p.output).is_some() {
            return Err(DatasetError::DuplicateId(id));
        }
    }
    Ok(PredictionFile { entries })
}

/// Loads a flat `[{"id": ..., "output": ...}]` prediction file.
pub fn load_predictions(path: &Path) -> Result<PredictionFile, DatasetError> {
    parse_predictions(&read(path)?, path)
}

/// Column descriptions keyed by `(table, column)`, compared case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnDescriptions {
    entries: HashMap<(String, String), String>,
}

impl ColumnDescriptions {
    pub fn insert(&mut self, table: &str, column: &str, description: &str) {
        self.entries.insert(
            (table.to_lowercase(), column.to_lowercase()),
            description.trim().to_owned(),
        );
    }

    pub fn get(&self, table: &str, column: &str) -> Option<&str> {
        self.entries
            .get(&(table.to_lowercase(), column.to_lowercase()))
            .map(String::as_str)
            .filter(|d| !d.is_empty())
    }

    /// Reads a CSV with `table,column,description` headers.
    pub fn from_csv(path: &Path) -> Result<Self, DatasetError> {
        #[derive(Deserialize)]
        struct Record {
            table: String,
            column: String,
            description: String,
        }
        let csv_err = |source| DatasetError::Csv {
            path: path.to_owned(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut out = ColumnDescriptions::default();
        for record in reader.deserialize::<Record>() {
            let r = record.map_err(csv_err)?;
            out.insert(&r.table, &r.column, &r.description);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDoc {
    pub name: String,
    pub declared_type: String,
    pub description: Option<String>,
    pub examples: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDoc {
    pub name: String,
    pub ddl: String,
    pub columns: Vec<ColumnDoc>,
}

/// Schema of one database, enriched with descriptions and example values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDoc {
    pub db_id: String,
    pub tables: Vec<TableDoc>,
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn quote_literal(text: &str) -> String {
    format!("'{}'", text.replace('\'', "''"))
}

fn query(db: &DatabaseHandle, sql: &str) -> Result<ResultTable, DatasetError> {
    match execute(db, sql, ExecLimits::default()).status {
        ExecStatus::Ok(t) => Ok(t),
        status => Err(DatasetError::Schema {
            db_id: db.db_id.clone(),
            status,
        }),
    }
}

fn text_of(cell: &Cell) -> String {
    match cell {
        Cell::Null => String::new(),
        other => other.to_string(),
    }
}

fn truncate_example(cell: Cell) -> Cell {
    match cell {
        Cell::Text(s) if s.chars().count() > EXAMPLE_TEXT_MAX_CHARS => {
            Cell::Text(s.chars().take(EXAMPLE_TEXT_MAX_CHARS).collect())
        }
        other => other,
    }
}

/// Reads table DDL, column types and up to `k_examples` distinct non-null
/// values per column (first-seen order) from the live database.
pub fn extract_schema(
    db: &DatabaseHandle,
    k_examples: usize,
    descriptions: Option<&ColumnDescriptions>,
) -> Result<SchemaDoc, DatasetError> {
    let tables = query(
        db,
        "SELECT name, sql FROM sqlite_master \
         WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
    )?;
    let mut out = Vec::new();
    for row in &tables.rows {
        let name = text_of(&row.0[0]);
        let ddl = text_of(&row.0[1]);
        let info = query(
            db,
            &format!("SELECT name, type FROM pragma_table_info({}) ORDER BY cid", quote_literal(&name)),
        )?;
        let mut columns = Vec::new();
        for col in &info.rows {
            let col_name = text_of(&col.0[0]);
            let examples = if k_examples == 0 {
                Vec::new()
            } else {
                let c = quote_ident(&col_name);
                query(
                    db,
                    &format!(
                        "SELECT DISTINCT {c} FROM {} WHERE {c} IS NOT NULL LIMIT {k_examples}",
                        quote_ident(&name)
                    ),
                )?
                .rows
                .into_iter()
                .filter_map(|r| r.0.into_iter().next())
                .map(truncate_example)
                .collect()
            };
            columns.push(ColumnDoc {
                description: descriptions
                    .and_then(|d| d.get(&name, &col_name))
                    .map(str::to_owned),
                declared_type: text_of(&col.0[1]),
                name: col_name,
                examples,
            });
        }
        out.push(TableDoc { name, ddl, columns });
    }
    Ok(SchemaDoc {
        db_id: db.db_id.clone(),
        tables: out,
    })
}

fn render_example(cell: &Cell) -> String {
    match cell {
        Cell::Text(s) => quote_literal(s),
        other => other.to_string(),
    }
}

impl SchemaDoc {
    /// Renders each table as its DDL followed by one comment line per
    /// column:
    ///
    /// ```text
    /// CREATE TABLE player (id INTEGER, name TEXT)
    /// -- player.id INTEGER | examples: [1, 2, 3]
    /// -- player.name TEXT | description: given name | examples: ['Ann', 'Bob']
    /// ```
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, table) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            out.push_str(table.ddl.trim());
            for col in &table.columns {
                let _ = write!(out, "\n-- {}.{}", table.name, col.name);
                if !col.declared_type.is_empty() {
                    let _ = write!(out, " {}", col.declared_type);
                }
                if let Some(d) = &col.description {
                    let _ = write!(out, " | description: {d}");
                }
                let examples: Vec<String> = col.examples.iter().map(render_example).collect();
                let _ = write!(out, " | examples: [{}]", examples.join(", "));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// Single-pass placeholder substitution, so values containing placeholder
/// text are never expanded again.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while !rest.is_empty() {
        for (key, value) in values {
            if let Some(tail) = rest.strip_prefix(key) {
                out.push_str(value);
                rest = tail;
                continue 'outer;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

/// Renders the system and user messages for an item.
pub fn render_prompt(item: &BenchmarkItem, schema: &str) -> Prompt {
    Prompt {
        system: SYSTEM_TEMPLATE.to_owned(),
        user: fill(
            USER_TEMPLATE,
            &[
                ("{ question }", &item.question),
                ("{ evidence }", item.evidence.as_deref().unwrap_or("")),
                ("{ schema }", schema),
            ],
        ),
    }
}
