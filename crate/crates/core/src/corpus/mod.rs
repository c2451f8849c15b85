//! The multi-domain table corpus: loading, value lookup and SQL execution.

mod engine;
mod value;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{read_json, DomainId, RegistryError, SlotRegistry, UNKNOWN_DOMAIN, UNKNOWN_DOMAIN_ALIAS};
use crate::text::normalize;

pub use value::{ColumnKind, Value};

use engine::DomainPool;

pub const ALL_DATABASES_FAILED: &str = "Failed to execute SQL on all databases.";
pub const INVALID_DATABASE_PREFIX: &str = "Invalid database name: ";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest {path}: {source}")]
    Manifest { path: String, source: serde_json::Error },
    #[error("unsupported manifest version {0}")]
    Version(u32),
    #[error("manifest declares no tables")]
    Empty,
    #[error("table {caption:?}: data file {path} not found")]
    MissingFile { caption: String, path: String },
    #[error("duplicate caption {0:?}")]
    DuplicateCaption(String),
    #[error("table {caption:?}: invalid caption ({reason})")]
    InvalidCaption { caption: String, reason: &'static str },
    #[error("table {caption:?}: duplicate column {column:?}")]
    DuplicateColumn { caption: String, column: String },
    #[error("table {caption:?}, line {line}: {message}")]
    RowMismatch {
        caption: String,
        line: u64,
        message: String,
    },
    #[error("table {caption:?}: scope slot {slot:?} is not in the slot registry")]
    UnknownScopeSlot { caption: String, slot: String },
    #[error("no slot registry attached to the corpus")]
    NoRegistry,
    #[error("slot type {slot:?} is not registered for domain {domain}")]
    UnknownSlot { domain: DomainId, slot: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub caption: String,
    pub domain: DomainId,
    pub columns: Vec<Column>,
    pub required_scope_slots: Vec<String>,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Result of executing one statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryResult {
    Rows { header: Vec<String>, rows: Vec<Vec<Value>> },
    Error { message: String },
}

impl QueryResult {
    pub fn error(message: impl Into<String>) -> Self {
        QueryResult::Error {
            message: message.into(),
        }
    }

    /// The empty output recorded when a query ultimately fails.
    pub fn empty() -> Self {
        QueryResult::Rows {
            header: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn is_rows(&self) -> bool {
        matches!(self, QueryResult::Rows { .. })
    }

    pub fn rows(&self) -> Option<(&[String], &[Vec<Value>])> {
        match self {
            QueryResult::Rows { header, rows } => Some((header, rows)),
            QueryResult::Error { .. } => None,
        }
    }

    pub fn is_nonempty_rows(&self) -> bool {
        self.rows().is_some_and(|(_, r)| !r.is_empty())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slot_registry: Option<String>,
    domains: Vec<ManifestDomain>,
}

#[derive(Serialize, Deserialize)]
struct ManifestDomain {
    name: DomainId,
    tables: Vec<ManifestTable>,
}

#[derive(Serialize, Deserialize)]
struct ManifestTable {
    caption: String,
    file: String,
    columns: Vec<Column>,
    #[serde(default)]
    required_scope_slots: Vec<String>,
}

/// Domain-partitioned tables. Immutable once built.
pub struct TableCorpus {
    schemas: IndexMap<String, TableSchema>,
    rows: IndexMap<String, Vec<Vec<Value>>>,
    domain_index: IndexMap<DomainId, Vec<String>>,
    slots: Option<SlotRegistry>,
    values: BTreeMap<(DomainId, String), HashSet<String>>,
    pools: IndexMap<DomainId, DomainPool>,
}

impl std::fmt::Debug for TableCorpus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TableCorpus")
            .field("tables", &self.schemas.len())
            .field("domain_index", &self.domain_index)
            .finish()
    }
}

impl PartialEq for TableCorpus {
    fn eq(&self, other: &Self) -> bool {
        self.schemas == other.schemas && self.rows == other.rows && self.domain_index == other.domain_index
    }
}

/// Loads a corpus manifest and its CSV tables.
pub fn load_corpus(manifest_path: &Path) -> Result<TableCorpus, CorpusError> {
    TableCorpus::load(manifest_path)
}

impl TableCorpus {
    pub fn load(manifest_path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(manifest_path).map_err(|source| CorpusError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| CorpusError::Manifest {
            path: manifest_path.display().to_string(),
            source,
        })?;
        if manifest.version != 1 {
            return Err(CorpusError::Version(manifest.version));
        }
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let slots = match &manifest.slot_registry {
            Some(p) => Some(read_json::<SlotRegistry>(&base.join(p))?),
            None => None,
        };
        let mut tables = Vec::new();
        for domain in manifest.domains {
            for t in domain.tables {
                let schema = TableSchema {
                    caption: t.caption,
                    domain: domain.name,
                    columns: t.columns,
                    required_scope_slots: t.required_scope_slots,
                };
                let rows = read_rows(&schema, &base.join(&t.file))?;
                tables.push((schema, rows));
            }
        }
        Self::from_tables(tables, slots)
    }

    /// Builds a corpus from in-memory tables, checking every invariant.
    pub fn from_tables(
        tables: Vec<(TableSchema, Vec<Vec<Value>>)>,
        slots: Option<SlotRegistry>,
    ) -> Result<Self, CorpusError> {
        if tables.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut schemas = IndexMap::new();
        let mut rows_by = IndexMap::new();
        let mut domain_index: IndexMap<DomainId, Vec<String>> =
            DomainId::ALL.iter().map(|d| (*d, Vec::new())).collect();
        for (schema, rows) in tables {
            validate_schema(&schema, slots.as_ref())?;
            if schemas.contains_key(&schema.caption) {
                return Err(CorpusError::DuplicateCaption(schema.caption));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() != schema.columns.len() {
                    return Err(CorpusError::RowMismatch {
                        caption: schema.caption.clone(),
                        line: i as u64 + 2,
                        message: format!("expected {} fields, found {}", schema.columns.len(), row.len()),
                    });
                }
            }
            domain_index[&schema.domain].push(schema.caption.clone());
            rows_by.insert(schema.caption.clone(), rows);
            schemas.insert(schema.caption.clone(), schema);
        }
        let mut corpus = TableCorpus {
            schemas,
            rows: rows_by,
            domain_index,
            slots,
            values: BTreeMap::new(),
            pools: DomainId::ALL.iter().map(|d| (*d, DomainPool::new())).collect(),
        };
        corpus.index_values();
        Ok(corpus)
    }

    fn index_values(&mut self) {
        let Some(slots) = &self.slots else { return };
        for slot in slots.types() {
            for domain in DomainId::ALL {
                let Some(cols) = slots.columns(slot, domain) else {
                    continue;
                };
                let mut set = HashSet::new();
                for caption in &self.domain_index[&domain] {
                    let schema = &self.schemas[caption];
                    for col in cols {
                        if let Some(ci) = schema.column_index(col) {
                            for row in &self.rows[caption] {
                                if !matches!(row[ci], Value::Null) {
                                    set.insert(normalize(&row[ci].render()));
                                }
                            }
                        }
                    }
                }
                self.values.insert((domain, slot.to_string()), set);
            }
        }
    }

    /// Writes the corpus as a manifest plus one CSV per table under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, CorpusError> {
        let io = |path: &Path, source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let tables_dir = dir.join("tables");
        std::fs::create_dir_all(&tables_dir).map_err(|e| io(&tables_dir, e))?;
        let mut domains = Vec::new();
        for (domain, captions) in &self.domain_index {
            if captions.is_empty() {
                continue;
            }
            let mut tables = Vec::new();
            for (n, caption) in captions.iter().enumerate() {
                let schema = &self.schemas[caption];
                let file = format!("tables/{}_{n:03}.csv", domain.as_str());
                let path = dir.join(&file);
                let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e.into()))?;
                w.write_record(schema.columns.iter().map(|c| c.name.as_str()))
                    .map_err(|e| io(&path, e.into()))?;
                for row in &self.rows[caption] {
                    w.write_record(row.iter().map(Value::render))
                        .map_err(|e| io(&path, e.into()))?;
                }
                w.flush().map_err(|e| io(&path, e))?;
                tables.push(ManifestTable {
                    caption: caption.clone(),
                    file,
                    columns: schema.columns.clone(),
                    required_scope_slots: schema.required_scope_slots.clone(),
                });
            }
            domains.push(ManifestDomain { name: *domain, tables });
        }
        let slot_registry = match &self.slots {
            Some(reg) => {
                let path = dir.join("slots.json");
                let text = serde_json::to_string_pretty(reg).expect("registry serializes");
                std::fs::write(&path, text).map_err(|e| io(&path, e))?;
                Some("slots.json".to_string())
            }
            None => None,
        };
        let manifest = Manifest {
            version: 1,
            slot_registry,
            domains,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(path)
    }

    pub fn slots(&self) -> Result<&SlotRegistry, CorpusError> {
        self.slots.as_ref().ok_or(CorpusError::NoRegistry)
    }

    pub fn table_count(&self) -> usize {
        self.schemas.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn schema(&self, caption: &str) -> Option<&TableSchema> {
        self.schemas.get(caption)
    }

    pub fn table_rows(&self, caption: &str) -> Option<&[Vec<Value>]> {
        self.rows.get(caption).map(Vec::as_slice)
    }

    /// All captions, in manifest order.
    pub fn captions(&self) -> impl Iterator<Item = &str> {
        self.schemas.keys().map(String::as_str)
    }

    pub fn list_captions(&self, domain: DomainId) -> &[String] {
        &self.domain_index[&domain]
    }

    pub fn domain_of(&self, caption: &str) -> Option<DomainId> {
        self.schemas.get(caption).map(|s| s.domain)
    }

    /// Union of the required scope slots of a domain's tables, in registry
    /// order (declaration order without a registry).
    pub fn required_scope_slots(&self, domain: DomainId) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for caption in &self.domain_index[&domain] {
            for s in &self.schemas[caption].required_scope_slots {
                if !out.contains(s) {
                    out.push(s.clone());
                }
            }
        }
        if let Some(reg) = &self.slots {
            out.sort_by_key(|s| reg.position(s));
        }
        out
    }

    /// Whether `value` occurs in any column mapped to `slot_type` in any
    /// table of `domain`, after trimming and case folding.
    pub fn value_exists(&self, domain: DomainId, slot_type: &str, value: &str) -> Result<bool, CorpusError> {
        let slots = self.slots()?;
        let key = slots
            .resolve(slot_type)
            .filter(|k| slots.columns(k, domain).is_some())
            .ok_or_else(|| CorpusError::UnknownSlot {
                domain,
                slot: slot_type.to_string(),
            })?;
        Ok(self
            .values
            .get(&(domain, key.to_string()))
            .is_some_and(|set| set.contains(&normalize(value))))
    }

    /// Distinct non-null values of a slot in a domain, in corpus order.
    pub fn slot_values(&self, domain: DomainId, slot_type: &str) -> Vec<String> {
        let Ok(slots) = self.slots() else { return Vec::new() };
        let Some(cols) = slots.columns(slot_type, domain) else {
            return Vec::new();
        };
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for caption in &self.domain_index[&domain] {
            let schema = &self.schemas[caption];
            for col in cols {
                let Some(ci) = schema.column_index(col) else { continue };
                for row in &self.rows[caption] {
                    let v = row[ci].render();
                    if !v.is_empty() && seen.insert(v.clone()) {
                        out.push(v);
                    }
                }
            }
        }
        out
    }

    /// Executes against one domain's tables.
    pub fn execute_in(&self, domain: DomainId, sql: &str) -> QueryResult {
        let tables = self.domain_index[&domain]
            .iter()
            .map(|c| (&self.schemas[c], self.rows[c].as_slice()));
        self.pools[&domain].run(tables, sql)
    }

    /// Executes `sql` against the database named `db_name`.
    ///
    /// A domain name runs directly. The unknown-domain sentinel tries every
    /// domain in registry order and returns the first row result, even an
    /// empty one.
    pub fn execute_sql(&self, sql: &str, db_name: &str) -> QueryResult {
        if let Ok(domain) = db_name.parse::<DomainId>() {
            return self.execute_in(domain, sql);
        }
        if db_name == UNKNOWN_DOMAIN || db_name == UNKNOWN_DOMAIN_ALIAS {
            for domain in DomainId::ALL {
                let result = self.execute_in(domain, sql);
                if result.is_rows() {
                    return result;
                }
            }
            return QueryResult::error(ALL_DATABASES_FAILED);
        }
        QueryResult::error(format!("{INVALID_DATABASE_PREFIX}{db_name}"))
    }
}

fn validate_schema(schema: &TableSchema, slots: Option<&SlotRegistry>) -> Result<(), CorpusError> {
    let bad = |reason| CorpusError::InvalidCaption {
        caption: schema.caption.clone(),
        reason,
    };
    if schema.caption.trim().is_empty() {
        return Err(bad("empty"));
    }
    if schema.caption.contains('"') {
        return Err(bad("contains a double quote"));
    }
    let mut seen = HashSet::new();
    for c in &schema.columns {
        if !seen.insert(c.name.as_str()) {
            return Err(CorpusError::DuplicateColumn {
                caption: schema.caption.clone(),
                column: c.name.clone(),
            });
        }
    }
    if let Some(reg) = slots {
        for s in &schema.required_scope_slots {
            if !reg.contains(s) {
                return Err(CorpusError::UnknownScopeSlot {
                    caption: schema.caption.clone(),
                    slot: s.clone(),
                });
            }
        }
    }
    Ok(())
}

fn read_rows(schema: &TableSchema, path: &Path) -> Result<Vec<Vec<Value>>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile {
            caption: schema.caption.clone(),
            path: path.display().to_string(),
        });
    }
    let mismatch = |line: u64, message: String| CorpusError::RowMismatch {
        caption: schema.caption.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| mismatch(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| mismatch(1, e.to_string()))?.clone();
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(mismatch(
            1,
            format!("header {:?} does not match columns {:?}", header, expected),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            mismatch(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut row = Vec::with_capacity(record.len());
        for (cell, col) in record.iter().zip(&schema.columns) {
            row.push(
                col.kind
                    .parse_cell(cell)
                    .map_err(|m| mismatch(line, format!("column {}: {m}", col.name)))?,
            );
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(caption: &str, domain: DomainId) -> TableSchema {
        TableSchema {
            caption: caption.into(),
            domain,
            columns: vec![
                Column {
                    name: "city".into(),
                    kind: ColumnKind::Text,
                },
                Column {
                    name: "year".into(),
                    kind: ColumnKind::Integer,
                },
            ],
            required_scope_slots: vec![],
        }
    }

    fn row(city: &str, year: i64) -> Vec<Value> {
        vec![Value::Text(city.into()), Value::Integer(year)]
    }

    fn minimal() -> TableCorpus {
        TableCorpus::from_tables(
            vec![
                (schema("A Sales", DomainId::Property), vec![row("Shanghai", 2021)]),
                (schema("B Auctions", DomainId::LandAuction), vec![row("Beijing", 2022)]),
                (schema("C Finance", DomainId::Finance), vec![row("Nanjing", 2020)]),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn one_table_per_domain() {
        let c = minimal();
        for d in DomainId::ALL {
            assert_eq!(c.list_captions(d).len(), 1);
        }
    }

    #[test]
    fn duplicate_caption_rejected() {
        let err = TableCorpus::from_tables(
            vec![
                (schema("A", DomainId::Property), vec![]),
                (schema("A", DomainId::Finance), vec![]),
            ],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateCaption(c) if c == "A"));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            TableCorpus::from_tables(vec![], None),
            Err(CorpusError::Empty)
        ));
    }

    #[test]
    fn direct_and_fallback_execution() {
        let c = minimal();
        let direct = c.execute_sql("SELECT city FROM \"B Auctions\"", "land_auction");
        assert!(direct.is_nonempty_rows());
        assert_eq!(c.execute_sql("SELECT city FROM \"B Auctions\"", "unknowDomain"), direct);
        assert_eq!(
            c.execute_sql("SELECT city FROM \"B Auctions\"", "unknownDomain"),
            direct
        );
        assert_eq!(
            c.execute_sql("SELECT 1", "housing"),
            QueryResult::error("Invalid database name: housing")
        );
        assert_eq!(
            c.execute_sql("SELECT nope FROM nowhere", "unknowDomain"),
            QueryResult::error(ALL_DATABASES_FAILED)
        );
        assert!(matches!(
            c.execute_sql("SELEC 1", "property"),
            QueryResult::Error { .. }
        ));
    }

    #[test]
    fn empty_rows_end_the_fallback() {
        let c = minimal();
        let r = c.execute_sql("SELECT 1 AS x WHERE 1 = 0", "unknowDomain");
        assert_eq!(
            r,
            QueryResult::Rows {
                header: vec!["x".into()],
                rows: vec![]
            }
        );
    }

    #[test]
    fn writes_are_refused() {
        let c = minimal();
        assert!(matches!(
            c.execute_sql("DELETE FROM \"A Sales\"", "property"),
            QueryResult::Error { .. }
        ));
        assert!(matches!(
            c.execute_sql("CREATE TABLE t (x INTEGER)", "property"),
            QueryResult::Error { .. }
        ));
        assert!(c
            .execute_sql("SELECT * FROM \"A Sales\"", "property")
            .is_nonempty_rows());
    }

    #[test]
    fn concurrent_readers() {
        let c = minimal();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..20 {
                        assert!(c
                            .execute_sql("SELECT * FROM \"C Finance\"", "finance")
                            .is_nonempty_rows());
                    }
                });
            }
        });
    }
}
