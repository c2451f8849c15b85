//! In-process SQL execution over one SQLite in-memory database per domain.
//!
//! Each domain keeps a small pool of read-only connections. A connection is
//! built on demand from the corpus rows, so concurrent callers never share a
//! connection.

use std::sync::Mutex;

use rusqlite::types::ValueRef;
use rusqlite::Connection;

use super::value::Value;
use super::{QueryResult, TableSchema};

pub(crate) struct DomainPool {
    idle: Mutex<Vec<Connection>>,
}

impl DomainPool {
    pub(crate) fn new() -> Self {
        Self {
            idle: Mutex::new(Vec::new()),
        }
    }

    pub(crate) fn run<'a, I>(&self, tables: I, sql: &str) -> QueryResult
    where
        I: Iterator<Item = (&'a TableSchema, &'a [Vec<Value>])>,
    {
        let conn = self.idle.lock().expect("pool lock").pop();
        let conn = match conn {
            Some(c) => c,
            None => match build_connection(tables) {
                Ok(c) => c,
                Err(e) => return QueryResult::error(format!("engine setup failed: {e}")),
            },
        };
        let result = query(&conn, sql);
        self.idle.lock().expect("pool lock").push(conn);
        result
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn build_connection<'a, I>(tables: I) -> rusqlite::Result<Connection>
where
    I: Iterator<Item = (&'a TableSchema, &'a [Vec<Value>])>,
{
    let mut conn = Connection::open_in_memory()?;
    let tx = conn.transaction()?;
    for (schema, rows) in tables {
        let cols: Vec<String> = schema
            .columns
            .iter()
            .map(|c| format!("{} {}", quote_ident(&c.name), c.kind.sql_type()))
            .collect();
        tx.execute(
            &format!("CREATE TABLE {} ({})", quote_ident(&schema.caption), cols.join(", ")),
            [],
        )?;
        let marks = vec!["?"; schema.columns.len()].join(", ");
        let mut insert = tx.prepare(&format!(
            "INSERT INTO {} VALUES ({marks})",
            quote_ident(&schema.caption)
        ))?;
        for row in rows {
            let params: Vec<rusqlite::types::Value> = row.iter().map(to_sql_value).collect();
            insert.execute(rusqlite::params_from_iter(params))?;
        }
    }
    tx.commit()?;
    conn.pragma_update(None, "query_only", true)?;
    Ok(conn)
}

fn to_sql_value(v: &Value) -> rusqlite::types::Value {
    use rusqlite::types::Value as S;
    match v {
        Value::Null => S::Null,
        Value::Integer(i) => S::Integer(*i),
        Value::Real(f) => S::Real(*f),
        Value::Text(s) => S::Text(s.clone()),
    }
}

fn query(conn: &Connection, sql: &str) -> QueryResult {
    let sql = sql.trim().trim_end_matches(';');
    if sql.is_empty() {
        return QueryResult::error("empty SQL statement");
    }
    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return QueryResult::error(e.to_string()),
    };
    if !stmt.readonly() {
        return QueryResult::error("only read-only SELECT statements are supported");
    }
    let header: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let width = header.len();
    let mut rows_out = Vec::new();
    let mut rows = match stmt.query([]) {
        Ok(r) => r,
        Err(e) => return QueryResult::error(e.to_string()),
    };
    loop {
        match rows.next() {
            Ok(Some(row)) => {
                let mut out = Vec::with_capacity(width);
                for i in 0..width {
                    let v = match row.get_ref(i) {
                        Ok(ValueRef::Null) => Value::Null,
                        Ok(ValueRef::Integer(i)) => Value::Integer(i),
                        Ok(ValueRef::Real(f)) => Value::Real(f),
                        Ok(ValueRef::Text(t)) => Value::Text(String::from_utf8_lossy(t).into_owned()),
                        Ok(ValueRef::Blob(_)) => Value::Null,
                        Err(e) => return QueryResult::error(e.to_string()),
                    };
                    out.push(v);
                }
                rows_out.push(out);
            }
            Ok(None) => break,
            Err(e) => return QueryResult::error(e.to_string()),
        }
    }
    QueryResult::Rows { header, rows: rows_out }
}
