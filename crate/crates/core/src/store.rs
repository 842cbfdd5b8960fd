//! File-backed table store with procedure packages.
//!
//! A catalog holds credentials, typed tables and packages of declarative
//! procedures. Sessions are opened with an ADO-style connection string and
//! run procedures, which return either a forward-only [`RowReader`], an
//! affected-row count or a scalar.
//!
//! Catalog file layout (UTF-8, LF line endings):
//!
//! ```text
//! #catalog XE v1
//! @user csharp<TAB>csharp
//!
//! @table EMPLOYEES
//! !cols ID:int<TAB>LAST_NAME:text<TAB>SALARY:double
//! 1<TAB>KING<TAB>5000
//! !next_id 2
//!
//! @package EMP_PKG
//! !proc GET_ALL<TAB>select_all<TAB>EMPLOYEES<TAB>*
//! !proc GET_BY_ID<TAB>select_eq<TAB>EMPLOYEES<TAB>ID<TAB>*
//!
//! ```
//!
//! Cells and proc fields escape backslash, tab, LF and CR as `\\`, `\t`,
//! `\n`, `\r`. A row whose first cell starts with `!` writes it as `\!`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use thiserror::Error;

use crate::soap::{format_double, parse_double, Value};

pub const CATALOG_EXTENSION: &str = "cat";
const FORMAT_VERSION: &str = "v1";

// ---------------------------------------------------------------------------
// Connection strings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionDescriptor {
    pub user_id: String,
    pub password: String,
    pub data_source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConnectionError {
    #[error("connection string is missing `{0}`")]
    MissingKey(String),
    #[error("malformed connection string fragment `{0}`")]
    MalformedPair(String),
    #[error("connection string repeats `{0}`")]
    DuplicateKey(String),
}

fn canonical_key(key: &str) -> String {
    key.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Parses `User Id=..;password=..;Data Source=..;`. Keys are matched
/// ignoring case and whitespace; unrecognised keys are ignored.
pub fn parse_connection_string(s: &str) -> Result<ConnectionDescriptor, ConnectionError> {
    let mut user_id = None;
    let mut password = None;
    let mut data_source = None;
    for fragment in s.split(';') {
        if fragment.trim().is_empty() {
            continue;
        }
        let (key, value) = fragment
            .split_once('=')
            .ok_or_else(|| ConnectionError::MalformedPair(fragment.to_owned()))?;
        let value = value.trim();
        let key = canonical_key(key);
        if key.is_empty() || value.is_empty() {
            return Err(ConnectionError::MalformedPair(fragment.to_owned()));
        }
        let (slot, name) = match key.as_str() {
            "userid" => (&mut user_id, "user id"),
            "password" => (&mut password, "password"),
            "datasource" => (&mut data_source, "data source"),
            _ => continue,
        };
        if slot.is_some() {
            return Err(ConnectionError::DuplicateKey(name.to_owned()));
        }
        *slot = Some(value.to_owned());
    }
    Ok(ConnectionDescriptor {
        user_id: user_id.ok_or_else(|| ConnectionError::MissingKey("user id".into()))?,
        password: password.ok_or_else(|| ConnectionError::MissingKey("password".into()))?,
        data_source: data_source.ok_or_else(|| ConnectionError::MissingKey("data source".into()))?,
    })
}

impl fmt::Display for ConnectionDescriptor {
    /// Renders without the password.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "User Id={};Data Source={}", self.user_id, self.data_source)
    }
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Text,
    Int,
    Double,
}

impl ColumnType {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Int => "int",
            ColumnType::Double => "double",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "text" => Some(ColumnType::Text),
            "int" => Some(ColumnType::Int),
            "double" => Some(ColumnType::Double),
            _ => None,
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Double(f64),
}

impl Cell {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Cell::Text(_) => ColumnType::Text,
            Cell::Int(_) => ColumnType::Int,
            Cell::Double(_) => ColumnType::Double,
        }
    }

    /// Text form used in catalog files and format templates.
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Double(d) => format_double(*d),
        }
    }

    fn from_value(v: &Value) -> Option<Cell> {
        match v {
            Value::Text(s) => Some(Cell::Text(s.clone())),
            Value::Int(i) => Some(Cell::Int(*i)),
            Value::Double(d) => Some(Cell::Double(*d)),
            _ => None,
        }
    }
}

impl From<Cell> for Value {
    fn from(c: Cell) -> Value {
        match c {
            Cell::Text(s) => Value::Text(s),
            Cell::Int(i) => Value::Int(i),
            Cell::Double(d) => Value::Double(d),
        }
    }
}

fn value_kind(v: &Value) -> String {
    v.type_ref().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("invalid name `{0}`: expected [A-Z][A-Z0-9_]*")]
    InvalidName(String),
    #[error("table `{0}` has no columns")]
    NoColumns(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{column}` in table `{table}`")]
    UnknownColumn { table: String, column: String },
    #[error("row has {found} cells, table `{table}` has {expected} columns")]
    RowArity {
        table: String,
        expected: usize,
        found: usize,
    },
    #[error("column `{column}` expects {expected}, got {found}")]
    CellType {
        column: String,
        expected: ColumnType,
        found: ColumnType,
    },
    #[error("non-finite double in column `{0}`")]
    NonFinite(String),
    #[error("next_id {next_id} is not above existing id {max_id} in table `{table}`")]
    NextIdTooLow { table: String, next_id: i64, max_id: i64 },
    #[error("duplicate procedure `{package}.{procedure}`")]
    DuplicateProcedure { package: String, procedure: String },
    #[error("bad projection `{0}`")]
    BadProjection(String),
}

/// Table, column, package and procedure names.
pub fn is_catalog_name(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b'A'..=b'Z')) && bytes.all(|b| matches!(b, b'A'..=b'Z' | b'0'..=b'9' | b'_'))
}

fn catalog_name(s: &str) -> Result<String, SchemaError> {
    let upper = s.to_ascii_uppercase();
    if is_catalog_name(&upper) {
        Ok(upper)
    } else {
        Err(SchemaError::InvalidName(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    name: String,
    columns: Vec<(String, ColumnType)>,
    rows: Vec<Vec<Cell>>,
    next_id: i64,
}

impl Table {
    /// Names are upper-cased.
    pub fn new(name: &str, columns: &[(&str, ColumnType)]) -> Result<Self, SchemaError> {
        let name = catalog_name(name)?;
        if columns.is_empty() {
            return Err(SchemaError::NoColumns(name));
        }
        let mut cols: Vec<(String, ColumnType)> = Vec::with_capacity(columns.len());
        for (c, ty) in columns {
            let c = catalog_name(c)?;
            if cols.iter().any(|(n, _)| *n == c) {
                return Err(SchemaError::DuplicateColumn(c));
            }
            cols.push((c, *ty));
        }
        Ok(Table {
            name,
            columns: cols,
            rows: Vec::new(),
            next_id: 1,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[(String, ColumnType)] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn next_id(&self) -> i64 {
        self.next_id
    }

    /// True when the first column is an int column named `ID`.
    pub fn has_auto_id(&self) -> bool {
        self.columns[0] == ("ID".to_owned(), ColumnType::Int)
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|(n, _)| n.eq_ignore_ascii_case(column))
    }

    fn check_row(&self, row: &[Cell]) -> Result<(), SchemaError> {
        if row.len() != self.columns.len() {
            return Err(SchemaError::RowArity {
                table: self.name.clone(),
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        for ((col, ty), cell) in self.columns.iter().zip(row) {
            if cell.column_type() != *ty {
                return Err(SchemaError::CellType {
                    column: col.clone(),
                    expected: *ty,
                    found: cell.column_type(),
                });
            }
            if let Cell::Double(d) = cell {
                if !d.is_finite() {
                    return Err(SchemaError::NonFinite(col.clone()));
                }
            }
        }
        Ok(())
    }

    /// Appends a complete row, IDs included. Raises `next_id` past any ID
    /// seen.
    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<(), SchemaError> {
        self.check_row(&row)?;
        if self.has_auto_id() {
            if let Cell::Int(id) = row[0] {
                self.next_id = self.next_id.max(id.saturating_add(1));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    fn max_id(&self) -> Option<i64> {
        self.rows
            .iter()
            .filter_map(|r| match r[0] {
                Cell::Int(i) => Some(i),
                _ => None,
            })
            .max()
    }

    fn set_next_id(&mut self, next_id: i64) -> Result<(), SchemaError> {
        if self.has_auto_id() {
            if let Some(max_id) = self.max_id() {
                if next_id <= max_id {
                    return Err(SchemaError::NextIdTooLow {
                        table: self.name.clone(),
                        next_id,
                        max_id,
                    });
                }
            }
        }
        self.next_id = next_id;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplatePart {
    Literal(String),
    Column(String),
}

/// Which columns a select returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    /// Every column, in table order.
    All,
    Columns(Vec<String>),
    /// A single text column `name` rendered from `{COLUMN}` placeholders.
    Format {
        name: String,
        template: Vec<TemplatePart>,
    },
}

impl Projection {
    /// Parses `*`, `A,B,C` or `fmt:NAME:template`. In templates `{{` and
    /// `}}` stand for literal braces.
    pub fn parse(s: &str) -> Result<Projection, SchemaError> {
        let bad = || SchemaError::BadProjection(s.to_owned());
        if s == "*" {
            return Ok(Projection::All);
        }
        if let Some(rest) = s.strip_prefix("fmt:") {
            let (name, template) = rest.split_once(':').ok_or_else(bad)?;
            let name = catalog_name(name).map_err(|_| bad())?;
            return Ok(Projection::Format {
                name,
                template: parse_template(template).ok_or_else(bad)?,
            });
        }
        let cols = s
            .split(',')
            .map(|c| catalog_name(c.trim()).map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Projection::Columns(cols))
    }

    pub fn format(template: &str, name: &str) -> Result<Projection, SchemaError> {
        Projection::parse(&format!("fmt:{name}:{template}"))
    }
}

fn parse_template(t: &str) -> Option<Vec<TemplatePart>> {
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut chars = t.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                lit.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                lit.push('}');
            }
            '{' => {
                let mut col = String::new();
                loop {
                    match chars.next()? {
                        '}' => break,
                        ch => col.push(ch),
                    }
                }
                let col = catalog_name(&col).ok()?;
                if !lit.is_empty() {
                    parts.push(TemplatePart::Literal(std::mem::take(&mut lit)));
                }
                parts.push(TemplatePart::Column(col));
            }
            '}' => return None,
            ch => lit.push(ch),
        }
    }
    if !lit.is_empty() {
        parts.push(TemplatePart::Literal(lit));
    }
    Some(parts)
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Projection::All => f.write_str("*"),
            Projection::Columns(cols) => f.write_str(&cols.join(",")),
            Projection::Format { name, template } => {
                write!(f, "fmt:{name}:")?;
                for part in template {
                    match part {
                        TemplatePart::Literal(l) => f.write_str(&l.replace('{', "{{").replace('}', "}}"))?,
                        TemplatePart::Column(c) => write!(f, "{{{c}}}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcKind {
    SelectAll {
        table: String,
        projection: Projection,
    },
    SelectWhereEq {
        table: String,
        column: String,
        projection: Projection,
    },
    Insert {
        table: String,
    },
    DeleteWhereEq {
        table: String,
        column: String,
    },
    Count {
        table: String,
    },
}

impl ProcKind {
    pub fn table(&self) -> &str {
        match self {
            ProcKind::SelectAll { table, .. }
            | ProcKind::SelectWhereEq { table, .. }
            | ProcKind::Insert { table }
            | ProcKind::DeleteWhereEq { table, .. }
            | ProcKind::Count { table } => table,
        }
    }

    pub fn is_mutating(&self) -> bool {
        matches!(self, ProcKind::Insert { .. } | ProcKind::DeleteWhereEq { .. })
    }

    fn keyword(&self) -> &'static str {
        match self {
            ProcKind::SelectAll { .. } => "select_all",
            ProcKind::SelectWhereEq { .. } => "select_eq",
            ProcKind::Insert { .. } => "insert",
            ProcKind::DeleteWhereEq { .. } => "delete_eq",
            ProcKind::Count { .. } => "count",
        }
    }

    fn fields(&self) -> Vec<String> {
        let mut out = vec![self.keyword().to_owned(), self.table().to_owned()];
        match self {
            ProcKind::SelectAll { projection, .. } => out.push(projection.to_string()),
            ProcKind::SelectWhereEq { column, projection, .. } => {
                out.push(column.clone());
                out.push(projection.to_string());
            }
            ProcKind::DeleteWhereEq { column, .. } => out.push(column.clone()),
            ProcKind::Insert { .. } | ProcKind::Count { .. } => {}
        }
        out
    }

    fn from_fields(fields: &[String]) -> Result<ProcKind, String> {
        let [kind, table, extra @ ..] = fields else {
            return Err("procedure needs a kind and a table".into());
        };
        let table = catalog_name(table).map_err(|e| e.to_string())?;
        let projection = |p: Option<&String>| match p {
            None => Ok(Projection::All),
            Some(p) => Projection::parse(p).map_err(|e| e.to_string()),
        };
        let column = |c: &String| catalog_name(c).map_err(|e| e.to_string());
        let arity = |max: usize| {
            if extra.len() > max {
                Err(format!("too many fields for `{kind}`"))
            } else {
                Ok(())
            }
        };
        match kind.as_str() {
            "select_all" => {
                arity(1)?;
                Ok(ProcKind::SelectAll {
                    table,
                    projection: projection(extra.first())?,
                })
            }
            "select_eq" => {
                arity(2)?;
                let c = extra.first().ok_or("select_eq needs a column")?;
                Ok(ProcKind::SelectWhereEq {
                    table,
                    column: column(c)?,
                    projection: projection(extra.get(1))?,
                })
            }
            "insert" => {
                arity(0)?;
                Ok(ProcKind::Insert { table })
            }
            "delete_eq" => {
                arity(1)?;
                let c = extra.first().ok_or("delete_eq needs a column")?;
                Ok(ProcKind::DeleteWhereEq {
                    table,
                    column: column(c)?,
                })
            }
            "count" => {
                arity(0)?;
                Ok(ProcKind::Count { table })
            }
            other => Err(format!("unknown procedure kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Procedure {
    pub name: String,
    pub kind: ProcKind,
}

impl Procedure {
    pub fn new(name: &str, kind: ProcKind) -> Result<Self, SchemaError> {
        Ok(Procedure {
            name: catalog_name(name)?,
            kind,
        })
    }
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    data_source: String,
    credentials: Vec<(String, String)>,
    tables: BTreeMap<String, Table>,
    packages: BTreeMap<String, Vec<Procedure>>,
}

/// Data-source names double as file stems.
pub fn is_data_source_name(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && s.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Catalog {
    pub fn new(data_source: &str) -> Self {
        assert!(
            is_data_source_name(data_source),
            "invalid data source name {data_source:?}"
        );
        Catalog {
            data_source: data_source.to_owned(),
            credentials: Vec::new(),
            tables: BTreeMap::new(),
            packages: BTreeMap::new(),
        }
    }

    pub fn data_source(&self) -> &str {
        &self.data_source
    }

    pub fn credentials(&self) -> &[(String, String)] {
        &self.credentials
    }

    pub fn add_user(&mut self, user_id: &str, password: &str) {
        self.credentials.push((user_id.to_owned(), password.to_owned()));
    }

    pub fn authenticate(&self, user_id: &str, password: &str) -> bool {
        self.credentials.iter().any(|(u, p)| u == user_id && p == password)
    }

    pub fn add_table(&mut self, table: Table) -> Result<(), SchemaError> {
        if self.tables.contains_key(&table.name) {
            return Err(SchemaError::DuplicateTable(table.name));
        }
        self.tables.insert(table.name.clone(), table);
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(&name.to_ascii_uppercase())
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut Table> {
        self.tables.get_mut(&name.to_ascii_uppercase())
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn packages(&self) -> impl Iterator<Item = (&str, &[Procedure])> {
        self.packages.iter().map(|(n, p)| (n.as_str(), p.as_slice()))
    }

    pub fn procedure(&self, package: &str, procedure: &str) -> Option<&Procedure> {
        self.packages
            .get(&package.to_ascii_uppercase())?
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(procedure))
    }

    /// Registers a procedure. Its table, columns and projection must exist.
    pub fn add_procedure(&mut self, package: &str, procedure: Procedure) -> Result<(), SchemaError> {
        let package = catalog_name(package)?;
        self.check_procedure(&procedure.kind)?;
        if self.procedure(&package, &procedure.name).is_some() {
            return Err(SchemaError::DuplicateProcedure {
                package,
                procedure: procedure.name,
            });
        }
        self.packages.entry(package).or_default().push(procedure);
        Ok(())
    }

    fn check_procedure(&self, kind: &ProcKind) -> Result<(), SchemaError> {
        let table = self
            .table(kind.table())
            .ok_or_else(|| SchemaError::UnknownTable(kind.table().to_owned()))?;
        let check_col = |c: &str| {
            table
                .column_index(c)
                .map(|_| ())
                .ok_or_else(|| SchemaError::UnknownColumn {
                    table: table.name.clone(),
                    column: c.to_owned(),
                })
        };
        let check_proj = |p: &Projection| match p {
            Projection::All => Ok(()),
            Projection::Columns(cols) => cols.iter().try_for_each(|c| check_col(c)),
            Projection::Format { template, .. } => template.iter().try_for_each(|part| match part {
                TemplatePart::Column(c) => check_col(c),
                TemplatePart::Literal(_) => Ok(()),
            }),
        };
        match kind {
            ProcKind::SelectAll { projection, .. } => check_proj(projection),
            ProcKind::SelectWhereEq { column, projection, .. } => {
                check_col(column)?;
                check_proj(projection)
            }
            ProcKind::DeleteWhereEq { column, .. } => check_col(column),
            ProcKind::Insert { .. } | ProcKind::Count { .. } => Ok(()),
        }
    }

    /// Canonical file text. Identical catalogs give identical bytes.
    pub fn to_text(&self) -> String {
        let mut out = format!("#catalog {} {FORMAT_VERSION}\n", self.data_source);
        for (u, p) in &self.credentials {
            out.push_str(&format!("@user {}\t{}\n", escape_field(u), escape_field(p)));
        }
        out.push('\n');
        for t in self.tables.values() {
            out.push_str(&format!("@table {}\n!cols ", t.name));
            let cols: Vec<String> = t.columns.iter().map(|(n, ty)| format!("{n}:{ty}")).collect();
            out.push_str(&cols.join("\t"));
            out.push('\n');
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(|c| escape_field(&c.render())).collect();
                let mut line = cells.join("\t");
                if line.starts_with('!') {
                    line.insert(0, '\\');
                }
                out.push_str(&line);
                out.push('\n');
            }
            out.push_str(&format!("!next_id {}\n\n", t.next_id));
        }
        for (name, procs) in &self.packages {
            out.push_str(&format!("@package {name}\n"));
            for p in procs {
                let fields: Vec<String> = p.kind.fields().iter().map(|f| escape_field(f)).collect();
                out.push_str(&format!("!proc {}\t{}\n", p.name, fields.join("\t")));
            }
            out.push('\n');
        }
        out
    }

    /// Parses catalog text. Errors carry a 1-based line number.
    pub fn parse(text: &str) -> Result<Catalog, CorruptCatalog> {
        CatalogParser::new(text).parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct CorruptCatalog {
    pub line: usize,
    pub reason: String,
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('!') => out.push('!'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

fn parse_cell(text: &str, ty: ColumnType) -> Result<Cell, String> {
    match ty {
        ColumnType::Text => Ok(Cell::Text(text.to_owned())),
        ColumnType::Int => crate::soap::parse_int(text)
            .map(Cell::Int)
            .ok_or_else(|| format!("`{text}` is not an int")),
        ColumnType::Double => parse_double(text)
            .map(Cell::Double)
            .ok_or_else(|| format!("`{text}` is not a finite double")),
    }
}

struct CatalogParser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> CatalogParser<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines: Vec<&str> = text.split('\n').collect();
        if text.ends_with('\n') {
            lines.pop();
        }
        if text.is_empty() {
            lines.clear();
        }
        CatalogParser { lines, pos: 0 }
    }

    fn err<T>(&self, line: usize, reason: impl Into<String>) -> Result<T, CorruptCatalog> {
        Err(CorruptCatalog {
            line,
            reason: reason.into(),
        })
    }

    /// Next line and its 1-based number; None at end of input.
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let line = self.lines.get(self.pos).copied()?;
        self.pos += 1;
        Some((self.pos, line))
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str), CorruptCatalog> {
        let eof = self.lines.len() + 1;
        self.next()
            .map_or_else(|| self.err(eof, format!("unexpected end of file, expected {what}")), Ok)
    }

    fn parse(mut self) -> Result<Catalog, CorruptCatalog> {
        let (n, header) = self.expect("`#catalog` header")?;
        let data_source = match header.split(' ').collect::<Vec<_>>()[..] {
            ["#catalog", ds, FORMAT_VERSION] if is_data_source_name(ds) => ds,
            _ => return self.err(n, "expected `#catalog <data source> v1`"),
        };
        let mut cat = Catalog::new(data_source);
        loop {
            match self.next() {
                None => return Ok(cat),
                Some((_, "")) => break,
                Some((n, line)) => {
                    let Some(rest) = line.strip_prefix("@user ") else {
                        return self.err(n, "expected `@user` or a blank line");
                    };
                    let fields: Vec<&str> = rest.split('\t').collect();
                    let [u, p] = fields[..] else {
                        return self.err(n, "expected `@user <id><TAB><password>`");
                    };
                    let u = unescape_field(u).or_else(|e| self.err(n, e))?;
                    let p = unescape_field(p).or_else(|e| self.err(n, e))?;
                    cat.add_user(&u, &p);
                }
            }
        }
        while let Some((n, line)) = self.next() {
            if let Some(name) = line.strip_prefix("@table ") {
                let table = self.parse_table(n, name)?;
                cat.add_table(table).or_else(|e| self.err(n, e.to_string()))?;
            } else if let Some(name) = line.strip_prefix("@package ") {
                self.parse_package(&mut cat, n, name)?;
            } else if line.is_empty() {
                return self.err(n, "unexpected blank line");
            } else {
                return self.err(n, "expected `@table` or `@package`");
            }
        }
        Ok(cat)
    }

    fn parse_table(&mut self, header_line: usize, name: &str) -> Result<Table, CorruptCatalog> {
        if !is_catalog_name(name) {
            return self.err(header_line, format!("invalid table name `{name}`"));
        }
        let (n, cols_line) = self.expect("`!cols`")?;
        let Some(spec) = cols_line.strip_prefix("!cols ") else {
            return self.err(n, "expected `!cols`");
        };
        let mut columns = Vec::new();
        for col in spec.split('\t') {
            let Some((cname, ty)) = col.split_once(':') else {
                return self.err(n, format!("bad column `{col}`"));
            };
            let Some(ty) = ColumnType::parse(ty) else {
                return self.err(n, format!("unknown column type `{ty}`"));
            };
            if !is_catalog_name(cname) {
                return self.err(n, format!("invalid column name `{cname}`"));
            }
            columns.push((cname, ty));
        }
        let mut table = Table::new(name, &columns).or_else(|e| self.err(n, e.to_string()))?;
        loop {
            let (n, line) = self.expect("a row or `!next_id`")?;
            if let Some(next) = line.strip_prefix("!next_id ") {
                let next: i64 = match crate::soap::parse_int(next) {
                    Some(v) if v >= 1 => v,
                    _ => return self.err(n, format!("bad next_id `{next}`")),
                };
                table.set_next_id(next).or_else(|e| self.err(n, e.to_string()))?;
                break;
            }
            if line.starts_with('!') {
                return self.err(n, "expected a row or `!next_id`");
            }
            let mut row = Vec::with_capacity(table.columns.len());
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != table.columns.len() {
                return self.err(
                    n,
                    format!("row has {} cells, expected {}", cells.len(), table.columns.len()),
                );
            }
            for (raw, (_, ty)) in cells.iter().zip(&table.columns) {
                let text = unescape_field(raw).or_else(|e| self.err(n, e))?;
                row.push(parse_cell(&text, *ty).or_else(|e| self.err(n, e))?);
            }
            table.push_row(row).or_else(|e| self.err(n, e.to_string()))?;
        }
        self.end_block()?;
        Ok(table)
    }

    fn parse_package(&mut self, cat: &mut Catalog, header_line: usize, name: &str) -> Result<(), CorruptCatalog> {
        if !is_catalog_name(name) {
            return self.err(header_line, format!("invalid package name `{name}`"));
        }
        if cat.packages.contains_key(name) {
            return self.err(header_line, format!("duplicate package `{name}`"));
        }
        cat.packages.insert(name.to_owned(), Vec::new());
        while let Some((n, line)) = self.next() {
            if line.is_empty() {
                return Ok(());
            }
            let Some(rest) = line.strip_prefix("!proc ") else {
                return self.err(n, "expected `!proc` or a blank line");
            };
            let fields = rest
                .split('\t')
                .map(unescape_field)
                .collect::<Result<Vec<_>, _>>()
                .or_else(|e| self.err(n, e))?;
            let (pname, kind_fields) = fields.split_first().expect("split yields one field");
            let kind = ProcKind::from_fields(kind_fields).or_else(|e| self.err(n, e))?;
            let proc_ = Procedure::new(pname, kind).or_else(|e| self.err(n, e.to_string()))?;
            if proc_.name != *pname {
                return self.err(n, format!("invalid procedure name `{pname}`"));
            }
            cat.add_procedure(name, proc_).or_else(|e| self.err(n, e.to_string()))?;
        }
        Ok(())
    }

    fn end_block(&mut self) -> Result<(), CorruptCatalog> {
        match self.next() {
            None | Some((_, "")) => Ok(()),
            Some((n, _)) => self.err(n, "expected a blank line after the block"),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown data source `{0}`")]
    UnknownDataSource(String),
    #[error("authentication failed for user `{0}`")]
    AuthenticationFailed(String),
    #[error("corrupt catalog {}: {source}", .path.display())]
    CorruptCatalog {
        path: PathBuf,
        #[source]
        source: CorruptCatalog,
    },
    #[error("catalog I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("unknown procedure `{package}.{procedure}`")]
    UnknownProcedure { package: String, procedure: String },
    #[error("procedure `{procedure}` takes {expected} arguments, got {found}")]
    ArgumentMismatch {
        procedure: String,
        expected: usize,
        found: usize,
    },
    #[error("column `{column}` expects {expected}, got {found}")]
    TypeMismatch {
        column: String,
        expected: ColumnType,
        found: String,
    },
    #[error("no current row")]
    NoCurrentRow,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("table `{0}` has exhausted its id range")]
    IdExhausted(String),
}

impl StoreError {
    /// Line number for corrupt-catalog errors.
    pub fn corrupt_line(&self) -> Option<usize> {
        match self {
            StoreError::CorruptCatalog { source, .. } => Some(source.line),
            _ => None,
        }
    }
}

pub fn load_catalog(path: &Path) -> Result<Catalog, StoreError> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        let valid = &e.as_bytes()[..e.utf8_error().valid_up_to()];
        let line = valid.iter().filter(|&&b| b == b'\n').count() + 1;
        StoreError::CorruptCatalog {
            path: path.to_owned(),
            source: CorruptCatalog {
                line,
                reason: "invalid UTF-8".into(),
            },
        }
    })?;
    Catalog::parse(&text).map_err(|source| StoreError::CorruptCatalog {
        path: path.to_owned(),
        source,
    })
}

/// Writes atomically: a temporary file in the same directory, then rename.
pub fn save_catalog(catalog: &Catalog, path: &Path) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(catalog.to_text().as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn catalog_path(catalog_dir: &Path, data_source: &str) -> PathBuf {
    catalog_dir.join(format!("{data_source}.{CATALOG_EXTENSION}"))
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

/// An open catalog. Reads run concurrently; mutations are exclusive and
/// saves are serialized with mutations.
#[derive(Debug)]
pub struct Session {
    path: PathBuf,
    user_id: String,
    catalog: RwLock<Catalog>,
    save_lock: Mutex<()>,
    autosave: bool,
}

pub fn open_session(catalog_dir: &Path, conn: &ConnectionDescriptor) -> Result<Session, StoreError> {
    if !is_data_source_name(&conn.data_source) {
        return Err(StoreError::UnknownDataSource(conn.data_source.clone()));
    }
    let path = catalog_path(catalog_dir, &conn.data_source);
    if !path.is_file() {
        return Err(StoreError::UnknownDataSource(conn.data_source.clone()));
    }
    let catalog = load_catalog(&path)?;
    if catalog.data_source != conn.data_source {
        return Err(StoreError::CorruptCatalog {
            path,
            source: CorruptCatalog {
                line: 1,
                reason: format!(
                    "header names data source `{}`, expected `{}`",
                    catalog.data_source, conn.data_source
                ),
            },
        });
    }
    if !catalog.authenticate(&conn.user_id, &conn.password) {
        return Err(StoreError::AuthenticationFailed(conn.user_id.clone()));
    }
    Ok(Session {
        path,
        user_id: conn.user_id.clone(),
        catalog: RwLock::new(catalog),
        save_lock: Mutex::new(()),
        autosave: false,
    })
}

#[derive(Debug)]
pub enum ProcedureResult {
    Rows(RowReader),
    Affected { count: u64, generated_id: Option<i64> },
    Scalar(i64),
}

impl Session {
    /// Saves the catalog after every successful mutation.
    pub fn set_autosave(&mut self, on: bool) {
        self.autosave = on;
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    fn read(&self) -> RwLockReadGuard<'_, Catalog> {
        self.catalog.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Catalog> {
        self.catalog.write().unwrap_or_else(|p| p.into_inner())
    }

    /// A copy of the current catalog state.
    pub fn snapshot(&self) -> Catalog {
        self.read().clone()
    }

    pub fn save(&self) -> Result<(), StoreError> {
        let catalog = self.read();
        let _serial = self.save_lock.lock().unwrap_or_else(|p| p.into_inner());
        save_catalog(&catalog, &self.path)
    }

    pub fn execute_procedure(
        &self,
        package: &str,
        procedure: &str,
        args: &[Value],
    ) -> Result<ProcedureResult, StoreError> {
        let unknown = || StoreError::UnknownProcedure {
            package: package.to_owned(),
            procedure: procedure.to_owned(),
        };
        let mutating = self
            .read()
            .procedure(package, procedure)
            .ok_or_else(unknown)?
            .kind
            .is_mutating();
        if mutating {
            let mut cat = self.write();
            let kind = cat.procedure(package, procedure).ok_or_else(unknown)?.kind.clone();
            let name = procedure.to_ascii_uppercase();
            let table = cat.table_mut(kind.table()).expect("procedure tables exist");
            let result = match &kind {
                ProcKind::Insert { .. } => insert(table, &name, args)?,
                ProcKind::DeleteWhereEq { column, .. } => delete_eq(table, &name, column, args)?,
                _ => unreachable!(),
            };
            if self.autosave {
                let _serial = self.save_lock.lock().unwrap_or_else(|p| p.into_inner());
                save_catalog(&cat, &self.path)?;
            }
            Ok(result)
        } else {
            let cat = self.read();
            let proc_ = cat.procedure(package, procedure).ok_or_else(unknown)?;
            let table = cat.table(proc_.kind.table()).expect("procedure tables exist");
            let name = &proc_.name;
            match &proc_.kind {
                ProcKind::SelectAll { projection, .. } => {
                    expect_args(name, args, 0)?;
                    Ok(ProcedureResult::Rows(project(table, table.rows.iter(), projection)))
                }
                ProcKind::SelectWhereEq { column, projection, .. } => {
                    let (idx, key) = key_arg(table, name, column, args)?;
                    let rows = table.rows.iter().filter(|r| r[idx] == key);
                    Ok(ProcedureResult::Rows(project(table, rows, projection)))
                }
                ProcKind::Count { .. } => {
                    expect_args(name, args, 0)?;
                    Ok(ProcedureResult::Scalar(table.rows.len() as i64))
                }
                _ => unreachable!(),
            }
        }
    }
}

fn expect_args(procedure: &str, args: &[Value], n: usize) -> Result<(), StoreError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(StoreError::ArgumentMismatch {
            procedure: procedure.to_owned(),
            expected: n,
            found: args.len(),
        })
    }
}

fn typed_cell(column: &str, ty: ColumnType, v: &Value) -> Result<Cell, StoreError> {
    match Cell::from_value(v) {
        Some(c) if c.column_type() == ty => {
            if let Cell::Double(d) = c {
                if !d.is_finite() {
                    return Err(StoreError::TypeMismatch {
                        column: column.to_owned(),
                        expected: ty,
                        found: "non-finite double".into(),
                    });
                }
            }
            Ok(c)
        }
        _ => Err(StoreError::TypeMismatch {
            column: column.to_owned(),
            expected: ty,
            found: value_kind(v),
        }),
    }
}

fn key_arg(table: &Table, procedure: &str, column: &str, args: &[Value]) -> Result<(usize, Cell), StoreError> {
    expect_args(procedure, args, 1)?;
    let idx = table.column_index(column).expect("validated at registration");
    let (cname, ty) = &table.columns[idx];
    Ok((idx, typed_cell(cname, *ty, &args[0])?))
}

fn insert(table: &mut Table, procedure: &str, args: &[Value]) -> Result<ProcedureResult, StoreError> {
    let auto = table.has_auto_id();
    let given = &table.columns[usize::from(auto)..];
    expect_args(procedure, args, given.len())?;
    let mut row = Vec::with_capacity(table.columns.len());
    let mut generated_id = None;
    if auto {
        let id = table.next_id;
        let next = id
            .checked_add(1)
            .ok_or_else(|| StoreError::IdExhausted(table.name.clone()))?;
        row.push(Cell::Int(id));
        generated_id = Some((id, next));
    }
    for ((cname, ty), v) in given.iter().zip(args) {
        row.push(typed_cell(cname, *ty, v)?);
    }
    if let Some((_, next)) = generated_id {
        table.next_id = next;
    }
    table.rows.push(row);
    Ok(ProcedureResult::Affected {
        count: 1,
        generated_id: generated_id.map(|(id, _)| id),
    })
}

fn delete_eq(table: &mut Table, procedure: &str, column: &str, args: &[Value]) -> Result<ProcedureResult, StoreError> {
    let (idx, key) = key_arg(table, procedure, column, args)?;
    let before = table.rows.len();
    table.rows.retain(|r| r[idx] != key);
    Ok(ProcedureResult::Affected {
        count: (before - table.rows.len()) as u64,
        generated_id: None,
    })
}

fn project<'a>(table: &Table, rows: impl Iterator<Item = &'a Vec<Cell>>, projection: &Projection) -> RowReader {
    let index = |c: &str| table.column_index(c).expect("validated at registration");
    let (columns, rows): (Vec<(String, ColumnType)>, Vec<Vec<Cell>>) = match projection {
        Projection::All => (table.columns.clone(), rows.cloned().collect()),
        Projection::Columns(cols) => {
            let idx: Vec<usize> = cols.iter().map(|c| index(c)).collect();
            (
                idx.iter().map(|&i| table.columns[i].clone()).collect(),
                rows.map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect(),
            )
        }
        Projection::Format { name, template } => {
            let rendered = rows
                .map(|r| {
                    let mut s = String::new();
                    for part in template {
                        match part {
                            TemplatePart::Literal(l) => s.push_str(l),
                            TemplatePart::Column(c) => s.push_str(&r[index(c)].render()),
                        }
                    }
                    vec![Cell::Text(s)]
                })
                .collect();
            (vec![(name.clone(), ColumnType::Text)], rendered)
        }
    };
    RowReader {
        columns,
        rows,
        position: Position::BeforeFirst,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    BeforeFirst,
    At(usize),
    AfterEnd,
}

/// Forward-only cursor over a snapshot of result rows.
#[derive(Debug, Clone)]
pub struct RowReader {
    columns: Vec<(String, ColumnType)>,
    rows: Vec<Vec<Cell>>,
    position: Position,
}

impl RowReader {
    pub fn columns(&self) -> &[(String, ColumnType)] {
        &self.columns
    }

    /// Advances; true iff a row is now current. Stays at the end once there.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> bool {
        let next = match self.position {
            Position::BeforeFirst => 0,
            Position::At(i) => i + 1,
            Position::AfterEnd => return false,
        };
        if next < self.rows.len() {
            self.position = Position::At(next);
            true
        } else {
            self.position = Position::AfterEnd;
            false
        }
    }

    pub fn get(&self, column: &str) -> Result<Value, StoreError> {
        let Position::At(i) = self.position else {
            return Err(StoreError::NoCurrentRow);
        };
        let idx = self
            .columns
            .iter()
            .position(|(n, _)| n.eq_ignore_ascii_case(column))
            .ok_or_else(|| StoreError::UnknownColumn(column.to_owned()))?;
        Ok(self.rows[i][idx].clone().into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emp_catalog() -> Catalog {
        let mut cat = Catalog::new("XE");
        cat.add_user("csharp", "csharp");
        let mut t = Table::new(
            "employees",
            &[
                ("ID", ColumnType::Int),
                ("NAME", ColumnType::Text),
                ("SALARY", ColumnType::Double),
            ],
        )
        .unwrap();
        t.push_row(vec![Cell::Int(1), Cell::Text("KING".into()), Cell::Double(5000.0)])
            .unwrap();
        t.push_row(vec![Cell::Int(2), Cell::Text("!odd\tname\\".into()), Cell::Double(0.5)])
            .unwrap();
        cat.add_table(t).unwrap();
        let table = || "EMPLOYEES".to_owned();
        for p in [
            Procedure::new(
                "ALL",
                ProcKind::SelectAll {
                    table: table(),
                    projection: Projection::All,
                },
            ),
            Procedure::new(
                "BY_ID",
                ProcKind::SelectWhereEq {
                    table: table(),
                    column: "ID".into(),
                    projection: Projection::Columns(vec!["NAME".into()]),
                },
            ),
            Procedure::new(
                "ROWS",
                ProcKind::SelectAll {
                    table: table(),
                    projection: Projection::format("{ID}|{NAME}|{{{SALARY}}}", "ROW").unwrap(),
                },
            ),
            Procedure::new("INS", ProcKind::Insert { table: table() }),
            Procedure::new(
                "DEL",
                ProcKind::DeleteWhereEq {
                    table: table(),
                    column: "ID".into(),
                },
            ),
            Procedure::new("CNT", ProcKind::Count { table: table() }),
        ] {
            cat.add_procedure("pkg", p.unwrap()).unwrap();
        }
        cat
    }

    fn session(cat: &Catalog) -> (tempfile::TempDir, Session) {
        let dir = tempfile::tempdir().unwrap();
        save_catalog(cat, &catalog_path(dir.path(), "XE")).unwrap();
        let conn = parse_connection_string("User Id=csharp;password=csharp;Data Source=XE;").unwrap();
        let s = open_session(dir.path(), &conn).unwrap();
        (dir, s)
    }

    fn rows(s: &Session, proc_: &str, args: &[Value], col: &str) -> Vec<Value> {
        let ProcedureResult::Rows(mut r) = s.execute_procedure("PKG", proc_, args).unwrap() else {
            panic!("expected rows");
        };
        let mut out = Vec::new();
        while r.next() {
            out.push(r.get(col).unwrap());
        }
        out
    }

    #[test]
    fn connection_strings() {
        let c = parse_connection_string("User Id=csharp;password=csharp;Data Source=XE;").unwrap();
        assert_eq!(
            c,
            ConnectionDescriptor {
                user_id: "csharp".into(),
                password: "csharp".into(),
                data_source: "XE".into()
            }
        );
        let c = parse_connection_string("DATA SOURCE=XE;USER ID=a;PASSWORD=b").unwrap();
        assert_eq!(
            (c.user_id.as_str(), c.password.as_str(), c.data_source.as_str()),
            ("a", "b", "XE")
        );
        assert_eq!(
            parse_connection_string("userid=a;Password=b;datasource=X")
                .unwrap()
                .user_id,
            "a"
        );
        assert_eq!(
            parse_connection_string("User Id=a;Data Source=XE;"),
            Err(ConnectionError::MissingKey("password".into()))
        );
        assert_eq!(
            parse_connection_string("User Id=a;UserId=b;password=c;Data Source=XE"),
            Err(ConnectionError::DuplicateKey("user id".into()))
        );
        assert!(matches!(
            parse_connection_string("User Id;password=c;Data Source=XE"),
            Err(ConnectionError::MalformedPair(_))
        ));
        assert!(matches!(
            parse_connection_string("User Id=;password=c;Data Source=XE"),
            Err(ConnectionError::MalformedPair(_))
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let cat = emp_catalog();
        let text = cat.to_text();
        let back = Catalog::parse(&text).unwrap();
        assert_eq!(back, cat);
        assert_eq!(back.to_text(), text);
        assert!(text.contains("\n2\t!odd\\tname\\\\\t0.5\n"));

        assert!(text.starts_with("#catalog XE v1\n@user csharp\tcsharp\n\n@table EMPLOYEES\n"));

        let mut notes = Catalog::new("N");
        let mut t = Table::new("NOTES", &[("BODY", ColumnType::Text)]).unwrap();
        for body in ["!next_id 9", "", "@table X"] {
            t.push_row(vec![Cell::Text(body.into())]).unwrap();
        }
        notes.add_table(t).unwrap();
        let text = notes.to_text();
        assert!(text.contains("\n\\!next_id 9\n\n@table X\n!next_id 1\n"));
        assert_eq!(Catalog::parse(&text).unwrap(), notes);
    }

    #[test]
    fn corrupt_files_report_lines() {
        assert_eq!(Catalog::parse("").unwrap_err().line, 1);
        let text = emp_catalog().to_text();
        let lines: Vec<&str> = text.lines().collect();
        // Truncate inside the table block, before `!next_id`.
        let truncated = lines[..6].join("\n") + "\n";
        assert_eq!(Catalog::parse(&truncated).unwrap_err().line, 7);
        let mut bad = lines.clone();
        bad[5] = "2\tX\tnot-a-number";
        assert_eq!(Catalog::parse(&(bad.join("\n") + "\n")).unwrap_err().line, 6);
    }

    #[test]
    fn sessions_authenticate() {
        let cat = emp_catalog();
        let (dir, _) = session(&cat);
        let conn = |pw: &str, ds: &str| ConnectionDescriptor {
            user_id: "csharp".into(),
            password: pw.into(),
            data_source: ds.into(),
        };
        assert!(matches!(
            open_session(dir.path(), &conn("nope", "XE")),
            Err(StoreError::AuthenticationFailed(_))
        ));
        assert!(matches!(
            open_session(dir.path(), &conn("csharp", "YY")),
            Err(StoreError::UnknownDataSource(_))
        ));
        assert!(matches!(
            open_session(dir.path(), &conn("csharp", "../XE")),
            Err(StoreError::UnknownDataSource(_))
        ));
    }

    #[test]
    fn procedures() {
        let (_dir, s) = session(&emp_catalog());
        assert_eq!(rows(&s, "all", &[], "id"), [Value::Int(1), Value::Int(2)]);
        assert_eq!(
            rows(&s, "BY_ID", &[Value::Int(1)], "NAME"),
            [Value::Text("KING".into())]
        );
        assert_eq!(rows(&s, "ROWS", &[], "ROW")[0], Value::Text("1|KING|{5000}".into()));

        let ins = s
            .execute_procedure("PKG", "INS", &[Value::Text("NEW".into()), Value::Double(1.0)])
            .unwrap();
        assert!(matches!(
            ins,
            ProcedureResult::Affected {
                count: 1,
                generated_id: Some(3)
            }
        ));
        assert!(matches!(
            s.execute_procedure("PKG", "CNT", &[]).unwrap(),
            ProcedureResult::Scalar(3)
        ));
        let del = s.execute_procedure("PKG", "DEL", &[Value::Int(3)]).unwrap();
        assert!(matches!(del, ProcedureResult::Affected { count: 1, .. }));
        let del = s.execute_procedure("PKG", "DEL", &[Value::Int(3)]).unwrap();
        assert!(matches!(del, ProcedureResult::Affected { count: 0, .. }));
        let ins = s
            .execute_procedure("PKG", "INS", &[Value::Text("N".into()), Value::Double(1.0)])
            .unwrap();
        assert!(matches!(
            ins,
            ProcedureResult::Affected {
                generated_id: Some(4),
                ..
            }
        ));
    }

    #[test]
    fn procedure_errors() {
        let (_dir, s) = session(&emp_catalog());
        assert!(matches!(
            s.execute_procedure("PKG", "NOPE", &[]),
            Err(StoreError::UnknownProcedure { .. })
        ));
        assert!(matches!(
            s.execute_procedure("X", "ALL", &[]),
            Err(StoreError::UnknownProcedure { .. })
        ));
        assert!(matches!(
            s.execute_procedure("PKG", "ALL", &[Value::Int(1)]),
            Err(StoreError::ArgumentMismatch { .. })
        ));
        assert!(matches!(
            s.execute_procedure("PKG", "BY_ID", &[Value::Text("1".into())]),
            Err(StoreError::TypeMismatch { .. })
        ));
        assert!(matches!(
            s.execute_procedure("PKG", "INS", &[Value::Text("x".into()), Value::Int(1)]),
            Err(StoreError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn reader_discipline() {
        let (_dir, s) = session(&emp_catalog());
        let ProcedureResult::Rows(mut r) = s.execute_procedure("PKG", "ALL", &[]).unwrap() else {
            panic!()
        };
        assert!(matches!(r.get("ID"), Err(StoreError::NoCurrentRow)));
        assert!(r.next());
        assert_eq!(r.get("ID").unwrap(), Value::Int(1));
        assert!(matches!(r.get("NOPE"), Err(StoreError::UnknownColumn(_))));
        assert!(r.next());
        assert!(!r.next());
        assert!(!r.next());
        assert!(matches!(r.get("ID"), Err(StoreError::NoCurrentRow)));
    }

    #[test]
    fn registration_checks_references() {
        let mut cat = emp_catalog();
        let bad = Procedure::new("X", ProcKind::Count { table: "NOPE".into() }).unwrap();
        assert!(matches!(
            cat.add_procedure("PKG", bad),
            Err(SchemaError::UnknownTable(_))
        ));
        let bad = Procedure::new(
            "X",
            ProcKind::SelectAll {
                table: "EMPLOYEES".into(),
                projection: Projection::format("{MISSING}", "R").unwrap(),
            },
        )
        .unwrap();
        assert!(matches!(
            cat.add_procedure("PKG", bad),
            Err(SchemaError::UnknownColumn { .. })
        ));
        let dup = Procedure::new(
            "all",
            ProcKind::Count {
                table: "EMPLOYEES".into(),
            },
        )
        .unwrap();
        assert!(matches!(
            cat.add_procedure("PKG", dup),
            Err(SchemaError::DuplicateProcedure { .. })
        ));
        assert!(Projection::parse("fmt:R:{A").is_err());
        assert!(Projection::parse("fmt:R:a}b").is_err());
    }

    #[test]
    fn autosave_persists_mutations() {
        let (dir, mut s) = session(&emp_catalog());
        s.set_autosave(true);
        s.execute_procedure("PKG", "DEL", &[Value::Int(1)]).unwrap();
        let back = load_catalog(&catalog_path(dir.path(), "XE")).unwrap();
        assert_eq!(back.table("EMPLOYEES").unwrap().rows().len(), 1);
        assert_eq!(back, s.snapshot());
    }
}
