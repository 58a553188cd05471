//! Column-oriented event tables.
//!
//! A [`Dataset`] pairs an ordered schema of [`VariableSpec`]s with one column
//! per variable. Actor ids and categorical values are stored as strings, every
//! other kind as `f64`. Construction validates the whole table, after which the
//! value is immutable: transformations return new datasets.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Actor,
    Timestamp,
    Covariate,
    Outcome,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Actor => "actor",
            Role::Timestamp => "timestamp",
            Role::Covariate => "covariate",
            Role::Outcome => "outcome",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Binary,
    Continuous,
    Categorical,
    Count,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Binary => "binary",
            Kind::Continuous => "continuous",
            Kind::Categorical => "categorical",
            Kind::Count => "count",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub role: Role,
    pub kind: Kind,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, role: Role, kind: Kind) -> Self {
        Self {
            name: name.into(),
            role,
            kind,
        }
    }

    pub fn actor(name: impl Into<String>) -> Self {
        Self::new(name, Role::Actor, Kind::Categorical)
    }

    pub fn timestamp(name: impl Into<String>) -> Self {
        Self::new(name, Role::Timestamp, Kind::Continuous)
    }

    pub fn covariate(name: impl Into<String>, kind: Kind) -> Self {
        Self::new(name, Role::Covariate, kind)
    }

    pub fn outcome(name: impl Into<String>, kind: Kind) -> Self {
        Self::new(name, Role::Outcome, kind)
    }

    /// Whether values of this variable are held as strings.
    pub fn is_textual(&self) -> bool {
        self.role == Role::Actor || self.kind == Kind::Categorical
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Column::Numeric(v) => Some(v),
            Column::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&[String]> {
        match self {
            Column::Text(v) => Some(v),
            Column::Numeric(_) => None,
        }
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            Column::Numeric(v) => Value::Number(v[row]),
            Column::Text(v) => Value::Text(v[row].clone()),
        }
    }

    /// Gathers `rows` into a new column, in the given order.
    pub fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Text(v) => Column::Text(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    fn render(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => format_number(v[row]),
            Column::Text(v) => v[row].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
}

/// Row view of a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub actor_id: Option<String>,
    pub timestamp: Option<f64>,
    pub covariates: Vec<(String, Value)>,
    pub outcome: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<VariableSpec>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    /// Builds and validates a dataset. `columns[i]` holds the values of
    /// `schema[i]`.
    pub fn new(schema: Vec<VariableSpec>, columns: Vec<Column>) -> Result<Self> {
        validate_schema(&schema)?;
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} variables but {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Column::len);
        for (spec, column) in schema.iter().zip(&columns) {
            if column.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column \"{}\" has {} values, expected {}",
                    spec.name,
                    column.len(),
                    n_rows
                )));
            }
            validate_column(spec, column)?;
        }
        Ok(Self {
            schema,
            columns,
            n_rows,
        })
    }

    /// Skips validation; callers guarantee the invariants already hold.
    pub(crate) fn from_parts(schema: Vec<VariableSpec>, columns: Vec<Column>) -> Self {
        let n_rows = columns.first().map_or(0, Column::len);
        debug_assert!(columns.iter().all(|c| c.len() == n_rows));
        Self {
            schema,
            columns,
            n_rows,
        }
    }

    pub fn schema(&self) -> &[VariableSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.name == name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn spec(&self, name: &str) -> Result<&VariableSpec> {
        self.index_of(name)
            .map(|i| &self.schema[i])
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.index_of(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        self.column(name)?
            .as_numeric()
            .ok_or_else(|| Error::WrongVariable {
                name: name.to_string(),
                reason: "not numeric".to_string(),
            })
    }

    pub fn role_index(&self, role: Role) -> Option<usize> {
        self.schema.iter().position(|s| s.role == role)
    }

    pub fn role_spec(&self, role: Role) -> Option<&VariableSpec> {
        self.role_index(role).map(|i| &self.schema[i])
    }

    pub fn outcome_spec(&self) -> &VariableSpec {
        let i = self
            .role_index(Role::Outcome)
            .expect("schema has an outcome");
        &self.schema[i]
    }

    pub fn outcome_values(&self) -> &[f64] {
        let i = self
            .role_index(Role::Outcome)
            .expect("schema has an outcome");
        self.columns[i]
            .as_numeric()
            .expect("outcome columns are numeric")
    }

    pub fn actor_ids(&self) -> Result<&[String]> {
        let i = self
            .role_index(Role::Actor)
            .ok_or(Error::MissingRole(Role::Actor))?;
        Ok(self.columns[i].as_text().expect("actor columns are text"))
    }

    pub fn timestamps(&self) -> Result<&[f64]> {
        let i = self
            .role_index(Role::Timestamp)
            .ok_or(Error::MissingRole(Role::Timestamp))?;
        Ok(self.columns[i]
            .as_numeric()
            .expect("timestamp columns are numeric"))
    }

    pub fn row(&self, row: usize) -> EventRecord {
        assert!(row < self.n_rows, "row {row} out of range");
        let mut record = EventRecord {
            actor_id: None,
            timestamp: None,
            covariates: Vec::new(),
            outcome: Value::Number(f64::NAN),
        };
        for (spec, column) in self.schema.iter().zip(&self.columns) {
            let value = column.value(row);
            match (spec.role, value) {
                (Role::Actor, Value::Text(s)) => record.actor_id = Some(s),
                (Role::Timestamp, Value::Number(t)) => record.timestamp = Some(t),
                (Role::Outcome, v) => record.outcome = v,
                (_, v) => record.covariates.push((spec.name.clone(), v)),
            }
        }
        record
    }

    /// New dataset holding `rows` (in that order) of every column.
    pub fn take(&self, rows: &[usize]) -> Dataset {
        Dataset::from_parts(
            self.schema.clone(),
            self.columns.iter().map(|c| c.take(rows)).collect(),
        )
    }

    /// Appends `spec`/`column`, replacing any existing variable of the same
    /// name in place.
    pub fn with_column(&self, spec: VariableSpec, column: Column) -> Result<Dataset> {
        let mut schema = self.schema.clone();
        let mut columns = self.columns.clone();
        match self.index_of(&spec.name) {
            Some(i) => {
                schema[i] = spec;
                columns[i] = column;
            }
            None => {
                schema.push(spec);
                columns.push(column);
            }
        }
        Dataset::new(schema, columns)
    }

    /// Swaps in new values for an existing column, keeping its spec. The
    /// caller guarantees the values are a permutation (or otherwise valid).
    pub(crate) fn replace_values(&self, index: usize, column: Column) -> Dataset {
        let mut columns = self.columns.clone();
        columns[index] = column;
        Dataset::from_parts(self.schema.clone(), columns)
    }

    pub fn sort_by_actor_time(&self) -> Result<Dataset> {
        sort_by_actor_time(self)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.schema.iter().map(|s| s.name.as_str()))?;
        for row in 0..self.n_rows {
            out.write_record(self.columns.iter().map(|c| c.render(row)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

pub fn load_csv(path: impl AsRef<Path>, schema: &[VariableSpec]) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Reads a headed CSV, keeping only the columns named in `schema` (in schema
/// order). Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, schema: &[VariableSpec]) -> Result<Dataset> {
    validate_schema(schema)?;
    let mut input = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = input.headers()?.clone();
    let positions = schema
        .iter()
        .map(|spec| {
            header
                .iter()
                .position(|h| h == spec.name)
                .ok_or_else(|| Error::MissingColumn(spec.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<Column> = schema
        .iter()
        .map(|s| {
            if s.is_textual() {
                Column::Text(Vec::new())
            } else {
                Column::Numeric(Vec::new())
            }
        })
        .collect();

    for (i, record) in input.records().enumerate() {
        let record = record?;
        let row = i + 1;
        for ((spec, &pos), column) in schema.iter().zip(&positions).zip(columns.iter_mut()) {
            let raw = record.get(pos).unwrap_or("");
            match column {
                Column::Text(values) => {
                    if raw.is_empty() {
                        return Err(Error::MissingValue {
                            row,
                            column: spec.name.clone(),
                        });
                    }
                    values.push(raw.to_string());
                }
                Column::Numeric(values) => {
                    let trimmed = raw.trim();
                    if trimmed.is_empty() {
                        return Err(Error::MissingValue {
                            row,
                            column: spec.name.clone(),
                        });
                    }
                    let v: f64 = trimmed.parse().map_err(|_| Error::Parse {
                        row,
                        column: spec.name.clone(),
                        value: raw.to_string(),
                    })?;
                    check_numeric(spec, row, v)?;
                    values.push(v);
                }
            }
        }
    }
    Dataset::new(schema.to_vec(), columns)
}

pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut input = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    Ok(input.headers()?.iter().map(str::to_string).collect())
}

/// Kind implied by a column's raw values: `{0,1}` is binary, non-negative
/// integers are counts, other numbers continuous, anything else categorical.
/// Blank cells are ignored; a column with no values is continuous.
pub fn infer_kind<'a>(values: impl IntoIterator<Item = &'a str>) -> Kind {
    let (mut binary, mut count) = (true, true);
    for raw in values {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                binary &= v == 0.0 || v == 1.0;
                count &= v >= 0.0 && v.fract() == 0.0;
            }
            _ => return Kind::Categorical,
        }
    }
    if binary {
        Kind::Binary
    } else if count {
        Kind::Count
    } else {
        Kind::Continuous
    }
}

/// Builds a schema for the named columns of a CSV from their roles and
/// values. Actors are categorical and timestamps continuous; a non-binary
/// numeric outcome is continuous.
pub fn infer_schema<R: Read>(reader: R, roles: &[(String, Role)]) -> Result<Vec<VariableSpec>> {
    let mut input = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = input.headers()?.clone();
    let positions = roles
        .iter()
        .map(|(name, _)| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); roles.len()];
    for record in input.records() {
        let record = record?;
        for (values, &pos) in raw.iter_mut().zip(&positions) {
            values.push(record.get(pos).unwrap_or("").to_string());
        }
    }
    let schema = roles
        .iter()
        .zip(&raw)
        .map(|((name, role), values)| {
            let inferred = infer_kind(values.iter().map(String::as_str));
            let kind = match role {
                Role::Actor => Kind::Categorical,
                Role::Timestamp => Kind::Continuous,
                Role::Outcome => match inferred {
                    Kind::Binary => Kind::Binary,
                    Kind::Categorical => {
                        return Err(Error::WrongVariable {
                            name: name.clone(),
                            reason: "outcome must be numeric".into(),
                        })
                    }
                    _ => Kind::Continuous,
                },
                Role::Covariate => inferred,
            };
            Ok(VariableSpec::new(name.clone(), *role, kind))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_schema(&schema)?;
    Ok(schema)
}

/// Rows ordered by `(actor_id, timestamp)`, stable for ties.
pub fn sort_by_actor_time(d: &Dataset) -> Result<Dataset> {
    let order = actor_time_order(d)?;
    Ok(d.take(&order))
}

/// Row indices in `(actor_id, timestamp)` order, stable for ties.
pub fn actor_time_order(d: &Dataset) -> Result<Vec<usize>> {
    let actors = d.actor_ids()?;
    let times = d.timestamps()?;
    let mut order: Vec<usize> = (0..d.n_rows()).collect();
    order.sort_by(|&a, &b| match actors[a].cmp(&actors[b]) {
        Ordering::Equal => times[a].total_cmp(&times[b]),
        other => other,
    });
    Ok(order)
}

fn validate_schema(schema: &[VariableSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for spec in schema {
        if spec.name.is_empty() {
            return Err(Error::Schema("empty variable name".into()));
        }
        if !seen.insert(spec.name.as_str()) {
            return Err(Error::Schema(format!(
                "duplicate variable \"{}\"",
                spec.name
            )));
        }
    }
    let count = |role| schema.iter().filter(|s| s.role == role).count();
    match count(Role::Outcome) {
        1 => {}
        n => {
            return Err(Error::Schema(format!(
                "exactly one outcome variable required, found {n}"
            )))
        }
    }
    for role in [Role::Timestamp, Role::Actor] {
        if count(role) > 1 {
            return Err(Error::Schema(format!("more than one {role} variable")));
        }
    }
    for spec in schema {
        match spec.role {
            Role::Timestamp if !matches!(spec.kind, Kind::Continuous | Kind::Count) => {
                return Err(Error::Schema(format!(
                    "timestamp \"{}\" must be continuous or count, not {}",
                    spec.name, spec.kind
                )));
            }
            Role::Outcome if spec.kind == Kind::Categorical => {
                return Err(Error::Schema(format!(
                    "outcome \"{}\" cannot be categorical",
                    spec.name
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

fn validate_column(spec: &VariableSpec, column: &Column) -> Result<()> {
    match (spec.is_textual(), column) {
        (true, Column::Text(values)) => {
            if let Some(i) = values.iter().position(String::is_empty) {
                return Err(Error::MissingValue {
                    row: i + 1,
                    column: spec.name.clone(),
                });
            }
            Ok(())
        }
        (false, Column::Numeric(values)) => values
            .iter()
            .enumerate()
            .try_for_each(|(i, &v)| check_numeric(spec, i + 1, v)),
        (true, Column::Numeric(_)) => Err(Error::Schema(format!(
            "column \"{}\" must hold text values",
            spec.name
        ))),
        (false, Column::Text(_)) => Err(Error::Schema(format!(
            "column \"{}\" must hold numeric values",
            spec.name
        ))),
    }
}

fn check_numeric(spec: &VariableSpec, row: usize, v: f64) -> Result<()> {
    if v.is_nan() {
        return Err(Error::MissingValue {
            row,
            column: spec.name.clone(),
        });
    }
    if !v.is_finite() {
        return Err(Error::InvalidValue {
            row,
            column: spec.name.clone(),
            message: format!("non-finite value {v}"),
        });
    }
    match spec.kind {
        Kind::Binary if v != 0.0 && v != 1.0 => Err(Error::NotBinary {
            row,
            column: spec.name.clone(),
            value: format_number(v),
        }),
        Kind::Count if v < 0.0 || v.fract() != 0.0 => Err(Error::InvalidValue {
            row,
            column: spec.name.clone(),
            message: format!("count value must be a non-negative integer, got {v}"),
        }),
        _ => Ok(()),
    }
}
