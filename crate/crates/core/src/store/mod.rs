//! Typed tabular store with `raw`, `cdm` and `results` namespaces.
//!
//! Tables are held in memory and persisted as one RFC 4180 CSV file per
//! table under `<root>/<namespace>/<table>.csv`. The set of tables is fixed by
//! [`SchemaRegistry::standard`]; nothing outside it can be created.

mod records;
mod schema;
mod value;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub use records::*;
pub(crate) use schema::record;
pub use schema::{Column, Namespace, Record, Row, SchemaRegistry, TableSchema};
pub use value::{Cell, ColumnKind, Value, DATE_FORMAT};

use crate::error::{Error, Result};

/// Rows of one table plus its schema.
#[derive(Debug, Clone)]
pub struct Table {
    schema: TableSchema,
    rows: Vec<Row>,
}

impl Table {
    fn new(schema: TableSchema) -> Self {
        Table {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn push(&mut self, row: Row) -> Result<()> {
        if row.len() != self.schema.columns.len() {
            return Err(Error::Schema {
                table: self.schema.qualified_name(),
                message: format!(
                    "row has {} cells, schema has {} columns",
                    row.len(),
                    self.schema.columns.len()
                ),
            });
        }
        for (cell, col) in row.iter().zip(&self.schema.columns) {
            if !cell.matches_kind(col.kind, col.nullable) {
                return Err(Error::Schema {
                    table: self.schema.qualified_name(),
                    message: format!("column {} ({}) cannot hold {:?}", col.name, col.kind, cell),
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }
}

/// The datamart: every registered table, optionally backed by a directory.
#[derive(Debug, Clone)]
pub struct Datamart {
    root: Option<PathBuf>,
    registry: SchemaRegistry,
    tables: BTreeMap<(Namespace, &'static str), Table>,
}

impl Datamart {
    /// An empty store with no backing directory.
    pub fn in_memory() -> Self {
        let mut mart = Datamart {
            root: None,
            registry: SchemaRegistry::standard(),
            tables: BTreeMap::new(),
        };
        mart.create_schemas().expect("in-memory schema creation cannot fail");
        mart
    }

    /// Opens (or initializes) a directory-backed store. Tables whose CSV file
    /// already exists are loaded; the rest start empty.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let mut mart = Datamart {
            root: Some(root.into()),
            registry: SchemaRegistry::standard(),
            tables: BTreeMap::new(),
        };
        mart.create_schemas()?;
        let existing: Vec<(Namespace, &'static str, PathBuf)> = mart
            .registry
            .all()
            .iter()
            .map(|s| (s.namespace, s.name, mart.table_path(s.namespace, s.name).unwrap()))
            .filter(|(_, _, p)| p.exists())
            .collect();
        for (ns, name, path) in existing {
            mart.load_csv(ns, name, &path)?;
        }
        Ok(mart)
    }

    /// Ensures every namespace directory and every registered table exists.
    /// Idempotent: tables that already hold rows keep them.
    pub fn create_schemas(&mut self) -> Result<&SchemaRegistry> {
        if let Some(root) = &self.root {
            for ns in Namespace::ALL {
                let dir = root.join(ns.as_str());
                fs::create_dir_all(&dir).map_err(|source| Error::Init {
                    path: dir.clone(),
                    source,
                })?;
                probe_writable(&dir).map_err(|source| Error::Init { path: dir, source })?;
            }
        }
        for schema in self.registry.all() {
            self.tables
                .entry((schema.namespace, schema.name))
                .or_insert_with(|| Table::new(schema.clone()));
        }
        Ok(&self.registry)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.registry
    }

    /// `<root>/<namespace>/<table>.csv`, or `None` for in-memory stores.
    pub fn table_path(&self, ns: Namespace, table: &str) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join(ns.as_str()).join(format!("{table}.csv")))
    }

    pub fn table(&self, ns: Namespace, name: &str) -> Result<&Table> {
        self.tables
            .iter()
            .find(|((n, t), _)| *n == ns && *t == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::NotFound(format!("table {ns}.{name}")))
    }

    fn table_mut(&mut self, ns: Namespace, name: &str) -> Result<&mut Table> {
        self.tables
            .iter_mut()
            .find(|((n, t), _)| *n == ns && *t == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::NotFound(format!("table {ns}.{name}")))
    }

    pub fn row_count(&self, ns: Namespace, name: &str) -> Result<usize> {
        self.table(ns, name).map(Table::len)
    }

    pub fn clear(&mut self, ns: Namespace, name: &str) -> Result<()> {
        self.table_mut(ns, name)?.rows.clear();
        Ok(())
    }

    /// Clears every table in a namespace.
    pub fn clear_namespace(&mut self, ns: Namespace) {
        for ((n, _), t) in self.tables.iter_mut() {
            if *n == ns {
                t.rows.clear();
            }
        }
    }

    /// Appends typed rows to the record's home table.
    pub fn insert<R: Record>(&mut self, rows: impl IntoIterator<Item = R>) -> Result<usize> {
        self.insert_into(R::NAMESPACE, R::TABLE, rows)
    }

    /// Appends typed rows to a table sharing the record's column layout.
    pub fn insert_into<R: Record>(
        &mut self,
        ns: Namespace,
        name: &str,
        rows: impl IntoIterator<Item = R>,
    ) -> Result<usize> {
        let table = self.table_mut(ns, name)?;
        check_layout::<R>(table)?;
        let before = table.rows.len();
        for r in rows {
            table.push(r.to_row())?;
        }
        Ok(table.rows.len() - before)
    }

    /// Replaces the contents of the record's home table.
    pub fn replace<R: Record>(&mut self, rows: impl IntoIterator<Item = R>) -> Result<usize> {
        self.clear(R::NAMESPACE, R::TABLE)?;
        self.insert(rows)
    }

    pub fn records<R: Record>(&self) -> Result<Vec<R>> {
        self.records_from(R::NAMESPACE, R::TABLE)
    }

    pub fn records_from<R: Record>(&self, ns: Namespace, name: &str) -> Result<Vec<R>> {
        let table = self.table(ns, name)?;
        check_layout::<R>(table)?;
        table
            .rows
            .iter()
            .map(|row| {
                R::from_row(row).map_err(|message| Error::Schema {
                    table: table.schema.qualified_name(),
                    message,
                })
            })
            .collect()
    }

    /// Appends the rows of a CSV file. The header must list the schema's
    /// columns exactly, in order. Returns the number of data rows read.
    pub fn load_csv(&mut self, ns: Namespace, name: &str, path: &Path) -> Result<usize> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        self.load_csv_from(ns, name, file)
    }

    pub fn load_csv_from(&mut self, ns: Namespace, name: &str, input: impl io::Read) -> Result<usize> {
        let table = self.table_mut(ns, name)?;
        let qualified = table.schema.qualified_name();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let header = reader.headers()?.clone();
        check_header(&table.schema, &header)?;

        let mut parsed = Vec::new();
        let mut record = csv::StringRecord::new();
        while reader.read_record(&mut record)? {
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != table.schema.columns.len() {
                return Err(Error::Row {
                    table: qualified,
                    line,
                    message: format!("expected {} fields, found {}", table.schema.columns.len(), record.len()),
                });
            }
            let row = record
                .iter()
                .zip(&table.schema.columns)
                .map(|(field, col)| {
                    Value::parse(col.kind, col.nullable, field).map_err(|m| format!("column {}: {m}", col.name))
                })
                .collect::<Result<Row, String>>()
                .map_err(|message| Error::Row {
                    table: qualified.clone(),
                    line,
                    message,
                })?;
            parsed.push(row);
        }
        let n = parsed.len();
        table.rows.extend(parsed);
        Ok(n)
    }

    /// Writes a table as CSV with a header row. Returns the number of data rows.
    pub fn export_csv(&self, ns: Namespace, name: &str, path: &Path) -> Result<usize> {
        let table = self.table(ns, name)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let n = write_table(table, io::BufWriter::new(file))?;
        Ok(n)
    }

    pub fn export_csv_to(&self, ns: Namespace, name: &str, out: impl io::Write) -> Result<usize> {
        write_table(self.table(ns, name)?, out)
    }

    /// Persists one table to its file under the store root.
    pub fn save_table(&self, ns: Namespace, name: &str) -> Result<usize> {
        let path = self
            .table_path(ns, name)
            .ok_or_else(|| Error::Config("store has no root directory".into()))?;
        self.export_csv(ns, name, &path)
    }

    pub fn save_namespace(&self, ns: Namespace) -> Result<()> {
        for schema in self.registry.tables(ns) {
            self.save_table(ns, schema.name)?;
        }
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        for ns in Namespace::ALL {
            self.save_namespace(ns)?;
        }
        Ok(())
    }

    /// Every cdm event row whose `person_id` is absent from `cdm.person`.
    pub fn orphaned_events(&self) -> Result<Vec<(String, i64)>> {
        let persons: std::collections::HashSet<i64> =
            self.records::<Person>()?.into_iter().map(|p| p.person_id).collect();
        let mut orphans = Vec::new();
        for table in [
            "death",
            "observation_period",
            "condition_occurrence",
            "visit_occurrence",
            "procedure_occurrence",
            "note",
        ] {
            let t = self.table(Namespace::Cdm, table)?;
            let idx = t
                .schema
                .columns
                .iter()
                .position(|c| c.name == "person_id")
                .expect("event tables carry person_id");
            for row in &t.rows {
                if let Value::Int(pid) = row[idx] {
                    if !persons.contains(&pid) {
                        orphans.push((table.to_owned(), pid));
                    }
                }
            }
        }
        Ok(orphans)
    }
}

fn probe_writable(dir: &Path) -> io::Result<()> {
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)
}

fn check_layout<R: Record>(table: &Table) -> Result<()> {
    let cols = R::columns();
    if cols != table.schema.columns {
        return Err(Error::Schema {
            table: table.schema.qualified_name(),
            message: "record layout does not match table schema".into(),
        });
    }
    Ok(())
}

fn check_header(schema: &TableSchema, header: &csv::StringRecord) -> Result<()> {
    let schema_err = |message: String| Error::Schema {
        table: schema.qualified_name(),
        message,
    };
    for h in header.iter() {
        if !schema.column_names().any(|c| c == h) {
            return Err(schema_err(format!("unknown column {h:?}")));
        }
    }
    for c in schema.column_names() {
        if !header.iter().any(|h| h == c) {
            return Err(schema_err(format!("missing column {c:?}")));
        }
    }
    if !header.iter().eq(schema.column_names()) {
        return Err(schema_err(format!(
            "columns out of order; expected {}",
            schema.column_names().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn write_table(table: &Table, out: impl io::Write) -> Result<usize> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    writer.write_record(table.schema.column_names())?;
    for row in &table.rows {
        writer.write_record(row.iter().map(|v| v.render().into_owned()))?;
    }
    writer.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(table.rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, DATE_FORMAT).unwrap()
    }

    fn demo(id: i64, death: Option<&str>) -> RawDemographics {
        RawDemographics {
            patient_id: id,
            birth_date: d("1950-03-01"),
            death_date: death.map(d),
            gender: "FEMALE".into(),
            race: "WHITE".into(),
            ethnicity: "NOT HISPANIC OR LATINO".into(),
        }
    }

    #[test]
    fn fresh_store_has_three_empty_namespaces() {
        let mart = Datamart::in_memory();
        for ns in Namespace::ALL {
            assert!(mart.registry().tables(ns).count() > 0);
            for t in mart.registry().tables(ns) {
                assert_eq!(mart.row_count(ns, t.name).unwrap(), 0);
            }
        }
        assert_eq!(mart.row_count(Namespace::Cdm, "person").unwrap(), 0);
        assert!(mart.registry().get(Namespace::Cdm, "concept").is_some());
    }

    #[test]
    fn create_schemas_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut mart = Datamart::open(dir.path()).unwrap();
        mart.insert(vec![demo(1, None)]).unwrap();
        mart.create_schemas().unwrap();
        assert_eq!(mart.row_count(Namespace::Raw, "demographics").unwrap(), 1);
        mart.save().unwrap();
        let reopened = Datamart::open(dir.path()).unwrap();
        assert_eq!(reopened.row_count(Namespace::Raw, "demographics").unwrap(), 1);
    }

    #[test]
    fn unwritable_root_is_an_init_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("not_a_dir");
        fs::write(&file, b"x").unwrap();
        let err = Datamart::open(file.join("store")).unwrap_err();
        assert!(matches!(err, Error::Init { .. }), "{err}");
    }

    #[test]
    fn unknown_table_is_not_found() {
        let mart = Datamart::in_memory();
        assert!(matches!(
            mart.row_count(Namespace::Cdm, "drug_exposure"),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn load_counts_rows() {
        let csv = "patient_id,birth_date,death_date,gender,race,ethnicity\n\
                   1,1950-01-01,,MALE,WHITE,HISPANIC OR LATINO\n\
                   2,1960-02-02,2020-05-05,FEMALE,ASIAN,UNKNOWN\n\
                   3,1970-03-03,,FEMALE,WHITE,NOT HISPANIC OR LATINO\n";
        let mut mart = Datamart::in_memory();
        let n = mart
            .load_csv_from(Namespace::Raw, "demographics", csv.as_bytes())
            .unwrap();
        assert_eq!(n, 3);
        let rows = mart.records::<RawDemographics>().unwrap();
        assert_eq!(rows[1].death_date, Some(d("2020-05-05")));
        assert_eq!(rows[0].death_date, None);
    }

    #[test]
    fn extra_column_is_a_schema_error() {
        let csv = "patient_id,birth_date,death_date,gender,race,ethnicity,foo\n";
        let mut mart = Datamart::in_memory();
        let err = mart
            .load_csv_from(Namespace::Raw, "demographics", csv.as_bytes())
            .unwrap_err();
        match err {
            Error::Schema { message, .. } => assert!(message.contains("foo"), "{message}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_cell_reports_line_number() {
        let csv = "patient_id,birth_date,death_date,gender,race,ethnicity\n\
                   1,1950-01-01,,MALE,WHITE,X\n\
                   2,not-a-date,,MALE,WHITE,X\n";
        let mut mart = Datamart::in_memory();
        let err = mart
            .load_csv_from(Namespace::Raw, "demographics", csv.as_bytes())
            .unwrap_err();
        match err {
            Error::Row { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("birth_date"));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(mart.row_count(Namespace::Raw, "demographics").unwrap(), 0);
    }

    #[test]
    fn empty_table_exports_header_only() {
        let mart = Datamart::in_memory();
        let mut out = Vec::new();
        assert_eq!(mart.export_csv_to(Namespace::Cdm, "death", &mut out).unwrap(), 0);
        assert_eq!(String::from_utf8(out).unwrap(), "person_id,death_date\r\n");
    }

    #[test]
    fn null_exports_as_empty_field() {
        let mut mart = Datamart::in_memory();
        mart.insert(vec![demo(7, None)]).unwrap();
        let mut out = Vec::new();
        mart.export_csv_to(Namespace::Raw, "demographics", &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("7,1950-03-01,,FEMALE"), "{text}");
    }

    #[test]
    fn multiline_non_ascii_note_round_trips() {
        let mut mart = Datamart::in_memory();
        let entry = RawNoteEntry {
            patient_id: 1,
            parent_id: 10,
            parent_kind: NoteParentKind::Encounter,
            entry_seq: 1,
            note_date: d("2016-01-05"),
            text_fragment: "Pt seen, \"stable\".\nGait improved — café, naïve, 患者.".into(),
        };
        mart.insert(vec![entry.clone()]).unwrap();
        let mut out = Vec::new();
        mart.export_csv_to(Namespace::Raw, ENCOUNTER_NOTES, &mut out).unwrap();
        let mut other = Datamart::in_memory();
        other
            .load_csv_from(Namespace::Raw, ENCOUNTER_NOTES, out.as_slice())
            .unwrap();
        assert_eq!(
            other
                .records_from::<RawNoteEntry>(Namespace::Raw, ENCOUNTER_NOTES)
                .unwrap(),
            vec![entry]
        );
    }

    #[test]
    fn insert_rejects_foreign_layout() {
        let mut mart = Datamart::in_memory();
        let err = mart
            .insert_into(Namespace::Cdm, "person", vec![demo(1, None)])
            .unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn orphaned_events_detected() {
        let mut mart = Datamart::in_memory();
        mart.insert(vec![Death {
            person_id: 99,
            death_date: d("2020-01-01"),
        }])
        .unwrap();
        assert_eq!(mart.orphaned_events().unwrap(), vec![("death".to_owned(), 99)]);
    }
}
