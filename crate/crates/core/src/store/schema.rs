use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::value::{ColumnKind, Value};

/// One of the three datamart namespaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Raw,
    Cdm,
    Results,
}

impl Namespace {
    pub const ALL: [Namespace; 3] = [Namespace::Raw, Namespace::Cdm, Namespace::Results];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Raw => "raw",
            Namespace::Cdm => "cdm",
            Namespace::Results => "results",
        }
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Namespace {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Namespace::Raw),
            "cdm" => Ok(Namespace::Cdm),
            "results" => Ok(Namespace::Results),
            other => Err(format!("unknown namespace {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Column {
    pub name: &'static str,
    pub kind: ColumnKind,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableSchema {
    pub namespace: Namespace,
    pub name: &'static str,
    pub columns: Vec<Column>,
}

impl TableSchema {
    pub fn column_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.columns.iter().map(|c| c.name)
    }

    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.namespace, self.name)
    }
}

pub type Row = Vec<Value>;

/// A typed view of one table row.
pub trait Record: Sized {
    const NAMESPACE: Namespace;
    const TABLE: &'static str;

    fn columns() -> Vec<Column>;
    fn to_row(&self) -> Row;
    fn from_row(row: &[Value]) -> Result<Self, String>;

    fn schema() -> TableSchema {
        Self::schema_for(Self::NAMESPACE, Self::TABLE)
    }

    /// Same column layout registered under another table name.
    fn schema_for(namespace: Namespace, name: &'static str) -> TableSchema {
        TableSchema {
            namespace,
            name,
            columns: Self::columns(),
        }
    }
}

/// Declares a row struct together with its [`Record`] implementation.
macro_rules! record {
    (
        $(#[$meta:meta])*
        pub struct $name:ident in $ns:ident . $table:literal {
            $( $(#[$fmeta:meta])* pub $field:ident : $ty:ty ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
        pub struct $name {
            $( $(#[$fmeta])* pub $field: $ty ),*
        }

        impl $crate::store::Record for $name {
            const NAMESPACE: $crate::store::Namespace = $crate::store::Namespace::$ns;
            const TABLE: &'static str = $table;

            fn columns() -> Vec<$crate::store::Column> {
                vec![$(
                    $crate::store::Column {
                        name: stringify!($field),
                        kind: <$ty as $crate::store::Cell>::KIND,
                        nullable: <$ty as $crate::store::Cell>::NULLABLE,
                    }
                ),*]
            }

            fn to_row(&self) -> $crate::store::Row {
                vec![$( $crate::store::Cell::to_value(&self.$field) ),*]
            }

            fn from_row(row: &[$crate::store::Value]) -> Result<Self, String> {
                let mut cells = row.iter();
                Ok(Self {$(
                    $field: {
                        let v = cells
                            .next()
                            .ok_or_else(|| format!("missing column {}", stringify!($field)))?;
                        <$ty as $crate::store::Cell>::from_value(v).ok_or_else(|| {
                            format!("column {} holds unexpected value {:?}", stringify!($field), v)
                        })?
                    }
                ),*})
            }
        }
    };
}

pub(crate) use record;

/// The closed set of tables the datamart may hold.
#[derive(Debug, Clone)]
pub struct SchemaRegistry {
    tables: Vec<TableSchema>,
}

impl SchemaRegistry {
    pub fn standard() -> Self {
        use crate::characterize::StatRecord;
        use crate::etl::Exclusion;
        use crate::qa::QaRow;
        use crate::store::records::*;
        use crate::vocab::{Concept, ConceptRelationship};

        let tables = vec![
            RawDemographics::schema(),
            RawDiagnosis::schema(),
            RawEncounter::schema(),
            RawNoteEntry::schema_for(Namespace::Raw, ENCOUNTER_NOTES),
            RawProcedure::schema(),
            RawNoteEntry::schema_for(Namespace::Raw, PROCEDURE_NOTES),
            Person::schema(),
            Death::schema(),
            ObservationPeriod::schema(),
            ConditionOccurrence::schema(),
            VisitOccurrence::schema(),
            ProcedureOccurrence::schema(),
            Note::schema(),
            NoteNlp::schema(),
            CohortRow::schema(),
            Concept::schema(),
            ConceptRelationship::schema(),
            Exclusion::schema(),
            QaRow::schema(),
            StatRecord::schema(),
        ];
        SchemaRegistry { tables }
    }

    pub fn namespaces(&self) -> [Namespace; 3] {
        Namespace::ALL
    }

    pub fn get(&self, namespace: Namespace, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.namespace == namespace && t.name == name)
    }

    pub fn tables(&self, namespace: Namespace) -> impl Iterator<Item = &TableSchema> {
        self.tables.iter().filter(move |t| t.namespace == namespace)
    }

    pub fn all(&self) -> &[TableSchema] {
        &self.tables
    }
}
