//! Structured directory entries and their CSV encoding: four variables per
//! entry, one row per entry, a fixed header.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DirectoryId, ProvenanceTag};

/// The exact header row of every dataset CSV.
pub const CSV_HEADER: [&str; 4] = ["first and middle names", "surname", "occupation", "address"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("wrong CSV header: expected {expected:?}, got {got:?}")]
    WrongHeader { expected: String, got: String },
    #[error("row {row}: expected 4 columns, got {got}")]
    WrongColumnCount { row: u64, got: usize },
    #[error("row {row}: all four fields empty")]
    EmptyRecord { row: u64 },
    #[error("CSV read failed: {0}")]
    Csv(#[from] csv::Error),
}

/// The four variables extracted per directory entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    FirstAndMiddleNames,
    Surname,
    Occupation,
    Address,
}

impl Variable {
    pub const ALL: [Variable; 4] = [
        Variable::FirstAndMiddleNames,
        Variable::Surname,
        Variable::Occupation,
        Variable::Address,
    ];

    /// The JSON object key / CSV column name of this variable.
    pub fn key(self) -> &'static str {
        match self {
            Variable::FirstAndMiddleNames => "first and middle names",
            Variable::Surname => "surname",
            Variable::Occupation => "occupation",
            Variable::Address => "address",
        }
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// One extracted entry. A missing variable is `None`; strings are kept
/// verbatim as emitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub first_and_middle_names: Option<String>,
    pub surname: Option<String>,
    pub occupation: Option<String>,
    pub address: Option<String>,
}

impl EntryRecord {
    pub fn get(&self, var: Variable) -> Option<&str> {
        match var {
            Variable::FirstAndMiddleNames => self.first_and_middle_names.as_deref(),
            Variable::Surname => self.surname.as_deref(),
            Variable::Occupation => self.occupation.as_deref(),
            Variable::Address => self.address.as_deref(),
        }
    }

    pub fn set(&mut self, var: Variable, value: Option<String>) {
        let slot = match var {
            Variable::FirstAndMiddleNames => &mut self.first_and_middle_names,
            Variable::Surname => &mut self.surname,
            Variable::Occupation => &mut self.occupation,
            Variable::Address => &mut self.address,
        };
        *slot = value;
    }

    pub fn is_all_null(&self) -> bool {
        Variable::ALL.iter().all(|v| self.get(*v).is_none())
    }
}

/// An ordered set of entries for one directory, in model emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDataset {
    pub directory: DirectoryId,
    pub records: Vec<EntryRecord>,
    pub provenance: ProvenanceTag,
}

/// Encodes a dataset as CSV bytes: the fixed header, one row per record,
/// null fields as empty cells, quoting only where the cell content needs it.
pub fn dataset_to_csv(ds: &EntryDataset) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER).expect("write to Vec cannot fail");
    for record in &ds.records {
        writer
            .write_record(Variable::ALL.map(|v| record.get(v).unwrap_or("")))
            .expect("write to Vec cannot fail");
    }
    writer.into_inner().expect("flush to Vec cannot fail")
}

/// Decodes CSV bytes produced by `dataset_to_csv` (or a compatible
/// ground-truth file). Empty cells become null, so the round trip is
/// lossless up to the empty-string/null unification.
pub fn csv_to_dataset(
    bytes: &[u8],
    directory: DirectoryId,
    provenance: ProvenanceTag,
) -> Result<EntryDataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);

    let mut rows = reader.records();
    let expected = CSV_HEADER.join(",");
    let header = match rows.next() {
        Some(record) => record?,
        None => {
            return Err(DatasetError::WrongHeader { expected, got: String::new() });
        }
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(DatasetError::WrongHeader {
            expected,
            got: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let row = row?;
        // 1-based line number in the file; the header occupies line 1
        let line = row.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        if row.len() != 4 {
            return Err(DatasetError::WrongColumnCount { row: line, got: row.len() });
        }
        let mut record = EntryRecord::default();
        for (var, cell) in Variable::ALL.into_iter().zip(row.iter()) {
            record.set(var, if cell.is_empty() { None } else { Some(cell.to_string()) });
        }
        if record.is_all_null() {
            return Err(DatasetError::EmptyRecord { row: line });
        }
        records.push(record);
    }

    Ok(EntryDataset { directory, records, provenance })
}
