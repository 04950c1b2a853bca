//! Count-data CSV in the layout of the lab sheets: one row per date and dose.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fitting::CountRecord;

/// Canonical header written by [`write_csv`].
pub const CANONICAL_HEADER: [&str; 8] =
    ["date", "dose", "duration", "observed", "normal", "radial", "0 spicules", "dead/delayed"];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Column {
    Date,
    Dose,
    Duration,
    Observed,
    Normal,
    Radial,
    ZeroSpicules,
    DeadDelayed,
}

const COLUMNS: [Column; 8] = [
    Column::Date,
    Column::Dose,
    Column::Duration,
    Column::Observed,
    Column::Normal,
    Column::Radial,
    Column::ZeroSpicules,
    Column::DeadDelayed,
];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '_' | '-' | '/' | '.'))
        .flat_map(char::to_lowercase)
        .collect()
}

fn column_for(name: &str) -> Option<Column> {
    Some(match normalize(name).as_str() {
        "date" => Column::Date,
        "dose" | "doselevel" => Column::Dose,
        "duration" => Column::Duration,
        "observed" | "total" => Column::Observed,
        "normal" => Column::Normal,
        "radial" | "radialized" => Column::Radial,
        "0spicules" | "zerospicules" => Column::ZeroSpicules,
        "deaddelayed" | "dead" => Column::DeadDelayed,
        _ => return None,
    })
}

fn parse_count(field: &str, what: &str, line: usize) -> Result<u64> {
    field.replace(',', "").parse::<u64>().map_err(|_| Error::Row {
        line,
        message: format!("{what} '{field}' is not a non-negative integer"),
    })
}

/// Reads records from any CSV source; headers are matched case- and space-insensitively.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<CountRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput("CSV has no header row".into()));
    }
    let mut index = [usize::MAX; 8];
    for (i, h) in headers.iter().enumerate() {
        if let Some(col) = column_for(h) {
            index[COLUMNS.iter().position(|c| *c == col).expect("listed")] = i;
        }
    }
    if let Some(missing) = index.iter().position(|i| *i == usize::MAX) {
        return Err(Error::Row {
            line: 1,
            message: format!("missing column '{}'", CANONICAL_HEADER[missing]),
        });
    }

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let get = |c: usize| row.get(index[c]).unwrap_or("");
        let dose_text = get(1).replace(',', "");
        let dose = dose_text.parse::<f64>().map_err(|_| Error::Row {
            line,
            message: format!("dose '{}' is not a number", get(1)),
        })?;
        let rec = CountRecord {
            date: get(0).to_string(),
            dose,
            duration: get(2).to_string(),
            observed: parse_count(get(3), "observed", line)?,
            normal: parse_count(get(4), "normal", line)?,
            radial: parse_count(get(5), "radial", line)?,
            zero_spicules: parse_count(get(6), "0 spicules", line)?,
            dead_delayed: parse_count(get(7), "dead/delayed", line)?,
        };
        rec.validate().map_err(|e| Error::Row { line, message: e.to_string() })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("CSV has no data rows".into()));
    }
    Ok(out)
}

/// Reads and validates a count CSV from disk.
pub fn ingest_csv(path: &Path) -> Result<Vec<CountRecord>> {
    let file = std::fs::File::open(path)?;
    if file.metadata()?.len() == 0 {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    read_records(file)
}

/// Serializes records with the canonical header.
pub fn write_csv(records: &[CountRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CANONICAL_HEADER)?;
    for r in records {
        w.write_record([
            r.date.clone(),
            r.dose.to_string(),
            r.duration.clone(),
            r.observed.to_string(),
            r.normal.to_string(),
            r.radial.to_string(),
            r.zero_spicules.to_string(),
            r.dead_delayed.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
