//! CSV tables with full-precision numeric cells.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits, which round-trips every f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a header row and data rows as RFC 4180 CSV.
pub fn write_csv<W, I, R>(writer: W, header: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        let row: Vec<String> = row.into_iter().collect();
        if row.len() != header.len() {
            return Err(Error::Io(format!("row has {} cells, header has {}", row.len(), header.len())));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row; returns (header, rows).
pub fn read_numeric_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|_| Error::Io(format!("data row {}: cannot parse {cell:?} as a number", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
