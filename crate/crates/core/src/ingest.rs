//! CSV ingestion of real data matrices.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sim::Dataset;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HeaderMode {
    /// Header present iff the first record has a non-numeric, non-missing cell.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    pub header: HeaderMode,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Rows dropped because they contain missing cells.
    pub dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | "?" | ".")
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn ingest_reader<R: Read>(input: R, opts: IngestOptions) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(format!("CSV: {e}")))?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        records.push(rec);
    }
    let first = records.first().ok_or_else(|| Error::Data("empty file".into()))?;
    let has_header = match opts.header {
        HeaderMode::Present => true,
        HeaderMode::Absent => false,
        HeaderMode::Auto => first.iter().any(|c| !is_missing(c) && parse_cell(c).is_none()),
    };
    let p = first.len();
    let names: Vec<String> = if has_header {
        first.iter().map(|s| s.trim().to_string()).collect()
    } else {
        (1..=p).map(|j| format!("V{j}")).collect()
    };
    let body = &records[has_header as usize..];
    if body.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let mut values = Vec::new();
    let mut dropped = 0;
    for (r, rec) in body.iter().enumerate() {
        let line = r + 1 + has_header as usize;
        if rec.len() != p {
            return Err(Error::Data(format!("line {line}: {} fields, expected {p}", rec.len())));
        }
        if rec.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        for (j, c) in rec.iter().enumerate() {
            let v = parse_cell(c)
                .ok_or_else(|| Error::Data(format!("line {line}, column {}: non-numeric cell '{c}'", j + 1)))?;
            values.push(v);
        }
    }
    let n = values.len() / p;
    if n == 0 {
        return Err(Error::Data(format!("all {dropped} rows contain missing cells")));
    }
    let mut dataset = Dataset::new(DMatrix::from_row_slice(n, p, &values));
    dataset.names = names;
    Ok(Ingested { dataset, dropped })
}

/// Reads a rectangular numeric CSV, dropping rows with missing cells.
pub fn ingest_csv(path: &Path, opts: IngestOptions) -> Result<Ingested> {
    ingest_reader(std::fs::File::open(path)?, opts)
}
