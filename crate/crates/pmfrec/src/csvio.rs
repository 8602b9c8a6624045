//! Delimited-text ingestion of categorical records.
//!
//! Cells hold one-based category codes or the missing token. Codes are
//! shifted to zero-based on load. Alphabet sizes are either given or inferred
//! as the largest code seen in each column.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use pmfrec_core::DiscreteDataset;

use crate::error::{AppError, AppResult};

/// How fractional cells (e.g. half-star ratings) are turned into codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Rounding {
    /// Fractional cells are an error.
    #[default]
    None,
    /// `x.5` goes up.
    HalfUp,
    Ceil,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub has_header: bool,
    pub delimiter: u8,
    pub missing_token: String,
    pub rounding: Rounding,
    pub alphabet_sizes: Option<Vec<usize>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            delimiter: b',',
            missing_token: "?".into(),
            rounding: Rounding::None,
            alphabet_sizes: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub data: DiscreteDataset,
    pub headers: Option<Vec<String>>,
    /// True when the alphabet sizes came from the data rather than the caller.
    pub inferred: bool,
}

impl LoadedCsv {
    /// Display name of a zero-based column.
    pub fn column_name(&self, col: usize) -> String {
        column_name(self.headers.as_deref(), col)
    }
}

fn column_name(headers: Option<&[String]>, col: usize) -> String {
    match headers.and_then(|h| h.get(col)) {
        Some(name) => format!("column {} ({name})", col + 1),
        None => format!("column {}", col + 1),
    }
}

/// Zero-based code of one cell, `None` for the missing token.
pub fn parse_cell(
    cell: &str,
    missing_token: &str,
    rounding: Rounding,
) -> Result<Option<usize>, String> {
    let cell = cell.trim();
    if cell == missing_token {
        return Ok(None);
    }
    let code = match cell.parse::<i64>() {
        Ok(c) => c,
        Err(_) => {
            let x: f64 = cell
                .parse()
                .map_err(|_| format!("'{cell}' is not a category code"))?;
            if !x.is_finite() {
                return Err(format!("'{cell}' is not a category code"));
            }
            match rounding {
                Rounding::None if x.fract() == 0.0 => x as i64,
                Rounding::None => return Err(format!("'{cell}' is fractional (see --rounding)")),
                Rounding::HalfUp => (x + 0.5).floor() as i64,
                Rounding::Ceil => x.ceil() as i64,
            }
        }
    };
    if code < 1 {
        return Err(format!("code {code} is below 1"));
    }
    Ok(Some(code as usize - 1))
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> AppResult<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = if opts.has_header {
        Some(rdr.headers()?.iter().map(str::to_owned).collect::<Vec<_>>())
    } else {
        None
    };

    let mut records: Vec<Vec<Option<usize>>> = Vec::new();
    for (r, row) in rdr.records().enumerate() {
        let row = row?;
        let mut record = Vec::with_capacity(row.len());
        for (c, cell) in row.iter().enumerate() {
            let value = parse_cell(cell, &opts.missing_token, opts.rounding).map_err(|e| {
                AppError::Data(format!(
                    "record {}, {}: {e}",
                    r + 1,
                    column_name(headers.as_deref(), c)
                ))
            })?;
            record.push(value);
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(AppError::Data("no records".into()));
    }
    let n_vars = records[0].len();

    let (alphabet_sizes, inferred) = match &opts.alphabet_sizes {
        Some(sizes) => {
            if sizes.len() != n_vars {
                return Err(AppError::Data(format!(
                    "{} alphabet sizes given for {n_vars} columns",
                    sizes.len()
                )));
            }
            (sizes.clone(), false)
        }
        None => {
            let mut sizes = vec![0usize; n_vars];
            for record in &records {
                for (s, c) in sizes.iter_mut().zip(record) {
                    if let Some(c) = c {
                        *s = (*s).max(c + 1);
                    }
                }
            }
            if let Some(c) = sizes.iter().position(|&s| s == 0) {
                return Err(AppError::Data(format!(
                    "{} has no observed value, its alphabet cannot be inferred",
                    column_name(headers.as_deref(), c)
                )));
            }
            (sizes, true)
        }
    };

    for (r, record) in records.iter().enumerate() {
        for (c, value) in record.iter().enumerate() {
            if let Some(v) = value {
                if *v >= alphabet_sizes[c] {
                    return Err(AppError::Data(format!(
                        "record {}, {}: code {} exceeds alphabet size {}",
                        r + 1,
                        column_name(headers.as_deref(), c),
                        v + 1,
                        alphabet_sizes[c]
                    )));
                }
            }
        }
    }
    let data = DiscreteDataset::from_records(alphabet_sizes, &records)?;
    Ok(LoadedCsv {
        data,
        headers,
        inferred,
    })
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> AppResult<LoadedCsv> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    read_csv(file, opts).map_err(|e| match e {
        AppError::Data(msg) => AppError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes records as one-based codes.
pub fn write_csv<W: std::io::Write>(
    writer: W,
    data: &DiscreteDataset,
    headers: Option<&[String]>,
    missing_token: &str,
) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(h) = headers {
        w.write_record(h)?;
    }
    for record in data.records() {
        w.write_record(record.iter().map(|c| match c {
            Some(c) => (c + 1).to_string(),
            None => missing_token.to_owned(),
        }))?;
    }
    w.flush().map_err(AppError::output)?;
    Ok(())
}
