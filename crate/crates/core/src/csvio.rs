//! Reading and writing transaction logs as CSV.
//!
//! Format: a header row `id,counterparty,context,outcome,f1,...,fd` followed
//! by one row per completed transaction, with `outcome` encoded as `1`
//! (successful) or `0` (unsuccessful). The feature count is taken from the
//! header.

use std::io;

use thiserror::Error;

use crate::transaction::{AgentId, CoreError, Outcome, Transaction, TransactionLog};

pub const LEADING_COLUMNS: [&str; 4] = ["id", "counterparty", "context", "outcome"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("line {line}, column {column} (`{name}`): {message}")]
    Field {
        line: u64,
        column: usize,
        name: String,
        message: String,
    },
    #[error("line {line}: {source}")]
    Entry { line: u64, source: CoreError },
}

impl CsvError {
    /// 1-based file line of the offending record, when there is one.
    pub fn line(&self) -> Option<u64> {
        match self {
            CsvError::Field { line, .. } | CsvError::Entry { line, .. } => Some(*line),
            CsvError::Csv(e) => e.position().map(|p| p.line()),
            CsvError::Header(_) => Some(1),
        }
    }
}

pub fn read_log<R: io::Read>(owner: AgentId, input: R) -> Result<TransactionLog, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < LEADING_COLUMNS.len() + 1 {
        return Err(CsvError::Header(format!(
            "expected `id,counterparty,context,outcome` followed by at least one feature column, found {} columns",
            header.len()
        )));
    }
    for (i, expected) in LEADING_COLUMNS.iter().enumerate() {
        if !header[i].eq_ignore_ascii_case(expected) {
            return Err(CsvError::Header(format!(
                "column {} must be `{expected}`, found `{}`",
                i + 1,
                &header[i]
            )));
        }
    }
    let d = header.len() - LEADING_COLUMNS.len();
    let mut log = TransactionLog::new(owner, d);

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field_err = |column: usize, message: String| CsvError::Field {
            line,
            column: column + 1,
            name: header.get(column).unwrap_or("").to_owned(),
            message,
        };
        let outcome = match &record[3] {
            "1" => Outcome::Successful,
            "0" => Outcome::Unsuccessful,
            other => {
                return Err(field_err(
                    3,
                    format!("outcome must be 1 or 0, found `{other}`"),
                ))
            }
        };
        let mut features = Vec::with_capacity(d);
        for column in LEADING_COLUMNS.len()..header.len() {
            let raw = &record[column];
            let value: f64 = raw
                .parse()
                .map_err(|_| field_err(column, format!("`{raw}` is not a number")))?;
            if !value.is_finite() {
                return Err(field_err(column, format!("`{raw}` is not finite")));
            }
            features.push(value);
        }
        let tx = Transaction::completed(&record[0], &record[1], &record[2], features, outcome);
        log.push(tx)
            .map_err(|source| CsvError::Entry { line, source })?;
    }
    Ok(log)
}

pub fn log_header(d: usize) -> Vec<String> {
    LEADING_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=d).map(|i| format!("f{i}")))
        .collect()
}

pub(crate) fn write_log<W: io::Write>(log: &TransactionLog, out: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(log_header(log.dimensionality()))?;
    for tx in log.entries() {
        writer.write_record(transaction_row(tx))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn transaction_row(tx: &Transaction) -> Vec<String> {
    let mut row = vec![
        tx.id.0.clone(),
        tx.counterparty.0.clone(),
        tx.context.clone(),
        tx.outcome
            .map(|o| o.as_flag().to_string())
            .unwrap_or_default(),
    ];
    // Display for f64 prints the shortest string that parses back to the same value.
    row.extend(tx.features.iter().map(|v| v.to_string()));
    row
}
