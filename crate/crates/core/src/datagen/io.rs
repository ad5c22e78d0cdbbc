//! Panel CSV serialization.
//!
//! UTF-8, comma-separated, `.` decimal point, header row, columns in a fixed
//! order. Prices are written in shortest round-trip notation, so a write/read
//! cycle reproduces every field bit for bit. True outcome probabilities are
//! optional audit columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::odds::PolicyKind;

use super::{PanelRow, Sport};

/// Required columns, in on-disk order.
pub const PANEL_COLUMNS: [&str; 13] = [
    "agency_id",
    "event_id",
    "week",
    "quarter",
    "league_id",
    "sport",
    "n_outcomes",
    "treated",
    "post",
    "policy",
    "policy_active",
    "posted_price",
    "effective_price",
];

/// Audit columns appended by [`write_panel_with_probabilities`].
pub const PROBABILITY_COLUMNS: [&str; 3] = ["prob_0", "prob_1", "prob_2"];

fn write_impl(path: &Path, rows: &[PanelRow], with_probabilities: bool) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::with_capacity(1 << 20, file);

    let mut header = PANEL_COLUMNS.join(",");
    if with_probabilities {
        header.push(',');
        header.push_str(&PROBABILITY_COLUMNS.join(","));
    }
    writeln!(out, "{header}")?;

    let mut ints = itoa::Buffer::new();
    let mut floats = ryu::Buffer::new();
    let mut line = String::with_capacity(192);
    for row in rows {
        line.clear();
        line.push_str(&row.agency_id);
        line.push(',');
        line.push_str(&row.event_id);
        line.push(',');
        line.push_str(ints.format(row.week));
        line.push(',');
        line.push_str(ints.format(row.quarter));
        line.push(',');
        line.push_str(&row.league_id);
        line.push(',');
        line.push_str(row.sport.as_str());
        line.push(',');
        line.push_str(ints.format(row.n_outcomes));
        line.push(',');
        line.push(if row.treated { '1' } else { '0' });
        line.push(',');
        line.push(if row.post { '1' } else { '0' });
        line.push(',');
        line.push_str(row.policy.as_str());
        line.push(',');
        line.push(if row.policy_active { '1' } else { '0' });
        line.push(',');
        line.push_str(floats.format(row.posted_price));
        line.push(',');
        line.push_str(floats.format(row.effective_price));
        if with_probabilities {
            let empty = Vec::new();
            let probs = row.true_probabilities.as_ref().unwrap_or(&empty);
            for i in 0..PROBABILITY_COLUMNS.len() {
                line.push(',');
                if let Some(p) = probs.get(i) {
                    line.push_str(floats.format(*p));
                }
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the panel with the standard column set.
pub fn write_panel(path: impl AsRef<Path>, rows: &[PanelRow]) -> Result<()> {
    write_impl(path.as_ref(), rows, false)
}

/// Writes the panel including the true-probability audit columns.
pub fn write_panel_with_probabilities(path: impl AsRef<Path>, rows: &[PanelRow]) -> Result<()> {
    write_impl(path.as_ref(), rows, true)
}

fn schema_error(column: &str) -> Error {
    Error::validation(format!(
        "panel schema mismatch: missing required column '{column}'"
    ))
}

fn row_error(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::validation(format!("panel line {line}: {msg}"))
}

/// Reads a panel CSV, validating the schema and reporting malformed rows
/// with their line number. Probability columns are optional.
pub fn read_panel(path: impl AsRef<Path>) -> Result<Vec<PanelRow>> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::with_capacity(1 << 20, file));

    let headers = reader
        .headers()
        .map_err(|e| Error::validation(format!("cannot read panel header: {e}")))?
        .clone();
    let mut index = std::collections::HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        index.insert(name.to_string(), i);
    }
    let mut required = [0usize; 13];
    for (slot, column) in PANEL_COLUMNS.iter().enumerate() {
        required[slot] = *index.get(*column).ok_or_else(|| schema_error(column))?;
    }
    let prob_cols: Vec<Option<usize>> = PROBABILITY_COLUMNS
        .iter()
        .map(|c| index.get(*c).copied())
        .collect();
    let has_probs = prob_cols.iter().any(Option::is_some);

    let mut rows = Vec::new();
    let mut record = csv::ByteRecord::new();
    let mut line = 1u64;
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(Error::validation(format!("malformed panel row: {e}"))),
        }
        line = record.position().map_or(line + 1, |p| p.line());
        let field = |slot: usize| -> Result<&str> {
            let bytes = record.get(required[slot]).ok_or_else(|| {
                row_error(line, format!("missing field '{}'", PANEL_COLUMNS[slot]))
            })?;
            std::str::from_utf8(bytes)
                .map_err(|_| row_error(line, format!("non-UTF-8 '{}' field", PANEL_COLUMNS[slot])))
        };
        let parse_u32 = |slot: usize| -> Result<u32> {
            field(slot)?
                .parse()
                .map_err(|e| row_error(line, format!("bad '{}' value: {e}", PANEL_COLUMNS[slot])))
        };
        let parse_f64 = |slot: usize| -> Result<f64> {
            field(slot)?
                .parse()
                .map_err(|e| row_error(line, format!("bad '{}' value: {e}", PANEL_COLUMNS[slot])))
        };
        let parse_flag = |slot: usize| -> Result<bool> {
            match field(slot)? {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(row_error(
                    line,
                    format!(
                        "bad '{}' value '{other}', expected 0 or 1",
                        PANEL_COLUMNS[slot]
                    ),
                )),
            }
        };

        let true_probabilities =
            if has_probs {
                let mut probs = Vec::new();
                for col in prob_cols.iter().flatten() {
                    match record.get(*col) {
                        Some(b"") | None => {}
                        Some(bytes) => {
                            let v = std::str::from_utf8(bytes)
                                .map_err(|_| row_error(line, "non-UTF-8 probability field"))?;
                            probs.push(v.parse().map_err(|e| {
                                row_error(line, format!("bad probability value: {e}"))
                            })?);
                        }
                    }
                }
                if probs.is_empty() {
                    None
                } else {
                    Some(probs)
                }
            } else {
                None
            };

        rows.push(PanelRow {
            agency_id: field(0)?.to_string(),
            event_id: field(1)?.to_string(),
            week: parse_u32(2)?,
            quarter: parse_u32(3)?,
            league_id: field(4)?.to_string(),
            sport: Sport::parse(field(5)?).map_err(|e| row_error(line, e))?,
            n_outcomes: parse_u32(6)? as u8,
            treated: parse_flag(7)?,
            post: parse_flag(8)?,
            policy: PolicyKind::parse(field(9)?).map_err(|e| row_error(line, e))?,
            policy_active: parse_flag(10)?,
            posted_price: parse_f64(11)?,
            effective_price: parse_f64(12)?,
            true_probabilities,
        });
    }
    Ok(rows)
}
