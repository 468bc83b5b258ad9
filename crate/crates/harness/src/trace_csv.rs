//! Trace files: `round,avg_train_loss,epsilon_spent,avg_val_acc`, one row per
//! completed round. Numbers use Rust's shortest round-trip formatting, `inf`
//! marks an unbounded epsilon and an empty cell a missing accuracy.

use std::io::{Read, Write};
use std::path::Path;

use pmtl_core::RunTrace;

use crate::error::{HarnessError, Result};

pub const TRACE_HEADER: [&str; 4] = ["round", "avg_train_loss", "epsilon_spent", "avg_val_acc"];

/// One row of a trace file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub avg_train_loss: f64,
    pub epsilon_spent: f64,
    pub avg_val_acc: Option<f64>,
}

pub fn rows(trace: &RunTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            round: r.round,
            avg_train_loss: r.avg_train_loss,
            epsilon_spent: r.epsilon_spent,
            avg_val_acc: r.avg_val_acc,
        })
        .collect()
}

pub fn write_rows<W: Write>(out: W, rows: &[TraceRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.avg_train_loss.to_string(),
            r.epsilon_spent.to_string(),
            r.avg_val_acc.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R, source: &str) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let csv_err = |source_err| HarnessError::Csv {
        file: source.to_string(),
        source: source_err,
    };
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(HarnessError::Parse {
            file: source.to_string(),
            line: 1,
            message: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |col: &str| HarnessError::Parse {
            file: source.to_string(),
            line,
            message: format!("bad {col} value"),
        };
        let num = |i: usize, col: &str| record[i].parse::<f64>().map_err(|_| bad(col));
        out.push(TraceRow {
            round: record[0].parse().map_err(|_| bad("round"))?,
            avg_train_loss: num(1, "avg_train_loss")?,
            epsilon_spent: num(2, "epsilon_spent")?,
            avg_val_acc: if record[3].is_empty() {
                None
            } else {
                Some(num(3, "avg_val_acc")?)
            },
        });
    }
    Ok(out)
}

pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_rows(file, &rows(trace)).map_err(|source| HarnessError::Csv {
        file: path.display().to_string(),
        source,
    })
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_rows(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awkward_values_round_trip_bitwise() {
        let rows = vec![
            TraceRow {
                round: 1,
                avg_train_loss: 0.1 + 0.2,
                epsilon_spent: f64::INFINITY,
                avg_val_acc: None,
            },
            TraceRow {
                round: 2,
                avg_train_loss: 1e-300,
                epsilon_spent: 5e-324,
                avg_val_acc: Some(2.0 / 3.0),
            },
            TraceRow {
                round: 3,
                avg_train_loss: 123_456_789.123_456_78,
                epsilon_spent: 0.0,
                avg_val_acc: Some(1.0),
            },
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,avg_train_loss,epsilon_spent,avg_val_acc\n"));
        assert!(text.contains("1,0.30000000000000004,inf,\n"));
        let back = read_rows(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.avg_train_loss.to_bits(), b.avg_train_loss.to_bits());
            assert_eq!(a.epsilon_spent.to_bits(), b.epsilon_spent.to_bits());
            assert_eq!(a.avg_val_acc.map(f64::to_bits), b.avg_val_acc.map(f64::to_bits));
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = read_rows("round,loss\n1,2\n".as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().starts_with("t.csv:1"), "{err}");
    }
}
