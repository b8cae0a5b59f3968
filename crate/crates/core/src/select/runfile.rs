//! Run file TSV: `topic_id, window_index, rank, doc_id, epoch_ms, utility`,
//! one block per (topic, window), ranks in display order starting at 1.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::ResultSet;

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub topic_id: String,
    pub window_index: usize,
    pub rank: usize,
    pub doc_id: String,
    pub epoch_ms: i64,
    pub utility: f64,
}

impl RunRow {
    pub fn from_result(topic_id: &str, window_index: usize, result: &ResultSet) -> Vec<RunRow> {
        result
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| RunRow {
                topic_id: topic_id.to_string(),
                window_index,
                rank: i + 1,
                doc_id: item.doc_id.clone(),
                epoch_ms: item.epoch_ms,
                utility: item.utility_at_selection,
            })
            .collect()
    }
}

pub fn write_run(mut w: impl Write, rows: &[RunRow]) -> std::io::Result<()> {
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.topic_id, r.window_index, r.rank, r.doc_id, r.epoch_ms, r.utility
        )?;
    }
    w.flush()
}

pub fn read_run(reader: impl BufRead) -> Result<Vec<RunRow>> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::parse(lineno, format!("expected 6 columns, found {}", cols.len())));
        }
        let field = |i: usize, name: &str| -> Result<_> {
            cols[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(lineno, format!("bad {name} {:?}", cols[i])))
        };
        let int = |i: usize, name: &str| -> Result<i64> {
            cols[i]
                .parse::<i64>()
                .map_err(|_| Error::parse(lineno, format!("bad {name} {:?}", cols[i])))
        };
        let window = int(1, "window_index")?;
        let rank = int(2, "rank")?;
        if window < 0 || rank < 1 {
            return Err(Error::parse(lineno, "window_index must be >= 0 and rank >= 1"));
        }
        rows.push(RunRow {
            topic_id: cols[0].to_string(),
            window_index: window as usize,
            rank: rank as usize,
            doc_id: cols[3].to_string(),
            epoch_ms: int(4, "epoch_ms")?,
            utility: field(5, "utility")?,
        });
    }
    Ok(rows)
}
