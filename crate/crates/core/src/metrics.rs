//! Training-metrics tables: schema-versioned CSV emission and parsing.
//!
//! The first line of every file is a comment carrying the schema version,
//! the configuration hash, and the master seed, so any artifact can be
//! traced back to the exact run that produced it. Values print in Rust's
//! shortest round-trip form, which makes files byte-stable across identical
//! runs and lossless to parse back.

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "metrics-v1";

/// Accumulates rows under a fixed column set and renders them as CSV.
#[derive(Debug, Clone)]
pub struct MetricsWriter {
    comment: String,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl MetricsWriter {
    pub fn new(columns: Vec<String>, config_hash: &str, seed: u64) -> Self {
        Self {
            comment: format!("# schema={METRICS_SCHEMA} config={config_hash} seed={seed}"),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// All values of a named column, in row order.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                context: "metrics row",
                expected: self.columns.len(),
                actual: row.len(),
            });
        }
        self.rows.push(row.to_vec());
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.comment);
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// A parsed metrics file.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    /// The leading `#` comment line, without the newline.
    pub comment: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    /// Index of a named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All values of a named column, in row order.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Parses a metrics CSV produced by [`MetricsWriter`]. Any malformed line is
/// reported with its 1-based line number.
pub fn parse_metrics_csv(text: &str) -> Result<MetricsTable> {
    let mut lines = text.lines().enumerate();
    let mut comment = String::new();
    let header = loop {
        match lines.next() {
            None => {
                return Err(Error::InvalidArgument(
                    "metrics CSV is empty: no header line".into(),
                ))
            }
            Some((_, l)) if l.starts_with('#') => {
                if comment.is_empty() {
                    comment = l.to_string();
                }
            }
            Some((_, l)) if l.trim().is_empty() => {}
            Some((_, l)) => break l,
        }
    };
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    if columns.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidArgument(
            "metrics CSV header has an empty column name".into(),
        ));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let line_no = idx + 1;
        if cells.len() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "line {line_no}: expected {} cells, found {}",
                columns.len(),
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(cells.len());
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("line {line_no}: not a number: {cell:?}"))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(MetricsTable {
        comment,
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn round_trip_preserves_values_bitwise() {
        let mut rng = seeded_rng(5);
        let cols = vec!["iteration".to_string(), "a".to_string(), "b".to_string()];
        let mut w = MetricsWriter::new(cols, "deadbeef", 42);
        let mut rows = Vec::new();
        for i in 0..20 {
            let row = vec![
                i as f64,
                rng.gen_range(-1e6..1e6),
                rng.gen_range(-1e-9..1e-9),
            ];
            w.push_row(&row).unwrap();
            rows.push(row);
        }
        let parsed = parse_metrics_csv(&w.to_csv()).unwrap();
        assert_eq!(parsed.columns, w.columns());
        assert_eq!(parsed.rows.len(), rows.len());
        for (p, r) in parsed.rows.iter().zip(&rows) {
            for (x, y) in p.iter().zip(r) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn header_comment_carries_schema_hash_and_seed() {
        let w = MetricsWriter::new(vec!["x".to_string()], "abc123", 7);
        let csv = w.to_csv();
        let first = csv.lines().next().unwrap();
        assert!(first.starts_with('#'));
        assert!(first.contains(METRICS_SCHEMA));
        assert!(first.contains("config=abc123"));
        assert!(first.contains("seed=7"));
        let parsed = parse_metrics_csv(&csv).unwrap();
        assert_eq!(parsed.comment, first);
    }

    #[test]
    fn wrong_row_length_is_rejected() {
        let mut w = MetricsWriter::new(vec!["a".to_string(), "b".to_string()], "h", 1);
        assert!(w.push_row(&[1.0]).is_err());
        assert!(w.push_row(&[1.0, 2.0, 3.0]).is_err());
        assert!(w.push_row(&[1.0, 2.0]).is_ok());
    }

    #[test]
    fn malformed_lines_name_their_line_number() {
        let text = "# schema=metrics-v1 config=h seed=1\na,b\n1,2\n3,oops\n";
        let err = parse_metrics_csv(text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        let text = "a,b\n1,2\n3\n";
        let err = parse_metrics_csv(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("expected 2"), "{err}");
    }

    #[test]
    fn series_reads_a_named_column() {
        let mut w = MetricsWriter::new(
            vec!["iteration".to_string(), "loss".to_string()],
            "h",
            1,
        );
        w.push_row(&[0.0, 5.0]).unwrap();
        w.push_row(&[1.0, 4.0]).unwrap();
        let t = parse_metrics_csv(&w.to_csv()).unwrap();
        assert_eq!(t.series("loss").unwrap(), vec![5.0, 4.0]);
        assert!(t.series("absent").is_none());
    }
}
