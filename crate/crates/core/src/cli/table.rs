//! Comma-separated result tables with a `#`-commented metadata header.
//!
//! ```text
//! # config_hash: 3f2a...
//! # seed: 7
//! t,ground,ground_se
//! 0,1,
//! ```
//!
//! Missing values are empty cells.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    /// Ordered `key: value` header lines.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("metadata line {0:?} is not `# key: value`")]
    Meta(String),
    #[error("row {row} has {got} cells, expected {want}")]
    Width { row: usize, got: usize, want: usize },
    #[error("row {row}, column {column}: {text:?} is not a number")]
    Cell { row: usize, column: String, text: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ResultTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { meta: Vec::new(), columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.set_meta(key, value);
        self
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// True when the first column never decreases.
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| match (w[0][0], w[1][0]) {
            (Some(a), Some(b)) => b >= a,
            _ => false,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.map(|x| x.to_string()).unwrap_or_default())).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TableError> {
        let mut meta = Vec::new();
        let mut body = 0;
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else { break };
            let (k, v) = rest.trim_start().split_once(": ").ok_or_else(|| TableError::Meta(line.into()))?;
            meta.push((k.to_string(), v.to_string()));
            body += line.len() + 1;
        }
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text[body.min(text.len())..].as_bytes());
        let columns: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != columns.len() {
                return Err(TableError::Width { row: i, got: rec.len(), want: columns.len() });
            }
            let row = rec
                .iter()
                .zip(&columns)
                .map(|(cell, col)| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse().map(Some).map_err(|_| TableError::Cell { row: i, column: col.clone(), text: cell.into() })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self { meta, columns, rows })
    }
}

/// `TTS = τ ln(1 − p_d) / ln(1 − p_g)`; undefined when `p_g` is 0 or 1.
pub fn time_to_solution(tau: f64, p_g: f64, p_d: f64) -> Option<f64> {
    if !(p_g > 0.0 && p_g < 1.0) {
        return None;
    }
    Some(tau * (1.0 - p_d).ln() / (1.0 - p_g).ln())
}

/// Appends a `tts` column computed from the named τ and success columns.
pub fn add_tts(table: &mut ResultTable, tau_col: &str, p_col: &str, p_d: f64) -> bool {
    let (Some(tc), Some(pc)) =
        (table.columns.iter().position(|c| c == tau_col), table.columns.iter().position(|c| c == p_col))
    else {
        return false;
    };
    table.columns.push("tts".into());
    for r in &mut table.rows {
        let v = match (r[tc], r[pc]) {
            (Some(tau), Some(p)) => time_to_solution(tau, p, p_d),
            _ => None,
        };
        r.push(v);
    }
    table.set_meta("tts_target", p_d);
    true
}
