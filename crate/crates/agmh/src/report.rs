//! CSV reports with a leading `# config:` line.

use std::path::Path;

use crate::error::{Error, Result};
use crate::format::write_file;

/// A header row and data rows, all as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// The report text: `header` on its own line, then the CSV.
    pub fn render(&self, header: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let body = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        let mut out = String::with_capacity(header.len() + 1 + body.len());
        out.push_str(header);
        out.push('\n');
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn save(&self, path: &Path, header: &str) -> Result<String> {
        let text = self.render(header)?;
        write_file(path, text.as_bytes())?;
        Ok(text)
    }

    /// Reads a report back, skipping `#` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(String::from).collect()))
            .collect::<Result<_>>()?;
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}
