use std::fmt::Write as _;

use serde::Serialize;

use crate::cli::OutputFormat;

/// Rows rendered as an aligned table, or tab-separated without a header.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn render(&self, format: OutputFormat) -> String {
        let mut out = String::new();
        if format == OutputFormat::Plain {
            for r in &self.rows {
                writeln!(out, "{}", r.join("\t")).unwrap();
            }
            return out;
        }
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        writeln!(out, "{}", line(self.header.clone())).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", line(r.iter().map(String::as_str).collect())).unwrap();
        }
        out
    }
}

/// Prints `value` as one JSON document in structured mode, else `text()`.
pub fn emit<T: Serialize>(format: OutputFormat, value: &T, text: impl FnOnce() -> String) {
    match format {
        OutputFormat::Structured => {
            println!("{}", serde_json::to_string_pretty(value).expect("responses serialize"))
        }
        _ => print!("{}", text()),
    }
}

pub fn progress_bar(done: u64, total: u64, width: usize) -> String {
    let ratio = if total == 0 { 1.0 } else { done as f64 / total as f64 };
    let filled = ((ratio * width as f64).round() as usize).min(width);
    format!(
        "[{}{}] {done}/{total} {:>3.0}%",
        "#".repeat(filled),
        ".".repeat(width - filled),
        ratio * 100.0
    )
}
