use std::io::{self, Write};

use serde::Serialize;
use vulnwatch_core::OutputFormat;

pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Self { headers: headers.to_vec(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn markdown(&self) -> String {
        let mut out = format!("| {} |\n|{}|\n", self.headers.join(" | "), vec!["---"; self.headers.len()].join("|"));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| c.replace('|', "\\|")).collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        out
    }

    fn csv(&self) -> io::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Prints `value` as JSON, or `table` as markdown / CSV. Notes go after the markdown
/// table, or to stderr for CSV so stdout stays parseable.
pub fn emit<T: Serialize>(format: OutputFormat, value: &T, table: &Table, notes: &[String]) -> io::Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        }
        OutputFormat::Markdown => {
            write!(out, "{}", table.markdown())?;
            for n in notes {
                writeln!(out, "\n{n}")?;
            }
        }
        OutputFormat::Csv => {
            write!(out, "{}", table.csv()?)?;
            for n in notes {
                eprintln!("{n}");
            }
        }
    }
    Ok(())
}
