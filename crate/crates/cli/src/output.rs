use std::io::Write;

use anyhow::Result;
use serde::Serialize;
use serde_json::{json, Value};

use crate::models::hex12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Flat rows for CSV output.
#[derive(Debug, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// What a subcommand produced: the JSON payload, its CSV view, and whether a
/// check failed.
pub struct Payload {
    pub data: Value,
    pub table: Table,
    pub violated: bool,
}

#[derive(Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub git: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
}

impl Meta {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        let canonical = serde_json::to_string(&config).expect("config serializes");
        Self {
            tool: "ppot",
            version: env!("CARGO_PKG_VERSION"),
            git: env!("PPOT_GIT_HASH"),
            command: command.to_string(),
            seed,
            config_hash: hex12(canonical.as_bytes()),
            config,
        }
    }
}

pub fn write(out: &mut dyn Write, format: Format, meta: &Meta, payload: &Payload) -> Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, &json!({ "meta": meta, "data": payload.data }))?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(out, "# tool: {} {}", meta.tool, meta.version)?;
            writeln!(out, "# git: {}", meta.git)?;
            writeln!(out, "# command: {}", meta.command)?;
            writeln!(out, "# seed: {}", meta.seed)?;
            writeln!(out, "# config_hash: {}", meta.config_hash)?;
            writeln!(out, "# config: {}", serde_json::to_string(&meta.config)?)?;
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(&payload.table.columns)?;
            for r in &payload.table.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn snake<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}
