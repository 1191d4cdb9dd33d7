//! CSV with a settings comment line, or a JSON array of row objects.

use std::fs::File;
use std::io::{self, BufWriter, Write};

use serde_json::{Map, Value};

use crate::commands::Table;
use crate::config::{CliError, Format, Settings};

pub fn write(s: &Settings, table: &Table) -> Result<(), CliError> {
    let sink: Box<dyn Write> = if s.out == "-" {
        Box::new(io::stdout().lock())
    } else {
        let f = File::create(&s.out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", s.out)))?;
        Box::new(f)
    };
    let mut w = BufWriter::new(sink);
    let res = match s.format {
        Format::Csv => write_csv(&mut w, s, table),
        Format::Json => write_json(&mut w, table),
    };
    res.and_then(|_| w.flush()).map_err(|e| CliError::Config(format!("cannot write {}: {e}", s.out)))
}

fn write_csv(w: &mut impl Write, s: &Settings, table: &Table) -> io::Result<()> {
    let header = serde_json::to_string(s).map_err(io::Error::other)?;
    writeln!(w, "# crib {} {header}", env!("CARGO_PKG_VERSION"))?;
    let mut c = csv::Writer::from_writer(w);
    c.write_record(table.columns)?;
    for row in &table.rows {
        c.write_record(row.iter().map(|v| v.to_string()))?;
    }
    c.flush()
}

fn write_json(w: &mut impl Write, table: &Table) -> io::Result<()> {
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|row| {
            let obj: Map<String, Value> =
                table.columns.iter().zip(row).map(|(k, v)| (k.to_string(), Value::from(*v))).collect();
            Value::Object(obj)
        })
        .collect();
    serde_json::to_writer_pretty(&mut *w, &rows).map_err(io::Error::other)?;
    writeln!(w)
}
