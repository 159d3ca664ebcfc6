//! Gnuplot script emission for g2 curves.
//!
//! The script embeds its data as inline blocks, so it runs without the CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A parsed `tau_s,<value>[,stderr]` CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub value_column: String,
    pub rows: Vec<[f64; 3]>,
    pub has_stderr: bool,
}

pub fn read_series(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path)?;
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string();
    parse_series(&text, label)
}

pub fn parse_series(text: &str, label: String) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse("line 1", e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols.len() > 3 || cols[0] != "tau_s" {
        return Err(Error::parse(
            "line 1",
            format!("expected `tau_s,<value>[,stderr]`, got `{}`", cols.join(",")),
        ));
    }
    let has_stderr = cols.len() == 3;
    if has_stderr && cols[2] != "stderr" {
        return Err(Error::parse(
            "line 1",
            format!("third column must be `stderr`, got `{}`", cols[2]),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = format!("line {}", i + 2);
        let rec = rec.map_err(|e| Error::parse(line.clone(), format!("column mismatch: {e}")))?;
        let mut row = [0.0; 3];
        for (k, field) in rec.iter().enumerate() {
            row[k] = field
                .parse()
                .map_err(|_| Error::parse(line.clone(), format!("`{field}` is not a number")))?;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Degenerate(format!("{label} has no rows")));
    }
    Ok(Series {
        label,
        value_column: cols[1].to_string(),
        rows,
        has_stderr,
    })
}

/// Script overlaying `data` (points, with error bars when available) and an
/// optional `theory` curve. Each series keeps its own tau grid.
pub fn gnuplot_script(data: &Series, theory: Option<&Series>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# gnuplot script: load with `gnuplot -p <file>`");
    let block = |s: &mut String, name: &str, series: &Series| {
        let _ = writeln!(s, "${name} << EOD");
        for r in &series.rows {
            if series.has_stderr {
                let _ = writeln!(s, "{} {} {}", r[0], r[1], r[2]);
            } else {
                let _ = writeln!(s, "{} {}", r[0], r[1]);
            }
        }
        let _ = writeln!(s, "EOD");
    };
    block(&mut s, "data", data);
    if let Some(t) = theory {
        block(&mut s, "theory", t);
    }
    let _ = writeln!(s, "set xlabel \"tau (s)\"");
    let _ = writeln!(s, "set ylabel \"g2(tau)\"");
    let _ = writeln!(s, "set key top right");
    let points = if data.has_stderr {
        format!("$data using 1:2:3 with yerrorbars pt 7 ps 0.5 title \"{}\"", data.label)
    } else {
        format!("$data using 1:2 with points pt 7 ps 0.5 title \"{}\"", data.label)
    };
    match theory {
        Some(t) => {
            let _ = writeln!(
                s,
                "plot {points}, \\\n     $theory using 1:2 with lines lw 2 title \"{}\"",
                t.label
            );
        }
        None => {
            let _ = writeln!(s, "plot {points}");
        }
    }
    s
}
